import math

import numpy as np
import pytest

from selfx.frames import make_grid, resample_bicubic, splice
from selfx.fusion import reconstruct_patch
from selfx.pipeline import PipelineConfig, analyze_recurrence, bicubic_frame, run, \
    super_resolve_frame, sweep_references, write_sweep_csv
from selfx.retrieval import SearchConfig, retrieve_local
from selfx.store import FrameStore
from selfx.synthetic import generate_synthetic


@pytest.fixture(scope="module")
def tiny():
    v = generate_synthetic(seed=5, frames=6, lr_size=(64, 64), sprite_lr=24)
    return v, FrameStore(v.lr)


def test_config_validation():
    with pytest.raises(ValueError):
        PipelineConfig(upscale=5)
    with pytest.raises(ValueError):
        PipelineConfig(alignment="swirl")
    with pytest.raises(ValueError):
        PipelineConfig(workers=0)
    cfg = PipelineConfig().with_refs(K=1, V=4)
    assert (cfg.K, cfg.V, cfg.selection.delta) == (1, 4, 0.1)
    assert PipelineConfig().match_cells == 32


def test_output_shape_and_diagnostics(tiny):
    v, store = tiny
    out, diags = super_resolve_frame(store, 1, PipelineConfig())
    assert out.shape == (256, 256, 3) and out.min() >= 0 and out.max() <= 1
    grid = make_grid(64, 64, 32, 24)
    assert len(diags) == grid.n
    assert [(d.x, d.y) for d in diags] == list(grid.origins)


def test_k0_is_local_plus_bicubic(tiny):
    _, store = tiny
    cfg = PipelineConfig().with_refs(K=0)
    out, _ = super_resolve_frame(store, 2, cfg)
    p, up = 32, 4
    patches = []
    for x, y in make_grid(64, 64, p, 24).origins:
        locs = retrieve_local(store, 2, (x, y), SearchConfig(), 2)
        imgs = [store.frames[c.source_frame][c.location[1]:c.location[1] + p,
                                             c.location[0]:c.location[0] + p] for c in locs]
        lr = store.frames[2][y:y + p, x:x + p]
        patches.append(((x * up, y * up), reconstruct_patch(lr, None, None, imgs, up, 0.8, 0.2)))
    expected = np.clip(splice(patches, 256, 256), 0, 1)
    assert np.array_equal(out, expected)


def test_no_references_is_spliced_patch_bicubic(tiny):
    _, store = tiny
    out, _ = super_resolve_frame(store, 0, PipelineConfig().with_refs(K=0, V=0))
    patches = [((x * 4, y * 4), resample_bicubic(store.frames[0][y:y + 32, x:x + 32], 4))
               for x, y in make_grid(64, 64, 32, 24).origins]
    assert np.array_equal(out, np.clip(splice(patches, 256, 256), 0, 1))
    # patches clamp at their own borders, so only the blend seams differ from a whole-frame upsample
    assert np.abs(out - bicubic_frame(store, 0, 4)).max() <= 1e-3


def test_constant_video():
    store = FrameStore([np.full((64, 64, 3), 0.35)] * 3)
    out, _ = super_resolve_frame(store, 1, PipelineConfig())
    assert np.abs(out - 0.35).max() <= 1e-4


def test_single_frame_video_degrades_gracefully():
    rng = np.random.default_rng(0)
    frame = np.clip(resample_bicubic(rng.random((16, 16, 3)), 4), 0, 1)
    store = FrameStore([frame])
    out, diags = super_resolve_frame(store, 0, PipelineConfig(upscale=2))
    assert out.shape == (128, 128, 3) and np.isfinite(out).all()
    assert all(d.local_refs == 0 for d in diags)


def test_workers_do_not_change_output(tiny):
    v, _ = tiny
    a, da = super_resolve_frame(FrameStore(v.lr), 3, PipelineConfig(workers=1))
    b, db = super_resolve_frame(FrameStore(v.lr), 3, PipelineConfig(workers=3))
    assert np.array_equal(a, b)
    assert [d.row() for d in da] == [d.row() for d in db]


def test_run_report(tiny, tmp_path):
    v, store = tiny
    outs, rep = run(store, [0, 1], PipelineConfig(), v.hr[:2])
    assert len(outs) == 2 and len(rep.metrics.per_frame) == 2
    assert len(rep.diagnostics) == 2 * 9
    assert set(rep.timings) >= {"retrieval", "matching", "alignment", "fusion", "splice"}
    rep.write_diagnostics(tmp_path / "r.csv")
    assert len((tmp_path / "r.csv").read_text().splitlines()) == 19


def test_sweep_shapes(tiny, tmp_path):
    v, store = tiny
    rows = sweep_references(store, [1], PipelineConfig(), [1, 2, 3, 4], [2], v.hr[1:2])
    assert [(r["K"], r["V"]) for r in rows] == [(1, 2), (2, 2), (3, 2), (4, 2)]
    assert all(math.isfinite(r["psnr"]) and math.isfinite(r["ssim"]) for r in rows)
    rows = sweep_references(store, [1], PipelineConfig(), [3, 3], [2, 4, 2], v.hr[1:2])
    assert [(r["K"], r["V"]) for r in rows] == [(3, 2), (3, 4)]
    assert rows[0]["delta_psnr"] == 0.0
    assert rows[1]["delta_psnr"] == rows[1]["psnr"] - rows[0]["psnr"]
    write_sweep_csv(rows, tmp_path / "s.csv")
    lines = (tmp_path / "s.csv").read_text().splitlines()
    assert lines[0] == "K,V,psnr,ssim,delta_psnr" and lines[2].split(",")[4][0] in "+-"


def test_analyze_recurrence(tiny):
    _, store = tiny
    rows = analyze_recurrence(store, [0], PipelineConfig())
    assert [s for _, s, _ in rows] == [1.2, 1.4, 1.7, 2.1, 2.5, 2.9, 3.5]
    assert all(0 <= f <= 1 for _, _, f in rows)
