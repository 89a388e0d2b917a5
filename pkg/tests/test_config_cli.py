import os

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from PIL import Image

from selfx import config as cfgmod
from selfx.cli import LABEL_HEIGHT, UsageError, parse_frames, render_panel, run_cli
from selfx.frames import ScaleSequence, write_sequence
from selfx.pipeline import PipelineConfig
from selfx.synthetic import generate_synthetic


def tree(root):
    return sorted(os.path.relpath(os.path.join(d, f), root)
                  for d, _, files in os.walk(root) for f in files)


@pytest.fixture(scope="module")
def corpus(tmp_path_factory):
    root = tmp_path_factory.mktemp("corpus")
    v = generate_synthetic(seed=2, frames=6, lr_size=(64, 64), sprite_lr=24)
    write_sequence(v.lr, root / "lr")
    write_sequence(v.hr, root / "hr")
    return root


class TestConfig:
    def test_defaults_round_trip(self):
        cfg = PipelineConfig()
        assert cfgmod.apply(PipelineConfig(), cfgmod.parse_text(cfgmod.dumps(cfg))) == cfg

    def test_every_field_addressable(self):
        keys = [k for k, _ in cfgmod.to_items(PipelineConfig())]
        assert "search.patch_size" in keys and "selection.delta" in keys
        assert "fusion.temperature" in keys and "pipeline.upscale" in keys
        assert len(keys) == len(set(keys))

    @given(delta=st.floats(0.001, 10, allow_nan=False), k=st.integers(0, 6),
           alpha=st.floats(0, 1), workers=st.integers(1, 8),
           scales=st.lists(st.floats(1.05, 4.0), min_size=1, max_size=5, unique=True),
           alignment=st.sampled_from(["affine", "swap"]))
    @settings(max_examples=40, deadline=None)
    def test_round_trip(self, delta, k, alpha, workers, scales, alignment):
        scales = sorted(scales)
        cfg = cfgmod.apply(PipelineConfig(), {
            "selection.delta": repr(delta), "selection.k": str(k), "fusion.alpha": repr(alpha),
            "pipeline.workers": str(workers), "pipeline.alignment": alignment,
            "search.scale_sequence": ",".join(repr(s) for s in scales)})
        assert cfg.selection.delta == delta and cfg.search.scale_sequence == ScaleSequence(tuple(scales))
        text = cfgmod.manifest(cfg, {"frames": "0..3"})
        assert cfgmod.apply(PipelineConfig(), cfgmod.parse_text(text)) == cfg

    def test_overrides_after_file(self, tmp_path):
        path = tmp_path / "run.cfg"
        path.write_text("# comment\nselection.k = 2\npipeline.local_refs = 1\n")
        cfg = cfgmod.load(path, ["selection.k=4"])
        assert (cfg.K, cfg.V) == (4, 1)

    @pytest.mark.parametrize("bad", [{"selection.kk": "1"}, {"nosuch.k": "1"},
                                     {"pipeline.search": "x"}, {"selection.k": "three"},
                                     {"pipeline.upscale": "5"}, {"pipeline.alignment": "swirl"}])
    def test_rejects(self, bad):
        with pytest.raises(cfgmod.ConfigError):
            cfgmod.apply(PipelineConfig(), bad)

    def test_malformed_text(self):
        with pytest.raises(cfgmod.ConfigError):
            cfgmod.parse_text("selection.k 3\n")
        with pytest.raises(cfgmod.ConfigError):
            cfgmod.parse_overrides(["selection.k"])


class TestFrames:
    def test_ranges(self):
        assert parse_frames("2..4", 10) == [2, 3, 4]
        assert parse_frames("7..", 10) == [7, 8, 9]
        assert parse_frames("3", 10) == [3]
        assert parse_frames(None, 3) == [0, 1, 2]

    @pytest.mark.parametrize("text", ["4..2", "0..10", "x", "-1"])
    def test_bad(self, text):
        with pytest.raises(UsageError):
            parse_frames(text, 10)


class TestPanel:
    def imgs(self, n=4, shape=(20, 30, 3)):
        rng = np.random.default_rng(0)
        return [(f"m{i}", rng.random(shape)) for i in range(n)]

    def test_grid_dimensions(self, tmp_path):
        out = render_panel(self.imgs(), tmp_path / "p.png")
        assert Image.open(out).size == (2 * 30, 2 * (20 + LABEL_HEIGHT))
        out = render_panel(self.imgs(3), tmp_path / "q.png", columns=3)
        assert Image.open(out).size == (3 * 30, 20 + LABEL_HEIGHT)

    def test_crop_and_determinism(self, tmp_path):
        a = render_panel(self.imgs(), tmp_path / "a.png", crop=(5, 2, 10, 8))
        b = render_panel(self.imgs(), tmp_path / "b.png", crop=(5, 2, 10, 8))
        assert Image.open(a).size == (20, 2 * (8 + LABEL_HEIGHT))
        assert a.read_bytes() == b.read_bytes()
        # tile content is the cropped image, below its label strip
        tile = np.asarray(Image.open(a))[LABEL_HEIGHT:LABEL_HEIGHT + 8, :10]
        ref = np.floor(self.imgs()[0][1][2:10, 5:15] * 255 + 0.5).astype(np.uint8)
        assert np.array_equal(tile, ref)

    def test_errors(self, tmp_path):
        with pytest.raises(UsageError):
            render_panel(self.imgs(1), tmp_path / "x.png")
        with pytest.raises(UsageError):
            render_panel(self.imgs(2) + [("odd", np.zeros((21, 30, 3)))], tmp_path / "x.png")
        with pytest.raises(UsageError):
            render_panel(self.imgs(), tmp_path / "x.png", crop=(25, 0, 10, 5))
        assert not (tmp_path / "x.png").exists()


class TestCli:
    def test_usage_errors(self, tmp_path):
        assert run_cli([]) == 1
        assert run_cli(["frobnicate"]) == 1
        assert run_cli(["sr", "--out", str(tmp_path)]) == 1
        assert run_cli(["synth", "--out", str(tmp_path / "s"), "--planted", "1.8"]) == 1

    def test_io_error(self, tmp_path):
        assert run_cli(["sr", "--in", str(tmp_path / "missing"), "--out", str(tmp_path / "o")]) == 2

    def test_bad_override_is_usage_error(self, corpus, tmp_path):
        code = run_cli(["sr", "--in", str(corpus / "lr"), "--out", str(tmp_path / "o"),
                        "--set", "selection.bogus=1"])
        assert code == 1 and not (tmp_path / "o").exists()

    def test_synth_is_deterministic(self, tmp_path):
        args = ["synth", "--seed", "7", "--frames", "12"]
        assert run_cli(args + ["--out", str(tmp_path / "a")]) == 0
        assert run_cli(args + ["--out", str(tmp_path / "b")]) == 0
        files = tree(tmp_path / "a")
        assert files == tree(tmp_path / "b")
        assert "placements.csv" in files and "lr/frame_000011.png" in files
        for f in files:
            assert (tmp_path / "a" / f).read_bytes() == (tmp_path / "b" / f).read_bytes()

    def test_sr_outputs_and_manifest_replay(self, corpus, tmp_path):
        out = tmp_path / "run1"
        assert run_cli(["sr", "--in", str(corpus / "lr"), "--out", str(out), "--frames", "1..2",
                        "--gt", str(corpus / "hr"), "--set", "selection.k=2",
                        "--set", "fusion.alpha=0.7"]) == 0
        assert tree(out) == ["frame_000001.png", "frame_000002.png", "manifest.cfg",
                             "metrics.csv", "report.csv"]
        assert Image.open(out / "frame_000001.png").size == (256, 256)
        assert len((out / "report.csv").read_text().splitlines()) == 1 + 2 * 9
        again = tmp_path / "run2"
        assert run_cli(["sr", "--in", str(corpus / "lr"), "--out", str(again), "--frames", "1..2",
                        "--config", str(out / "manifest.cfg")]) == 0
        for f in ("frame_000001.png", "frame_000002.png", "report.csv", "manifest.cfg"):
            assert (out / f).read_bytes() == (again / f).read_bytes()

    def test_analyze_metrics_panel_stay_in_out(self, corpus, tmp_path):
        before = tree(corpus)
        out = tmp_path / "an"
        assert run_cli(["analyze", "--in", str(corpus / "lr"), "--out", str(out), "--frames", "0"]) == 0
        lines = (out / "recurrence.csv").read_text().splitlines()
        assert lines[0] == "frame_index,scale,pass_fraction" and len(lines) == 8
        me = tmp_path / "me"
        assert run_cli(["metrics", "--in", str(corpus / "hr"), "--gt", str(corpus / "hr"),
                        "--out", str(me), "--frames", "0..1"]) == 0
        assert (me / "metrics.csv").read_text().splitlines()[1].split(",")[1] == "inf"
        pa = tmp_path / "pa" / "panel.png"
        hr = sorted((corpus / "hr").iterdir())
        assert run_cli(["panel", "--in", *[f"f{i}={p}" for i, p in enumerate(hr[:4])],
                        "--out", str(pa), "--crop", "0,0,64,64"]) == 0
        assert Image.open(pa).size == (128, 2 * (64 + LABEL_HEIGHT))
        assert run_cli(["panel", "--in", str(hr[0]), str(hr[1]), "--out", str(pa),
                        "--crop", "500,0,64,64"]) == 1
        assert tree(corpus) == before
        assert tree(tmp_path) == ["an/recurrence.csv", "me/metrics.csv", "pa/panel.png"]

    def test_metrics_count_mismatch(self, corpus, tmp_path):
        assert run_cli(["metrics", "--in", str(corpus / "hr"), "--gt", str(corpus / "lr"),
                        "--out", str(tmp_path)]) == 1
