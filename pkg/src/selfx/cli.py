"""Command-line entry points: sr, analyze, sweep, synth, metrics, panel.

Exit codes: 0 success, 1 usage error, 2 I/O error, 3 pipeline error.
Diagnostics go to stderr; machine-readable output goes to files under --out.
"""
from __future__ import annotations

import argparse
import csv
import logging
import sys
import time
from pathlib import Path
from typing import Sequence

import numpy as np
from PIL import Image, ImageDraw, ImageFont

from . import config as cfgmod
from .align import NoModelError
from .frames import FRAME_PATTERN, Frame, list_frames, load_png, read_sequence, save_png, \
    write_sequence
from .metrics import evaluate, write_metrics_csv
from .pipeline import analyze_recurrence, run, sweep_references, write_sweep_csv
from .store import FrameStore
from .synthetic import generate_synthetic

log = logging.getLogger("selfx")

EXIT_OK, EXIT_USAGE, EXIT_IO, EXIT_PIPELINE = 0, 1, 2, 3
LABEL_HEIGHT = 14


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(message)


def parse_frames(text: str | None, count: int) -> list[int]:
    """``a..b`` (inclusive), ``a..`` or a single index; ``None`` means all frames."""
    if text is None:
        return list(range(count))
    try:
        if ".." in text:
            a, b = text.split("..", 1)
            lo = int(a) if a else 0
            hi = int(b) if b else count - 1
        else:
            lo = hi = int(text)
    except ValueError:
        raise UsageError(f"--frames expects a..b, got {text!r}") from None
    if not 0 <= lo <= hi < count:
        raise UsageError(f"--frames {text} outside 0..{count - 1}")
    return list(range(lo, hi + 1))


def render_panel(results: Sequence[tuple[str, np.ndarray]], out, crop=None,
                 columns: int | None = None) -> Path:
    """Labelled grid of equally sized images, optionally all cropped to ``(x, y, w, h)``."""
    if len(results) < 2:
        raise UsageError("a panel needs at least two images")
    imgs = []
    for label, img in results:
        data = img.data if isinstance(img, Frame) else np.asarray(img, dtype=np.float64)
        if data.ndim == 2:
            data = np.repeat(data[:, :, None], 3, axis=2)
        imgs.append((str(label), data))
    shape = imgs[0][1].shape
    if any(d.shape != shape for _, d in imgs):
        raise UsageError("panel images differ in size")
    if crop is not None:
        x, y, w, h = (int(v) for v in crop)
        if w <= 0 or h <= 0 or x < 0 or y < 0 or x + w > shape[1] or y + h > shape[0]:
            raise UsageError(f"crop {tuple(crop)} outside the {shape[1]}x{shape[0]} images")
        imgs = [(lab, d[y:y + h, x:x + w]) for lab, d in imgs]
    h, w = imgs[0][1].shape[:2]
    cols = columns or int(np.ceil(np.sqrt(len(imgs))))
    rows = int(np.ceil(len(imgs) / cols))
    cell_h = h + LABEL_HEIGHT
    canvas = Image.new("RGB", (cols * w, rows * cell_h), (255, 255, 255))
    draw = ImageDraw.Draw(canvas)
    font = ImageFont.load_default()
    for i, (label, data) in enumerate(imgs):
        r, c = divmod(i, cols)
        u8 = np.floor(np.clip(data, 0.0, 1.0) * 255.0 + 0.5).astype(np.uint8)
        canvas.paste(Image.fromarray(u8), (c * w, r * cell_h + LABEL_HEIGHT))
        draw.text((c * w + 2, r * cell_h + 1), label, fill=(0, 0, 0), font=font)
    out = Path(out)
    out.parent.mkdir(parents=True, exist_ok=True)
    canvas.save(out)
    return out


def _build_parser() -> _Parser:
    p = _Parser(prog="selfx", description=__doc__.splitlines()[0])
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", parser_class=_Parser)
    sub.required = True

    def common(sp, needs_in=True):
        if needs_in:
            sp.add_argument("--in", dest="inp", required=True, help="directory of PNG frames")
        sp.add_argument("--out", required=True)
        sp.add_argument("--config")
        sp.add_argument("--set", action="append", default=[], metavar="KEY=VALUE")
        sp.add_argument("--workers", type=int)
        sp.add_argument("--seed", type=int)
        sp.add_argument("--scale", type=int, choices=(2, 3, 4))
        sp.add_argument("--frames", help="frame range a..b (inclusive)")

    sr = sub.add_parser("sr", help="super-resolve a PNG sequence")
    common(sr)
    sr.add_argument("--gt", help="ground-truth HR frames; enables metrics.csv")

    an = sub.add_parser("analyze", help="per-frame fraction of patches passing the mean(D) filter")
    common(an)

    sw = sub.add_parser("sweep", help="PSNR/SSIM over global (K) and local (V) reference counts")
    common(sw)
    sw.add_argument("--gt", required=True)
    sw.add_argument("--K", default="1,2,3,4")
    sw.add_argument("--V", default="2")

    sy = sub.add_parser("synth", help="write a seeded synthetic corpus")
    sy.add_argument("--out", required=True)
    sy.add_argument("--seed", type=int, default=0)
    sy.add_argument("--frames", type=int, default=24)
    sy.add_argument("--scale", type=int, choices=(2, 3, 4), default=4)
    sy.add_argument("--planted", default="1.7,2.1,2.9")

    me = sub.add_parser("metrics", help="PSNR/SSIM/Charbonnier of a sequence against ground truth")
    me.add_argument("--in", dest="inp", required=True)
    me.add_argument("--gt", required=True)
    me.add_argument("--out", required=True)
    me.add_argument("--frames")

    pa = sub.add_parser("panel", help="labelled comparison grid")
    pa.add_argument("--in", dest="inp", nargs="+", required=True, help="LABEL=PATH or PATH")
    pa.add_argument("--out", required=True, help="output PNG")
    pa.add_argument("--crop", help="x,y,w,h")
    pa.add_argument("--columns", type=int)
    return p


def _int_list(text: str, flag: str) -> list[int]:
    try:
        return [int(v) for v in text.split(",") if v.strip()]
    except ValueError:
        raise UsageError(f"{flag} expects comma-separated integers") from None


def _config(args):
    overrides = list(args.set)
    if args.workers is not None:
        overrides.append(f"pipeline.workers={args.workers}")
    if args.seed is not None:
        overrides.append(f"pipeline.seed={args.seed}")
    if args.scale is not None:
        overrides.append(f"pipeline.upscale={args.scale}")
    try:
        return cfgmod.load(args.config, overrides)
    except cfgmod.ConfigError as exc:
        raise UsageError(f"config: {exc}") from None


def _load_video(directory):
    frames = read_sequence(directory)
    return frames, FrameStore(frames)


def _gt_for(directory, frames: Sequence[int]):
    return [f.data for f in read_sequence(directory, frames)]


def _cmd_sr(args) -> None:
    cfg = _config(args)
    frames, store = _load_video(args.inp)
    wanted = parse_frames(args.frames, len(frames))
    gt = _gt_for(args.gt, wanted) if args.gt else None
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    tic = time.perf_counter()
    outputs, report = run(store, wanted, cfg, gt)
    log.info("super-resolved %d frame(s) in %.1f s", len(wanted), time.perf_counter() - tic)
    for stage, secs in sorted(report.timings.items()):
        log.info("  %-10s %.2f s", stage, secs)
    for t, img in zip(wanted, outputs):
        save_png(img, out / FRAME_PATTERN.format(t))
    report.write_diagnostics(out / "report.csv")
    (out / "manifest.cfg").write_text(cfgmod.manifest(cfg, {"frames": f"{wanted[0]}..{wanted[-1]}"}))
    if report.metrics is not None:
        write_metrics_csv(report.metrics, out / "metrics.csv")
        log.info("mean PSNR %.3f dB, SSIM %.4f", report.metrics.psnr, report.metrics.ssim)


def _cmd_analyze(args) -> None:
    cfg = _config(args)
    frames, store = _load_video(args.inp)
    wanted = parse_frames(args.frames, len(frames))
    rows = analyze_recurrence(store, wanted, cfg)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    with open(out / "recurrence.csv", "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["frame_index", "scale", "pass_fraction"])
        for t, s, frac in rows:
            w.writerow([t, f"{s:g}", f"{frac:.6f}"])


def _cmd_sweep(args) -> None:
    cfg = _config(args)
    K, V = _int_list(args.K, "--K"), _int_list(args.V, "--V")
    if not K or not V or min(K) < 0 or min(V) < 0:
        raise UsageError("--K and --V need non-negative values")
    frames, store = _load_video(args.inp)
    wanted = parse_frames(args.frames, len(frames))
    rows = sweep_references(store, wanted, cfg, K, V, _gt_for(args.gt, wanted))
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    write_sweep_csv(rows, out / "sweep.csv")


def _cmd_synth(args) -> None:
    try:
        planted = tuple(float(s) for s in args.planted.split(","))
    except ValueError:
        raise UsageError("--planted expects comma-separated scales") from None
    try:
        video = generate_synthetic(seed=args.seed, frames=args.frames, planted_scales=planted,
                                   upscale=args.scale)
    except ValueError as exc:
        raise UsageError(str(exc)) from None
    out = Path(args.out)
    write_sequence(video.lr, out / "lr")
    write_sequence(video.hr, out / "hr")
    write_sequence([m.astype(np.float64) for m in video.masks], out / "masks")
    with open(out / "placements.csv", "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["frame_index", "sprite", "scale", "x", "y", "size"])
        for t, pls in enumerate(video.placements):
            for pl in pls:
                w.writerow([t, pl.sprite, f"{pl.scale:g}", pl.x, pl.y, pl.size])
    (out / "manifest.cfg").write_text(
        f"# seed: {args.seed}\n# frames: {args.frames}\n# upscale: {args.scale}\n"
        f"# planted: {args.planted}\n# query_frames: 0..{video.query_frames[-1]}\n")


def _cmd_metrics(args) -> None:
    preds = list_frames(args.inp)
    gts = list_frames(args.gt)
    if not preds:
        raise FileNotFoundError(f"no PNG frames in {args.inp}")
    if len(preds) != len(gts):
        raise UsageError(f"{len(preds)} predictions but {len(gts)} ground-truth frames")
    wanted = parse_frames(args.frames, len(preds))
    p = [load_png(preds[i], i) for i in wanted]
    g = [load_png(gts[i], i) for i in wanted]
    if any(a.data.shape != b.data.shape for a, b in zip(p, g)):
        raise UsageError("prediction and ground-truth sizes differ")
    report = evaluate(p, g, wanted)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    write_metrics_csv(report, out / "metrics.csv")
    log.info("mean PSNR %.3f dB, SSIM %.4f", report.psnr, report.ssim)


def _cmd_panel(args) -> None:
    results = []
    for item in args.inp:
        label, sep, path = item.partition("=")
        if not sep:
            label, path = Path(item).stem, item
        results.append((label, load_png(path)))
    crop = _int_list(args.crop, "--crop") if args.crop else None
    if crop is not None and len(crop) != 4:
        raise UsageError("--crop expects x,y,w,h")
    render_panel(results, args.out, crop, args.columns)


COMMANDS = {"sr": _cmd_sr, "analyze": _cmd_analyze, "sweep": _cmd_sweep, "synth": _cmd_synth,
            "metrics": _cmd_metrics, "panel": _cmd_panel}


def run_cli(argv: Sequence[str] | None = None) -> int:
    logging.basicConfig(stream=sys.stderr, level=logging.INFO, format="%(message)s")
    try:
        args = _build_parser().parse_args(argv)
        if args.verbose:
            logging.getLogger().setLevel(logging.DEBUG)
        COMMANDS[args.command](args)
    except UsageError as exc:
        print(f"usage error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except OSError as exc:
        print(f"I/O error: {exc}", file=sys.stderr)
        return EXIT_IO
    except (ValueError, RuntimeError, NoModelError, ArithmeticError) as exc:
        print(f"pipeline error: {exc}", file=sys.stderr)
        return EXIT_PIPELINE
    return EXIT_OK


def main() -> None:
    sys.exit(run_cli())


if __name__ == "__main__":
    main()
