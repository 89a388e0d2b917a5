#!/usr/bin/env python3
"""Sweep the number of global (K) and local (V) references on a synthetic corpus.

    python3 scripts/sweep_refs.py --K 0,1,2,3,4 --V 0,2,4 --frames-used 2..5
"""
import argparse

from selfx.pipeline import PipelineConfig, sweep_references, write_sweep_csv
from selfx.store import FrameStore
from selfx.synthetic import generate_synthetic


def main(argv=None):
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--seed", type=int, default=7)
    ap.add_argument("--frames", type=int, default=24, help="corpus length")
    ap.add_argument("--frames-used", default="2..5", help="query frames to score, a..b")
    ap.add_argument("--K", default="1,2,3,4")
    ap.add_argument("--V", default="2")
    ap.add_argument("--workers", type=int, default=1)
    ap.add_argument("--out", default="sweep.csv")
    args = ap.parse_args(argv)

    video = generate_synthetic(seed=args.seed, frames=args.frames)
    lo, hi = (int(v) for v in args.frames_used.split(".."))
    frames = list(range(lo, hi + 1))
    K = [int(v) for v in args.K.split(",")]
    V = [int(v) for v in args.V.split(",")]
    cfg = PipelineConfig(workers=args.workers)
    rows = sweep_references(FrameStore(video.lr), frames, cfg, K, V, [video.hr[t] for t in frames],
                            [video.masks[t] for t in frames])
    write_sweep_csv(rows, args.out)
    for r in rows:
        print(f"K={r['K']} V={r['V']}  PSNR {r['psnr']:.3f}  SSIM {r['ssim']:.4f}  "
              f"delta {r['delta_psnr']:+.3f}  planted {r['region_psnr']:.3f}")


if __name__ == "__main__":
    main()
