"""Run the synthetic benchmark over several seeds and print mean errors.

Each seed gets its own artifact directory under --out; the summary table at
the end averages top-1 error per method across seeds.

    python3 scripts/run_benchmark.py --seeds 1 2 3 4 5 --out runs/bench
"""

import argparse
import sys
import time
from pathlib import Path

import numpy as np

from tla.config import default_config, parse_config
from tla.harness import run_pipeline


def main(argv=None) -> int:
    ap = argparse.ArgumentParser(description=__doc__.split("\n")[0])
    ap.add_argument("--seeds", type=int, nargs="+", default=[1, 2, 3, 4, 5])
    ap.add_argument("--config", help="config file; defaults apply when omitted")
    ap.add_argument("--out", default="runs/bench")
    ap.add_argument("--quiet", action="store_true")
    args = ap.parse_args(argv)

    base = default_config() if args.config is None else parse_config(Path(args.config).read_text())
    errors = {}
    locs = []
    for seed in args.seeds:
        cfg = base.override(seed=seed)
        out = Path(args.out) / f"seed{seed}"
        t0 = time.monotonic()
        res = run_pipeline(cfg, out, verbose=not args.quiet)
        took = time.monotonic() - t0
        locs.append(res.part_localization)
        for rec in res.records:
            errors.setdefault(rec["method"], []).append(rec["top1_error"])
        print(f"seed {seed}: alpha {res.alpha:.2f} "
              f"part_localization {res.part_localization:.3f} ({took:.0f}s)")

    print(f"\nmean over seeds {args.seeds}")
    width = max(len(m) for m in errors) + 2
    for method in sorted(errors, key=lambda m: np.mean(errors[m])):
        vals = errors[method]
        print(f"  {method:<{width}}{np.mean(vals):.4f}  (std {np.std(vals):.4f})")
    print(f"  part localization mean {np.mean(locs):.3f}")
    return 0


if __name__ == "__main__":
    sys.exit(main())
