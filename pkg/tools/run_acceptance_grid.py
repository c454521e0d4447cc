"""Warm the cached training cells behind the score-curve acceptance tests.

The acceptance gate trains 4 modes x 5 seeds x 2M env steps on first run
(hours on one core).  Running this script ahead of time fills the same
cache ( .acceptance_runs/ at the repo root ), so the test session itself
is quick.  Already-current cells are skipped, and an interrupted grid
resumes at the next missing cell.

    python3 tools/run_acceptance_grid.py                 # everything
    python3 tools/run_acceptance_grid.py --modes mail --seeds 1,2
"""

import argparse
import sys
import time
from pathlib import Path

sys.path.insert(0, str(Path(__file__).resolve().parent.parent / "tests"))

import test_acceptance as gate  # noqa: E402


def main() -> int:
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--modes", default=",".join(gate.GRID_MODES),
                    help="comma-separated subset of %s" % (gate.GRID_MODES,))
    ap.add_argument("--seeds", default=",".join(map(str, gate.GRID_SEEDS)),
                    help="comma-separated subset of %s" % (gate.GRID_SEEDS,))
    ap.add_argument("--quiet", action="store_true",
                    help="suppress per-evaluation progress lines")
    args = ap.parse_args()

    modes = [m.strip() for m in args.modes.split(",") if m.strip()]
    seeds = [int(s) for s in args.seeds.split(",") if s.strip()]
    bad = set(modes) - set(gate.GRID_MODES)
    if bad:
        ap.error(f"unknown modes: {sorted(bad)}")

    print(f"dataset: {gate.ensure_dataset()}", flush=True)
    progress = None if args.quiet else lambda line: print(line, flush=True)
    t0 = time.time()
    for mode in modes:
        for seed in seeds:
            cell_t0 = time.time()
            res = gate.ensure_cell(mode, seed, progress=progress)
            final = res["evals"][-1]
            took = time.time() - cell_t0
            cached = "cached" if took < 5 else f"{took / 60:.1f} min"
            print(f"cell {mode} seed {seed}: final eval "
                  f"{final['eval_score_mean']:.2f} at step {final['step']} "
                  f"({cached})", flush=True)
    print(f"grid complete in {(time.time() - t0) / 60:.1f} min", flush=True)
    return 0


if __name__ == "__main__":
    raise SystemExit(main())
