"""Run the method x setting x condition matrix and print the success table.

    python3 scripts/run_table.py --config configs/experiment.yaml --checkpoint runs/idm/checkpoint.jsonl
"""

import argparse
import dataclasses
import logging
import time

from gatedplan.config import load_config
from gatedplan.harness import run_experiment, write_experiment


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--config", default="configs/experiment.yaml")
    ap.add_argument("--checkpoint", help="trained model; trained from the config if omitted")
    ap.add_argument("--trials", type=int)
    ap.add_argument("--workers", type=int, default=1)
    ap.add_argument("--out-dir", default="runs/table")
    args = ap.parse_args()
    logging.basicConfig(level=logging.INFO, format="%(message)s")

    cfg = load_config(args.config)
    over = {"workers": args.workers}
    if args.checkpoint:
        over["checkpoint"] = args.checkpoint
    if args.trials:
        over["trials"] = args.trials
    cfg = dataclasses.replace(cfg, **over)
    t0 = time.perf_counter()
    res = run_experiment(cfg)
    print(res.table())
    print(res.failures_csv)
    paths = write_experiment(args.out_dir, res, cfg.world.obs_width)
    print(f"{len(res.logs)} episodes in {time.perf_counter() - t0:.0f}s; wrote {paths['results']}")


if __name__ == "__main__":
    main()
