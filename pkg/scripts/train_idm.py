"""Train the inverse dynamics model on random play and report held-out gate accuracy.

    python3 scripts/train_idm.py --out-dir runs/idm --samples 50000
"""

import argparse
import dataclasses
import logging
import time

from gatedplan import records
from gatedplan.config import ExperimentConfig, load_config
from gatedplan.idm import gate_accuracy, train
from gatedplan.play import collect_random_play


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--config", help="YAML experiment config (play and train sections are used)")
    ap.add_argument("--samples", type=int, help="override play.num_samples")
    ap.add_argument("--holdout", type=int, default=5000, help="held-out samples for gate accuracy")
    ap.add_argument("--seed", type=int, default=0)
    ap.add_argument("--out-dir", default="runs/idm")
    args = ap.parse_args()
    logging.basicConfig(level=logging.INFO, format="%(message)s")

    cfg = load_config(args.config) if args.config else ExperimentConfig()
    play = dataclasses.replace(cfg.play, seed=args.seed)
    if args.samples is not None:
        play = dataclasses.replace(play, num_samples=args.samples)
    t0 = time.perf_counter()
    data = collect_random_play(cfg.world, play)
    held = collect_random_play(cfg.world, dataclasses.replace(play, num_samples=args.holdout,
                                                              seed=args.seed + 1))
    print(f"collected {len(data)} + {len(held)} samples in {time.perf_counter() - t0:.1f}s")
    t0 = time.perf_counter()
    model, tl = train(data, cfg.world, cfg.train, seed=args.seed)
    print(f"trained in {time.perf_counter() - t0:.1f}s; final loss {tl.loss[-1]:.5f}")
    print(f"held-out gate accuracy {gate_accuracy(model, held):.3f}")

    out = records.ensure_dir(args.out_dir)
    records.save_checkpoint(out / "checkpoint.jsonl", model, cfg.train.loss)
    records.save_loss_curve(out / "loss_curve.csv", tl.rows())
    print(f"wrote {out / 'checkpoint.jsonl'}")


if __name__ == "__main__":
    main()
