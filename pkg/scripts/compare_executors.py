"""Compare the plan executors method by method on one fixed set of scenes.

Runs every method on a fixed set of experimental scenes with strong
interaction-phase distortion in the plan, then prints success rates and the
failure breakdown. The reactive policy is confound-free, so differences come
from how each executor uses the plan.

    python3 scripts/compare_executors.py --checkpoint runs/idm/checkpoint.jsonl --scenes 50
"""

import argparse
from collections import Counter

import numpy as np

from gatedplan import records
from gatedplan.config import ExperimentConfig
from gatedplan.harness import run_episode, train_model
from gatedplan.lowlevel import LowLevelConfig
from gatedplan.metrics import evaluate
from gatedplan.planner import CORRUPTION_PRESETS, CorruptionModel

SETTINGS = ("wrist_invisible", "similar_distractors", "pass_by")


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--checkpoint")
    ap.add_argument("--scenes", type=int, default=50)
    ap.add_argument("--corruption", default="high", choices=sorted(CORRUPTION_PRESETS))
    ap.add_argument("--methods", nargs="+", default=["pure_idm", "hierarchical", "simultaneous"])
    args = ap.parse_args()

    cfg = ExperimentConfig(corruption=CorruptionModel.preset(args.corruption),
                           lowlevel=LowLevelConfig.confound_free())
    model = records.load_checkpoint(args.checkpoint) if args.checkpoint else train_model(cfg)[0]
    for method in args.methods:
        res = [evaluate(run_episode(cfg, model, method, SETTINGS[i % 3], "experimental", i),
                        cfg.metrics) for i in range(args.scenes)]
        instr = np.mean([r.instr for r in res])
        overall = np.mean([r.overall for r in res])
        fails = Counter(r.failure for r in res if not r.overall)
        print(f"{method:<14} instr {instr:.2f}  overall {overall:.2f}  failures {dict(fails)}")


if __name__ == "__main__":
    main()
