"""Command-line entry point.

Exit code 0 means success. Bad arguments or a bad config exit with 1;
anything that fails at run time exits with 2.
"""

from __future__ import annotations

import argparse
import dataclasses
import logging
import sys

from . import records
from .config import ConfigError, ExperimentConfig, load_config
from .executor import smooth_chunk
from .harness import run_experiment, train_model, write_experiment
from .idm import gradcheck, train
from .play import collect_random_play
from .smoother import SmootherConfig

GRADCHECK_TOL = 1e-4


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(f"{self.prog}: {message}")


def _parser() -> argparse.ArgumentParser:
    p = _Parser(prog="gatedplan", description="Plan-then-act manipulation experiments.")
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)

    def common(sp, out=True):
        sp.add_argument("--config", help="YAML experiment config")
        sp.add_argument("--seed", type=int, help="root seed override")
        if out:
            sp.add_argument("--out-dir", default=".", help="output directory")

    sp = sub.add_parser("collect", help="random play -> dataset file")
    common(sp)
    sp.add_argument("--samples", type=int, help="number of frame pairs")

    sp = sub.add_parser("train", help="dataset -> checkpoint and loss curve")
    common(sp)
    sp.add_argument("--dataset", help="dataset file; collected on the fly if omitted")
    sp.add_argument("--epochs", type=int)

    sp = sub.add_parser("gradcheck", help="finite-difference check of the IDM gradients")
    sp.add_argument("--seed", type=int, default=0)
    sp.add_argument("--models", type=int, default=10)

    sp = sub.add_parser("smooth", help="chunk file -> smoothed chunk file")
    common(sp, out=False)
    sp.add_argument("input")
    sp.add_argument("output")
    sp.add_argument("--neutral", action="store_true", help="identity smoother settings")

    sp = sub.add_parser("eval", help="run the experiment matrix -> CSV tables and logs")
    common(sp)
    sp.add_argument("--checkpoint", help="trained model; trained on the fly if omitted")
    sp.add_argument("--trials", type=int)
    sp.add_argument("--method", action="append", help="restrict to method (repeatable)")
    sp.add_argument("--setting", action="append", help="restrict to setting (repeatable)")
    sp.add_argument("--condition", action="append", help="restrict to condition (repeatable)")
    sp.add_argument("--workers", type=int)

    sp = sub.add_parser("replay", help="episode log -> text trace")
    sp.add_argument("log")
    sp.add_argument("--episode", type=int, help="index of one episode in the file")
    return p


def _config(args) -> ExperimentConfig:
    cfg = load_config(args.config) if getattr(args, "config", None) else ExperimentConfig()
    over = {}
    if getattr(args, "seed", None) is not None:
        over["seed"] = args.seed
    for flag, key in (("trials", "trials"), ("workers", "workers"), ("checkpoint", "checkpoint")):
        if getattr(args, flag, None) is not None:
            over[key] = getattr(args, flag)
    for flag, key in (("method", "methods"), ("setting", "settings"), ("condition", "conditions")):
        if getattr(args, flag, None):
            over[key] = tuple(getattr(args, flag))
    try:
        return dataclasses.replace(cfg, **over)
    except ValueError as e:
        raise ConfigError(str(e)) from None


def _collect(args) -> int:
    cfg = _config(args)
    play = cfg.play if args.samples is None else dataclasses.replace(cfg.play, num_samples=args.samples)
    play = dataclasses.replace(play, seed=cfg.seed)
    data = collect_random_play(cfg.world, play)
    path = records.ensure_dir(args.out_dir) / "dataset.jsonl"
    records.save_dataset(path, data)
    print(f"wrote {len(data)} samples to {path}")
    return 0


def _train(args) -> int:
    cfg = _config(args)
    tcfg = cfg.train if args.epochs is None else dataclasses.replace(cfg.train, epochs=args.epochs)
    if args.dataset:
        data = records.load_dataset(args.dataset)
        model, tl = train(data, cfg.world, tcfg, seed=cfg.seed)
    else:
        model, tl = train_model(dataclasses.replace(cfg, train=tcfg))
    out = records.ensure_dir(args.out_dir)
    records.save_checkpoint(out / "checkpoint.jsonl", model, tcfg.loss)
    records.save_loss_curve(out / "loss_curve.csv", tl.rows())
    print(f"final loss {tl.loss[-1]:.6f}; wrote {out / 'checkpoint.jsonl'} and "
          f"{out / 'loss_curve.csv'}")
    return 0


def _gradcheck(args) -> int:
    errs = gradcheck(n_models=args.models, seed=args.seed)
    worst = max(errs)
    print(f"max relative error {worst:.3e} over {len(errs)} models")
    return 0 if worst <= GRADCHECK_TOL else 2


def _smooth(args) -> int:
    if args.neutral:
        scfg = SmootherConfig.neutral()
    elif args.config:
        scfg = load_config(args.config).smoother
    else:
        scfg = ExperimentConfig().smoother
    chunk = records.load_chunk(args.input)
    records.save_chunk(args.output, smooth_chunk(chunk, scfg))
    return 0


def _eval(args) -> int:
    cfg = _config(args)
    res = run_experiment(cfg)
    paths = write_experiment(args.out_dir, res, cfg.world.obs_width)
    sys.stdout.write(res.table())
    print(f"wrote {paths['results']}")
    return 0


def _replay(args) -> int:
    logs = records.load_logs(args.log)
    if args.episode is not None:
        if not 0 <= args.episode < len(logs):
            raise UsageError(f"episode index {args.episode} out of range (0..{len(logs) - 1})")
        logs = [logs[args.episode]]
    for lg in logs:
        sys.stdout.write(records.replay_trace(lg))
    return 0


COMMANDS = {"collect": _collect, "train": _train, "gradcheck": _gradcheck, "smooth": _smooth,
            "eval": _eval, "replay": _replay}


def main(argv: list[str] | None = None) -> int:
    try:
        args = _parser().parse_args(argv)
    except UsageError as e:
        print(e, file=sys.stderr)
        return 1
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return COMMANDS[args.command](args)
    except (UsageError, ConfigError) as e:
        print(f"usage error: {e}", file=sys.stderr)
        return 1
    except (OSError, ValueError, RuntimeError, ArithmeticError) as e:
        print(f"error: {e}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
