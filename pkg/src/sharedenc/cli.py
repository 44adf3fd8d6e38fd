"""``sharedenc`` command line: train, eval, compare, sweep, export-data.

Exit codes: 0 ok, 2 invalid config or arguments (including unmatched
parameter budgets), 3 training diverged, 4 unreadable or corrupt checkpoint.
``SHAREDENC_OUT`` and ``SHAREDENC_JOBS`` supply defaults for ``--out`` and
``--jobs``.
"""
from __future__ import annotations

import argparse
import dataclasses
import json
import logging
import os
import sys
from pathlib import Path

from . import __version__
from .checkpoint import load_checkpoint, save_checkpoint
from .config import DataConfig, TrainConfig, canonical_json, config_hash, load_train_config
from .data import export_dataset, generate_dataset
from .errors import CheckpointError, ConfigError, DivergenceError, InputError
from .experiments import (load_experiment_spec, run_comparison, run_size_sweep,
                          write_metrics_csv, write_params_csv, write_records_jsonl,
                          write_relative_csv)
from .kernels import BACKEND
from .train import build_dataset, evaluate_retrieval, train

log = logging.getLogger("sharedenc")

EXIT_OK, EXIT_CONFIG, EXIT_DIVERGED, EXIT_CHECKPOINT = 0, 2, 3, 4


def _out_dir(value: str | None) -> Path:
    out = value or os.environ.get("SHAREDENC_OUT")
    if not out:
        raise ConfigError("--out is required (or set SHAREDENC_OUT)")
    path = Path(out)
    path.mkdir(parents=True, exist_ok=True)
    return path


def _jobs(value: int | None) -> int:
    if value is not None:
        return value
    try:
        return int(os.environ.get("SHAREDENC_JOBS", "1"))
    except ValueError:
        raise ConfigError("SHAREDENC_JOBS must be an integer") from None


def _parse_k(text: str) -> tuple[int, ...]:
    try:
        ks = tuple(int(k) for k in text.replace(",", " ").split())
    except ValueError:
        raise ConfigError(f"--k: expected a comma-separated list of integers, got {text!r}") from None
    if not ks or min(ks) < 1:
        raise ConfigError("--k: values must be positive integers")
    return ks


def _manifest(out: Path, resolved: dict, seed: int, artifacts: dict, command: str) -> Path:
    manifest = {
        "tool": "sharedenc",
        "version": __version__,
        "kernel_backend": BACKEND,
        "command": command,
        "config": resolved,
        "config_hash": config_hash(resolved),
        "seed": seed,
        "artifacts": artifacts,
    }
    path = out / "manifest.json"
    path.write_text(json.dumps(manifest, indent=2, sort_keys=True) + "\n")
    return path


def _load_config(path: str) -> TrainConfig:
    if path.endswith(".json"):
        try:
            manifest = json.loads(Path(path).read_text())
            return TrainConfig.from_dict(manifest["config"])
        except FileNotFoundError:
            raise ConfigError(f"config file not found: {path}") from None
        except (KeyError, TypeError, json.JSONDecodeError) as exc:
            raise ConfigError(f"{path}: not a run manifest ({exc})") from None
    return load_train_config(path)


def cmd_train(args) -> int:
    cfg = _load_config(args.config)
    if args.seed is not None:
        cfg = dataclasses.replace(cfg, seed=args.seed)
    cfg = dataclasses.replace(cfg, checkpoint_path=None)
    out = _out_dir(args.out)
    data = build_dataset(cfg)
    result = train(cfg, data)
    ckpt = save_checkpoint(result.model, out / "checkpoint.ckpt", cfg)
    with (out / "loss_trace.csv").open("w") as fh:
        fh.write("step,loss\n")
        fh.writelines(f"{i},{v!r}\n" for i, v in enumerate(result.loss_trace))
    h = config_hash(cfg)
    records = []
    for step, i2t, t2i in result.evals:
        records += i2t.records(step=step) + t2i.records(step=step)
    i2t, t2i = evaluate_retrieval(result.model, data, cfg.eval_split, cfg.eval_k,
                                  seed=cfg.seed, cfg_hash=h)
    records += i2t.records(step=cfg.steps, split=cfg.eval_split) + t2i.records(step=cfg.steps, split=cfg.eval_split)
    write_records_jsonl(records, out / "metrics.jsonl")
    _manifest(out, cfg.to_dict(), cfg.seed,
              {"checkpoint": ckpt.name, "loss_trace": "loss_trace.csv", "metrics": "metrics.jsonl"},
              "train")
    for rep in (i2t, t2i):
        print(f"{rep.direction} " + " ".join(f"R@{k}={v:.4f}" for k, v in sorted(rep.recall.items())))
    return EXIT_OK


def cmd_eval(args) -> int:
    ks = _parse_k(args.k)
    model, cfg = load_checkpoint(args.checkpoint)
    out = _out_dir(args.out or os.environ.get("SHAREDENC_OUT") or str(Path(args.checkpoint).parent))
    data_cfg = cfg.data if cfg is not None else DataConfig()
    data = build_dataset(TrainConfig(data=data_cfg))
    h = config_hash(cfg) if cfg is not None else ""
    seed = cfg.seed if cfg is not None else 0
    i2t, t2i = evaluate_retrieval(model, data, args.split, ks, seed=seed, cfg_hash=h)
    records = i2t.records(split=args.split) + t2i.records(split=args.split)
    path = write_records_jsonl(records, out / f"eval_{args.split}.jsonl")
    for rep in (i2t, t2i):
        for k, v in sorted(rep.recall.items()):
            print(f"{rep.direction}\tR@{k}\t{v!r}")
    log.info("wrote %s", path)
    return EXIT_OK


def _run_experiment(args, sweep: bool) -> int:
    spec = load_experiment_spec(args.spec)
    out = _out_dir(args.out)
    ckpt_dir = out / "checkpoints" if args.save_checkpoints else None
    runner = run_size_sweep if sweep else run_comparison
    report = runner(spec, jobs=_jobs(args.jobs), checkpoint_dir=ckpt_dir)
    write_records_jsonl(report.records, out / "records.jsonl")
    write_metrics_csv(report.records, out / "metrics.csv")
    write_relative_csv(report, out / "relative_diff.csv")
    write_params_csv(report, out / "params.csv")
    resolved = spec.to_dict()
    if sweep and tuple(spec.fractions) == (1.0,):
        resolved["fractions"] = sorted({r["fraction"] for r in report.records}, reverse=True)
    _manifest(out, resolved, spec.seeds[0],
              {"records": "records.jsonl", "metrics": "metrics.csv",
               "relative_diff": "relative_diff.csv", "params": "params.csv"},
              "sweep" if sweep else "compare")
    print(report.format_table())
    return EXIT_OK


def cmd_compare(args) -> int:
    return _run_experiment(args, sweep=False)


def cmd_sweep(args) -> int:
    return _run_experiment(args, sweep=True)


def cmd_export_data(args) -> int:
    if args.n < 1:
        raise InputError("--n must be >= 1")
    out = _out_dir(args.out)
    export_dataset(generate_dataset(args.n, args.seed), out)
    print(f"wrote {args.n} pairs to {out}")
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="sharedenc", description=__doc__.splitlines()[0])
    p.add_argument("--version", action="version", version=f"%(prog)s {__version__} ({BACKEND} kernels)")
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True)

    t = sub.add_parser("train", help="train one model from an INI config (or a run manifest)")
    t.add_argument("--config", required=True)
    t.add_argument("--seed", type=int)
    t.add_argument("--out")
    t.set_defaults(func=cmd_train)

    e = sub.add_parser("eval", help="retrieval Recall@k of a checkpoint")
    e.add_argument("--checkpoint", required=True)
    e.add_argument("--split", default="test", choices=("train", "val", "test"))
    e.add_argument("--k", default="1,5,10")
    e.add_argument("--out")
    e.set_defaults(func=cmd_eval)

    for name, func, help_ in (("compare", cmd_compare, "train and compare experiment arms"),
                              ("sweep", cmd_sweep, "compare arms across training-set fractions")):
        c = sub.add_parser(name, help=help_)
        c.add_argument("--spec", required=True)
        c.add_argument("--out")
        c.add_argument("--jobs", type=int)
        c.add_argument("--save-checkpoints", action="store_true")
        c.set_defaults(func=func)

    d = sub.add_parser("export-data", help="write the synthetic corpus as raw files")
    d.add_argument("--n", type=int, default=2560)
    d.add_argument("--seed", type=int, default=0)
    d.add_argument("--out")
    d.set_defaults(func=cmd_export_data)
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except (ConfigError, InputError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except DivergenceError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_DIVERGED
    except CheckpointError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CHECKPOINT


if __name__ == "__main__":
    sys.exit(main())
