"""Arm-by-seed-by-fraction experiment harness with parameter-budget matching.

An experiment spec is an INI file (see :mod:`sharedenc.config` for the shared
``[train]``/``[model]``/``[data]`` sections)::

    [experiment]
    baseline = disjoint
    seeds = 0, 1, 2
    fractions = 1.0, 0.5, 0.25
    k = 1, 5, 10
    tolerance = 0.02

    [arm.disjoint]
    layers_early = 2
    layers_shared = 0

    [arm.shared_vector]
    identifier = vector
    layers_shared = auto      ; deepen until within tolerance of the baseline

    [arm.early]
    layers_early = 2
    match_budget = false      ; ablation arms may exceed the budget

Every arm marked ``match_budget`` (the default) must have a trainable-parameter
count, identifier parameters excluded, within ``tolerance`` of the baseline;
otherwise :class:`ConfigError` is raised before any training starts.
"""
from __future__ import annotations

import csv
import dataclasses
import json
import logging
import os
import typing
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path
from statistics import fmean

from .config import (TrainConfig, _coerce, build_train_config, config_hash, read_ini,
                     section_values)
from .data import generate_dataset, subsample
from .encoder import EncoderModel, ModelConfig, ParamCount, count_params
from .errors import ConfigError
from .train import evaluate_retrieval, train

log = logging.getLogger(__name__)

AUTO = "auto"
MAX_AUTO_DEPTH = 64
METRIC_COLUMNS = ("arm", "seed", "fraction", "params", "direction", "k", "recall")
RELATIVE_COLUMNS = ("arm", "fraction", "direction", "k", "mean_recall", "baseline_mean",
                    "rel_diff_pct", "per_seed")


@dataclass
class ArmSpec:
    name: str
    overrides: dict = field(default_factory=dict)
    match_budget: bool = True


@dataclass
class ExperimentSpec:
    arms: list[ArmSpec]
    baseline: str
    seeds: tuple[int, ...] = (0, 1, 2)
    fractions: tuple[float, ...] = (1.0,)
    ks: tuple[int, ...] = (1, 5, 10)
    tolerance: float = 0.02
    train: TrainConfig = field(default_factory=TrainConfig)

    def __post_init__(self):
        names = [a.name for a in self.arms]
        if len(set(names)) != len(names):
            raise ConfigError(f"[experiment] duplicate arm names in {names}")
        if self.baseline not in names:
            raise ConfigError(f"[experiment] baseline {self.baseline!r} is not one of the arms {names}")
        if not self.seeds:
            raise ConfigError("[experiment] seeds: need at least one seed")
        if not self.fractions or any(not 0 < f <= 1 for f in self.fractions):
            raise ConfigError("[experiment] fractions: every value must lie in (0, 1]")
        if not self.ks or min(self.ks) < 1:
            raise ConfigError("[experiment] k: need positive integers")
        if not 0 < self.tolerance < 1:
            raise ConfigError("[experiment] tolerance: must lie in (0, 1)")

    def to_dict(self) -> dict:
        return dataclasses.asdict(self)


def relative_diff(shared: float, specific: float) -> float:
    """Percentage improvement of ``shared`` over ``specific``; NaN when the reference is 0."""
    if specific == 0:
        return float("nan")
    return (shared - specific) / specific * 100.0


def budget_gap(count: int, reference: int) -> float:
    return abs(count - reference) / reference if reference else float("inf")


def _count(cfg: ModelConfig) -> ParamCount:
    return count_params(EncoderModel(cfg))


def _arm_config(base: ModelConfig, overrides: dict) -> ModelConfig:
    overrides = dict(overrides)
    # derived defaults follow the field that drives them
    if "identifier" in overrides and overrides["identifier"] != base.identifier:
        overrides.setdefault("d_m", None)
    if "d" in overrides and overrides["d"] != base.d:
        overrides.setdefault("d_proj", None)
        if overrides.get("identifier", base.identifier) == "vector":
            overrides.setdefault("d_m", None)
    try:
        return dataclasses.replace(base, **overrides)
    except TypeError as exc:
        raise ConfigError(f"bad model override: {exc}") from None


def match_shared_depth(base: ModelConfig, overrides: dict, target: int, tolerance: float) -> int:
    """Smallest ``layers_shared`` whose matchable count is within ``tolerance`` of ``target``."""
    best = None
    for depth in range(MAX_AUTO_DEPTH + 1):
        count = _count(_arm_config(base, {**overrides, "layers_shared": depth})).matchable
        gap = budget_gap(count, target)
        if gap < tolerance:
            return depth
        if best is None or gap < best[1]:
            best = (depth, gap)
        if count > target:
            break
    raise ConfigError(f"no shared depth brings the arm within {tolerance:.1%} of {target} "
                      f"parameters (closest: {best[0]} layers, {best[1]:.2%} off)")


def resolve_arms(spec: ExperimentSpec) -> dict[str, tuple[ModelConfig, ParamCount]]:
    """Materialise every arm's model config and enforce the parameter budget."""
    base = spec.train.model
    by_name = {a.name: a for a in spec.arms}
    base_arm = by_name[spec.baseline]
    if base_arm.overrides.get("layers_shared") == AUTO:
        raise ConfigError("the baseline arm cannot use layers_shared = auto")
    resolved = {spec.baseline: _arm_config(base, base_arm.overrides)}
    target = _count(resolved[spec.baseline]).matchable
    for arm in spec.arms:
        if arm.name == spec.baseline:
            continue
        overrides = dict(arm.overrides)
        if overrides.get("layers_shared") == AUTO:
            overrides["layers_shared"] = match_shared_depth(base, overrides, target, spec.tolerance)
        resolved[arm.name] = _arm_config(base, overrides)
    out = {}
    for arm in spec.arms:
        cfg = resolved[arm.name]
        count = _count(cfg)
        if arm.match_budget and budget_gap(count.matchable, target) >= spec.tolerance:
            raise ConfigError(
                f"arm {arm.name!r} has {count.matchable} budgeted parameters vs {target} for "
                f"baseline {spec.baseline!r} ({budget_gap(count.matchable, target):.2%} > "
                f"{spec.tolerance:.0%}); adjust its layers or set match_budget = false")
        out[arm.name] = (cfg, count)
    return out


@dataclass
class ComparisonReport:
    baseline: str
    params: dict[str, ParamCount]
    budget_matched: dict[str, bool]
    records: list[dict]
    spec_hash: str = ""

    def summary(self) -> list[dict]:
        """Per (arm, fraction, direction, k): per-seed recalls, mean, and diff vs baseline."""
        groups: dict[tuple, dict[int, float]] = {}
        for r in self.records:
            key = (r["arm"], r["fraction"], r["direction"], r["k"])
            groups.setdefault(key, {})[r["seed"]] = r["recall"]
        rows = []
        for (arm, frac, direction, k), per_seed in sorted(groups.items(), key=_row_order):
            mean = fmean(per_seed.values())
            base = groups.get((self.baseline, frac, direction, k))
            base_mean = fmean(base.values()) if base else float("nan")
            rows.append({
                "arm": arm, "fraction": frac, "direction": direction, "k": k,
                "mean_recall": mean, "baseline_mean": base_mean,
                "rel_diff_pct": relative_diff(mean, base_mean),
                "per_seed": [per_seed[s] for s in sorted(per_seed)],
            })
        return rows

    def fractions(self) -> list[float]:
        return sorted({r["fraction"] for r in self.records}, reverse=True)

    def format_table(self, k: int | None = None) -> str:
        """Plain-text table in the Table-1 layout: one row per arm, one column per fraction."""
        rows = self.summary()
        if k is None:
            k = max(r["k"] for r in rows)
        fracs = self.fractions()
        lines = []
        for direction in ("I2T", "T2I"):
            lines.append(f"{direction} Recall@{k}" + "".join(f"{f:>12g}" for f in fracs))
            sel = [r for r in rows if r["direction"] == direction and r["k"] == k]
            for arm in dict.fromkeys(r["arm"] for r in sel):
                vals = {r["fraction"]: r for r in sel if r["arm"] == arm}
                lines.append(f"  {arm:<22}" + "".join(f"{vals[f]['mean_recall']:>12.4f}" for f in fracs))
                if arm != self.baseline:
                    lines.append(f"  {'  rel diff (%)':<22}"
                                 + "".join(f"{vals[f]['rel_diff_pct']:>+12.2f}" for f in fracs))
        return "\n".join(lines)


def _row_order(item):
    (arm, frac, direction, k), _ = item
    return (arm, -frac, direction, k)


def _job(args) -> list[dict]:
    arm, cfg, params, seed, fraction, train_cfg, ks, ckpt = args
    data = generate_dataset(train_cfg.data.size, train_cfg.data.seed)
    if fraction < 1:
        data = subsample(data, fraction, train_cfg.data.seed)
    run_cfg = dataclasses.replace(train_cfg, model=cfg, seed=seed, eval_every=0,
                                  checkpoint_path=ckpt,
                                  data=dataclasses.replace(train_cfg.data, fraction=fraction))
    result = train(run_cfg, data)
    reports = evaluate_retrieval(result.model, data, train_cfg.eval_split, ks, seed=seed,
                                 cfg_hash=config_hash(run_cfg))
    log.info("arm=%s seed=%d fraction=%g done", arm, seed, fraction)
    return [{"arm": arm, "seed": seed, "fraction": fraction, "params": params,
             "direction": rep.direction, "k": k, "recall": rec,
             "final_loss": result.loss_trace[-1] if result.loss_trace else None,
             "config_hash": rep.config_hash}
            for rep in reports for k, rec in sorted(rep.recall.items())]


def run_comparison(spec: ExperimentSpec, jobs: int = 1,
                   checkpoint_dir: str | os.PathLike | None = None) -> ComparisonReport:
    """Train and evaluate every arm x seed x fraction; budgets are checked first."""
    arms = resolve_arms(spec)
    work = []
    for name, (cfg, count) in arms.items():
        for fraction in spec.fractions:
            for seed in spec.seeds:
                ckpt = None
                if checkpoint_dir is not None:
                    ckpt = str(Path(checkpoint_dir) / f"{name}_seed{seed}_frac{fraction:g}.ckpt")
                work.append((name, cfg, count.total, seed, float(fraction), spec.train,
                             tuple(spec.ks), ckpt))
    if jobs > 1:
        with ProcessPoolExecutor(max_workers=jobs) as pool:
            chunks = list(pool.map(_job, work))
    else:
        chunks = [_job(w) for w in work]
    records = sorted((r for chunk in chunks for r in chunk),
                     key=lambda r: (r["arm"], -r["fraction"], r["seed"], r["direction"], r["k"]))
    match = {a.name: a.match_budget for a in spec.arms}
    return ComparisonReport(spec.baseline, {n: c for n, (_, c) in arms.items()}, match, records,
                            config_hash(spec.to_dict()))


def run_size_sweep(spec: ExperimentSpec, fractions=(1.0, 0.5, 0.25), jobs: int = 1,
                   checkpoint_dir=None) -> ComparisonReport:
    """:func:`run_comparison` over several training-set fractions (nested subsets)."""
    if tuple(spec.fractions) == (1.0,):
        spec = dataclasses.replace(spec, fractions=tuple(fractions))
    return run_comparison(spec, jobs=jobs, checkpoint_dir=checkpoint_dir)


# ------------------------------------------------------------------ output

def write_records_jsonl(records: list[dict], path: str | os.PathLike) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with path.open("w") as fh:
        for r in records:
            fh.write(json.dumps(r, sort_keys=True) + "\n")
    return path


def write_metrics_csv(records: list[dict], path: str | os.PathLike) -> Path:
    """Columns: arm, seed, fraction, params, direction, k, recall."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with path.open("w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(METRIC_COLUMNS)
        for r in records:
            w.writerow([r[c] if c != "recall" else repr(float(r[c])) for c in METRIC_COLUMNS])
    return path


def write_relative_csv(report: ComparisonReport, path: str | os.PathLike) -> Path:
    path = Path(path)
    with path.open("w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(RELATIVE_COLUMNS)
        for row in report.summary():
            w.writerow([row["arm"], row["fraction"], row["direction"], row["k"],
                        repr(row["mean_recall"]), repr(row["baseline_mean"]),
                        f"{row['rel_diff_pct']:.4f}", " ".join(repr(v) for v in row["per_seed"])])
    return path


def write_params_csv(report: ComparisonReport, path: str | os.PathLike) -> Path:
    path = Path(path)
    groups = next(iter(report.params.values())).breakdown.keys()
    with path.open("w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["arm", "total", "budgeted", "budget_matched", *groups])
        for arm, count in report.params.items():
            w.writerow([arm, count.total, count.matchable, report.budget_matched[arm],
                        *count.breakdown.values()])
    return path


# ---------------------------------------------------------------- parsing

def load_experiment_spec(path: str | os.PathLike) -> ExperimentSpec:
    parser = read_ini(path)
    allowed = {"experiment", "train", "model", "data"}
    for sec in parser.sections():
        if sec not in allowed and not sec.startswith("arm."):
            raise ConfigError(f"unknown section [{sec}] (allowed: {sorted(allowed)} and [arm.<name>])")
    if not parser.has_section("experiment"):
        raise ConfigError("missing [experiment] section")
    train_cfg = build_train_config(parser)
    model_fields = {f.name: f for f in dataclasses.fields(ModelConfig)}
    hints = typing.get_type_hints(ModelConfig)
    arms = []
    for sec in parser.sections():
        if not sec.startswith("arm."):
            continue
        overrides, match = {}, True
        for key, raw in parser.items(sec):
            if key == "match_budget":
                match = _coerce(sec, key, raw, bool)
            elif key == "layers_shared" and raw.strip().lower() == AUTO:
                overrides[key] = AUTO
            elif key in model_fields:
                overrides[key] = _coerce(sec, key, raw, hints[key])
            else:
                raise ConfigError(f"[{sec}] {key}: unknown key (model fields or match_budget)")
        arms.append(ArmSpec(sec[len("arm."):], overrides, match))
    if not arms:
        raise ConfigError("experiment spec defines no [arm.<name>] sections")
    exp = dict(parser.items("experiment"))
    known = {"baseline", "seeds", "fractions", "k", "tolerance"}
    unknown = set(exp) - known
    if unknown:
        raise ConfigError(f"[experiment] unknown key(s) {sorted(unknown)} (allowed: {sorted(known)})")
    if "baseline" not in exp:
        raise ConfigError("[experiment] baseline: required")
    kw = {"baseline": exp["baseline"].strip()}
    if "seeds" in exp:
        kw["seeds"] = _coerce("experiment", "seeds", exp["seeds"], tuple[int, ...])
    if "fractions" in exp:
        kw["fractions"] = _coerce("experiment", "fractions", exp["fractions"], tuple[float, ...])
    if "k" in exp:
        kw["ks"] = _coerce("experiment", "k", exp["k"], tuple[int, ...])
    if "tolerance" in exp:
        kw["tolerance"] = _coerce("experiment", "tolerance", exp["tolerance"], float)
    return ExperimentSpec(arms=arms, train=train_cfg, **kw)


def comparison_arms() -> list[ArmSpec]:
    """Disjoint two-tower baseline plus the three shared-encoder identifier variants."""
    return [
        ArmSpec("disjoint", {"layers_early": 2, "layers_shared": 0, "identifier": "none"}),
        ArmSpec("shared", {"layers_shared": AUTO, "identifier": "none"}),
        ArmSpec("shared_token", {"layers_shared": AUTO, "identifier": "token"}),
        ArmSpec("shared_vector", {"layers_shared": AUTO, "identifier": "vector"}),
    ]


def ablation_arms(identifier: str = "vector", shared_layers: int = 4,
                  specific_layers: int = 2) -> list[ArmSpec]:
    """Shared stack alone, with early, late, or both modality-specific stacks (budgets not matched)."""
    base = {"identifier": identifier, "layers_shared": shared_layers}
    return [
        ArmSpec("shared", dict(base)),
        ArmSpec("early", {**base, "layers_early": specific_layers}, match_budget=False),
        ArmSpec("late", {**base, "layers_late": specific_layers}, match_budget=False),
        ArmSpec("both", {**base, "layers_early": specific_layers, "layers_late": specific_layers},
                match_budget=False),
    ]


__all__ = [
    "AUTO", "ArmSpec", "ComparisonReport", "ExperimentSpec", "ablation_arms", "budget_gap",
    "comparison_arms", "load_experiment_spec", "match_shared_depth", "relative_diff",
    "resolve_arms", "run_comparison", "run_size_sweep", "write_metrics_csv",
    "write_params_csv", "write_records_jsonl", "write_relative_csv",
]
