"""Experiment configuration files (TOML).

Relative data paths resolve against the config file's directory after
``$VAR`` and ``~`` expansion.

Every section and key is checked against a fixed schema; unknown names and
wrongly typed values raise ConfigError. See ``configs/mq2008_p1n9.toml``
for a complete example.
"""

import math
import os
import re
from dataclasses import dataclass, field, replace
from pathlib import Path

try:
    import tomllib
except ModuleNotFoundError:  # python < 3.11
    import tomli as tomllib

from .data import SamplingStrategy, SparsityProfile
from .errors import ConfigError
from .losses import LossKind
from .meta import FIRST_ORDER, SECOND_ORDER, MetaConfig

ARMS = ("LTR", "LTR+SMOTE", "MLTR_no_finetune", "MLTR_finetune")

_INT = (int,)
_NUM = (int, float)

# section -> key -> (types, default)
SCHEMA = {
    "data": {
        "path": ((str, list), None),
        "name": ((str,), None),
        "expected_dims": (_INT, None),
        "normalize": ((bool,), True),
    },
    "split": {
        "ratios": ((list,), [0.8, 0.1, 0.1]),
    },
    "model": {
        "hidden": ((list,), [64, 32]),
    },
    "meta": {
        "alpha": (_NUM, 0.01),
        "beta": (_NUM, 0.001),
        "inner_steps": (_INT, 3),
        "batch_size": (_INT, 32),
        "epochs": (_INT, 100),
        "gradient_mode": ((str,), FIRST_ORDER),
        "strategy": ((str,), "fixed"),
        "loss": ((str,), "ranknet"),
        "sigma": (_NUM, 1.0),
    },
    "finetune": {
        "epochs": (_INT, 1),
        "lr": (_NUM, None),
        "mode": ((str,), "per_query"),
        "val_epochs": (_INT, 1),
        "select_k": (_INT, 10),
    },
    "smote": {
        "k_neighbors": (_INT, 5),
        "ratio": (_NUM, 1.0),
    },
    "experiment": {
        "arms": ((list,), ["LTR", "MLTR_finetune"]),
        "seeds": ((list,), [0]),
        "train_profile": ((str,), "p1n9"),
        "tuning_profile": ((str,), "p1n9"),
        "out": ((str,), "results"),
        "formats": ((list,), ["csv", "jsonl"]),
        "record_timing": ((bool,), True),
    },
    "sweep": {
        "train_profiles": ((list,), None),
        "tuning_profiles": ((list,), None),
        "reference_arm": ((str,), "LTR"),
        "reference_train_profile": ((str,), None),
    },
}


@dataclass(frozen=True)
class ExperimentConfig:
    data_paths: tuple
    data_name: str
    expected_dims: int | None = None
    normalize: bool = True
    split_ratios: tuple = (0.8, 0.1, 0.1)
    hidden: tuple = (64, 32)
    meta: MetaConfig = field(default_factory=MetaConfig)
    finetune_epochs: int = 1
    finetune_lr: float | None = None
    finetune_mode: str = "per_query"
    smote_k: int = 5
    smote_ratio: float = 1.0
    arms: tuple = ("LTR", "MLTR_finetune")
    seeds: tuple = (0,)
    train_profile: SparsityProfile = SparsityProfile(1, 9)
    tuning_profile: SparsityProfile = SparsityProfile(1, 9)
    out_dir: str = "results"
    formats: tuple = ("csv", "jsonl")
    record_timing: bool = True
    sweep_train_profiles: tuple = ()
    sweep_tuning_profiles: tuple = ()
    reference_arm: str = "LTR"
    reference_train_profile: SparsityProfile | None = None

    def with_(self, **kw):
        return replace(self, **kw)

    @property
    def tune_lr(self):
        return self.meta.alpha if self.finetune_lr is None else self.finetune_lr


def _check(section, key, value, types):
    if isinstance(value, bool) and bool not in types:
        raise ConfigError(f"[{section}] {key}: expected {'/'.join(t.__name__ for t in types)}, got bool")
    if not isinstance(value, types):
        raise ConfigError(f"[{section}] {key}: expected {'/'.join(t.__name__ for t in types)}, got {type(value).__name__}")
    if isinstance(value, float) and not math.isfinite(value):
        raise ConfigError(f"[{section}] {key}: must be finite")


def _resolve(raw):
    unknown = set(raw) - set(SCHEMA)
    if unknown:
        raise ConfigError(f"unknown config sections: {sorted(unknown)}")
    out = {}
    for section, keys in SCHEMA.items():
        given = raw.get(section, {})
        if not isinstance(given, dict):
            raise ConfigError(f"[{section}] must be a table")
        bad = set(given) - set(keys)
        if bad:
            raise ConfigError(f"unknown keys in [{section}]: {sorted(bad)}")
        for key, (types, default) in keys.items():
            if key in given:
                _check(section, key, given[key], types)
                out[section, key] = given[key]
            else:
                out[section, key] = default
    return out


def _profile(text, where):
    try:
        return SparsityProfile.parse(text)
    except (ValueError, TypeError) as exc:
        raise ConfigError(f"{where}: {exc}") from None


def _profiles(values, where):
    if values is None:
        return ()
    if not values:
        raise ConfigError(f"{where}: must be non-empty")
    return tuple(_profile(v, where) for v in values)


def build_config(raw: dict, base_dir: Path | None = None) -> ExperimentConfig:
    v = _resolve(raw)
    path = v["data", "path"]
    if path is None:
        raise ConfigError("[data] path is required")
    paths = (path,) if isinstance(path, str) else tuple(path)
    if not paths or not all(isinstance(p, str) for p in paths):
        raise ConfigError("[data] path must be a string or list of strings")
    paths = tuple(os.path.expandvars(os.path.expanduser(p)) for p in paths)
    unset = [m for p in paths for m in re.findall(r"\$\{?(\w+)", p)]
    if unset:
        raise ConfigError(f"[data] path uses unset environment variable(s): {', '.join(unset)}")
    if base_dir is not None:
        paths = tuple(str(p if Path(p).is_absolute() else (base_dir / p)) for p in paths)
    ratios = v["split", "ratios"]
    if len(ratios) != 3 or not all(isinstance(r, _NUM) and not isinstance(r, bool) for r in ratios):
        raise ConfigError("[split] ratios must be three numbers")
    if any(r < 0 for r in ratios) or abs(sum(ratios) - 1.0) > 1e-9:
        raise ConfigError("[split] ratios must be non-negative and sum to 1")
    hidden = v["model", "hidden"]
    if not all(isinstance(h, int) and not isinstance(h, bool) and h >= 1 for h in hidden):
        raise ConfigError("[model] hidden must be a list of positive integers")

    arms = v["experiment", "arms"]
    if not arms:
        raise ConfigError("[experiment] arms must be non-empty")
    for a in arms:
        if a not in ARMS:
            raise ConfigError(f"[experiment] unknown arm {a!r}; expected one of {ARMS}")
    seeds = v["experiment", "seeds"]
    if not seeds or not all(isinstance(s, int) and not isinstance(s, bool) and s >= 0 for s in seeds):
        raise ConfigError("[experiment] seeds must be a non-empty list of non-negative integers")
    formats = v["experiment", "formats"]
    if not formats or not set(formats) <= {"csv", "jsonl"}:
        raise ConfigError("[experiment] formats must be a non-empty subset of ['csv', 'jsonl']")

    train_profile = _profile(v["experiment", "train_profile"], "[experiment] train_profile")
    tuning_profile = _profile(v["experiment", "tuning_profile"], "[experiment] tuning_profile")
    try:
        loss = LossKind(v["meta", "loss"], float(v["meta", "sigma"]))
        strategy = SamplingStrategy.parse(v["meta", "strategy"])
        strategy.step_profile(train_profile)
        if v["meta", "gradient_mode"] not in (FIRST_ORDER, SECOND_ORDER):
            raise ConfigError(f"[meta] gradient_mode must be {FIRST_ORDER!r} or {SECOND_ORDER!r}")
        if v["finetune", "mode"] not in ("pooled", "per_query"):
            raise ConfigError("[finetune] mode must be 'pooled' or 'per_query'")
        if v["finetune", "epochs"] < 0 or v["finetune", "val_epochs"] < 0:
            raise ConfigError("[finetune] epochs must be >= 0")
        if v["smote", "k_neighbors"] < 1 or v["smote", "ratio"] < 0:
            raise ConfigError("[smote] k_neighbors must be >= 1 and ratio >= 0")
        meta = MetaConfig(
            alpha=float(v["meta", "alpha"]),
            beta=float(v["meta", "beta"]),
            inner_steps=v["meta", "inner_steps"],
            batch_size=v["meta", "batch_size"],
            epochs=v["meta", "epochs"],
            loss=loss,
            gradient_mode=v["meta", "gradient_mode"],
            strategy=strategy,
            profile=train_profile,
            hidden=tuple(hidden),
            tuning_profile=tuning_profile,
            val_finetune_epochs=v["finetune", "val_epochs"],
            finetune_lr=None if v["finetune", "lr"] is None else float(v["finetune", "lr"]),
            finetune_mode=v["finetune", "mode"],
            val_k=v["finetune", "select_k"],
        )
    except ValueError as exc:
        raise ConfigError(f"[meta] {exc}") from None

    ref = v["sweep", "reference_train_profile"]
    if v["sweep", "reference_arm"] not in ARMS:
        raise ConfigError(f"[sweep] unknown reference_arm {v['sweep', 'reference_arm']!r}")
    return ExperimentConfig(
        data_paths=paths,
        data_name=v["data", "name"] or Path(paths[0]).stem,
        expected_dims=v["data", "expected_dims"],
        normalize=v["data", "normalize"],
        split_ratios=tuple(float(r) for r in ratios),
        hidden=tuple(hidden),
        meta=meta,
        finetune_epochs=v["finetune", "epochs"],
        finetune_lr=meta.finetune_lr,
        finetune_mode=meta.finetune_mode,
        smote_k=v["smote", "k_neighbors"],
        smote_ratio=float(v["smote", "ratio"]),
        arms=tuple(arms),
        seeds=tuple(seeds),
        train_profile=train_profile,
        tuning_profile=tuning_profile,
        out_dir=v["experiment", "out"],
        formats=tuple(formats),
        record_timing=v["experiment", "record_timing"],
        sweep_train_profiles=_profiles(v["sweep", "train_profiles"], "[sweep] train_profiles"),
        sweep_tuning_profiles=_profiles(v["sweep", "tuning_profiles"], "[sweep] tuning_profiles"),
        reference_arm=v["sweep", "reference_arm"],
        reference_train_profile=None if ref is None else _profile(ref, "[sweep] reference_train_profile"),
    )


def loads(text: str, base_dir: Path | None = None) -> ExperimentConfig:
    try:
        raw = tomllib.loads(text)
    except tomllib.TOMLDecodeError as exc:
        raise ConfigError(f"config is not valid TOML: {exc}") from None
    return build_config(raw, base_dir)


def load(path) -> ExperimentConfig:
    path = Path(path)
    try:
        text = path.read_text()
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from None
    return loads(text, path.parent)
