"""Experiment orchestration: arms x seeds x sparsity profiles -> result tables.

Randomness of a cell is derived with ``SeedSequence(seed, spawn_key=...)``:

* query split:            ``(STREAM_SPLIT,)``
* training episodes/init: ``(STREAM_TRAIN, p, n)`` of the train profile;
  shared by LTR and MLTR so both consume the same episodes
* SMOTE draws:            ``(STREAM_SMOTE, p, n, arm_id)``
* tuning/eval sampling:   ``(STREAM_FINETUNE, p, n)`` of the tuning profile;
  shared by every arm and train profile

where ``arm_id`` is the arm's position in ``config.ARMS``. Adding or
removing arms therefore never changes another arm's random draws.
"""

import csv
import json
import logging
import math
import time
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path

import numpy as np

from .config import ARMS, ExperimentConfig
from .data import normalize_features, smote_augment, split_by_query
from .errors import ConfigError
from .letor_io import read_dataset
from .meta import baseline_train, derived_seed, fine_tune, finetune_splits, meta_train, stream
from .metrics import evaluate_model, paired_t_test

log = logging.getLogger(__name__)

STREAM_SPLIT = 10
STREAM_TRAIN = 11
STREAM_SMOTE = 12
STREAM_FINETUNE = 13

REPORT_KS = (1, 5, 10)


@dataclass
class ResultRow:
    arm: str
    loss: str
    train_profile: str
    tuning_profile: str
    seed: int
    ndcg1: float
    ndcg5: float
    ndcg10: float
    skipped: int
    seconds: float


RESULT_FIELDS = tuple(f.name for f in fields(ResultRow))


@dataclass
class SignificanceRow:
    arm: str
    baseline_arm: str
    loss: str
    train_profile: str
    tuning_profile: str
    n_pairs: int
    mean_diff: float
    t_statistic: float
    dof: int
    p_value: float
    significant: bool


@dataclass
class ExperimentResult:
    rows: list
    significance: list
    per_query: dict = field(default_factory=dict)
    relative: list = field(default_factory=list)
    models: dict = field(default_factory=dict)


def model_kind(arm):
    return {"LTR": "ltr", "LTR+SMOTE": "ltr_smote"}.get(arm, "mltr")


def load_corpus(cfg: ExperimentConfig):
    ds = read_dataset(list(cfg.data_paths), cfg.expected_dims, cfg.data_name)
    return normalize_features(ds) if cfg.normalize else ds


class _Cells:
    """Shared state of one run: splits, trained models and fine-tune samples."""

    def __init__(self, cfg: ExperimentConfig, dataset):
        self.cfg = cfg
        self.dataset = dataset
        self._splits = {}
        self._models = {}
        self._ft = {}

    def split(self, seed):
        if seed not in self._splits:
            self._splits[seed] = split_by_query(self.dataset, self.cfg.split_ratios, derived_seed(seed, STREAM_SPLIT))
        return self._splits[seed]

    def finetune_sets(self, seed, profile):
        key = (seed, profile)
        if key not in self._ft:
            _, _, test = self.split(seed)
            self._ft[key] = finetune_splits(test, profile, stream(seed, STREAM_FINETUNE, profile.p, profile.n))
        return self._ft[key]

    def train_config(self, seed, train_profile, tuning_profile):
        return self.cfg.meta.with_(
            seed=derived_seed(seed, STREAM_TRAIN, train_profile.p, train_profile.n),
            profile=train_profile,
            tuning_profile=tuning_profile,
        )

    def model(self, kind, seed, train_profile, tuning_profile):
        key = (kind, seed, train_profile, tuning_profile)
        if key in self._models:
            return self._models[key]
        train, val, _ = self.split(seed)
        mcfg = self.train_config(seed, train_profile, tuning_profile)
        t0 = time.perf_counter()
        if kind == "mltr":
            theta, history = meta_train(train, val, mcfg)
        else:
            if kind == "ltr_smote":
                rng = stream(seed, STREAM_SMOTE, train_profile.p, train_profile.n, ARMS.index("LTR+SMOTE"))
                train = smote_augment(train, self.cfg.smote_k, self.cfg.smote_ratio, rng)
            theta, history = baseline_train(train, val, mcfg)
        seconds = time.perf_counter() - t0
        log.info("trained %s seed=%d %s: best epoch %s val %.4f (%.1fs)", kind, seed, train_profile,
                 history.best_epoch, history.best_val_ndcg or math.nan, seconds)
        self._models[key] = (theta, history, seconds)
        return self._models[key]


def _run(cfg: ExperimentConfig, dataset, train_profiles, tuning_profiles) -> ExperimentResult:
    cells = _Cells(cfg, dataset)
    arms = [a for a in ARMS if a in cfg.arms]
    rows, per_query, models = [], {}, {}
    for seed in cfg.seeds:
        _, _, test = cells.split(seed)
        for tp in train_profiles:
            for up in tuning_profiles:
                ft = cells.finetune_sets(seed, up)
                for arm in arms:
                    theta, history, train_seconds = cells.model(model_kind(arm), seed, tp, up)
                    models[arm, seed, str(tp), str(up)] = (theta, history)
                    t0 = time.perf_counter()
                    epochs = 0 if arm == "MLTR_no_finetune" else cfg.finetune_epochs
                    tuned = fine_tune(theta, test, ft.tuning, epochs, cfg.tune_lr, cfg.meta.loss, mode=cfg.finetune_mode)
                    m = evaluate_model(tuned, test, ft.eval, ks=REPORT_KS)
                    seconds = train_seconds + time.perf_counter() - t0 if cfg.record_timing else 0.0
                    per_query[arm, seed, str(tp), str(up)] = {q: v[10] for q, v in m.per_query.items()}
                    rows.append(ResultRow(
                        arm, str(cfg.meta.loss), str(tp), str(up), seed,
                        m.aggregate[1], m.aggregate[5], m.aggregate[10],
                        len(ft.skipped_ids) + m.skipped, seconds,
                    ))
    sig = significance_table(rows, per_query, cfg)
    return ExperimentResult(rows, sig, per_query, models=models)


def significance_table(rows, per_query, cfg):
    """Paired t-tests of each MLTR arm against LTR over per-query NDCG@10.

    Pairs are (seed, query id) present in both arms' evaluations of the
    same profile cell, pooled across seeds.
    """
    out = []
    present = {(r.arm, r.train_profile, r.tuning_profile) for r in rows}
    cells = sorted({(r.train_profile, r.tuning_profile) for r in rows})
    for arm in ("MLTR_no_finetune", "MLTR_finetune"):
        for tp, up in cells:
            if (arm, tp, up) not in present or ("LTR", tp, up) not in present:
                continue
            a, b = [], []
            for seed in cfg.seeds:
                mq = per_query.get((arm, seed, tp, up), {})
                lq = per_query.get(("LTR", seed, tp, up), {})
                for q in mq:
                    if q in lq:
                        a.append(mq[q])
                        b.append(lq[q])
            if len(a) < 2:
                continue
            res = paired_t_test(a, b)
            out.append(SignificanceRow(
                arm, "LTR", str(cfg.meta.loss), tp, up, len(a), res.mean_difference,
                res.t_statistic, res.degrees_of_freedom, res.p_value, res.significant_at_0_01,
            ))
    return out


def run_experiment(cfg: ExperimentConfig, dataset=None) -> ExperimentResult:
    """Single profile cell: ``cfg.train_profile`` x ``cfg.tuning_profile``."""
    dataset = load_corpus(cfg) if dataset is None else dataset
    return _run(cfg, dataset, [cfg.train_profile], [cfg.tuning_profile])


def sparsest(profiles):
    return min(profiles, key=lambda p: (p.positive_fraction, -p.n))


def run_sparsity_sweep(cfg: ExperimentConfig, train_profiles=None, tuning_profiles=None, dataset=None):
    """Full train x tuning profile grid plus the relative-improvement matrix.

    Each cell's mean NDCG@10 (over seeds) is compared with the reference
    arm trained at the reference train profile on the same tuning profile:
    ``(cell - ref) / ref``.
    """
    train_profiles = list(train_profiles or cfg.sweep_train_profiles)
    tuning_profiles = list(tuning_profiles or cfg.sweep_tuning_profiles)
    if not train_profiles or not tuning_profiles:
        raise ConfigError("sweep needs non-empty train and tuning profile lists")
    ref_tp = cfg.reference_train_profile or sparsest(train_profiles)
    if ref_tp not in train_profiles:
        raise ConfigError(f"reference train profile {ref_tp} is not in the sweep")
    if cfg.reference_arm not in cfg.arms:
        raise ConfigError(f"reference arm {cfg.reference_arm} is not among the configured arms")
    dataset = load_corpus(cfg) if dataset is None else dataset
    result = _run(cfg, dataset, train_profiles, tuning_profiles)
    result.relative = relative_improvement(result.rows, cfg.reference_arm, str(ref_tp))
    return result


def relative_improvement(rows, reference_arm, reference_train_profile):
    means = {}
    for r in rows:
        means.setdefault((r.arm, r.train_profile, r.tuning_profile), []).append(r.ndcg10)
    means = {k: float(np.mean(v)) for k, v in means.items()}
    out = []
    for (arm, tp, up), value in sorted(means.items(), key=lambda kv: (ARMS.index(kv[0][0]), kv[0][1], kv[0][2])):
        ref = means.get((reference_arm, reference_train_profile, up))
        rel = (value - ref) / ref if ref not in (None, 0.0) and not math.isnan(ref) else math.nan
        out.append({
            "arm": arm, "train_profile": tp, "tuning_profile": up,
            "ndcg10": value, "reference_ndcg10": ref, "relative_improvement": rel,
        })
    return out


# reports -----------------------------------------------------------------------

def _csv_value(v):
    if isinstance(v, bool):
        return str(v).lower()
    if isinstance(v, float):
        return f"{v:.6f}"
    return "" if v is None else str(v)


def write_table(records, path_stem, formats, fieldnames=None):
    """Write dict-like records as ``<stem>.csv`` and/or ``<stem>.jsonl``."""
    records = [asdict(r) if hasattr(r, "__dataclass_fields__") else dict(r) for r in records]
    if fieldnames is None:
        fieldnames = list(records[0]) if records else []
    path_stem = Path(path_stem)
    path_stem.parent.mkdir(parents=True, exist_ok=True)
    written = []
    if "csv" in formats:
        p = path_stem.with_suffix(".csv")
        with open(p, "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(fieldnames)
            for r in records:
                w.writerow([_csv_value(r[k]) for k in fieldnames])
        written.append(p)
    if "jsonl" in formats:
        p = path_stem.with_suffix(".jsonl")
        with open(p, "w") as fh:
            for r in records:
                fh.write(json.dumps({k: r[k] for k in fieldnames}) + "\n")
        written.append(p)
    return written


def emit_report(rows, out_dir, formats=("csv", "jsonl"), stem="results"):
    """Result rows with the fixed column order of ``RESULT_FIELDS``."""
    if not rows:
        raise ValueError("no rows to report")
    return write_table(rows, Path(out_dir) / stem, formats, list(RESULT_FIELDS))


def read_csv_rows(path):
    with open(path, newline="") as fh:
        return list(csv.DictReader(fh))


def read_jsonl_rows(path):
    with open(path) as fh:
        return [json.loads(line) for line in fh if line.strip()]


def write_experiment(result: ExperimentResult, out_dir, formats):
    out = emit_report(result.rows, out_dir, formats)
    if result.significance:
        out += write_table(result.significance, Path(out_dir) / "significance", formats)
    if result.relative:
        out += write_table(result.relative, Path(out_dir) / "relative_improvement", formats)
    return out
