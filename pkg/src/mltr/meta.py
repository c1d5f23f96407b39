"""Episodic meta-training, the plain LTR control and meta-test fine-tuning.

Per batch of training queries, every query gets a private copy of the
meta parameters that takes T gradient steps on sampled item lists (the
inner loop). The adapted copy is scored on a held-out list of the same
query; the mean of those test losses over the batch is the meta loss and
the meta parameters take one step along its gradient.

Random streams are derived from ``numpy.random.SeedSequence(seed,
spawn_key=(stream, ...))`` so that the episode of query ``i`` at epoch
``e`` is the same for every trainer and independent of batch order.
"""

import logging
import math
from dataclasses import dataclass, field, replace

import numpy as np

from .data import (
    SamplingStrategy,
    SparsityProfile,
    can_make_episode,
    make_finetune_split,
    make_meta_episode,
)
from .errors import NonFiniteLoss, NoUsableQueries
from .losses import LossKind
from .metrics import evaluate_model
from .ranker import (
    DEFAULT_HIDDEN,
    ListEvaluation,
    ParameterVector,
    RankerSpec,
    apply_sgd_step,
    init_params,
)

log = logging.getLogger(__name__)

FIRST_ORDER = "first_order"
SECOND_ORDER = "second_order"

# stream ids for SeedSequence spawn keys
STREAM_INIT = 0
STREAM_SHUFFLE = 1
STREAM_EPISODE = 2
STREAM_VALIDATION = 3


def stream(seed, *key):
    return np.random.default_rng(np.random.SeedSequence(int(seed), spawn_key=tuple(int(k) for k in key)))


def derived_seed(seed, *key):
    return int(np.random.SeedSequence(int(seed), spawn_key=tuple(int(k) for k in key)).generate_state(1)[0])


@dataclass(frozen=True)
class MetaConfig:
    alpha: float = 0.01
    beta: float = 0.001
    inner_steps: int = 3
    batch_size: int = 32
    epochs: int = 100
    loss: LossKind = field(default_factory=LossKind)
    gradient_mode: str = FIRST_ORDER
    seed: int = 0
    strategy: SamplingStrategy = field(default_factory=SamplingStrategy)
    profile: SparsityProfile = field(default_factory=lambda: SparsityProfile(1, 9))
    hidden: tuple = DEFAULT_HIDDEN
    # validation protocol
    tuning_profile: SparsityProfile = field(default_factory=lambda: SparsityProfile(1, 9))
    val_finetune_epochs: int = 1
    finetune_lr: float | None = None
    finetune_mode: str = "per_query"
    val_k: int = 10

    def __post_init__(self):
        if not (self.alpha >= 0 and self.beta >= 0):
            raise ValueError("learning rates must be non-negative")
        if self.inner_steps < 1 or self.batch_size < 1 or self.epochs < 0:
            raise ValueError("inner_steps and batch_size must be >= 1, epochs >= 0")
        if self.gradient_mode not in (FIRST_ORDER, SECOND_ORDER):
            raise ValueError(f"unknown gradient_mode {self.gradient_mode!r}")
        if self.finetune_mode not in ("pooled", "per_query"):
            raise ValueError(f"unknown finetune_mode {self.finetune_mode!r}")

    @property
    def items_per_step(self):
        return self.profile.k

    @property
    def tune_lr(self):
        return self.alpha if self.finetune_lr is None else self.finetune_lr

    def with_(self, **kw):
        return replace(self, **kw)


@dataclass
class EpochRecord:
    epoch: int
    query_loss: float
    meta_loss: float | None
    val_ndcg: float | None
    used: int
    skipped: int
    aborted: list = field(default_factory=list)


@dataclass
class TrainHistory:
    records: list = field(default_factory=list)
    best_epoch: int | None = None
    best_val_ndcg: float | None = None
    skipped_ids: list = field(default_factory=list)

    def column(self, name):
        return [getattr(r, name) for r in self.records]


@dataclass
class AdaptationTrace:
    params: list  # parameters before each inner step
    losses: list


@dataclass
class AdaptedTask:
    group: object
    train_sets: tuple
    test_set: np.ndarray
    theta_i: ParameterVector
    trace: AdaptationTrace


def _list(group, idx):
    return group.features[idx], group.labels[idx].astype(np.float64)


def inner_adapt(theta: ParameterVector, group, train_sets, cfg: MetaConfig):
    """T sequential gradient steps from a copy of ``theta``; ``theta`` is untouched."""
    theta_i = theta
    params, losses = [], []
    for t, idx in enumerate(train_sets, start=1):
        X, y = _list(group, idx)
        ev = ListEvaluation(theta_i, X, y, cfg.loss)
        if not math.isfinite(ev.loss):
            raise NonFiniteLoss(group.query_id, t)
        params.append(theta_i)
        losses.append(float(ev.loss))
        theta_i = apply_sgd_step(theta_i, ev.grad(), cfg.alpha)
    return theta_i, AdaptationTrace(params, losses)


def adapt_task(theta, group, episode, cfg) -> AdaptedTask:
    theta_i, trace = inner_adapt(theta, group, episode.train_sets, cfg)
    return AdaptedTask(group, episode.train_sets, episode.test_set, theta_i, trace)


def task_test_loss(task: AdaptedTask, loss: LossKind):
    X, y = _list(task.group, task.test_set)
    return ListEvaluation(task.theta_i, X, y, loss)


def meta_gradient(theta: ParameterVector, tasks, cfg: MetaConfig):
    """Gradient of the mean adapted test loss over ``tasks``.

    First-order mode stops the gradient at the adapted parameters. Second
    order back-propagates through each inner step with exact
    Hessian-vector products: ``v <- v - alpha * H_t v`` from the last step
    to the first. Returns ``(gradient, meta_loss)``; the reduction runs in
    the given task order.
    """
    if not tasks:
        raise ValueError("meta_gradient needs at least one task")
    total = np.zeros(len(theta))
    meta_loss = 0.0
    for task in tasks:
        ev = task_test_loss(task, cfg.loss)
        if not math.isfinite(ev.loss):
            raise NonFiniteLoss(task.group.query_id, len(task.train_sets) + 1)
        meta_loss += ev.loss
        v = ev.grad()
        if cfg.gradient_mode == SECOND_ORDER and cfg.alpha != 0.0:
            for p_t, idx in zip(reversed(task.trace.params), reversed(task.train_sets)):
                X, y = _list(task.group, idx)
                v = v - cfg.alpha * ListEvaluation(p_t, X, y, cfg.loss).hvp(v)
        total += v
    return total / len(tasks), meta_loss / len(tasks)


def meta_objective(theta: ParameterVector, items, cfg: MetaConfig) -> float:
    """Composed objective (inner adaptation then mean test loss), for checking gradients.

    ``items`` is a list of ``(group, train_sets, test_set)``.
    """
    total = 0.0
    for group, train_sets, test_set in items:
        theta_i, _ = inner_adapt(theta, group, train_sets, cfg)
        X, y = _list(group, test_set)
        total += ListEvaluation(theta_i, X, y, cfg.loss).loss
    return total / len(items)


# episode streams -------------------------------------------------------------

def usable_queries(dataset, cfg: MetaConfig):
    used, skipped = [], []
    for qi, q in enumerate(dataset.queries):
        (used if can_make_episode(q, cfg.profile, cfg.strategy) else skipped).append(qi)
    return used, skipped


def episode_for(dataset, qi, epoch, cfg: MetaConfig):
    rng = stream(cfg.seed, STREAM_EPISODE, epoch, qi)
    return make_meta_episode(dataset.queries[qi], cfg.profile, cfg.strategy, cfg.inner_steps, rng)


def batches(used, epoch, cfg: MetaConfig):
    """Shuffled query batches, each sorted ascending for a fixed reduction order."""
    order = stream(cfg.seed, STREAM_SHUFFLE, epoch).permutation(np.asarray(used, dtype=np.int64))
    for start in range(0, len(order), cfg.batch_size):
        yield sorted(int(i) for i in order[start:start + cfg.batch_size])


# validation ------------------------------------------------------------------

@dataclass
class FinetuneSplits:
    tuning: dict
    eval: dict
    skipped_ids: list


def finetune_splits(dataset, profile: SparsityProfile, rng) -> FinetuneSplits:
    """Tuning/eval sets for every query that admits the profile, in dataset order."""
    tuning, evals, skipped = {}, {}, []
    for q in dataset.queries:
        if q.positives.size < profile.p or q.negatives.size < profile.n:
            skipped.append(q.query_id)
            continue
        t, e = make_finetune_split(q, profile, rng)
        tuning[q.query_id] = t
        evals[q.query_id] = e
    return FinetuneSplits(tuning, evals, skipped)


def validation_score(theta, val_set, splits: FinetuneSplits, cfg: MetaConfig):
    if not splits.tuning:
        return None
    tuned = fine_tune(theta, val_set, splits.tuning, cfg.val_finetune_epochs, cfg.tune_lr, cfg.loss,
                      mode=cfg.finetune_mode)
    m = evaluate_model(tuned, val_set, splits.eval, ks=(cfg.val_k,))
    v = m.aggregate[cfg.val_k]
    return None if math.isnan(v) else v


def _initial(train_set, cfg, spec):
    spec = spec or RankerSpec.mlp(train_set.feature_dims, cfg.hidden)
    return init_params(spec, derived_seed(cfg.seed, STREAM_INIT))


class _BestTracker:
    def __init__(self, theta):
        self.theta = theta
        self.score = None
        self.epoch = None

    def offer(self, epoch, theta, score):
        if score is not None and (self.score is None or score > self.score):
            self.theta, self.score, self.epoch = theta, score, epoch


def _train_loop(train_set, val_set, cfg, spec, step_fn, on_epoch=None):
    used, skipped = usable_queries(train_set, cfg)
    if not used:
        raise NoUsableQueries(f"no query in {train_set.name!r} admits {cfg.profile} episodes with {cfg.strategy}")
    theta = _initial(train_set, cfg, spec)
    history = TrainHistory(skipped_ids=[train_set.queries[i].query_id for i in skipped])
    splits = finetune_splits(val_set, cfg.tuning_profile, stream(cfg.seed, STREAM_VALIDATION)) if val_set else None
    best = _BestTracker(theta)
    for epoch in range(1, cfg.epochs + 1):
        qlosses, mlosses, aborted = [], [], []
        for batch in batches(used, epoch, cfg):
            theta, ql, ml, ab = step_fn(theta, batch, epoch)
            qlosses.extend(ql)
            if ml is not None:
                mlosses.append(ml)
            aborted.extend(ab)
        val = validation_score(theta, val_set, splits, cfg) if splits else None
        best.offer(epoch, theta, val)
        rec = EpochRecord(
            epoch,
            float(np.mean(qlosses)) if qlosses else math.nan,
            float(np.mean(mlosses)) if mlosses else None,
            val,
            len(used) - len(aborted),
            len(skipped) + len(aborted),
            aborted,
        )
        history.records.append(rec)
        log.debug("epoch %d query_loss=%.5f meta_loss=%s val=%s", epoch, rec.query_loss, rec.meta_loss, val)
        if on_epoch is not None:
            on_epoch(epoch, theta, rec)
    history.best_epoch, history.best_val_ndcg = best.epoch, best.score
    return (best.theta if best.score is not None else theta), history


def meta_train(train_set, val_set, cfg: MetaConfig, spec: RankerSpec | None = None, on_epoch=None):
    """Meta-train; returns the best-validation parameters and the history."""

    def step(theta, batch, epoch):
        tasks, qlosses, aborted = [], [], []
        for qi in batch:
            group = train_set.queries[qi]
            try:
                task = adapt_task(theta, group, episode_for(train_set, qi, epoch, cfg), cfg)
                if not math.isfinite(task_test_loss(task, cfg.loss).loss):
                    raise NonFiniteLoss(group.query_id, cfg.inner_steps + 1)
            except NonFiniteLoss as exc:
                log.warning("%s; query dropped for this batch", exc)
                aborted.append(group.query_id)
                continue
            tasks.append(task)
            qlosses.append(float(np.mean(task.trace.losses)))
        if not tasks:
            return theta, qlosses, None, aborted
        grad, meta_loss = meta_gradient(theta, tasks, cfg)
        return apply_sgd_step(theta, grad, cfg.beta), qlosses, meta_loss, aborted

    return _train_loop(train_set, val_set, cfg, spec, step, on_epoch)


def baseline_lists(episode):
    """Distinct item lists of an episode (the fixed strategy repeats one list)."""
    lists, seen = [], set()
    for idx in (*episode.train_sets, episode.test_set):
        key = tuple(int(i) for i in idx)
        if key not in seen:
            seen.add(key)
            lists.append(idx)
    return lists


def baseline_train(train_set, val_set, cfg: MetaConfig, spec: RankerSpec | None = None, on_epoch=None):
    """Plain mini-batch LTR on the same sampled episodes; step size ``cfg.beta``.

    Each query contributes the mean loss over its episode's distinct lists,
    evaluated at the shared parameters (no inner adaptation).
    """

    def step(theta, batch, epoch):
        total = np.zeros(len(theta))
        qlosses, aborted = [], []
        for qi in batch:
            group = train_set.queries[qi]
            lists = baseline_lists(episode_for(train_set, qi, epoch, cfg))
            g = np.zeros(len(theta))
            loss = 0.0
            for idx in lists:
                X, y = _list(group, idx)
                ev = ListEvaluation(theta, X, y, cfg.loss)
                loss += ev.loss
                g += ev.grad()
            if not math.isfinite(loss):
                log.warning("non-finite loss for query %r; dropped for this batch", group.query_id)
                aborted.append(group.query_id)
                continue
            total += g / len(lists)
            qlosses.append(loss / len(lists))
        n = len(batch) - len(aborted)
        if n == 0:
            return theta, qlosses, None, aborted
        return apply_sgd_step(theta, total / n, cfg.beta), qlosses, None, aborted

    return _train_loop(train_set, val_set, cfg, spec, step, on_epoch)


def fine_tune(theta: ParameterVector, dataset, tuning_sets, epochs: int, lr: float, loss: LossKind,
              mode: str = "pooled"):
    """Meta-test adaptation on per-query tuning items.

    ``pooled`` runs sequential SGD steps over every tuning list (dataset
    order) for ``epochs`` passes and returns one ParameterVector.
    ``per_query`` adapts a separate copy per query with ``epochs`` steps on
    that query's list and returns ``{query_id: ParameterVector}``.
    ``epochs == 0`` returns ``theta`` itself.
    """
    if epochs < 0:
        raise ValueError("epochs must be >= 0")
    if epochs == 0:
        return theta
    lists = [(q, tuning_sets[q.query_id]) for q in dataset.queries if q.query_id in tuning_sets]
    if mode == "pooled":
        for _ in range(epochs):
            for q, idx in lists:
                X, y = _list(q, idx)
                ev = ListEvaluation(theta, X, y, loss)
                if not math.isfinite(ev.loss):
                    raise NonFiniteLoss(q.query_id, 0)
                theta = apply_sgd_step(theta, ev.grad(), lr)
        return theta
    if mode == "per_query":
        out = {}
        for q, idx in lists:
            theta_i = theta
            X, y = _list(q, idx)
            for step in range(1, epochs + 1):
                ev = ListEvaluation(theta_i, X, y, loss)
                if not math.isfinite(ev.loss):
                    raise NonFiniteLoss(q.query_id, step)
                theta_i = apply_sgd_step(theta_i, ev.grad(), lr)
            out[q.query_id] = theta_i
        return out
    raise ValueError(f"unknown fine-tune mode {mode!r}")


__all__ = [
    "FIRST_ORDER", "SECOND_ORDER", "MetaConfig", "TrainHistory", "EpochRecord", "AdaptedTask",
    "inner_adapt", "adapt_task", "meta_gradient", "meta_objective", "meta_train", "baseline_train",
    "fine_tune", "finetune_splits", "FinetuneSplits", "episode_for", "usable_queries", "stream",
    "derived_seed", "training_state",
]


def training_state(history: TrainHistory, cfg: MetaConfig):
    """Sidecar contents stored next to a checkpoint."""
    last = history.records[-1].epoch if history.records else 0
    return {
        "epoch": last,
        "best_epoch": history.best_epoch,
        "best_val_ndcg": history.best_val_ndcg,
        "seed": cfg.seed,
        # every stream is rebuilt from (seed, stream id, epoch, ...); this is the next shuffle stream
        "rng": stream(cfg.seed, STREAM_SHUFFLE, last + 1).bit_generator.state,
        "skipped_queries": len(history.skipped_ids),
    }
