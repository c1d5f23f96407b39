"""Dataset model, query-level splits, pXnY sampling and SMOTE augmentation.

A document is positive iff its grade is > 0. Every sampling routine takes
an explicit ``numpy.random.Generator`` and is a pure function of its
inputs and that generator's state.
"""

import math
import re
import warnings
from dataclasses import dataclass

import numpy as np
from scipy.spatial import cKDTree

from .errors import (
    DataError,
    InsufficientItems,
    InsufficientPositives,
    InsufficientQueries,
)


class EmptyEvalWarning(UserWarning):
    """A query's tuning sample consumed every document."""


class QueryGroup:
    """One query: dense features ``(n_docs, dims)`` and integer grades."""

    __slots__ = ("query_id", "features", "labels", "comments")

    def __init__(self, query_id, features, labels, comments=None):
        features = np.ascontiguousarray(features, dtype=np.float64)
        labels = np.asarray(labels, dtype=np.int64).reshape(-1)
        if features.ndim != 2 or features.shape[0] != labels.size:
            raise DataError(f"query {query_id!r}: features {features.shape} do not match {labels.size} labels")
        if labels.size == 0:
            raise DataError(f"query {query_id!r} has no documents")
        if np.any(labels < 0):
            raise DataError(f"query {query_id!r} has negative grades")
        if comments is not None:
            comments = tuple(comments)
            if len(comments) != labels.size:
                raise DataError(f"query {query_id!r}: {len(comments)} comments for {labels.size} documents")
        self.query_id = str(query_id)
        self.features = features
        self.labels = labels
        self.comments = comments

    @property
    def n_docs(self):
        return self.labels.size

    @property
    def documents(self):
        return list(zip(self.features, self.labels.tolist()))

    @property
    def positives(self):
        return np.flatnonzero(self.labels > 0)

    @property
    def negatives(self):
        return np.flatnonzero(self.labels == 0)

    def subset(self, idx):
        idx = np.asarray(idx, dtype=np.int64)
        comments = None if self.comments is None else tuple(self.comments[i] for i in idx)
        return QueryGroup(self.query_id, self.features[idx], self.labels[idx], comments)

    def __eq__(self, other):
        if not isinstance(other, QueryGroup):
            return NotImplemented
        return (
            self.query_id == other.query_id
            and np.array_equal(self.labels, other.labels)
            and self.features.shape == other.features.shape
            and np.array_equal(self.features, other.features)
        )

    __hash__ = None

    def __repr__(self):
        return f"QueryGroup({self.query_id!r}, n_docs={self.n_docs})"


class Dataset:
    __slots__ = ("queries", "feature_dims", "name")

    def __init__(self, queries, feature_dims, name=""):
        queries = list(queries)
        seen = set()
        for q in queries:
            if q.features.shape[1] != feature_dims:
                raise DataError(f"query {q.query_id!r} has {q.features.shape[1]} features, dataset has {feature_dims}")
            if q.query_id in seen:
                raise DataError(f"duplicate query id {q.query_id!r}")
            seen.add(q.query_id)
        self.queries = queries
        self.feature_dims = int(feature_dims)
        self.name = name

    def __len__(self):
        return len(self.queries)

    def __iter__(self):
        return iter(self.queries)

    def __getitem__(self, i):
        return self.queries[i]

    def __eq__(self, other):
        if not isinstance(other, Dataset):
            return NotImplemented
        return self.feature_dims == other.feature_dims and self.queries == other.queries

    __hash__ = None

    def __repr__(self):
        return f"Dataset({self.name!r}, queries={len(self.queries)}, dims={self.feature_dims})"

    @property
    def query_ids(self):
        return [q.query_id for q in self.queries]

    def with_queries(self, queries, name=None):
        return Dataset(queries, self.feature_dims, self.name if name is None else name)

    def stats(self):
        """Corpus statistics in the shape of the usual LETOR summary table."""
        labels = np.concatenate([q.labels for q in self.queries]) if self.queries else np.zeros(0, np.int64)
        docids = set()
        have_ids = True
        for q in self.queries:
            if q.comments is None:
                have_ids = False
                break
            for c in q.comments:
                m = re.search(r"docid\s*=\s*(\S+)", c or "")
                if m is None:
                    have_ids = False
                    break
                docids.add(m.group(1))
            if not have_ids:
                break
        return {
            "name": self.name,
            "queries": len(self.queries),
            "items": len(docids) if have_ids else int(labels.size),
            "query_item_pairs": int(labels.size),
            "positives_pct": 100.0 * float(np.mean(labels > 0)) if labels.size else 0.0,
            "features": self.feature_dims,
            "min_rating": int(labels.min()) if labels.size else None,
            "max_rating": int(labels.max()) if labels.size else None,
        }


def label_is_positive(relevance: int) -> bool:
    return relevance > 0


_PROFILE = re.compile(r"p(\d+)n(\d+)\Z")


@dataclass(frozen=True, order=True)
class SparsityProfile:
    p: int
    n: int

    def __post_init__(self):
        if self.p < 1 or self.n < 1:
            raise ValueError(f"profile needs p >= 1 and n >= 1, got p={self.p} n={self.n}")

    @classmethod
    def parse(cls, text):
        if isinstance(text, SparsityProfile):
            return text
        m = _PROFILE.match(str(text).strip())
        if m is None:
            raise ValueError(f"bad sparsity profile {text!r}; expected e.g. 'p1n9'")
        return cls(int(m.group(1)), int(m.group(2)))

    @property
    def k(self):
        return self.p + self.n

    @property
    def positive_fraction(self):
        return self.p / (self.p + self.n)

    def __str__(self):
        return f"p{self.p}n{self.n}"


@dataclass(frozen=True)
class SamplingStrategy:
    """How inner-loop train subsets are drawn.

    ``fixed``: one pXnY subset reused for every inner step.
    ``one_positive``: a fresh subset each step with 1 positive.
    ``multiple_positive``: a fresh subset each step with ``positives``.
    Subset size is always K = p + n of the profile.
    """

    kind: str = "fixed"
    positives: int | None = None

    def __post_init__(self):
        if self.kind not in ("fixed", "one_positive", "multiple_positive"):
            raise ValueError(f"unknown sampling strategy {self.kind!r}")
        if self.kind == "multiple_positive" and (self.positives is None or self.positives < 1):
            raise ValueError("multiple_positive needs positives >= 1")

    @classmethod
    def parse(cls, text):
        if isinstance(text, SamplingStrategy):
            return text
        text = str(text).strip()
        m = re.match(r"multiple_positive\((\d+)\)\Z", text)
        if m:
            return cls("multiple_positive", int(m.group(1)))
        return cls(text)

    @property
    def resamples(self):
        return self.kind != "fixed"

    def step_profile(self, profile: SparsityProfile) -> SparsityProfile:
        if self.kind == "fixed":
            return profile
        pos = 1 if self.kind == "one_positive" else self.positives
        if pos >= profile.k:
            raise ValueError(f"{self} leaves no negatives in a list of {profile.k}")
        return SparsityProfile(pos, profile.k - pos)

    def __str__(self):
        return f"multiple_positive({self.positives})" if self.kind == "multiple_positive" else self.kind


@dataclass(frozen=True)
class Episode:
    query_id: str
    train_sets: tuple
    test_set: np.ndarray

    @property
    def train_items(self):
        """Items of the final inner step (the set the test set must avoid)."""
        return self.train_sets[-1]

    @property
    def test_items(self):
        return self.test_set


# splitting / normalisation -------------------------------------------------

def split_by_query(dataset: Dataset, ratios=(0.8, 0.1, 0.1), seed: int = 0):
    """Query-level partition; val/test sizes are floored, remainder goes to train."""
    ratios = tuple(float(r) for r in ratios)
    if len(ratios) != 3 or any(r < 0 for r in ratios) or abs(sum(ratios) - 1.0) > 1e-9:
        raise ValueError(f"ratios must be three non-negative fractions summing to 1, got {ratios}")
    n = len(dataset)
    n_val = math.floor(ratios[1] * n + 1e-9)
    n_test = math.floor(ratios[2] * n + 1e-9)
    n_train = n - n_val - n_test
    if min(n_train, n_val, n_test) < 1:
        raise InsufficientQueries(f"{n} queries cannot fill a {ratios} split")
    perm = np.random.default_rng(seed).permutation(n)
    parts = (perm[:n_train], perm[n_train:n_train + n_val], perm[n_train + n_val:])
    names = ("train", "val", "test")
    return tuple(
        dataset.with_queries([dataset.queries[i] for i in np.sort(idx)], f"{dataset.name}:{nm}")
        for idx, nm in zip(parts, names)
    )


def normalize_features(dataset: Dataset, scheme: str = "per-query-min-max") -> Dataset:
    if scheme != "per-query-min-max":
        raise ValueError(f"unknown normalization scheme {scheme!r}")
    out = []
    for q in dataset.queries:
        lo = q.features.min(axis=0)
        rng = q.features.max(axis=0) - lo
        safe = np.where(rng > 0, rng, 1.0)
        X = np.where(rng > 0, (q.features - lo) / safe, 0.0)
        out.append(QueryGroup(q.query_id, X, q.labels, q.comments))
    return dataset.with_queries(out)


# sampling ------------------------------------------------------------------

def _draw(pool, count, rng):
    return rng.choice(pool, size=count, replace=False)


def sample_pn(group: QueryGroup, profile: SparsityProfile, rng, exclude=None) -> np.ndarray:
    """Uniformly draw p positives and n negatives without replacement.

    Returns sorted document indices. ``exclude`` removes indices from the
    candidate pools first.
    """
    pos, neg = group.positives, group.negatives
    if exclude is not None and len(exclude):
        pos = np.setdiff1d(pos, exclude, assume_unique=True)
        neg = np.setdiff1d(neg, exclude, assume_unique=True)
    if pos.size < profile.p or neg.size < profile.n:
        raise InsufficientItems(
            f"query {group.query_id!r}: need {profile}, have {pos.size} positives / {neg.size} negatives"
        )
    return np.sort(np.concatenate([_draw(pos, profile.p, rng), _draw(neg, profile.n, rng)]))


def meta_requirements(profile: SparsityProfile, strategy: SamplingStrategy):
    """Minimum (positives, negatives) a query needs for a meta episode."""
    step = strategy.step_profile(profile)
    return step.p + profile.p, step.n + profile.n


def can_make_episode(group: QueryGroup, profile, strategy) -> bool:
    need_p, need_n = meta_requirements(profile, strategy)
    return group.positives.size >= need_p and group.negatives.size >= need_n


def make_meta_episode(group, profile, strategy, inner_steps, rng) -> Episode:
    """T inner-step train subsets plus a test subset disjoint from the last one."""
    if inner_steps < 1:
        raise ValueError("inner_steps must be >= 1")
    if not can_make_episode(group, profile, strategy):
        need_p, need_n = meta_requirements(profile, strategy)
        raise InsufficientItems(
            f"query {group.query_id!r}: episode needs {need_p} positives / {need_n} negatives, "
            f"have {group.positives.size} / {group.negatives.size}"
        )
    step = strategy.step_profile(profile)
    if strategy.resamples:
        train_sets = tuple(sample_pn(group, step, rng) for _ in range(inner_steps))
    else:
        fixed = sample_pn(group, step, rng)
        train_sets = (fixed,) * inner_steps
    test = sample_pn(group, profile, rng, exclude=train_sets[-1])
    return Episode(group.query_id, train_sets, test)


def make_finetune_split(group: QueryGroup, profile: SparsityProfile, rng):
    """(tuning, eval): a pXnY sample and every remaining document."""
    tuning = sample_pn(group, profile, rng)
    mask = np.ones(group.n_docs, dtype=bool)
    mask[tuning] = False
    rest = np.flatnonzero(mask)
    if rest.size == 0:
        warnings.warn(f"query {group.query_id!r}: no documents left for evaluation", EmptyEvalWarning, stacklevel=2)
    return tuning, rest


# SMOTE ---------------------------------------------------------------------

def smote_oversample(positive_vectors, k_neighbors: int, n_synthetic: int, rng, return_parents=False):
    """Interpolate ``x + u (x_nn - x)`` between random positives and their neighbours.

    ``x_nn`` is drawn from the ``k_neighbors`` nearest other positives
    (Euclidean); ``u ~ U[0, 1]``. With ``return_parents`` also returns the
    base indices, neighbour indices and ``u`` values.
    """
    P = np.asarray(positive_vectors, dtype=np.float64)
    if P.ndim != 2 or P.shape[0] < 2:
        raise InsufficientPositives(f"SMOTE needs at least 2 positives, got {0 if P.ndim != 2 else P.shape[0]}")
    if k_neighbors < 1:
        raise ValueError("k_neighbors must be >= 1")
    k = min(k_neighbors, P.shape[0] - 1)
    _, nn = cKDTree(P).query(P, k=k + 1)
    nn = np.asarray(nn).reshape(P.shape[0], k + 1)
    # drop self; with duplicate points self may not be in column 0
    neighbours = np.empty((P.shape[0], k), dtype=np.int64)
    for i in range(P.shape[0]):
        row = [j for j in nn[i] if j != i][:k]
        neighbours[i] = row
    base = rng.integers(0, P.shape[0], size=n_synthetic)
    pick = neighbours[base, rng.integers(0, k, size=n_synthetic)]
    u = rng.random(n_synthetic)
    out = P[base] + u[:, None] * (P[pick] - P[base])
    if return_parents:
        return out, base, pick, u
    return out


def smote_augment(dataset: Dataset, k_neighbors: int, ratio: float, rng) -> Dataset:
    """Add synthetic positives pooled over the whole split.

    ``round(ratio * n_positives)`` vectors are generated; each joins the
    query of its base vector with the smallest positive grade in the pool.
    """
    owners, vecs, grades = [], [], []
    for qi, q in enumerate(dataset.queries):
        for d in q.positives:
            owners.append(qi)
            vecs.append(q.features[d])
            grades.append(q.labels[d])
    n_syn = int(round(ratio * len(vecs)))
    if n_syn == 0:
        return dataset
    synth, base, _, _ = smote_oversample(np.array(vecs), k_neighbors, n_syn, rng, return_parents=True)
    grade = int(min(grades))
    extra = {}
    for row, b in zip(synth, base):
        extra.setdefault(owners[b], []).append(row)
    queries = []
    for qi, q in enumerate(dataset.queries):
        if qi not in extra:
            queries.append(q)
            continue
        add = np.array(extra[qi])
        comments = None if q.comments is None else q.comments + ("synthetic",) * len(add)
        queries.append(QueryGroup(
            q.query_id,
            np.vstack([q.features, add]),
            np.concatenate([q.labels, np.full(len(add), grade, dtype=np.int64)]),
            comments,
        ))
    return dataset.with_queries(queries, f"{dataset.name}+smote")


# synthetic corpora ---------------------------------------------------------

def make_synthetic_dataset(n_queries=40, docs_per_query=(30, 60), dims=10, noise=0.3,
                           query_shift=0.0, grade_cuts=(0.8, 1.6), seed=0, name="synthetic"):
    """Graded lists whose relevance is a linear function of the features plus noise.

    ``query_shift`` perturbs the weight vector per query so queries differ
    (a knob for how much per-query adaptation can help). Grades come from
    thresholding the noisy score at ``grade_cuts`` standard deviations.
    """
    rng = np.random.default_rng(seed)
    w = rng.normal(size=dims)
    w /= np.linalg.norm(w)
    queries = []
    lo, hi = docs_per_query
    for qi in range(n_queries):
        m = int(rng.integers(lo, hi + 1))
        X = rng.random((m, dims))
        wq = w + query_shift * rng.normal(size=dims) / math.sqrt(dims)
        raw = (X - 0.5) @ wq
        raw = raw / (raw.std() + 1e-12) + noise * rng.normal(size=m)
        labels = np.zeros(m, dtype=np.int64)
        for cut in grade_cuts:
            labels += raw > cut
        queries.append(QueryGroup(f"q{qi}", X, labels))
    return Dataset(queries, dims, name)
