"""Ranking objectives as (loss, d loss / d scores) pairs.

All four losses operate on a single query's list. Pairwise losses sum over
ordered pairs with ``label_j > label_s`` using the logistic cost
``log2(1 + exp(-sigma * (s_j - s_s)))``; LambdaRank additionally weights
each pair by the full-list |delta NDCG| of swapping the two items under the
current score-induced ranking (weights are constants for differentiation).
"""

from dataclasses import dataclass

import numpy as np

from . import kernels
from .errors import ConfigError

KINDS = ("rank_mse", "ranknet", "lambdarank", "listnet")


@dataclass(frozen=True)
class LossKind:
    name: str = "ranknet"
    sigma: float = 1.0

    def __post_init__(self):
        if self.name not in KINDS:
            raise ConfigError(f"unknown loss {self.name!r}; expected one of {', '.join(KINDS)}")
        if not (self.sigma > 0 and np.isfinite(self.sigma)):
            raise ConfigError(f"sigma must be positive, got {self.sigma}")

    def __str__(self):
        return self.name

    def value_and_grad(self, scores, labels):
        """Unchecked fast path used by the trainers."""
        if self.name == "rank_mse":
            return kernels.rank_mse(scores, labels)
        if self.name == "ranknet":
            return kernels.ranknet(scores, labels, self.sigma)
        if self.name == "lambdarank":
            return kernels.lambdarank(scores, labels, self.sigma)
        return kernels.listnet(scores, labels)

    def hvp(self, scores, labels, v):
        """Hessian of the loss w.r.t. scores applied to ``v``.

        LambdaRank's pair weights are held at their current values.
        """
        if self.name == "rank_mse":
            return kernels.rank_mse_hvp(scores, labels, v)
        if self.name == "ranknet":
            return kernels.ranknet_hvp(scores, labels, self.sigma, v)
        if self.name == "lambdarank":
            return kernels.lambdarank_hvp(scores, labels, self.sigma, v)
        return kernels.listnet_hvp(scores, labels, v)


def _batch(scores, labels):
    s = np.ascontiguousarray(scores, dtype=np.float64)
    y = np.ascontiguousarray(labels, dtype=np.float64)
    if s.ndim != 1 or s.shape != y.shape or s.size == 0:
        raise ValueError("scores and labels must be equal-length non-empty 1-d sequences")
    if not np.all(np.isfinite(s)):
        raise ValueError("scores must be finite")
    return s, y


def rank_mse(scores, labels):
    """Squared error summed over the list."""
    s, y = _batch(scores, labels)
    loss, grad = kernels.rank_mse(s, y)
    return float(loss), grad


def ranknet(scores, labels, sigma=1.0):
    s, y = _batch(scores, labels)
    loss, grad = kernels.ranknet(s, y, float(sigma))
    return float(loss), grad


def lambdarank(scores, labels, sigma=1.0):
    """RankNet pairs weighted by |delta NDCG|; all-zero labels give (0, 0)."""
    s, y = _batch(scores, labels)
    loss, grad = kernels.lambdarank(s, y, float(sigma))
    return float(loss), grad


def listnet(scores, labels):
    """Top-one cross-entropy between softmax(labels) and softmax(scores)."""
    s, y = _batch(scores, labels)
    loss, grad = kernels.listnet(s, y)
    return float(loss), grad


def evaluate(kind: LossKind, scores, labels):
    s, y = _batch(scores, labels)
    loss, grad = kind.value_and_grad(s, y)
    return float(loss), grad


def parse_loss(spec) -> LossKind:
    """Build a LossKind from a config value: a name or ``{name=..., sigma=...}``."""
    if isinstance(spec, LossKind):
        return spec
    if isinstance(spec, str):
        return LossKind(spec)
    if isinstance(spec, dict):
        unknown = set(spec) - {"name", "sigma"}
        if unknown:
            raise ConfigError(f"unknown loss keys: {sorted(unknown)}")
        return LossKind(spec.get("name", "ranknet"), float(spec.get("sigma", 1.0)))
    raise ConfigError(f"cannot interpret loss spec {spec!r}")
