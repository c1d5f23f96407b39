"""Feed-forward scoring model over a flat parameter vector.

The network is ``input -> hidden... -> 1`` with ReLU hidden units
(ReLU'(0) = 0) and a linear output. Parameters live in one read-only
float64 vector; updates always return new vectors.

A bias-free network keeps the flat layout but pins every bias entry at
zero: gradients and Hessian-vector products are masked, so the bias
slots never move.
"""

import hashlib
import io
import json
import struct
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from . import kernels
from .errors import DataError, DimensionMismatch

DEFAULT_HIDDEN = (64, 32)
CHECKPOINT_MAGIC = b"MLTRCKPT"
CHECKPOINT_VERSION = 1


@dataclass(frozen=True)
class RankerSpec:
    layer_dims: tuple
    init: str = "glorot_uniform"
    bias: bool = True

    def __post_init__(self):
        dims = tuple(int(d) for d in self.layer_dims)
        object.__setattr__(self, "layer_dims", dims)
        if len(dims) < 2 or dims[-1] != 1 or min(dims) < 1:
            raise ValueError(f"layer_dims must have >= 2 positive entries ending in 1, got {dims}")
        if self.init != "glorot_uniform":
            raise ValueError(f"unsupported init scheme {self.init!r}")

    @classmethod
    def mlp(cls, input_dim, hidden=DEFAULT_HIDDEN):
        return cls((input_dim, *hidden, 1))

    @property
    def n_params(self):
        return n_params(self.layer_dims)

    @property
    def tag(self):
        return "mlp-relu:" + "-".join(map(str, self.layer_dims)) + ("" if self.bias else ":nobias")


def n_params(dims):
    return sum((dims[i] + 1) * dims[i + 1] for i in range(len(dims) - 1))


class ParameterVector:
    """Immutable flat weights plus the layer layout they belong to."""

    __slots__ = ("values", "dims", "bias", "mask", "_dims_arr")

    def __init__(self, values, dims, bias=True):
        dims = tuple(int(d) for d in dims)
        values = np.array(values, dtype=np.float64, copy=True).reshape(-1)
        if values.size != n_params(dims):
            raise DimensionMismatch(f"expected {n_params(dims)} parameters for layout {dims}, got {values.size}")
        if not np.all(np.isfinite(values)):
            raise ValueError("parameter values must be finite")
        self.bias = bool(bias)
        self.mask = None if self.bias else bias_mask(dims)
        if self.mask is not None and np.any(values[~self.mask] != 0.0):
            raise ValueError("bias-free parameters must have zero bias entries")
        values.flags.writeable = False
        self.values = values
        self.dims = dims
        self._dims_arr = np.asarray(dims, dtype=np.int64)

    def __len__(self):
        return self.values.size

    def __repr__(self):
        return f"ParameterVector(dims={self.dims}, n={self.values.size})"

    def __eq__(self, other):
        if not isinstance(other, ParameterVector):
            return NotImplemented
        return self.dims == other.dims and self.bias == other.bias and np.array_equal(self.values, other.values)

    __hash__ = None

    def checksum(self):
        return hashlib.sha256(self.values.tobytes()).hexdigest()

    def layers(self):
        """(W, b) views per layer, W shaped (fan_in, fan_out)."""
        out, off = [], 0
        for fi, fo in zip(self.dims[:-1], self.dims[1:]):
            W = self.values[off:off + fi * fo].reshape(fi, fo)
            off += fi * fo
            out.append((W, self.values[off:off + fo]))
            off += fo
        return out

    def replace(self, values):
        return ParameterVector(values, self.dims, self.bias)

    def project(self, g):
        """Zero the components of ``g`` that are pinned (bias-free networks)."""
        return g if self.mask is None else np.where(self.mask, g, 0.0)


def bias_mask(dims):
    """Boolean vector, True on weight entries and False on bias entries."""
    parts = []
    for fi, fo in zip(dims[:-1], dims[1:]):
        parts += [np.ones(fi * fo, dtype=bool), np.zeros(fo, dtype=bool)]
    return np.concatenate(parts)


def init_params(spec: RankerSpec, seed: int) -> ParameterVector:
    rng = np.random.default_rng(seed)
    chunks = []
    for fi, fo in zip(spec.layer_dims[:-1], spec.layer_dims[1:]):
        bound = np.sqrt(6.0 / (fi + fo))
        chunks.append(rng.uniform(-bound, bound, size=fi * fo))
        chunks.append(np.zeros(fo))
    return ParameterVector(np.concatenate(chunks), spec.layer_dims, spec.bias)


def _features(params, features):
    X = np.ascontiguousarray(features, dtype=np.float64)
    if X.ndim == 1:
        X = X.reshape(1, -1)
    if X.shape[1] != params.dims[0]:
        raise DimensionMismatch(f"feature width {X.shape[1]} != model input {params.dims[0]}")
    return X


def score_batch(params: ParameterVector, features) -> np.ndarray:
    X = _features(params, features)
    return kernels.mlp_forward(params.values, params._dims_arr, X)[0]


def score(params: ParameterVector, features) -> float:
    x = np.asarray(features, dtype=np.float64)
    if x.ndim != 1:
        raise DimensionMismatch("score() takes one feature vector; use score_batch for lists")
    return float(score_batch(params, x)[0])


def grad_wrt_params(params: ParameterVector, upstream, features) -> np.ndarray:
    """Sum over items of d score_item / d theta weighted by ``upstream``."""
    X = _features(params, features)
    g = np.ascontiguousarray(upstream, dtype=np.float64).reshape(-1)
    if g.size != X.shape[0]:
        raise DimensionMismatch(f"{g.size} upstream gradients for {X.shape[0]} items")
    _, zbuf = kernels.mlp_forward(params.values, params._dims_arr, X)
    return params.project(kernels.mlp_backward(params.values, params._dims_arr, X, zbuf, g))


def apply_sgd_step(params: ParameterVector, grad, lr: float) -> ParameterVector:
    grad = np.asarray(grad, dtype=np.float64)
    if grad.shape != params.values.shape:
        raise DimensionMismatch(f"gradient shape {grad.shape} != parameter shape {params.values.shape}")
    return ParameterVector(params.values - lr * params.project(grad), params.dims, params.bias)


class ListEvaluation:
    """Forward pass of one item list with cached activations.

    Supports the loss value, its parameter gradient and exact
    Hessian-vector products (Pearlmutter R-operator), which is all the
    second-order meta-gradient needs.
    """

    __slots__ = ("params", "X", "labels", "loss_kind", "scores", "zbuf", "loss", "dscore")

    def __init__(self, params, X, labels, loss_kind):
        self.params = params
        self.X = X
        self.labels = labels
        self.loss_kind = loss_kind
        self.scores, self.zbuf = kernels.mlp_forward(params.values, params._dims_arr, X)
        self.loss, self.dscore = loss_kind.value_and_grad(self.scores, labels)

    def grad(self):
        p = self.params
        return p.project(kernels.mlp_backward(p.values, p._dims_arr, self.X, self.zbuf, self.dscore))

    def hvp(self, v):
        p = self.params
        v = np.ascontiguousarray(p.project(np.asarray(v, dtype=np.float64)))
        rs, rzbuf = kernels.mlp_rforward(p.values, p._dims_arr, self.X, self.zbuf, v)
        rg = self.loss_kind.hvp(self.scores, self.labels, rs)
        return p.project(kernels.mlp_rbackward(p.values, p._dims_arr, self.X, self.zbuf, rzbuf, self.dscore, rg, v))


def loss_and_grad(params, features, labels, loss_kind):
    X = _features(params, features)
    y = np.ascontiguousarray(labels, dtype=np.float64)
    ev = ListEvaluation(params, X, y, loss_kind)
    return float(ev.loss), ev.grad()


# checkpoints ---------------------------------------------------------------

def _header(params, seed, spec_tag):
    return {
        "format_version": CHECKPOINT_VERSION,
        "layout": list(params.dims),
        "seed": seed,
        "spec": spec_tag,
        "n_params": len(params),
        "bias": params.bias,
    }


def save_params(params: ParameterVector, path, seed=None, spec_tag=None, binary=True):
    """Write a checkpoint.

    Binary form: ``MLTRCKPT`` magic, uint32 LE header length, UTF-8 JSON
    header, then the values as float64 little-endian. Text form: the JSON
    header on the first line, then one ``repr`` float per line.
    """
    spec_tag = spec_tag or RankerSpec(params.dims, bias=params.bias).tag
    header = json.dumps(_header(params, seed, spec_tag), sort_keys=True).encode()
    path = Path(path)
    if binary:
        with open(path, "wb") as fh:
            fh.write(CHECKPOINT_MAGIC)
            fh.write(struct.pack("<I", len(header)))
            fh.write(header)
            fh.write(params.values.astype("<f8").tobytes())
    else:
        buf = io.StringIO()
        buf.write(header.decode() + "\n")
        for v in params.values:
            buf.write(repr(float(v)) + "\n")
        path.write_text(buf.getvalue())
    return path


def load_params(path):
    """Read either checkpoint form; returns (ParameterVector, header dict)."""
    raw = Path(path).read_bytes()
    if raw.startswith(CHECKPOINT_MAGIC):
        off = len(CHECKPOINT_MAGIC)
        (hlen,) = struct.unpack("<I", raw[off:off + 4])
        header = json.loads(raw[off + 4:off + 4 + hlen])
        values = np.frombuffer(raw[off + 4 + hlen:], dtype="<f8").astype(np.float64)
    else:
        lines = raw.decode().splitlines()
        header = json.loads(lines[0])
        values = np.array([float(s) for s in lines[1:] if s.strip()])
    if header.get("format_version") != CHECKPOINT_VERSION:
        raise DataError(f"unsupported checkpoint version {header.get('format_version')}")
    if values.size != header["n_params"]:
        raise DataError(f"checkpoint truncated: {values.size} of {header['n_params']} values")
    return ParameterVector(values, header["layout"], header.get("bias", True)), header
