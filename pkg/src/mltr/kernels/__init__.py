"""Backend selection for the numeric kernels.

Set ``MLTR_NUMBA=0`` before import to force the pure-numpy backend. When
numba is missing the numpy backend is used silently.
"""

import importlib
import os

from . import numpy_impl

_wanted = os.environ.get("MLTR_NUMBA", "1").strip().lower() not in ("0", "false", "no", "off")

numba_impl = None
if _wanted:
    try:
        numba_impl = importlib.import_module(".numba_impl", __name__)
    except ImportError:  # numba not installed
        numba_impl = None

impl = numba_impl if numba_impl is not None else numpy_impl
BACKEND = "numba" if impl is numba_impl else "numpy"

_NAMES = (
    "mlp_forward", "mlp_backward", "mlp_rforward", "mlp_rbackward",
    "rank_mse", "ranknet", "lambdarank", "listnet",
    "rank_mse_hvp", "ranknet_hvp", "lambdarank_hvp", "listnet_hvp",
    "rank_positions", "delta_ndcg", "dcg_at_k",
)


def backends():
    """All importable backends, keyed by name."""
    out = {"numpy": numpy_impl}
    if numba_impl is not None:
        out["numba"] = numba_impl
    return out


globals().update({name: getattr(impl, name) for name in _NAMES})

__all__ = ["BACKEND", "backends", "impl", *_NAMES]
