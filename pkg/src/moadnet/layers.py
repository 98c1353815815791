"""Parameter containers and the few layer primitives shared by every block."""
from __future__ import annotations

import numpy as np

from . import tensor as T
from .tensor import ShapeError, Tensor

Params = dict  # name -> Tensor


def init_linear(prefix: str, fan_in: int, fan_out: int, rng: np.random.Generator) -> Params:
    """Uniform fan-in initialization, weight stored as ``fan_in x fan_out``."""
    bound = 1.0 / np.sqrt(fan_in)
    return {
        f"{prefix}.weight": Tensor(rng.uniform(-bound, bound, (fan_in, fan_out)), requires_grad=True),
        f"{prefix}.bias": Tensor(rng.uniform(-bound, bound, fan_out), requires_grad=True),
    }


def linear(x, params: Params, prefix: str) -> Tensor:
    """Affine map of a vector or of each row of a matrix.

    Rows are mapped independently (bit-stable under row reordering), which the
    MIL permutation-invariance guarantees rely on.
    """
    x = x if isinstance(x, Tensor) else Tensor(x)
    w = params[f"{prefix}.weight"]
    b = params[f"{prefix}.bias"]
    if x.shape[-1] != w.shape[0]:
        raise ShapeError(f"{prefix}: input width {x.shape[-1]} does not match weight {w.shape}")
    if x.ndim == 1:
        return T.reshape(T.matmul(T.reshape(x, (1, -1)), w), (w.shape[1],)) + b
    return T.matmul(x, w, rowwise=True) + b


def count(params: Params) -> int:
    return int(sum(p.size for p in params.values()))
