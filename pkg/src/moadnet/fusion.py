"""Late fusion of a slide embedding with an omic embedding.

The MOAB block builds four outer-arithmetic interaction matrices, stacks
them as channels ``[product, division, addition, subtraction]``, reduces the
stack with one convolution and classifies the flattened map. Concatenation
(``cat``) and Kronecker-product (``kp``) heads are provided as baselines.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import tensor as T
from .layers import Params, init_linear, linear
from .tensor import ParameterError, ShapeError, Tensor

OUTER_KINDS = ("product", "division", "addition", "subtraction")
# constant prepended to each embedding before the outer operation
APPENDED = {"product": 1.0, "division": 1.0, "addition": 0.0, "subtraction": 0.0}
FUSION_MODES = ("moab", "cat", "kp")


class SingularityError(ArithmeticError):
    """Outer division hit an exactly zero denominator."""


@dataclass(frozen=True)
class FusionConfig:
    mode: str = "moab"
    n_out: int = 4
    epsilon: float = 1e-8
    kernel_size: int = 3
    stride: int = 1
    padding: int = 1
    leaky_slope: float = 0.01

    def __post_init__(self):
        if self.mode not in FUSION_MODES:
            raise ParameterError(f"unknown fusion mode {self.mode!r}; expected one of {FUSION_MODES}")
        if not self.epsilon > 0:
            raise ParameterError(f"epsilon must be positive, got {self.epsilon}")
        if self.n_out < 1:
            raise ParameterError(f"n_out must be >= 1, got {self.n_out}")

    def map_size(self, n: int) -> int:
        """Reduced-map length along an interaction-grid axis of length ``n``."""
        span = n + 2 * self.padding - self.kernel_size
        if span < 0 or span % self.stride:
            raise ShapeError(f"conv {self.kernel_size}/{self.stride}/{self.padding} does not tile a {n}x{n} grid")
        return span // self.stride + 1

    def head_width(self, dim_w: int, dim_o: int) -> int:
        if self.mode == "cat":
            return dim_w + dim_o
        if self.mode == "kp":
            return (dim_w + 1) * (dim_o + 1)
        return self.map_size(dim_w + 1) * self.map_size(dim_o + 1)


def append_constant(v, c: float) -> Tensor:
    """Prepend the constant ``c`` to vector ``v`` (``[c; v]``)."""
    v = v if isinstance(v, Tensor) else Tensor(v)
    return T.concat([Tensor([float(c)]), T.reshape(v, (v.size,))], axis=0)


def outer_op(w, o, kind: str, epsilon: float = 1e-8) -> Tensor:
    """Matrix whose ``(i, j)`` entry combines ``w[i]`` and ``o[j]``.

    Constants are expected to be prepended already. Division uses the signed
    denominator ``o[j] + epsilon``.
    """
    w = w if isinstance(w, Tensor) else Tensor(w)
    o = o if isinstance(o, Tensor) else Tensor(o)
    if w.ndim != 1 or o.ndim != 1:
        raise ShapeError(f"outer_op expects vectors, got {w.shape} and {o.shape}")
    col = T.reshape(w, (w.size, 1))
    row = T.reshape(o, (1, o.size))
    if kind == "product":
        return col * row
    if kind == "division":
        denom = row + epsilon
        if np.any(denom.data == 0):
            raise SingularityError("outer division: o_j + epsilon == 0")
        return col / denom
    if kind == "addition":
        return col + row
    if kind == "subtraction":
        return col - row
    raise ParameterError(f"unknown outer operation {kind!r}")


def moab_tensor(w, o, epsilon: float = 1e-8) -> Tensor:
    """Stack the four interaction matrices into a ``4 x (N+1) x (M+1)`` tensor."""
    mats = []
    for kind in OUTER_KINDS:
        c = APPENDED[kind]
        m = outer_op(append_constant(w, c), append_constant(o, c), kind, epsilon)
        mats.append(T.reshape(m, (1,) + m.shape))
    return T.concat(mats, axis=0)


def init_fusion_params(cfg: FusionConfig, dim_w: int, dim_o: int, rng) -> Params:
    prefix = cfg.mode
    params: Params = {}
    if cfg.mode == "moab":
        k = cfg.kernel_size
        fan_in = len(OUTER_KINDS) * k * k
        bound = 1.0 / np.sqrt(fan_in)
        params["moab.conv.weight"] = Tensor(rng.uniform(-bound, bound, (1, len(OUTER_KINDS), k, k)), requires_grad=True)
        params["moab.conv.bias"] = Tensor(rng.uniform(-bound, bound, 1), requires_grad=True)
    params.update(init_linear(f"{prefix}.head", cfg.head_width(dim_w, dim_o), cfg.n_out, rng))
    return params


def _check_dims(w: Tensor, o: Tensor, params: Params, prefix: str, width: int):
    expected = params[f"{prefix}.head.weight"].shape[0]
    if width != expected:
        raise ShapeError(
            f"{prefix} fusion: inputs of width {w.shape} and {o.shape} give head width {width}, "
            f"configured {expected}"
        )


def moab_fuse(w, o, cfg: FusionConfig, params: Params) -> Tensor:
    """MOAB logits: interactions -> conv -> flatten -> leaky ReLU -> linear."""
    w = w if isinstance(w, Tensor) else Tensor(w)
    o = o if isinstance(o, Tensor) else Tensor(o)
    _check_dims(w, o, params, "moab", cfg.head_width(w.size, o.size))
    stack = moab_tensor(w, o, cfg.epsilon)
    reduced = T.conv2d(stack, params["moab.conv.weight"], stride=cfg.stride, padding=cfg.padding)
    reduced = reduced + params["moab.conv.bias"].reshape(1, 1, 1)
    flat = T.leaky_relu(T.reshape(reduced, (reduced.size,)), cfg.leaky_slope)
    return linear(flat, params, "moab.head")


def cat_fuse(w, o, params: Params) -> Tensor:
    w = w if isinstance(w, Tensor) else Tensor(w)
    o = o if isinstance(o, Tensor) else Tensor(o)
    _check_dims(w, o, params, "cat", w.size + o.size)
    return linear(T.concat([w, o], axis=0), params, "cat.head")


def kp_vector(w, o) -> Tensor:
    """Flattened ``[1; w] (x) [1; o]``, identical to MOAB's product channel."""
    m = outer_op(append_constant(w, 1.0), append_constant(o, 1.0), "product")
    return T.reshape(m, (m.size,))


def kp_fuse(w, o, params: Params) -> Tensor:
    w = w if isinstance(w, Tensor) else Tensor(w)
    o = o if isinstance(o, Tensor) else Tensor(o)
    _check_dims(w, o, params, "kp", (w.size + 1) * (o.size + 1))
    return linear(kp_vector(w, o), params, "kp.head")


def fuse(w, o, cfg: FusionConfig, params: Params) -> Tensor:
    if cfg.mode == "moab":
        return moab_fuse(w, o, cfg, params)
    if cfg.mode == "cat":
        return cat_fuse(w, o, params)
    return kp_fuse(w, o, params)
