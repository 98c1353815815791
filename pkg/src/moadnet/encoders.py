"""Omic self-normalizing encoder and the patch-level early-fusion encoder."""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import tensor as T
from .layers import Params, init_linear, linear
from .tensor import ShapeError, Tensor

SNN_DROPOUT = 0.25
FUSE_DROPOUT = 0.1


@dataclass
class OmicVector:
    patient_id: str
    values: np.ndarray

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=np.float64)
        if not np.all(np.isfinite(self.values)):
            raise ValueError(f"omic vector {self.patient_id!r} has non-finite values")


@dataclass
class PatchBag:
    """Precomputed patch embeddings of one slide (``N x d_e``)."""

    slide_id: str
    embeddings: np.ndarray
    coords: np.ndarray | None = field(default=None)

    def __post_init__(self):
        self.embeddings = np.asarray(self.embeddings, dtype=np.float64)
        if self.embeddings.ndim != 2 or self.embeddings.shape[0] < 1:
            raise ShapeError(f"bag {self.slide_id!r} must be a non-empty N x d matrix")
        if self.coords is not None:
            self.coords = np.asarray(self.coords, dtype=np.int64)
            if self.coords.shape != (self.embeddings.shape[0], 2):
                raise ShapeError(f"bag {self.slide_id!r}: coords shape {self.coords.shape} != (N, 2)")

    def __len__(self) -> int:
        return self.embeddings.shape[0]


def init_snn_params(n_features: int, hidden: int, d_o: int, rng) -> Params:
    return {**init_linear("snn.fc1", n_features, hidden, rng), **init_linear("snn.fc2", hidden, d_o, rng)}


def snn_encode(raw, params: Params, training: bool, rng, p: float = SNN_DROPOUT) -> Tensor:
    """Two ELU + alpha-dropout layers compressing a raw omic vector to ``d_o``."""
    x = raw.values if isinstance(raw, OmicVector) else raw
    x = x if isinstance(x, Tensor) else Tensor(x)
    n_features = params["snn.fc1.weight"].shape[0]
    if x.shape != (n_features,):
        raise ShapeError(f"omic input has shape {x.shape}, encoder expects ({n_features},)")
    h = T.alpha_dropout(T.elu(linear(x, params, "snn.fc1")), p, training, rng)
    return T.alpha_dropout(T.elu(linear(h, params, "snn.fc2")), p, training, rng)


def init_fuse_params(d_e: int, d_o: int, hidden: int, d_out: int, rng) -> Params:
    return {
        **init_linear("early.fc1", d_e + d_o, hidden, rng),
        **init_linear("early.fc2", hidden, d_out, rng),
    }


def early_fuse(bag, o, params: Params, training: bool, rng, p: float = FUSE_DROPOUT) -> Tensor:
    """Append the encoded omic vector to every patch row and map each row jointly.

    ``z`` has width ``d_e + d_o``; the omic vector enters once per row.
    """
    e = bag.embeddings if isinstance(bag, PatchBag) else bag
    e = e if isinstance(e, Tensor) else Tensor(e)
    o = o if isinstance(o, Tensor) else Tensor(o)
    d_in = params["early.fc1.weight"].shape[0]
    if e.ndim != 2 or e.shape[0] < 1:
        raise ShapeError(f"early_fuse needs a non-empty N x d_e bag, got {e.shape}")
    if e.shape[1] + o.shape[0] != d_in:
        raise ShapeError(
            f"patch width {e.shape[1]} + omic width {o.shape[0]} != encoder input width {d_in}"
        )
    z = T.concat([e, T.broadcast_rows(o, e.shape[0])], axis=1)
    h = T.dropout(T.relu(linear(z, params, "early.fc1")), p, training, rng)
    return linear(h, params, "early.fc2")
