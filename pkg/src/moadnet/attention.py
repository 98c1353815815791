"""Gated attention over patch embeddings and attention-weighted pooling."""
from __future__ import annotations

from dataclasses import dataclass

from . import tensor as T
from .layers import Params, init_linear, linear
from .tensor import ShapeError, Tensor

RHO_DROPOUT = 0.1


@dataclass
class AttentionScores:
    weights: Tensor  # a_ij, length N, sums to one
    gated: Tensor  # h_ij, N x D_h


def init_attention_params(d_in: int, d_hidden: int, d_out: int, rng) -> Params:
    """Parameters for the tanh branch, sigmoid gate, score vector and f_rho."""
    return {
        **init_linear("attn.proj", d_in, d_hidden, rng),
        **init_linear("attn.gate", d_in, d_hidden, rng),
        **init_linear("attn.score", d_hidden, 1, rng),
        **init_linear("rho.fc", d_hidden, d_out, rng),
    }


def compute_attention(p, params: Params) -> AttentionScores:
    p = p if isinstance(p, Tensor) else Tensor(p)
    if p.ndim != 2 or p.shape[0] < 1:
        raise ShapeError(f"attention needs a non-empty N x D matrix, got {p.shape}")
    h = T.tanh(linear(p, params, "attn.proj")) * T.sigmoid(linear(p, params, "attn.gate"))
    # score bias is shift-invariant under softmax but kept for a conventional linear layer
    logits = T.reshape(linear(h, params, "attn.score"), (p.shape[0],))
    return AttentionScores(weights=T.softmax(logits, exact=True), gated=h)


def pool_slide(scores: AttentionScores, params: Params, training: bool, rng, p: float = RHO_DROPOUT) -> Tensor:
    """Attention-weighted sum of the gated embeddings followed by f_rho."""
    pooled = pooled_embedding(scores)
    return T.dropout(T.relu(linear(pooled, params, "rho.fc")), p, training, rng)


def pooled_embedding(scores: AttentionScores) -> Tensor:
    # order-free summation keeps pooling exactly permutation invariant
    return T.weighted_sum(scores.weights, scores.gated)
