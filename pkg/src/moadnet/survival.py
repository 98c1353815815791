"""Discrete-time survival: time binning, hazards, censored NLL and c-index.

Censorship follows the convention ``c = 0`` observed event, ``c = 1``
censored.
"""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from . import tensor as T
from .tensor import Tensor, _sigmoid_np

LOG_FLOOR = 1e-12


class SurvivalDataError(ValueError):
    """Survival data cannot support the requested computation."""


@dataclass(frozen=True)
class BinEdges:
    edges: tuple[float, ...]

    @property
    def n_bins(self) -> int:
        return len(self.edges) + 1

    def assign(self, times) -> np.ndarray:
        """Bin index = number of edges strictly below the time."""
        t = np.asarray(times, dtype=np.float64)
        return np.searchsorted(np.asarray(self.edges), t, side="left").astype(np.int64)


def _nearest_rank(sorted_values: np.ndarray, fraction: float):
    rank = max(1, math.ceil(fraction * len(sorted_values) - 1e-12))
    return sorted_values[rank - 1]


def discretize_bins(times, censor, n_bins: int = 4) -> BinEdges:
    """Cut points at the ``k / n_bins`` nearest-rank percentiles of event times.

    Only uncensored times contribute.
    """
    times = np.asarray(times, dtype=np.float64)
    censor = np.asarray(censor)
    if times.shape != censor.shape:
        raise SurvivalDataError(f"{len(times)} times but {len(censor)} censorship flags")
    events = np.sort(times[censor == 0])
    if len(events) < n_bins:
        raise SurvivalDataError(f"need at least {n_bins} uncensored times, got {len(events)}")
    edges = tuple(float(_nearest_rank(events, k / n_bins)) for k in range(1, n_bins))
    if any(b <= a for a, b in zip(edges, edges[1:])):
        raise SurvivalDataError(f"bin edges not strictly ascending: {edges}")
    return BinEdges(edges)


def hazards_and_survival(logits) -> tuple[Tensor, Tensor]:
    """Per-bin hazards ``sigmoid(logits)`` and the survival running product."""
    logits = logits if isinstance(logits, Tensor) else Tensor(logits)
    hazard = T.sigmoid(logits)
    # 1 - sigmoid(x) == sigmoid(-x), without cancellation
    surv = T.cumprod(T.sigmoid(-logits))
    return hazard, surv


def nll_loss(logits, y, c) -> Tensor:
    """Mean censored negative log-likelihood over a batch.

    Per patient: ``-[c log S(y) + (1 - c) log S(y - 1) + (1 - c) log h(y)]``
    with ``S(-1) = 1``; every log argument is floored at ``LOG_FLOOR``.
    """
    logits = logits if isinstance(logits, Tensor) else Tensor(logits)
    if logits.ndim == 1:
        logits = T.reshape(logits, (1, logits.shape[0]))
    ld = logits.data
    b, k = ld.shape
    y = np.asarray(y, dtype=np.int64).reshape(b)
    c = np.asarray(c, dtype=np.float64).reshape(b)
    if np.any((y < 0) | (y >= k)):
        raise SurvivalDataError(f"bin labels must lie in [0, {k}), got {y}")

    hazard = _sigmoid_np(ld)
    # log(1 - h) and log h via logaddexp: finite for every finite logit
    cum = np.cumsum(-np.logaddexp(0.0, ld), axis=1)
    rows = np.arange(b)
    log_s_y = cum[rows, y]
    log_s_prev = np.where(y > 0, cum[rows, np.maximum(y - 1, 0)], 0.0)
    log_h_y = -np.logaddexp(0.0, -ld[rows, y])
    floor = math.log(LOG_FLOOR)

    def clamp(v):
        return np.maximum(v, floor)

    per = -(c * clamp(log_s_y) + (1 - c) * clamp(log_s_prev) + (1 - c) * clamp(log_h_y))
    loss = per.mean()

    def bw(g):
        # d log S(m) / d logit_j = -h_j for j <= m; d log h(y) / d logit_y = 1 - h_y
        grad = np.zeros_like(ld)
        idx = np.arange(k)[None, :]
        live_s = (log_s_y > floor)[:, None]
        live_p = (log_s_prev > floor)[:, None]
        live_h = log_h_y > floor
        grad += c[:, None] * live_s * (idx <= y[:, None]) * hazard
        grad += (1 - c)[:, None] * live_p * (idx <= (y - 1)[:, None]) * hazard
        grad[rows, y] -= (1 - c) * live_h * (1 - hazard[rows, y])
        return (grad * (g / b),)

    return Tensor._from_op(np.array(loss), (logits,), bw, "nll_loss")


def risk_from_logits(logits) -> np.ndarray:
    """Scalar risk ``-sum_k S_k`` per row; higher means shorter survival."""
    ld = np.atleast_2d(logits.data if isinstance(logits, Tensor) else np.asarray(logits, dtype=np.float64))
    surv = np.cumprod(_sigmoid_np(-ld), axis=1)
    return -surv.sum(axis=1)


def concordance_index(risks, times, censor, chunk: int = 1024) -> float:
    """Harrell's c-index over pairs ``time_i < time_j`` with ``i`` uncensored.

    A pair is concordant when ``risk_i > risk_j``; risk ties count one half.
    """
    risks = np.asarray(risks, dtype=np.float64)
    times = np.asarray(times, dtype=np.float64)
    censor = np.asarray(censor)
    if not (len(risks) == len(times) == len(censor)):
        raise ValueError("risks, times and censor must have equal length")
    events = np.flatnonzero(censor == 0)
    concordant = 0.0
    comparable = 0
    for start in range(0, len(events), chunk):
        i = events[start : start + chunk]
        pairs = times[i, None] < times[None, :]
        diff = risks[i, None] - risks[None, :]
        comparable += int(pairs.sum())
        concordant += float((pairs & (diff > 0)).sum()) + 0.5 * float((pairs & (diff == 0)).sum())
    if comparable == 0:
        raise SurvivalDataError("no comparable pairs; c-index undefined")
    return concordant / comparable
