"""Central finite-difference checks for every differentiable operation.

``run_suite`` is what the ``gradcheck`` CLI subcommand executes.
"""
from __future__ import annotations

import time
from dataclasses import dataclass
from typing import Callable, Sequence

import numpy as np

from . import tensor as T
from .tensor import Tensor

STEP = 1e-5
TOLERANCE = 1e-4


# Below this gradient norm the central difference is mostly rounding (eps * |f| / step ~ 1e-11),
# e.g. for the score bias, which softmax shift invariance leaves with an exactly zero gradient.
GRAD_FLOOR = 1e-6


def relative_error(analytic: np.ndarray, numeric: np.ndarray) -> float:
    diff = np.linalg.norm(analytic - numeric)
    scale = max(np.linalg.norm(analytic), np.linalg.norm(numeric), GRAD_FLOOR)
    return float(diff / scale)


def numerical_gradient(fn: Callable[..., Tensor], arrays: Sequence[np.ndarray], step: float = STEP):
    """Central differences of the scalar ``fn`` wrt each array in ``arrays``."""
    arrays = [np.array(a, dtype=np.float64) for a in arrays]
    grads = []
    for k, arr in enumerate(arrays):
        g = np.zeros_like(arr)
        flat = arr.reshape(-1)
        gflat = g.reshape(-1)
        for i in range(flat.size):
            orig = flat[i]
            flat[i] = orig + step
            with T.no_grad():
                fp = fn(*[Tensor(a) for a in arrays]).item()
            flat[i] = orig - step
            with T.no_grad():
                fm = fn(*[Tensor(a) for a in arrays]).item()
            flat[i] = orig
            gflat[i] = (fp - fm) / (2 * step)
        grads.append(g)
    return grads


def analytic_gradient(fn: Callable[..., Tensor], arrays: Sequence[np.ndarray]):
    leaves = [Tensor(a, requires_grad=True) for a in arrays]
    T.backward(fn(*leaves), inputs=leaves)
    return [leaf.grad for leaf in leaves]


def check(fn: Callable[..., Tensor], arrays: Sequence[np.ndarray], step: float = STEP) -> float:
    """Largest relative error between analytic and numerical gradients."""
    ana = analytic_gradient(fn, arrays)
    num = numerical_gradient(fn, arrays, step)
    return max(relative_error(a, n) for a, n in zip(ana, num))


def projected(op: Callable[..., Tensor], weights: np.ndarray) -> Callable[..., Tensor]:
    """Turn a tensor-valued op into a scalar one via a fixed random projection."""
    w = Tensor(weights)

    def fn(*args):
        return T.sum(op(*args) * w)

    return fn


@dataclass
class CaseResult:
    name: str
    max_error: float
    instances: int

    @property
    def passed(self) -> bool:
        return self.max_error < TOLERANCE


def _clear_of_kink(pre: np.ndarray, margin: float = 1e-3) -> bool:
    # a (leaky) ReLU input within the probe step of 0 makes the central difference straddle the kink
    return bool(np.abs(pre).min() > margin)


def _away_from_zero(rng, shape, margin=1e-2):
    x = rng.standard_normal(shape)
    return np.where(np.abs(x) < margin, np.sign(x + 1e-300) * margin * 2, x)


def _cases():
    # imported lazily: those modules depend on this one's package
    from . import attention, encoders, fusion, survival
    from .layers import linear

    def op_case(name, op, make_inputs, out_shape=None):
        def run(rng):
            arrays = make_inputs(rng)
            with T.no_grad():
                shape = op(*[Tensor(a) for a in arrays]).shape
            return check(projected(op, rng.standard_normal(shape)), arrays)

        return name, run

    yield op_case("matmul", T.matmul, lambda r: [r.standard_normal((3, 4)), r.standard_normal((4, 2))])
    for kind in ("tanh", "sigmoid", "elu", "leaky_relu", "softmax_lastdim"):
        yield op_case(
            f"activation:{kind}",
            lambda x, kind=kind: T.activation(x, kind),
            lambda r: [_away_from_zero(r, (3, 5))],
        )
    yield op_case(
        "conv2d",
        lambda x, k: T.conv2d(x, k, stride=1, padding=1),
        lambda r: [r.standard_normal((2, 5, 4)), r.standard_normal((3, 2, 3, 3))],
    )
    yield op_case(
        "conv2d:stride2",
        lambda x, k: T.conv2d(x, k, stride=2, padding=0),
        lambda r: [r.standard_normal((2, 5, 5)), r.standard_normal((1, 2, 3, 3))],
    )
    yield op_case(
        "alpha_dropout:eval",
        lambda x: T.alpha_dropout(x, 0.25, training=False, rng=None),
        lambda r: [r.standard_normal((4, 3))],
    )

    def _train_dropout(rng):
        seed = int(rng.integers(1 << 30))
        x = rng.standard_normal((4, 3))
        op = lambda t: T.alpha_dropout(t, 0.25, training=True, rng=T.make_rng(seed))  # noqa: E731
        return check(projected(op, rng.standard_normal((4, 3))), [x])

    yield "alpha_dropout:train", _train_dropout
    yield op_case("cumprod", T.cumprod, lambda r: [r.uniform(0.1, 1.0, (2, 4))])
    for kind in fusion.OUTER_KINDS:
        yield op_case(
            f"outer_op:{kind}",
            lambda w, o, kind=kind: fusion.outer_op(w, o, kind),
            lambda r: [r.standard_normal(5), r.uniform(0.5, 2.0, 5) * r.choice([-1, 1], 5)],
        )

    def _moab(rng):
        cfg = fusion.FusionConfig(mode="moab", n_out=3)
        while True:
            params = fusion.init_fusion_params(cfg, dim_w=4, dim_o=4, rng=rng)
            w = rng.standard_normal(4)
            o = rng.uniform(0.5, 2.0, 4) * rng.choice([-1, 1], 4)
            with T.no_grad():
                pre = T.conv2d(fusion.moab_tensor(w, o), params["moab.conv.weight"], cfg.stride, cfg.padding)
            if _clear_of_kink(pre.data + params["moab.conv.bias"].data[0]):
                break
        names = sorted(params)

        def fn(w_t, o_t, *ps):
            return T.sum(fusion.moab_fuse(w_t, o_t, cfg, dict(zip(names, ps))) * proj)

        proj = Tensor(rng.standard_normal(3))
        return check(fn, [w, o] + [params[n].data for n in names])

    yield "moab_fuse", _moab

    def _kp(rng):
        cfg = fusion.FusionConfig(mode="kp", n_out=2)
        params = fusion.init_fusion_params(cfg, dim_w=3, dim_o=3, rng=rng)
        names = sorted(params)
        proj = Tensor(rng.standard_normal(2))

        def fn(w_t, o_t, *ps):
            return T.sum(fusion.fuse(w_t, o_t, cfg, dict(zip(names, ps))) * proj)

        return check(fn, [rng.standard_normal(3), rng.standard_normal(3)] + [params[n].data for n in names])

    yield "kp_fuse", _kp

    def _attention(rng):
        while True:
            params = attention.init_attention_params(6, 5, 4, rng)
            bag = rng.standard_normal((7, 6))
            with T.no_grad():
                pre = linear(attention.pooled_embedding(attention.compute_attention(bag, params)), params, "rho.fc")
            if _clear_of_kink(pre.data):
                break
        names = sorted(params)
        proj = Tensor(rng.standard_normal(4))

        def fn(p, *ps):
            ps = dict(zip(names, ps))
            scores = attention.compute_attention(p, ps)
            return T.sum(attention.pool_slide(scores, ps, training=False, rng=None) * proj)

        return check(fn, [bag] + [params[n].data for n in names])

    yield "gated_attention", _attention

    def _encoders(rng):
        while True:
            params = {**encoders.init_snn_params(6, 5, 4, rng), **encoders.init_fuse_params(3, 4, 5, 4, rng)}
            x, bag = rng.standard_normal(6), rng.standard_normal((5, 3))
            with T.no_grad():
                o = encoders.snn_encode(x, params, training=False, rng=None)
                z = T.concat([Tensor(bag), T.broadcast_rows(o, 5)], axis=1)
                pre = linear(z, params, "early.fc1")
            if _clear_of_kink(pre.data):
                break
        names = sorted(params)
        proj = Tensor(rng.standard_normal((5, 4)))

        def fn(x, bag, *ps):
            ps = dict(zip(names, ps))
            o = encoders.snn_encode(x, ps, training=False, rng=None)
            return T.sum(encoders.early_fuse(bag, o, ps, training=False, rng=None) * proj)

        return check(fn, [x, bag] + [params[n].data for n in names])

    yield "encoders", _encoders

    def _hazards(rng):
        proj = rng.standard_normal((2, 4))

        def fn(logits):
            h, s = survival.hazards_and_survival(logits)
            return T.sum(h * Tensor(proj)) + T.sum(s * Tensor(proj[::-1]))

        return check(fn, [rng.standard_normal(4)])

    yield "hazards_and_survival", _hazards

    def _nll(rng):
        b = 6
        y = rng.integers(0, 4, b)
        c = rng.integers(0, 2, b)
        return check(lambda logits: survival.nll_loss(logits, y, c), [rng.standard_normal((b, 4))])

    yield "nll_loss", _nll

    def _ce(rng):
        y = rng.integers(0, 3, 4)
        from .training import cross_entropy

        return check(lambda logits: cross_entropy(logits, y), [rng.standard_normal((4, 3))])

    yield "cross_entropy", _ce


def run_suite(instances: int = 10, seed: int = 0, verbose: bool = True) -> list[CaseResult]:
    """Run every registered check on ``instances`` random inputs each."""
    rng = T.make_rng(seed)
    results = []
    start = time.perf_counter()
    for name, run in _cases():
        worst = max(run(rng) for _ in range(instances))
        res = CaseResult(name, worst, instances)
        results.append(res)
        if verbose:
            status = "PASS" if res.passed else "FAIL"
            print(f"{status} {name:24s} max rel-err {worst:.2e} over {instances} instances")
    if verbose:
        print(f"gradcheck finished in {time.perf_counter() - start:.1f}s")
    return results
