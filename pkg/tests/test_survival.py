import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from moadnet import survival
from moadnet import tensor as T
from moadnet.survival import SurvivalDataError
from moadnet.tensor import Tensor


def nll_single_reference(logits, y, c):
    """Direct per-patient evaluation, no vectorization."""
    h = [1 / (1 + math.exp(-v)) for v in logits]
    s = []
    acc = 1.0
    for hk in h:
        acc *= 1 - hk
        s.append(acc)
    s_prev = 1.0 if y == 0 else s[y - 1]
    return -(c * math.log(max(s[y], 1e-12)) + (1 - c) * math.log(max(s_prev, 1e-12))
             + (1 - c) * math.log(max(h[y], 1e-12)))


class TestDiscretize:
    def test_nearest_rank_quartiles(self):
        times = [10, 20, 30, 40, 50, 60, 70, 80]
        bins = survival.discretize_bins(times, [0] * 8, 4)
        assert bins.edges == (20.0, 40.0, 60.0)
        np.testing.assert_array_equal(bins.assign(times), [0, 0, 1, 1, 2, 2, 3, 3])

    def test_identical_times(self):
        with pytest.raises(SurvivalDataError):
            survival.discretize_bins([5.0] * 8, [0] * 8, 4)

    def test_censored_beyond_last_edge(self):
        bins = survival.discretize_bins([10, 20, 30, 40, 50, 60, 70, 80], [0] * 8, 4)
        assert bins.assign([500.0])[0] == 3

    def test_edges_ignore_censored_times(self):
        times = [10, 20, 30, 40, 1000, 2000]
        bins = survival.discretize_bins(times, [0, 0, 0, 0, 1, 1], 4)
        assert bins.edges == (10.0, 20.0, 30.0)

    def test_too_few_events(self):
        with pytest.raises(SurvivalDataError):
            survival.discretize_bins([1, 2, 3, 4], [0, 0, 1, 1], 4)


class TestHazards:
    def test_zero_logits(self):
        h, s = survival.hazards_and_survival(np.zeros(4))
        np.testing.assert_allclose(h.data, [0.5] * 4, atol=1e-12)
        np.testing.assert_allclose(s.data, [0.5, 0.25, 0.125, 0.0625], atol=1e-12)

    def test_huge_first_logit_kills_survival(self):
        _, s = survival.hazards_and_survival([60.0, 0.0, 0.0, 0.0])
        assert np.all(s.data < 1e-25)

    @settings(max_examples=80, deadline=None)
    @given(arrays(np.float64, 5, elements=st.floats(-30, 30, allow_nan=False)))
    def test_survival_monotone_in_unit_interval(self, logits):
        _, s = survival.hazards_and_survival(logits)
        assert np.all(np.diff(s.data) <= 0)
        assert np.all((s.data > 0) & (s.data <= 1))


class TestNLL:
    def test_event_in_first_bin(self):
        assert survival.nll_loss(np.zeros(4), [0], [0]).item() == pytest.approx(math.log(2), abs=1e-12)

    def test_censored_in_second_bin(self):
        assert survival.nll_loss(np.zeros(4), [1], [1]).item() == pytest.approx(2 * math.log(2), abs=1e-12)

    def test_batch_equals_mean_of_singles(self):
        rng = np.random.default_rng(0)
        logits = rng.standard_normal((16, 4)) * 2
        y = rng.integers(0, 4, 16)
        c = rng.integers(0, 2, 16)
        batched = survival.nll_loss(logits, y, c).item()
        singles = [nll_single_reference(logits[i], y[i], c[i]) for i in range(16)]
        assert batched == pytest.approx(np.mean(singles), abs=1e-12)

    def test_clamping_keeps_loss_finite(self):
        loss = survival.nll_loss(np.array([[-800.0, 800.0, 0.0, 0.0]]), [0], [0])
        assert np.isfinite(loss.item())
        assert loss.item() == pytest.approx(-math.log(1e-12))

    def test_higher_event_hazard_lowers_loss(self):
        rng = np.random.default_rng(1)
        logits = rng.standard_normal(4)
        for y in range(4):
            base = survival.nll_loss(logits, [y], [0]).item()
            bumped = logits.copy()
            bumped[y] += 1e-4
            assert survival.nll_loss(bumped, [y], [0]).item() < base

    def test_censored_loss_grows_with_hazard_up_to_y(self):
        rng = np.random.default_rng(2)
        logits = rng.standard_normal(4)
        for y in range(4):
            base = survival.nll_loss(logits, [y], [1]).item()
            for k in range(y + 1):
                bumped = logits.copy()
                bumped[k] += 1e-4
                assert survival.nll_loss(bumped, [y], [1]).item() > base

    def test_gradient_zero_under_clamp(self):
        x = Tensor([[900.0, 0.0]], requires_grad=True)
        T.backward(survival.nll_loss(x, [1], [1]))
        np.testing.assert_array_equal(x.grad, [[0.0, 0.0]])


class TestConcordance:
    def test_perfect(self):
        assert survival.concordance_index([3, 2, 1], [1, 2, 3], [0, 0, 0]) == 1.0

    def test_all_tied(self):
        assert survival.concordance_index([1, 1, 1, 1], [1, 2, 3, 4], [0, 1, 0, 1]) == 0.5

    def test_random_is_half(self):
        rng = T.make_rng(2024)
        risks, times = rng.random(10_000), rng.random(10_000)
        assert abs(survival.concordance_index(risks, times, np.zeros(10_000)) - 0.5) <= 0.05

    def test_no_comparable_pairs(self):
        with pytest.raises(SurvivalDataError):
            survival.concordance_index([1, 2], [1, 2], [1, 1])

    def test_censored_subject_only_compared_as_later(self):
        # pair (0, 1): 0 censored -> not comparable; pair (1, 0) has time 5 > 1
        assert survival.concordance_index([0.0, 1.0, 0.5], [1.0, 5.0, 9.0], [1, 0, 0]) == 1.0

    def test_matches_bruteforce(self):
        rng = np.random.default_rng(3)
        n = 60
        risks = rng.integers(0, 5, n).astype(float)
        times = rng.integers(1, 20, n).astype(float)
        censor = rng.integers(0, 2, n)
        num = den = 0.0
        for i in range(n):
            for j in range(n):
                if times[i] < times[j] and censor[i] == 0:
                    den += 1
                    num += 1.0 if risks[i] > risks[j] else 0.5 if risks[i] == risks[j] else 0.0
        assert survival.concordance_index(risks, times, censor, chunk=7) == pytest.approx(num / den, abs=1e-15)

    @settings(max_examples=30, deadline=None)
    @given(st.integers(0, 2**31 - 1))
    def test_invariant_to_monotone_transform(self, seed):
        rng = np.random.default_rng(seed)
        risks = rng.standard_normal(40)
        times = rng.random(40)
        censor = rng.integers(0, 2, 40)
        censor[0] = 0
        times[0] = times.min() - 1
        a = survival.concordance_index(risks, times, censor)
        b = survival.concordance_index(np.exp(3 * risks) + 1, times, censor)
        assert a == b


def test_risk_orders_by_expected_survival():
    low = survival.risk_from_logits(np.full(4, -3.0))
    high = survival.risk_from_logits(np.full(4, 3.0))
    assert high[0] > low[0]
