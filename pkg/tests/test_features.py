import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from moadnet.features import SelectionError, select_cpg_features, variability_statistics

# constant, low-variance and high-variance columns
THREE = np.array([
    [2.0, 10.0, 0.0],
    [2.0, 11.0, 10.0],
    [2.0, 10.0, 20.0],
    [2.0, 11.0, 30.0],
])


def select_reference(x, k):
    """Literal shortlist growth: increase m until the four top-m sets share k members."""
    s = variability_statistics(x)
    orders = [sorted(range(x.shape[1]), key=lambda j: (-v[j], j)) for v in s.values()]
    for m in range(1, x.shape[1] + 1):
        common = set(orders[0][:m])
        for o in orders[1:]:
            common &= set(o[:m])
        if len(common) >= k:
            keep = sorted(common, key=lambda j: (-s["variance"][j], j))[:k]
            return sorted(keep)
    raise AssertionError("unreachable")


class TestStatistics:
    def test_hand_values(self):
        s = variability_statistics(THREE)
        np.testing.assert_allclose(s["variance"], [0.0, 0.25, 125.0], atol=1e-12)
        np.testing.assert_allclose(s["cv"], [0.0, 0.5 / 10.5, np.sqrt(125.0) / 15.0], atol=1e-12)
        np.testing.assert_allclose(s["mad"], [0.0, 0.5, 10.0], atol=1e-12)
        np.testing.assert_allclose(s["iqr"], [0.0, 1.0, 15.0], atol=1e-12)


class TestSelection:
    def test_three_column_example(self):
        np.testing.assert_array_equal(select_cpg_features(THREE, 1), [2])

    def test_k_equals_features_is_identity(self):
        x = np.random.default_rng(0).standard_normal((9, 6))
        np.testing.assert_array_equal(select_cpg_features(x, 6), np.arange(6))

    def test_duplicated_rows(self):
        x = np.random.default_rng(1).standard_normal((15, 40)) * np.linspace(0.1, 3, 40)
        np.testing.assert_array_equal(select_cpg_features(x, 7), select_cpg_features(np.vstack([x, x]), 7))

    def test_needs_larger_shortlist(self):
        # column 0 tops variance but has a tiny IQR; shortlist must grow past m = 1
        x = np.array([[0.0, 0, 1], [0, 1, 2], [0, 2, 3], [0, 3, 4], [100, 4, 5]])
        assert select_cpg_features(x, 1).tolist() == select_reference(x, 1)

    def test_k_out_of_range(self):
        with pytest.raises(SelectionError):
            select_cpg_features(THREE, 4)
        with pytest.raises(SelectionError):
            select_cpg_features(THREE, 0)

    @settings(max_examples=60, deadline=None)
    @given(arrays(np.float64, st.tuples(st.integers(3, 12), st.integers(1, 10)),
                  elements=st.floats(-50, 50, allow_nan=False, width=32)),
           st.data())
    def test_matches_literal_reference(self, x, draw):
        k = draw.draw(st.integers(1, x.shape[1]))
        got = select_cpg_features(x, k)
        assert got.tolist() == select_reference(x, k)
        assert len(got) == k and np.all(np.diff(got) > 0)
