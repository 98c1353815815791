import numpy as np
import pytest

from moadnet import fusion
from moadnet import tensor as T
from moadnet.fusion import FusionConfig, SingularityError
from moadnet.tensor import ParameterError, ShapeError, Tensor


def outer_bruteforce(w, o, kind, eps=1e-8):
    out = np.empty((len(w), len(o)))
    for i in range(len(w)):
        for j in range(len(o)):
            if kind == "product":
                out[i, j] = w[i] * o[j]
            elif kind == "division":
                out[i, j] = w[i] / (o[j] + eps)
            elif kind == "addition":
                out[i, j] = w[i] + o[j]
            else:
                out[i, j] = w[i] - o[j]
    return out


class TestAppendConstant:
    def test_definition(self):
        np.testing.assert_array_equal(fusion.append_constant([2.0, 3.0], 1).data, [1, 2, 3])

    def test_empty(self):
        np.testing.assert_array_equal(fusion.append_constant(np.zeros(0), 0).data, [0])

    def test_length(self):
        v = np.random.default_rng(0).standard_normal(11)
        out = fusion.append_constant(v, 0).data
        assert len(out) == 12 and out[0] == 0 and np.array_equal(out[1:], v)


class TestOuterOp:
    def test_product_by_hand(self):
        np.testing.assert_array_equal(fusion.outer_op([1.0, 2.0], [1.0, 3.0], "product").data, [[1, 3], [2, 6]])

    def test_subtraction_by_hand(self):
        np.testing.assert_array_equal(fusion.outer_op([0.0, 2.0], [0.0, 3.0], "subtraction").data, [[0, -3], [2, -1]])

    @pytest.mark.parametrize("kind", fusion.OUTER_KINDS)
    def test_matches_nested_loops(self, kind):
        rng = np.random.default_rng(1)
        w, o = rng.standard_normal(8), rng.standard_normal(8)
        np.testing.assert_allclose(fusion.outer_op(w, o, kind).data, outer_bruteforce(w, o, kind), atol=1e-12)

    def test_division_singularity(self):
        with pytest.raises(SingularityError):
            fusion.outer_op([1.0, 2.0], [0.5, -1e-8], "division", epsilon=1e-8)

    def test_division_uses_signed_denominator(self):
        out = fusion.outer_op([1.0], [-2.0], "division", epsilon=0.5).data
        assert out[0, 0] == pytest.approx(1.0 / -1.5)

    def test_unknown_kind(self):
        with pytest.raises(ParameterError):
            fusion.outer_op([1.0], [1.0], "power")


class TestMoabTensor:
    def test_channel_order_and_preservation(self):
        rng = np.random.default_rng(2)
        w, o = rng.standard_normal(6), rng.standard_normal(6)
        L = fusion.moab_tensor(w, o).data
        assert L.shape == (4, 7, 7)
        np.testing.assert_array_equal(L[0, 0], np.r_[1.0, o])
        np.testing.assert_array_equal(L[0, :, 0], np.r_[1.0, w])
        np.testing.assert_array_equal(L[2, 0], np.r_[0.0, o])
        np.testing.assert_array_equal(L[2, :, 0], np.r_[0.0, w])
        np.testing.assert_array_equal(L[3, 0], np.r_[0.0, -o])
        np.testing.assert_allclose(L[1], outer_bruteforce(np.r_[1.0, w], np.r_[1.0, o], "division"), atol=1e-12)

    def test_product_channel_equals_kp_vector(self):
        rng = np.random.default_rng(3)
        w, o = rng.standard_normal(5), rng.standard_normal(5)
        np.testing.assert_array_equal(
            fusion.moab_tensor(w, o).data[0].reshape(-1), fusion.kp_vector(w, o).data
        )


class TestHeads:
    def test_moab_toy_shapes_and_gradients_reach_inputs(self):
        rng = T.make_rng(4)
        cfg = FusionConfig(mode="moab", n_out=3)
        params = fusion.init_fusion_params(cfg, 4, 4, rng)
        assert params["moab.head.weight"].shape == (25, 3)
        w = Tensor(rng.standard_normal(4), requires_grad=True)
        o = Tensor(rng.uniform(0.5, 1.5, 4), requires_grad=True)
        logits = fusion.moab_fuse(w, o, cfg, params)
        assert logits.shape == (3,)
        T.backward(T.sum(logits * Tensor([1.0, -2.0, 0.5])))
        assert np.abs(w.grad).sum() > 0 and np.abs(o.grad).sum() > 0

    def test_moab_shape_mismatch(self):
        cfg = FusionConfig(mode="moab", n_out=2)
        params = fusion.init_fusion_params(cfg, 4, 4, T.make_rng(0))
        with pytest.raises(ShapeError):
            fusion.moab_fuse(np.zeros(5), np.zeros(5), cfg, params)

    def test_cat_width_and_zero_weights(self):
        cfg = FusionConfig(mode="cat", n_out=3)
        params = fusion.init_fusion_params(cfg, 256, 256, T.make_rng(0))
        assert params["cat.head.weight"].shape == (512, 3)
        params["cat.head.weight"].data[:] = 0
        rng = np.random.default_rng(5)
        out = fusion.cat_fuse(rng.standard_normal(256), rng.standard_normal(256), params).data
        np.testing.assert_array_equal(out, params["cat.head.bias"].data)

    def test_cat_ignores_w_when_its_weights_are_zero(self):
        cfg = FusionConfig(mode="cat", n_out=2)
        params = fusion.init_fusion_params(cfg, 3, 3, T.make_rng(1))
        params["cat.head.weight"].data[:3] = 0
        w, o = np.array([1.0, 2.0, 3.0]), np.array([0.5, -0.5, 2.0])
        a = fusion.cat_fuse(w, o, params).data
        b = fusion.cat_fuse((w + 7.0) - 7.0 + 100.0, o, params).data
        np.testing.assert_array_equal(a, b)

    def test_kp_width_and_one_hot(self):
        cfg = FusionConfig(mode="kp", n_out=2)
        params = fusion.init_fusion_params(cfg, 256, 256, T.make_rng(0))
        assert params["kp.head.weight"].shape == (66049, 2)
        v = fusion.kp_vector(np.zeros(256), np.zeros(256)).data
        assert v.shape == (66049,) and v[0] == 1.0 and np.count_nonzero(v) == 1

    def test_logits_dimension_matches_config(self):
        rng = T.make_rng(6)
        for mode in fusion.FUSION_MODES:
            cfg = FusionConfig(mode=mode, n_out=5)
            params = fusion.init_fusion_params(cfg, 6, 6, rng)
            assert fusion.fuse(rng.standard_normal(6), rng.uniform(0.5, 1, 6), cfg, params).shape == (5,)

    def test_config_validation(self):
        with pytest.raises(ParameterError):
            FusionConfig(epsilon=0.0)
        with pytest.raises(ParameterError):
            FusionConfig(mode="sum")


def test_full_scale_shape_ledger():
    rng = T.make_rng(7)
    w, o = rng.standard_normal(256), rng.standard_normal(256)
    cfg = FusionConfig(mode="moab", n_out=4)
    params = fusion.init_fusion_params(cfg, 256, 256, rng)
    stack = fusion.moab_tensor(w, o)
    assert stack.shape == (4, 257, 257)
    reduced = T.conv2d(stack, params["moab.conv.weight"], stride=1, padding=1)
    assert reduced.shape == (1, 257, 257)
    assert reduced.size == 257**2 == 66049
    assert params["moab.head.weight"].shape == (66049, 4)
    assert fusion.moab_fuse(w, o, cfg, params).shape == (4,)
