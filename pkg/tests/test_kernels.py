import math

import numpy as np
import pytest

from gpsens.errors import UnsupportedError, ValidationError
from gpsens.kernels import (
    Matern52,
    Periodic,
    Product,
    RationalQuadratic,
    Spectral,
    SquaredExponential,
    Sum,
    Warped,
    eval_kernel,
    gram,
    kernel_from_dict,
    kernel_to_dict,
    node_paths,
    parse_kernel,
    wrap_nodes,
)
from gpsens.warp import WarpNet

SQRT5 = math.sqrt(5.0)


def random_points(rng, n, d=1, scale=3.0):
    return rng.uniform(-scale, scale, size=(n, d))


class TestEval:
    def test_se_zero_distance(self):
        k = SquaredExponential(1.0, 1.0)
        assert eval_kernel(k, 0.7, 0.7) == 1.0

    def test_se_unit_distance(self):
        k = SquaredExponential(1.0, 1.0)
        assert eval_kernel(k, 0.0, 1.0) == pytest.approx(math.exp(-0.5), rel=1e-12)

    def test_matern_zero_and_lengthscale(self):
        k = Matern52(1.0, 1.0)
        assert eval_kernel(k, 0.0, 0.0) == 1.0
        # hand evaluation of (1 + sqrt5 + 5/3) exp(-sqrt5) at r = lengthscale
        expect = (1.0 + SQRT5 + 5.0 / 3.0) * math.exp(-SQRT5)
        assert eval_kernel(k, 0.0, 1.0) == pytest.approx(expect, rel=1e-12)

    def test_periodic_matches_formula(self):
        k = Periodic(1.3, 0.7, 2.0)
        r = 0.43
        expect = 1.3**2 * math.exp(-2.0 * math.sin(math.pi * r / 2.0) ** 2 / 0.7**2)
        assert eval_kernel(k, 0.0, r) == pytest.approx(expect, rel=1e-12)

    def test_rq_matches_formula(self):
        k = RationalQuadratic(0.66, 1.18, 0.74)
        r = 1.9
        expect = 0.66**2 * (1.0 + r**2 / (2.0 * 1.18**2 * 0.74)) ** (-0.74)
        assert eval_kernel(k, 0.0, r) == pytest.approx(expect, rel=1e-12)

    def test_dimension_mismatch(self):
        k = SquaredExponential(1.0, 1.0)
        with pytest.raises(ValidationError):
            eval_kernel(k, [0.0, 1.0], [0.0])

    @pytest.mark.parametrize("bad", [0.0, -1.0, float("nan")])
    def test_nonpositive_hyperparameters_rejected(self, bad):
        with pytest.raises(ValidationError):
            SquaredExponential(bad, 1.0)
        with pytest.raises(ValidationError):
            Periodic(1.0, 1.0, bad)

    def test_symmetry_all_kinds(self):
        rng = np.random.default_rng(5)
        kernels = [
            SquaredExponential(1.1, 0.8),
            Matern52(0.9, 1.4),
            Periodic(1.0, 0.6, 1.0),
            RationalQuadratic(1.0, 1.0, 0.7),
            SquaredExponential(1.0, 1.0) + Matern52(1.0, 0.5),
            SquaredExponential(2.0, 1.0) * Periodic(1.0, 1.0, 1.0),
        ]
        for k in kernels:
            for _ in range(5):
                x, x2 = rng.normal(size=2)
                assert eval_kernel(k, x, x2) == eval_kernel(k, x2, x)


class TestGram:
    def test_single_point(self):
        assert gram(SquaredExponential(1.0, 1.0), [0.0]).tolist() == [[1.0]]

    def test_symmetric(self):
        rng = np.random.default_rng(0)
        X = random_points(rng, 8)
        K = gram(Matern52(1.0, 0.7), X)
        assert np.max(np.abs(K - K.T)) <= 1e-12

    def test_sum_is_elementwise_sum(self):
        rng = np.random.default_rng(1)
        X = random_points(rng, 3)
        a, b = SquaredExponential(1.2, 0.9), Matern52(0.7, 1.1)
        np.testing.assert_allclose(gram(a + b, X), gram(a, X) + gram(b, X), rtol=1e-14)

    def test_product_is_elementwise_product(self):
        rng = np.random.default_rng(2)
        X = random_points(rng, 4)
        a, b = SquaredExponential(1.2, 0.9), Periodic(1.0, 0.8, 1.3)
        np.testing.assert_allclose(gram(a * b, X), gram(a, X) * gram(b, X), rtol=1e-14)

    @pytest.mark.parametrize("kernel", [
        SquaredExponential(1.0, 0.5),
        Matern52(1.3, 0.8),
        Periodic(1.0, 0.7, 1.1),
        RationalQuadratic(0.9, 1.2, 0.6),
        SquaredExponential(1.0, 1.0) + Matern52(1.0, 0.4) * Periodic(1.0, 1.0, 0.9),
    ])
    @pytest.mark.parametrize("dim", [1, 2])
    def test_psd_property(self, kernel, dim):
        # random Gram matrices stay PSD up to a tiny spectral-norm-relative slack
        rng = np.random.default_rng(hash((kernel.kind, dim)) % 2**32)
        for _ in range(10):
            X = random_points(rng, 12, dim)
            K = kernel.gram(X)
            w = np.linalg.eigvalsh(K)
            assert w.min() >= -1e-8 * np.abs(w).max()

    def test_empty_children_rejected(self):
        with pytest.raises(ValidationError):
            Sum(())
        with pytest.raises(ValidationError):
            Product(())


class TestParams:
    def test_paths_and_roundtrip(self):
        k = SquaredExponential(1.0, 2.0) + Matern52(3.0, 4.0) * Periodic(1.0, 5.0, 6.0)
        items = dict(k.param_items())
        assert items["sum.0.se.lengthscale"] == 2.0
        assert items["sum.1.product.1.periodic.period"] == 6.0
        k2 = k.with_params({"sum.0.se.lengthscale": 9.0})
        assert dict(k2.param_items())["sum.0.se.lengthscale"] == 9.0
        # untouched values survive
        assert dict(k2.param_items())["sum.1.product.0.matern52.amplitude"] == 3.0

    def test_unknown_path_rejected(self):
        with pytest.raises(ValidationError):
            SquaredExponential(1.0, 1.0).with_params({"se.nope": 1.0})

    def test_param_grads_match_finite_differences(self):
        rng = np.random.default_rng(7)
        X = random_points(rng, 6)
        k = SquaredExponential(1.3, 0.8) + Matern52(0.9, 1.2) * RationalQuadratic(1.1, 0.7, 0.9) \
            + Periodic(0.8, 0.9, 1.4)
        grads = k.gram_param_grads(X)
        h = 1e-6
        for path, value in k.param_items():
            kp = k.with_params({path: value + h})
            km = k.with_params({path: value - h})
            fd = (kp.gram(X) - km.gram(X)) / (2.0 * h)
            np.testing.assert_allclose(grads[path], fd, rtol=2e-5, atol=1e-10)


class TestWarpedAndSpectralNodes:
    def test_zero_net_is_identity(self):
        net = WarpNet.zeros((1, 4, 1))
        k = SquaredExponential(1.0, 1.0)
        rng = np.random.default_rng(3)
        X = random_points(rng, 6)
        np.testing.assert_allclose(Warped(k, net).gram(X), k.gram(X), rtol=1e-15)

    def test_warped_zero_distance(self):
        net = WarpNet.random((1, 8, 1), rng=0)
        k = Warped(SquaredExponential(1.0, 1.0), net)
        assert eval_kernel(k, 1.7, 1.7) == 1.0

    def test_warp_on_spectral_rejected(self):
        node = Spectral([0.0, 1.0], [1.0, 0.5])
        with pytest.raises(ValidationError):
            Warped(node, WarpNet.zeros((1, 1)))

    def test_spectral_constant_density(self):
        # flat density on [0, W]: k(0) equals the trapezoid integral W
        W = 2.5
        k = Spectral(np.linspace(0.0, W, 41), np.ones(41))
        assert eval_kernel(k, 0.3, 0.3) == pytest.approx(W, rel=1e-12)

    def test_spectral_even_in_tau(self):
        k = Spectral(np.linspace(0.0, 2.0, 50), np.linspace(1.0, 0.0, 50) ** 2)
        assert k.k_of_tau(0.7) == pytest.approx(k.k_of_tau(-0.7), rel=1e-15)

    def test_spectral_needs_1d(self):
        k = Spectral([0.0, 1.0], [1.0, 1.0])
        with pytest.raises(UnsupportedError):
            k.gram(np.zeros((3, 2)))

    def test_spectral_grid_validation(self):
        with pytest.raises(ValidationError):
            Spectral([0.5, 1.0], [1.0, 1.0])  # must start at 0
        with pytest.raises(ValidationError):
            Spectral([0.0, 0.0], [1.0, 1.0])  # strictly increasing
        with pytest.raises(ValidationError):
            Spectral([0.0, 1.0], [1.0, -0.1])  # nonnegative


class TestNodePathsAndWrapping:
    def co2_like(self):
        return (
            SquaredExponential(68.58, 69.09)
            + SquaredExponential(2.55, 87.60) * Periodic(1.0, 1.44, 1.0)
            + RationalQuadratic(0.66, 1.18, 0.74)
            + SquaredExponential(0.18, 0.13)
        )

    def test_node_paths(self):
        paths = node_paths(self.co2_like())
        assert "sum.1.product.1.periodic" in paths
        assert paths[0] == "sum"

    def test_wrap_specific_nodes(self):
        k = self.co2_like()
        net = WarpNet.zeros((1, 3, 1))
        wrapped = wrap_nodes(k, ["sum.0.se", "sum.1.product.0.se"], net)
        assert isinstance(wrapped.children[0], Warped)
        assert isinstance(wrapped.children[1].children[0], Warped)
        assert not isinstance(wrapped.children[1].children[1], Warped)
        assert not wrapped.stationary

    def test_wrap_unknown_path(self):
        with pytest.raises(ValidationError):
            wrap_nodes(self.co2_like(), ["sum.9.se"], WarpNet.zeros((1, 1)))


class TestSerialization:
    def test_roundtrip_composite(self):
        k = SquaredExponential(1.0, 2.0) + Matern52(3.0, 4.0) * Periodic(1.0, 5.0, 6.0) \
            + RationalQuadratic(0.5, 0.7, 0.9)
        d = kernel_to_dict(k)
        k2 = kernel_from_dict(d)
        assert kernel_to_dict(k2) == d
        rng = np.random.default_rng(11)
        X = random_points(rng, 5)
        np.testing.assert_allclose(k.gram(X), k2.gram(X), rtol=1e-15)

    def test_roundtrip_spectral_and_warped(self):
        net = WarpNet.random((1, 6, 1), rng=4)
        k = Warped(SquaredExponential(1.0, 0.5), net) + Spectral(
            np.linspace(0, 2, 30), np.linspace(3, 0, 30) ** 2
        )
        d = kernel_to_dict(k)
        k2 = kernel_from_dict(d)
        rng = np.random.default_rng(12)
        X = random_points(rng, 5)
        np.testing.assert_allclose(k.gram(X), k2.gram(X), rtol=0, atol=1e-15)


class TestParsing:
    def test_simple(self):
        k = parse_kernel("se(1.0, 0.5)")
        assert isinstance(k, SquaredExponential)
        assert k.lengthscale == 0.5

    def test_keywords_and_aliases(self):
        k = parse_kernel("matern52(h=2, l=3)")
        assert (k.amplitude, k.lengthscale) == (2.0, 3.0)

    def test_composite(self):
        k = parse_kernel("se(1,2) + se(3,4) * periodic(1, 1.44, 1) + rq(0.66, 1.18, 0.74)")
        assert isinstance(k, Sum)
        assert len(k.children) == 3
        assert isinstance(k.children[1], Product)

    @pytest.mark.parametrize("text", [
        "se(1)", "se(1,2,3)", "unknown(1,2)", "se(1,2) - se(1,2)",
        "__import__('os')", "se(l=2)", "se(1, l=2, ls=3)",
    ])
    def test_rejects(self, text):
        with pytest.raises(ValidationError):
            parse_kernel(text)

    def test_positional_negative_rejected_by_validation(self):
        with pytest.raises(ValidationError):
            parse_kernel("se(-1, 2)")
