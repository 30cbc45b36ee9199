import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st
from numpy.testing import assert_allclose, assert_array_equal
from scipy.integrate import quad as adaptive_quad

from ppkcal.errors import DegenerateGradientError
from ppkcal.kernels import KernelSpec, cross_kernel
from ppkcal.projection import (
    build_context,
    h_vec,
    ogp_kernel,
    projected_gram,
    projected_kernel,
    w_vec,
)
from ppkcal.surrogate import BoxDomain, ComputerModel, midpoint_quadrature, uniform_quadrature

THETA = 0.371


class ConstantKernel:
    """Test double: K(x, t) = c."""

    def __init__(self, c):
        self.c = c

    def cross(self, A, B=None):
        B = A if B is None else B
        return np.full((np.shape(A)[0], np.shape(B)[0]), self.c)


class RankOneKernel:
    """Test double: K(x, t) = phi(x) phi(t) with phi(x) = 1 + x."""

    @staticmethod
    def phi(X):
        return 1.0 + np.asarray(X)[:, 0]

    def cross(self, A, B=None):
        B = A if B is None else B
        return np.outer(self.phi(A), self.phi(B))


@pytest.fixture(scope="module")
def ctx(sine):
    q = uniform_quadrature(sine.design_domain, 2000, 0)
    return build_context(sine.model, KernelSpec(0.5, 0.5), [THETA], q)


def _g(t):
    return t * np.cos(THETA * t)


class TestBuildContext:
    def test_constant_gradient(self):
        dom = BoxDomain((0.0,), (2.0,))
        model = ComputerModel(lambda X, t: np.full(X.shape[0], t[0]), dom, BoxDomain((-1.0,), (1.0,)))
        q = uniform_quadrature(dom, 300, 2)
        k = KernelSpec(1.5, 0.4)
        c = build_context(model, k, [0.2], q)
        assert_allclose(c.E, [[2.0]], rtol=1e-8)
        double = q.weight ** 2 * cross_kernel(k, q.nodes).sum()
        assert_allclose(c.H, [[double]], rtol=1e-7)

    def test_E_against_adaptive_quadrature(self, ctx):
        exact = adaptive_quad(lambda t: _g(t) ** 2, -5, 5, limit=200)[0]
        assert_allclose(ctx.E[0, 0], exact, rtol=0.02)

    def test_zero_gradient_degenerate(self, sine):
        model = ComputerModel(lambda X, t: X[:, 0], sine.design_domain, sine.param_domain)
        q = uniform_quadrature(sine.design_domain, 100, 0)
        with pytest.raises(DegenerateGradientError, match="degenerate"):
            build_context(model, KernelSpec(0.5, 0.5), [1.0], q)

    def test_too_few_nodes(self, sine):
        q = uniform_quadrature(sine.design_domain, 1, 0)
        with pytest.raises(ValueError):
            build_context(sine.model, KernelSpec(0.5, 0.5), [1.0], q)

    def test_symmetric(self, park):
        q = uniform_quadrature(park.design_domain, 500, 1)
        c = build_context(park.model, KernelSpec(3.5, 0.5), [0.3, -0.2], q)
        assert_array_equal(c.E, c.E.T)
        assert_array_equal(c.H, c.H.T)


class TestHVec:
    def test_constant_kernel(self, sine):
        q = uniform_quadrature(sine.design_domain, 400, 3)
        c = build_context(sine.model, ConstantKernel(2.5), [1.1], q)
        g = sine.model.grad(q.nodes, [1.1])[:, 0]
        assert_allclose(h_vec(c, [0.7]), [2.5 * q.inner(np.ones(400), g)], rtol=1e-12)

    @pytest.mark.parametrize("x", [0.0, 1.0, 2.5, -3.0])
    def test_against_adaptive_quadrature(self, ctx, x):
        def integrand(t):
            return np.exp(-2 * abs(x - t)) * _g(t)

        exact = adaptive_quad(integrand, -5, 5, points=[x], limit=200)[0]
        vals = 10.0 * integrand(ctx.quad.nodes[:, 0])
        se = vals.std() / np.sqrt(vals.size)
        assert abs(h_vec(ctx, [x])[0] - exact) < 4 * se

    @pytest.mark.parametrize("x", [0.0, 1.0, 2.5])
    def test_dense_midpoint_rule(self, sine, x):
        q = midpoint_quadrature(sine.design_domain, 5000)
        c = build_context(sine.model, KernelSpec(0.5, 0.5), [THETA], q)
        exact = adaptive_quad(lambda t: np.exp(-2 * abs(x - t)) * _g(t), -5, 5, points=[x], limit=200)[0]
        assert abs(h_vec(c, [x])[0] - exact) < 1e-4


class TestWVec:
    def test_rank_one_hand_expansion(self, sine):
        q = uniform_quadrature(sine.design_domain, 300, 4)
        k = RankOneKernel()
        c = build_context(sine.model, k, [0.8], q)
        g_nodes = sine.model.grad(q.nodes, [0.8])[:, 0]
        a = q.inner(k.phi(q.nodes), g_nodes)
        E = q.inner(g_nodes, g_nodes)
        x = np.array([[1.7]])
        expected = a * a * sine.model.grad(x, [0.8])[0, 0] / E - k.phi(x)[0] * a
        assert_allclose(w_vec(c, [1.7]), [expected], rtol=1e-10)

    def test_deterministic(self, sine):
        def build():
            q = uniform_quadrature(sine.design_domain, 2000, 0)
            return w_vec(build_context(sine.model, KernelSpec(0.5, 0.5), [THETA], q), [1.0])

        w1, w2 = build(), build()
        assert np.all(np.isfinite(w1))
        assert_array_equal(w1, w2)


class TestProjectedKernel:
    def test_symmetric(self, ctx):
        assert projected_kernel(ctx, [0.3], [-1.2]) == pytest.approx(projected_kernel(ctx, [-1.2], [0.3]),
                                                                     abs=1e-12)

    def test_diagonal_ordering(self, ctx):
        for x in np.linspace(-5, 5, 21):
            kt, ko = projected_kernel(ctx, [x], [x]), ogp_kernel(ctx, [x], [x])
            assert kt >= ko - 1e-12
            assert ko <= 1.0 + 1e-12

    def test_difference_is_w_form(self, ctx, rng):
        X1, X2 = rng.uniform(-5, 5, (8, 1)), rng.uniform(-5, 5, (8, 1))
        diff = ctx.cross(X1, X2) - ctx.cross(X1, X2, ogp=True)
        w1, w2 = w_vec(ctx, X1), w_vec(ctx, X2)
        assert_allclose(diff, w1 @ np.linalg.solve(ctx.H, w2.T), atol=1e-10)

    def test_orthogonal_to_gradients(self, ctx, rng):
        X = rng.uniform(-5, 5, (50, 1))
        K = ctx.cross(X, ctx.quad.nodes)
        g = ctx.g_nodes[:, 0]
        inner = ctx.quad.weight * K @ g
        K0 = cross_kernel(ctx.kernel, X, ctx.quad.nodes)
        bound = 1e-8 * np.abs(K0).max(axis=1) * np.abs(g).max() * ctx.quad.domain.volume
        assert np.all(np.abs(inner) <= bound)

    def test_orthogonal_two_parameters(self, park, rng):
        q = uniform_quadrature(park.design_domain, 800, 5)
        c = build_context(park.model, KernelSpec(3.5, 0.4), [0.5, 0.1], q)
        X = rng.random((20, 4))
        inner = q.weight * c.cross(X, q.nodes) @ c.g_nodes
        K0 = cross_kernel(c.kernel, X, q.nodes)
        for j in range(2):
            bound = 1e-8 * np.abs(K0).max(axis=1) * np.abs(c.g_nodes[:, j]).max() * q.domain.volume
            assert np.all(np.abs(inner[:, j]) <= bound)

    def test_matches_projection_definition(self, sine):
        # K - P1 K - P2 K + P1 P2 K with the normalized basis e = g / ||g||
        q = uniform_quadrature(sine.design_domain, 50, 8)
        k = KernelSpec(0.5, 0.5)
        c = build_context(sine.model, k, [0.9], q)
        X = np.linspace(-4.5, 4.5, 7)[:, None]
        g_n = sine.model.grad(q.nodes, [0.9])[:, 0]
        e_n = g_n / np.sqrt(q.inner(g_n, g_n))
        e_x = sine.model.grad(X, [0.9])[:, 0] / np.sqrt(q.inner(g_n, g_n))
        K_xx, K_xn, K_nn = cross_kernel(k, X), cross_kernel(k, X, q.nodes), cross_kernel(k, q.nodes)
        Ke = q.weight * K_xn @ e_n
        eKe = q.weight ** 2 * e_n @ K_nn @ e_n
        direct = K_xx - np.outer(e_x, Ke) - np.outer(Ke, e_x) + eKe * np.outer(e_x, e_x)
        assert_allclose(c.cross(X), direct, atol=1e-8)

    def test_equal_to_ogp_when_w_vanishes(self, sine):
        # with K(x,t) = phi(x) phi(t) and g proportional to phi, w = 0
        dom = sine.design_domain
        model = ComputerModel(lambda X, t: t[0] * (1.0 + X[:, 0]), dom, BoxDomain((0.0,), (1.0,)))
        c = build_context(model, RankOneKernel(), [0.5], uniform_quadrature(dom, 200, 1))
        X = np.linspace(-4, 4, 5)[:, None]
        assert_allclose(w_vec(c, X), 0.0, atol=1e-9)
        assert_allclose(c.cross(X), c.cross(X, ogp=True), atol=1e-10)


class TestProjectedGram:
    def test_single_point_positive(self, ctx):
        assert projected_gram(ctx, [[0.4]]).values[0, 0] > 0

    def test_thirty_points_psd(self, ctx, rng):
        km = projected_gram(ctx, rng.uniform(-5, 5, (30, 1)))
        lo, hi = km.min_max_eigenvalues()
        assert lo >= -1e-8 * hi

    def test_bit_identical(self, ctx):
        X = np.linspace(-5, 5, 12)[:, None]
        assert_array_equal(projected_gram(ctx, X).values, projected_gram(ctx, X).values)

    @given(n=st.integers(1, 50), theta=st.floats(0.05, 3.0), seed=st.integers(0, 10_000))
    def test_psd_property(self, sine, n, theta, seed):
        q = uniform_quadrature(sine.design_domain, 400, 0)
        c = build_context(sine.model, KernelSpec(0.5, 0.5), [theta], q)
        X = np.random.default_rng(seed).uniform(-5, 5, (n, 1))
        lo, hi = projected_gram(c, X).min_max_eigenvalues()
        assert lo >= -1e-8 * hi
