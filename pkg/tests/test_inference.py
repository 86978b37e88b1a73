import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy.stats import ortho_group

from semisdr.errors import SingularMatrixError
from semisdr.estimators import aligned_jacobian, fit_working
from semisdr.inference import (
    confidence_intervals,
    cubic_r2,
    efficient_vcov,
    kronecker_information,
    sandwich_vcov,
    wald_pvalues,
)
from semisdr.params import BasisMatrix, unvecl
from semisdr.smoothing import NWRegressor
from support import at_truth


class ZeroGradient:
    def log_gradient(self, y, u):
        return np.zeros_like(u)


class FixedGradient:
    def __init__(self, g):
        self.g = g

    def log_gradient(self, y, u):
        return self.g[:, None]


def _psd_symmetric(V):
    assert np.allclose(V, V.T, atol=1e-8)
    w = np.linalg.eigvalsh(V)
    assert w.min() >= -1e-8 * w.max()


def test_sandwich_collapses_under_information_equality():
    R = np.random.default_rng(0).standard_normal((300, 3)) @ np.diag([1.0, 2.0, 0.5])
    M = R.T @ R / 300
    assert np.allclose(sandwich_vcov(R, -M), np.linalg.inv(M))


def test_sandwich_scalar_case():
    R = np.full((10, 1), 2.0)
    assert sandwich_vcov(R, np.array([[-2.0]]))[0, 0] == pytest.approx(1.0)


def test_sandwich_singular_jacobian_reports_condition():
    with pytest.raises(SingularMatrixError) as info:
        sandwich_vcov(np.ones((5, 2)), np.array([[1.0, 1.0], [1.0, 1.0]]))
    assert info.value.condition_number > 1e10 or not np.isfinite(info.value.condition_number)


def test_efficient_vcov_identity_and_scaling():
    R = np.vstack([np.eye(3)] * 4) * np.sqrt(3)
    assert np.allclose(efficient_vcov(R), np.eye(3))
    assert np.allclose(efficient_vcov(2 * R), np.eye(3) / 4)


def test_efficient_vcov_singular():
    with pytest.raises(SingularMatrixError):
        efficient_vcov(np.c_[np.ones(5), np.ones(5)])


@settings(max_examples=30, deadline=None)
@given(st.integers(0, 10_000), st.integers(1, 5))
def test_vcov_symmetric_psd_and_equivariant(seed, k):
    rng = np.random.default_rng(seed)
    R = rng.standard_normal((40, k)) @ rng.standard_normal((k, k))
    A = rng.standard_normal((k, k)) + 3 * np.eye(k)
    V = efficient_vcov(R)
    _psd_symmetric(V)
    _psd_symmetric(sandwich_vcov(R, A))
    Q = ortho_group.rvs(k, random_state=seed) if k > 1 else np.array([[-1.0]])
    assert np.allclose(efficient_vcov(R @ Q), Q.T @ V @ Q, atol=1e-8 * max(1.0, np.abs(V).max()))


def test_interval_half_width():
    rep = confidence_intervals(np.zeros(3), np.eye(3), 100)
    assert np.allclose(rep.ci_upper - rep.ci_lower, 2 * 0.196, atol=1e-3)
    assert np.all(rep.ci_lower < rep.ci_upper)
    assert rep.level == 0.95


def test_level_zero_is_degenerate():
    rep = confidence_intervals(np.array([1.0, -2.0]), np.eye(2), 50, level=0.0)
    assert np.allclose(rep.ci_lower, rep.estimate) and np.allclose(rep.ci_upper, rep.estimate)
    with pytest.raises(ValueError):
        confidence_intervals(np.zeros(1), np.eye(1), 10, level=1.0)


def test_wald_pvalues():
    p = wald_pvalues(np.array([0.0, 1.96, -1.96]), np.ones(3))
    assert np.allclose(p, [1.0, 0.05, 0.05], atol=1e-4)


def _linear_halfwidth(n, seed):
    rng = np.random.default_rng(seed)
    Z = rng.standard_normal((n, 4))
    Y = Z @ np.array([1.0, 0.5, -0.5, 0.2]) + rng.standard_normal(n)
    res = fit_working(Y, Z, 1, "linearity", init=unvecl(np.zeros(3), 4, 1))
    return np.mean(confidence_intervals(res.theta, res.vcov, res.n).se)


def test_half_width_shrinks_like_root_n():
    ratios = [_linear_halfwidth(1000, s) / _linear_halfwidth(500, s + 100) for s in range(5)]
    assert 0.66 <= np.mean(ratios) <= 0.76


def test_cubic_r2_exact_cubic():
    t = np.linspace(-2, 2, 50)
    assert cubic_r2(1 + t - 0.5 * t**2 + 0.2 * t**3, t) == pytest.approx(1.0)


def test_cubic_r2_noise_and_half_signal():
    rng = np.random.default_rng(7)
    assert abs(cubic_r2(rng.standard_normal(1000), rng.standard_normal(1000))) < 0.05
    t = rng.standard_normal(2000)
    assert cubic_r2(t + rng.standard_normal(2000), t) == pytest.approx(0.5, abs=0.05)


def test_cubic_r2_constant_index():
    with pytest.raises(ValueError):
        cubic_r2(np.arange(10.0), np.ones(10))


def test_kronecker_information_zero_gradient():
    sc, Y, Z, S, B = at_truth("example1", 200, 0)
    Ex = NWRegressor(Z @ B.full, Z, 0.5)
    assert np.allclose(kronecker_information(Y, Z, B, ZeroGradient(), Ex), 0.0)


def test_kronecker_information_scalar_case_is_a_plain_product():
    rng = np.random.default_rng(3)
    Z = rng.standard_normal((150, 2))
    Y = rng.standard_normal(150)
    g = rng.standard_normal(150)
    B = BasisMatrix.from_matrix(np.array([[1.0], [0.3]]))
    U = Z @ B.full
    Ex = NWRegressor(U, Z, 0.6)
    r = Z[:, 1] - Ex(U)[:, 1]
    Eg2 = NWRegressor(U, g**2, 0.6)(U).ravel()
    Er2 = NWRegressor(U, r**2, 0.6)(U).ravel()
    info = kronecker_information(Y, Z, B, FixedGradient(g), Ex)
    assert info.shape == (1, 1)
    assert info[0, 0] == pytest.approx(np.mean(Eg2 * Er2), rel=1e-10)


@pytest.mark.xfail(strict=True, reason="the pivot coefficient varies less under working-scale alignment; see notes")
def test_oracle_se_beta1_near_reference_value():
    sc, Y, Z, S, B = at_truth("example1", 500, 11)
    res = fit_working(Y, Z, 1, "oracle", oracle=sc.working_oracle(S), init=B)
    J = aligned_jacobian(S, sc.beta_true, 6, 1)
    se = np.sqrt(np.diag(J @ res.vcov @ J.T) / res.n)
    assert se[0] == pytest.approx(0.1264, rel=0.25)


def test_efficient_se_beta5_near_reference_value():
    sc, Y, Z, S, B = at_truth("example1", 500, 11)
    res = fit_working(Y, Z, 1, "efficient", init=B)
    assert res.converged
    J = aligned_jacobian(S, sc.beta_true, 6, 1)
    se = np.sqrt(np.diag(J @ res.vcov @ J.T) / res.n)
    assert se[4] == pytest.approx(0.1011, rel=0.25)
