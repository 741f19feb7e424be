import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from scipy import integrate

from mixkrr.errors import ConfigError, InputError
from mixkrr.kernelspec import (
    KernelSpec,
    brownian_kernel,
    brownian_spectral_model,
    cross_kernel,
    gaussian_kernel,
    gram_matrix,
    kernel_eval,
    spectral_from_dict,
    spectral_kernel,
    spectral_norms,
    spectral_to_dict,
    synthesize_target,
    synthetic_spectral_model,
    target_eval,
)

BM = brownian_kernel()
SM = brownian_spectral_model(500)


# --- kernel_eval ------------------------------------------------------------


def test_brownian_min():
    assert kernel_eval(BM, 0.25, 0.5) == 0.25
    assert kernel_eval(BM, 0.7, 0.3) == 0.3
    assert kernel_eval(BM, 0.3, 0.7) == 0.3


@pytest.mark.parametrize("x", [-3.0, 0.0, 0.4, 17.0])
def test_gaussian_diagonal_is_one(x):
    assert kernel_eval(gaussian_kernel(1.0), x, x) == 1.0


@pytest.mark.parametrize("x", [-0.1, 1.0000001, math.nan])
def test_brownian_domain(x):
    with pytest.raises(InputError):
        kernel_eval(BM, x, 0.5)


def test_gaussian_bandwidth_must_be_positive():
    with pytest.raises((ConfigError, InputError)):
        gaussian_kernel(0.0)


@settings(max_examples=50, deadline=None)
@given(st.floats(0, 1), st.floats(0, 1))
def test_symmetry(x, y):
    for spec in (BM, gaussian_kernel(0.3), spectral_kernel(brownian_spectral_model(50))):
        assert kernel_eval(spec, x, y) == pytest.approx(kernel_eval(spec, y, x), abs=1e-15)


def test_diagonal_below_kappa_squared():
    grid = np.linspace(0, 1, 1001)
    for spec in (BM, gaussian_kernel(0.2), spectral_kernel(brownian_spectral_model(100))):
        diag = np.diag(cross_kernel(spec, grid, grid))
        assert np.all(diag <= spec.kappa**2 + 1e-12)


# --- gram_matrix ------------------------------------------------------------


def test_gram_examples():
    assert gram_matrix(BM, [0.5]).tolist() == [[0.5]]
    assert gram_matrix(BM, [0.25, 0.75]).tolist() == [[0.25, 0.25], [0.25, 0.75]]
    G = gram_matrix(gaussian_kernel(1.0), [0.3, 0.3])
    assert G.tolist() == [[1.0, 1.0], [1.0, 1.0]]
    assert np.linalg.matrix_rank(G) == 1


def test_gram_empty():
    with pytest.raises(InputError):
        gram_matrix(BM, [])


@settings(max_examples=40, deadline=None)
@given(st.lists(st.floats(0, 1), min_size=1, max_size=40))
def test_gram_psd(points):
    for spec in (BM, gaussian_kernel(0.25)):
        G = gram_matrix(spec, points)
        assert np.array_equal(G, G.T)
        ev = np.linalg.eigvalsh(G)
        assert ev.min() >= -1e-9 * max(np.trace(G), 1e-300)


# --- spectral model ---------------------------------------------------------


def test_mu1_against_nystrom():
    # oracle: top eigenvalue of (1/n) G on a midpoint grid
    n = 2000
    x = (np.arange(n) + 0.5) / n
    top = np.linalg.eigvalsh(np.minimum.outer(x, x) / n)[-1]
    assert SM.mu[0] == pytest.approx(4 / math.pi**2, rel=1e-15)
    assert f"{SM.mu[0]:.3g}" == f"{top:.3g}"


def test_eigenvalue_ratio_and_order():
    assert SM.mu[1] / SM.mu[0] == pytest.approx(1 / 9, rel=1e-14)
    assert np.all(np.diff(SM.mu) < 0) and SM.mu[-1] > 0


def test_phi1_normalized():
    val, _ = integrate.quad(lambda t: float(SM.eigenfunctions([t], 1)[0, 0]) ** 2, 0, 1, epsabs=1e-12)
    assert abs(val - 1.0) <= 1e-8


def test_orthonormal_first_20():
    t, w = np.polynomial.legendre.leggauss(200)
    x, w = 0.5 * (t + 1), 0.5 * w
    phi = SM.eigenfunctions(x, 20)
    gram = (phi * w[:, None]).T @ phi
    assert np.max(np.abs(gram - np.eye(20))) <= 1e-6


def test_mercer_consistency():
    grid = np.linspace(0, 1, 41)
    phi = SM.eigenfunctions(grid)
    approx = (phi * SM.mu) @ phi.T
    # sum_{k > K} mu_k phi_k phi_k' <= 2 * tail
    assert np.max(np.abs(approx - np.minimum.outer(grid, grid))) <= 2 * SM.tail_bound


def test_tail_bound_covers_true_tail():
    big = brownian_spectral_model(200_000)
    assert big.mu[500:].sum() <= SM.tail_bound
    assert SM.trace() == pytest.approx(0.5, abs=1e-12)


def test_spectral_roundtrip():
    target = synthesize_target(SM, 0.75, "inv-k", 30)
    model2, t2 = spectral_from_dict(spectral_to_dict(SM, target))
    assert np.array_equal(model2.mu, SM.mu) and model2.tail_bound == SM.tail_bound
    assert np.array_equal(t2.coeffs, target.coeffs) and t2.r == 0.75


def test_kernelspec_roundtrip():
    for spec in (BM, gaussian_kernel(0.37)):
        assert KernelSpec.from_dict(spec.to_dict()).to_dict() == spec.to_dict()


# --- targets ----------------------------------------------------------------


def test_single_mode_targets():
    t = synthesize_target(SM, 1.0, "single")
    assert t.coeffs[0] == pytest.approx(4 / math.pi**2, rel=1e-15)
    assert np.all(t.coeffs[1:] == 0)
    t = synthesize_target(SM, 0.5, "single")
    assert t.coeffs[0] == pytest.approx(2 / math.pi, rel=1e-15)
    assert spectral_norms(t.coeffs, SM)[1] ** 2 == pytest.approx(1.0, rel=1e-14)


@pytest.mark.parametrize("r", [0.49, 1.01])
def test_r_range(r):
    with pytest.raises(ConfigError):
        synthesize_target(SM, r)


def test_source_condition_exact():
    t = synthesize_target(SM, 0.8, "inv-k")
    k = np.arange(1, SM.K_max + 1)
    assert np.array_equal(t.coeffs, SM.mu**0.8 * (1.0 / k))


def test_target_eval_examples():
    sm = synthetic_spectral_model([1.0, 0.5])
    zero = synthesize_target(sm, 1.0, "zero")
    assert target_eval(zero, sm, 0.3) == 0.0
    one = synthesize_target(sm, 1.0, [1.0])
    assert target_eval(one, sm, 1.0) == pytest.approx(math.sqrt(2), rel=1e-15)
    assert target_eval(one, sm, 0.0) == 0.0


def test_sup_bound_dominates():
    t = synthesize_target(SM, 1.0)
    vals = target_eval(t, SM, np.linspace(0, 1, 2001))
    assert np.max(np.abs(vals)) <= t.sup_bound


def test_spectral_norms_examples():
    assert spectral_norms(np.zeros(5), SM) == (0.0, 0.0)
    rho, rkhs = spectral_norms([SM.mu[0]], SM)
    assert rho == pytest.approx(SM.mu[0], rel=1e-15)
    assert rkhs == pytest.approx(math.sqrt(SM.mu[0]), rel=1e-15)


def test_rho_norm_matches_quadrature():
    # oracle: fine-grid trapezoid of (sum c_k phi_k)^2
    rng = np.random.default_rng(3)
    c = rng.normal(size=15) / np.arange(1, 16)
    grid = np.linspace(0, 1, 200_001)
    f = SM.eigenfunctions(grid, 15) @ c
    quad = math.sqrt(np.trapezoid(f * f, grid))
    assert spectral_norms(c, SM)[0] == pytest.approx(quad, abs=1e-3)
