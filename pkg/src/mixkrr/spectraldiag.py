"""Ground-truth spectral quantities and Monte-Carlo checks of the operator bounds.

Everything is computed in the truncated basis ``psi_k = sqrt(mu_k) phi_k``
of H_K, where the population operator is exactly ``diag(mu)``.  This is what
makes it possible to measure ``||L_K - L_{K,D}||`` against the true operator.
"""
from __future__ import annotations

import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field
from typing import Sequence

import numpy as np

from .errors import ConfigError, InputError
from .kernelspec import SpectralModel, TargetFunction
from .krr import operator_system
from .sequencegen import (
    Dataset,
    MixingModel,
    ProcessSpec,
    derive_seed,
    generate,
    lag_pairs,
    mixing_bound,
    mixing_sum,
)

__all__ = [
    "effective_dimension",
    "fit_capacity_exponent",
    "population_regularized_target",
    "empirical_operator_matrix",
    "DeviationReport",
    "operator_deviation_moments",
    "lemma_rhs",
    "lemma_bound_check",
    "CovarianceReport",
    "covariance_inequality_check",
    "DIAG_BUDGET",
    "LEMMA_SLACK",
]

# upper limit on n * K_max^2 per trial (one dense n x K by K x n product)
DIAG_BUDGET = 4e9
LEMMA_SLACK = 0.1


def effective_dimension(smodel: SpectralModel, lam: float) -> float:
    """``N(lam) = Tr((lam I + L_K)^-1 L_K)``, including the spectral tail."""
    if not lam > 0:
        raise InputError(f"lambda must be > 0, got {lam}")
    head = float(np.sum(smodel.mu / (smodel.mu + lam)))
    return head + smodel.tail_effective_dimension(lam)


def fit_capacity_exponent(smodel: SpectralModel, lambda_grid: Sequence[float]) -> tuple[float, float]:
    """Fit ``N(lam) <= C0 lam^-s`` on a grid.

    ``s_hat`` is minus the least-squares slope of ``log N`` against
    ``log lam``; ``C0_hat`` is the smallest constant for which the bound holds
    at every grid point with that slope.
    """
    lams = np.asarray(lambda_grid, dtype=float)
    if lams.size < 2 or np.any(lams <= 0) or not np.all(np.isfinite(lams)):
        raise InputError("capacity fit needs at least two positive grid points")
    if math.log10(lams.max() / lams.min()) < 2.0 - 1e-9:
        raise InputError("capacity fit grid must span at least two decades")
    ll = np.log(lams)
    ln = np.log([effective_dimension(smodel, lam) for lam in lams])
    slope, _ = np.polyfit(ll, ln, 1)
    s_hat = -float(slope)
    c0 = float(np.exp(np.max(ln + s_hat * ll)))
    return s_hat, c0


def population_regularized_target(target: TargetFunction, smodel: SpectralModel, lam: float) -> np.ndarray:
    """Coefficients of ``f_lam = (L_K + lam I)^-1 L_K f_rho``."""
    if lam < 0:
        raise InputError("lambda must be >= 0")
    if lam == 0:
        return target.coeffs.copy()
    mu = smodel.mu[: target.K_max]
    return target.coeffs * mu / (mu + lam)


def empirical_operator_matrix(data: Dataset, smodel: SpectralModel, K_max: int | None = None) -> np.ndarray:
    """``M_kl = (1/n) sum_i sqrt(mu_k mu_l) phi_k(x_i) phi_l(x_i)``."""
    if len(data) == 0:
        raise InputError("empirical operator needs at least one sample")
    K = smodel.K_max if K_max is None else int(K_max)
    if not 1 <= K <= smodel.K_max:
        raise InputError(f"K_max must lie in [1, {smodel.K_max}]")
    M, _ = operator_system(data.x, None, smodel, K)
    return M


@dataclass
class DeviationReport:
    n: int
    lam: float
    delta: float
    trials: int
    K_max: int
    kappa: float
    M: float
    effdim: float
    P: float
    Q: float
    R: float
    S: float
    T: float
    process: dict = field(default_factory=dict)
    rhs: dict = field(default_factory=dict)

    def to_dict(self) -> dict:
        return asdict(self)


def _trial_moments(spec, target, smodel, n, lam, seed):
    data = generate(spec, target, smodel, n, seed)
    K = smodel.K_max
    mu = smodel.mu
    M, b = operator_system(data.x, data.y, smodel, K)
    E = np.diag(mu) - M
    S = float(np.max(np.abs(np.linalg.eigvalsh(E)))) ** 2
    scale = 1.0 / np.sqrt(mu + lam)
    P = float(np.linalg.norm(scale[:, None] * E, 2)) ** 2
    A = M.copy()
    A[np.diag_indices(K)] += lam
    Q = float(np.linalg.norm(np.linalg.solve(A, np.diag(mu + lam)), 2))
    c = np.zeros(K)
    kt = min(K, target.K_max)
    c[:kt] = target.coeffs[:kt]
    g = np.sqrt(mu) * c - b
    T = float(g @ g)
    R = float(np.sum(g * g / (mu + lam)))
    return P, Q, R, S, T


def lemma_rhs(
    n: int, lam: float, delta: float, kappa: float, M: float, effdim: float, mixing: MixingModel
) -> dict:
    """Right-hand sides of the operator-deviation bounds.

    Keys: ``S`` (||L_K - L_{K,D}||^2), ``P`` (with the (L_K+lam)^-1/2
    prefactor), ``Q`` (operator product), ``T`` (||L_K f - S_D^T y||_K^2) and
    ``R`` (its (L_K+lam)^-1/2 weighted version).
    """
    a1 = mixing_sum(mixing, n, 1.0)
    ad = mixing_sum(mixing, n, delta / (2.0 + delta))
    Nd = effdim ** (2.0 / (delta + 2.0))
    k_pow = kappa ** (2.0 * delta * (delta + 1.0) / (2.0 * delta + 1.0))
    return {
        "S": kappa**4 / n * (1.0 + 30.0 * a1),
        "P": kappa**2 * effdim / n + 15.0 * k_pow * Nd * lam ** (-delta / (delta + 2.0)) * ad,
        "Q": 2.0 * kappa**2 * effdim / (n * lam)
        + 30.0 * k_pow * Nd * lam ** (-(2.0 * delta + 2.0) / (delta + 2.0)) * ad
        + 2.0,
        "T": M**2 * kappa**2 / n * (1.0 + 30.0 * a1),
        "R": M**2 * effdim / n
        + 15.0 * kappa ** (2.0 * delta / (delta + 2.0)) * M**2 * Nd * lam ** (-delta / (delta + 2.0)) * ad,
    }


def operator_deviation_moments(
    spec: ProcessSpec,
    target: TargetFunction,
    smodel: SpectralModel,
    n: int,
    lam: float,
    delta: float = 1.0,
    trials: int = 200,
    seed: int = 0,
    jobs: int = 1,
) -> DeviationReport:
    """Monte-Carlo estimates of the five deviation moments P, Q, R, S, T."""
    if trials < 50:
        raise InputError("operator_deviation_moments needs at least 50 trials")
    if n < 1 or not lam > 0 or not delta > 0:
        raise InputError("need n >= 1, lambda > 0 and delta > 0")
    if n * smodel.K_max**2 > DIAG_BUDGET:
        raise ConfigError(
            f"n * K_max^2 = {n * smodel.K_max**2:.3g} exceeds the diagnostic budget {DIAG_BUDGET:.3g}"
        )
    seeds = [derive_seed(seed, n, t) for t in range(trials)]

    def run(s):
        return _trial_moments(spec, target, smodel, n, lam, s)

    if jobs > 1:
        with ThreadPoolExecutor(max_workers=jobs) as pool:
            rows = list(pool.map(run, seeds))
    else:
        rows = [run(s) for s in seeds]
    P, Q, R, S, T = (float(v) for v in np.mean(np.array(rows), axis=0))
    kappa = smodel.kappa
    bound = target.sup_bound + 3.0 * spec.noise_sigma
    effdim = effective_dimension(smodel, lam)
    return DeviationReport(
        n=n, lam=lam, delta=delta, trials=trials, K_max=smodel.K_max, kappa=kappa, M=bound,
        effdim=effdim, P=P, Q=Q, R=R, S=S, T=T, process=spec.to_dict(),
        rhs=lemma_rhs(n, lam, delta, kappa, bound, effdim, spec.mixing()),
    )


def lemma_bound_check(
    report: DeviationReport, mixing: MixingModel, kappa: float, slack: float = LEMMA_SLACK
) -> dict:
    """Compare each estimate with its bound; failures are returned, not raised.

    Returns ``{name: {"estimate", "rhs", "pass"}}`` for S, P, Q, T, R.
    """
    rhs = lemma_rhs(report.n, report.lam, report.delta, kappa, report.M, report.effdim, mixing)
    out = {}
    for name in ("S", "P", "Q", "T", "R"):
        est = getattr(report, name)
        out[name] = {"estimate": est, "rhs": rhs[name], "pass": bool(est <= rhs[name] * (1.0 + slack))}
    return out


@dataclass
class CovarianceReport:
    lag: int
    u: float
    v: float
    t: float
    trials: int
    lhs: float
    rhs: float
    alpha: float
    moment_u: float
    moment_v: float
    noise: float
    passed: bool

    def to_dict(self) -> dict:
        return asdict(self)


def _moment(norms, p, kappa):
    if math.isinf(p):
        return kappa
    return float(np.mean(norms**p) ** (1.0 / p))


def covariance_inequality_check(
    spec: ProcessSpec,
    j: int,
    u: float = math.inf,
    v: float = math.inf,
    t: float = 1.0,
    trials: int = 20000,
    seed: int = 0,
    smodel: SpectralModel | None = None,
    slack: float = LEMMA_SLACK,
) -> CovarianceReport:
    """Covariance of ``K_{x_1}`` and ``K_{x_{1+j}}`` in H_K against the mixing bound.

    ``lhs = |E<xi, eta> - <E xi, E eta>|`` is estimated from independent
    draws of the pair; the bound is ``15 alpha_j^(1/t) ||xi||_u ||eta||_v``.
    The check passes when ``lhs <= rhs (1 + slack) + 3 / sqrt(trials)``.
    """
    from .kernelspec import brownian_spectral_model

    if j < 1:
        raise InputError("lag must be >= 1")
    if math.isinf(u) or math.isinf(v):
        if not (math.isinf(u) and math.isinf(v) and t == 1.0):
            raise InputError("infinite moments require u = v = inf and t = 1")
    else:
        if min(u, v, t) <= 1.0 or math.isinf(t) or abs(1.0 / u + 1.0 / v + 1.0 / t - 1.0) > 1e-9:
            raise InputError("exponents must satisfy 1/u + 1/v + 1/t = 1 with 1 < u, v, t < inf")
    smodel = smodel or brownian_spectral_model(200)
    pairs = lag_pairs(spec, j, trials, seed)
    sq = np.sqrt(smodel.mu)
    xi = smodel.eigenfunctions(pairs[:, 0]) * sq
    eta = smodel.eigenfunctions(pairs[:, 1]) * sq
    inner = np.einsum("ik,ik->i", xi, eta)
    lhs = abs(float(inner.mean()) - float(xi.mean(axis=0) @ eta.mean(axis=0)))
    mu_u = _moment(np.linalg.norm(xi, axis=1), u, smodel.kappa)
    mu_v = _moment(np.linalg.norm(eta, axis=1), v, smodel.kappa)
    alpha = mixing_bound(spec.mixing(), j)
    rhs = 15.0 * alpha ** (1.0 / t) * mu_u * mu_v
    noise = 3.0 / math.sqrt(trials)
    return CovarianceReport(
        lag=j, u=u, v=v, t=t, trials=trials, lhs=lhs, rhs=rhs, alpha=alpha,
        moment_u=mu_u, moment_v=mu_v, noise=noise, passed=bool(lhs <= rhs * (1.0 + slack) + noise),
    )
