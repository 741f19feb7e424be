"""Kernel ridge regression on a single machine.

``fit`` solves the representer system ``(G + n lam I) a = y``;
``fit_operator_truncated`` solves the same problem as
``(L_{K,D} + lam I)^-1 S_D^T y`` in the first ``K_max`` eigen-directions,
an independent route used to cross-check the solver.
"""
from __future__ import annotations

import math
from dataclasses import dataclass
from typing import NamedTuple

import numpy as np
from scipy import linalg

from .errors import ConfigError, InputError, NumericError
from .kernelspec import (
    KernelSpec,
    SpectralModel,
    TargetFunction,
    cross_kernel,
    gram_matrix,
)
from .sequencegen import Dataset

__all__ = [
    "KrrModel",
    "ErrorNorms",
    "fit",
    "predict",
    "spectral_coeffs",
    "error_norms",
    "representer_error_norms",
    "fit_operator_truncated",
    "predict_truncated",
    "operator_system",
    "model_to_dict",
    "model_from_dict",
]


@dataclass(frozen=True, eq=False)
class KrrModel:
    """``f(x) = sum_i a_i K(x_i, x)``."""

    x: np.ndarray
    a: np.ndarray
    lam: float
    kernel: KernelSpec
    condition: float = float("nan")

    def __post_init__(self):
        for name in ("x", "a"):
            arr = np.array(getattr(self, name), dtype=float).ravel()
            arr.setflags(write=False)
            object.__setattr__(self, name, arr)

    @property
    def n(self) -> int:
        return int(self.x.size)


class ErrorNorms(NamedTuple):
    rho_err: float
    rkhs_err: float
    rho_tail: float
    rkhs_tail: float


def _check_lambda(lam):
    if not (lam > 0 and math.isfinite(lam)):
        raise ConfigError(f"regularization lambda must be a finite value > 0, got {lam}")


def fit(data: Dataset, lam: float, kernel: KernelSpec) -> KrrModel:
    """Regularized least squares in H_K via a Cholesky solve.

    Falls back to a symmetric eigendecomposition when the factorization
    fails; raises ``NumericError`` if the result is not finite.
    """
    _check_lambda(lam)
    n = len(data)
    if n < 1:
        raise InputError("cannot fit an empty dataset")
    A = gram_matrix(kernel, data.x)
    A[np.diag_indices(n)] += n * lam
    y = data.y
    try:
        a = linalg.cho_solve(linalg.cho_factor(A, lower=True), y, check_finite=False)
        cond = float("nan")
    except linalg.LinAlgError:
        w, V = linalg.eigh(A, check_finite=False)
        cond = float(np.max(np.abs(w)) / np.min(np.abs(w))) if np.min(np.abs(w)) > 0 else math.inf
        a = V @ ((V.T @ y) / w)
    if not np.all(np.isfinite(a)):
        if math.isnan(cond):
            w = linalg.eigvalsh(A, check_finite=False)
            cond = float(np.max(np.abs(w)) / max(np.min(np.abs(w)), 1e-300))
        raise NumericError(f"KRR solve produced non-finite coefficients (condition number {cond:.3e})")
    return KrrModel(data.x, a, float(lam), kernel, cond)


def predict(model: KrrModel, x):
    """Evaluate the fitted function; scalar in, scalar out."""
    scalar = np.ndim(x) == 0
    vals = cross_kernel(model.kernel, np.atleast_1d(x), model.x) @ model.a
    return float(vals[0]) if scalar else vals


def spectral_coeffs(model: KrrModel, smodel: SpectralModel) -> np.ndarray:
    """L2 coefficients ``<f, phi_k> = mu_k sum_i a_i phi_k(x_i)``."""
    if not model.kernel.matches(smodel):
        raise ConfigError("model kernel does not match the spectral model")
    return _coeffs(smodel, model.x, model.a)


def _coeffs(smodel, x, a):
    if x.size == 0:
        return np.zeros(smodel.K_max)
    return smodel.mu * (a @ smodel.eigenfunctions(x))


def _brownian_sq_norms(x: np.ndarray, a: np.ndarray) -> tuple[float, float]:
    """Exact ``(||f||_rho^2, ||f||_K^2)`` for ``f = sum a_i min(x_i, .)``.

    ``f`` is piecewise linear with knots at the sorted support points and
    ``f(0) = 0``; its RKHS norm is ``int f'^2``.
    """
    order = np.argsort(x, kind="stable")
    xs, as_ = x[order], a[order]
    knots = np.concatenate([[0.0], xs, [1.0]])
    width = np.diff(knots)
    slope = np.concatenate([np.cumsum(as_[::-1])[::-1], [0.0]])
    vals = np.concatenate([[0.0], np.cumsum(slope * width)])
    lo, hi = vals[:-1], vals[1:]
    l2 = float(np.sum(width * (lo * lo + lo * hi + hi * hi)) / 3.0)
    rk = float(np.sum(width * slope * slope))
    return l2, rk


def representer_error_norms(
    kernel: KernelSpec, x, a, target: TargetFunction, smodel: SpectralModel
) -> ErrorNorms:
    """Distance from ``sum a_i K(x_i, .)`` to the target in L2 and RKHS norm.

    In-basis parts are exact; the energy outside the first ``K_max``
    eigen-directions is obtained from the function's full norm and reported
    as ``rho_tail`` / ``rkhs_tail``.
    """
    if not kernel.matches(smodel):
        raise ConfigError("error norms need the kernel's own spectral model (not available for gaussian)")
    if target.K_max > smodel.K_max:
        raise ConfigError("target has more modes than the spectral model")
    x = np.asarray(x, dtype=float)
    a = np.asarray(a, dtype=float)
    d = _coeffs(smodel, x, a)
    c = np.zeros(smodel.K_max)
    c[: target.K_max] = target.coeffs
    diff = d - c
    if kernel.kind == "brownian" and x.size:
        l2_sq, rk_sq = _brownian_sq_norms(x, a)
        rho_tail = max(l2_sq - float(d @ d), 0.0)
        rkhs_tail = max(rk_sq - float(np.sum(d * d / smodel.mu)), 0.0)
    else:
        rho_tail = rkhs_tail = 0.0
    rho = math.sqrt(float(diff @ diff) + rho_tail)
    rkhs = math.sqrt(float(np.sum(diff * diff / smodel.mu)) + rkhs_tail)
    return ErrorNorms(rho, rkhs, rho_tail, rkhs_tail)


def error_norms(model: KrrModel, target: TargetFunction, smodel: SpectralModel) -> ErrorNorms:
    """``(||f_D - f_rho||_rho, ||f_D - f_rho||_K)`` plus the out-of-basis tails."""
    return representer_error_norms(model.kernel, model.x, model.a, target, smodel)


def operator_system(x, y, smodel: SpectralModel, K: int | None = None):
    """Truncated ``L_{K,D}`` and ``S_D^T y`` in the basis ``psi_k = sqrt(mu_k) phi_k``.

    Returns ``(M, b)`` with ``M_kl = mean_i psi_k(x_i) psi_l(x_i)`` and
    ``b_k = mean_i y_i psi_k(x_i)``.
    """
    K = smodel.K_max if K is None else K
    x = np.asarray(x, dtype=float)
    if x.size == 0:
        raise InputError("operator matrix needs at least one sample")
    psi = smodel.eigenfunctions(x, K) * np.sqrt(smodel.mu[:K])
    n = x.size
    M = psi.T @ psi / n
    M = 0.5 * (M + M.T)
    b = None if y is None else psi.T @ np.asarray(y, dtype=float) / n
    return M, b


def fit_operator_truncated(data: Dataset, lam: float, smodel: SpectralModel) -> np.ndarray:
    """Coefficients ``u`` in the psi basis; multiply by ``sqrt(mu)`` for L2 coefficients."""
    _check_lambda(lam)
    M, b = operator_system(data.x, data.y, smodel)
    M[np.diag_indices_from(M)] += lam
    try:
        u = linalg.cho_solve(linalg.cho_factor(M, lower=True), b, check_finite=False)
    except linalg.LinAlgError as exc:
        raise NumericError(f"truncated operator solve failed: {exc}") from exc
    if not np.all(np.isfinite(u)):
        raise NumericError("truncated operator solve produced non-finite values")
    return u


def predict_truncated(u, smodel: SpectralModel, x):
    """Evaluate ``sum_k u_k psi_k(x)``."""
    u = np.asarray(u, dtype=float)
    scalar = np.ndim(x) == 0
    vals = (smodel.eigenfunctions(np.atleast_1d(x), u.size) * np.sqrt(smodel.mu[: u.size])) @ u
    return float(vals[0]) if scalar else vals


def model_to_dict(model: KrrModel) -> dict:
    return {
        "lambda": model.lam,
        "n": model.n,
        "x": model.x.tolist(),
        "a": model.a.tolist(),
        "kernel": model.kernel.to_dict(),
    }


def model_from_dict(d: dict) -> KrrModel:
    try:
        kernel = KernelSpec.from_dict(d["kernel"])
        x, a = d["x"], d["a"]
        if len(x) != len(a) or len(x) != int(d.get("n", len(x))):
            raise ConfigError("model dump has inconsistent lengths")
        return KrrModel(np.array(x, float), np.array(a, float), float(d["lambda"]), kernel)
    except (KeyError, TypeError, ValueError) as exc:
        if isinstance(exc, ConfigError):
            raise
        raise ConfigError(f"malformed model dump: {exc}") from exc
