"""Mercer kernels on [0, 1], their spectral models, and source-condition targets.

The baseline is the Brownian kernel ``K(x, x') = min(x, x')`` under the
uniform marginal, whose integral operator has the closed-form eigenpairs

    mu_k  = ((k - 1/2) pi)^-2
    phi_k = sqrt(2) sin((k - 1/2) pi x)

The same sine basis also backs ``synthetic`` spectral models, i.e. finite-rank
kernels ``sum_k mu_k phi_k(x) phi_k(x')`` with a user supplied spectrum.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable, Sequence, Union

import numpy as np

from .errors import ConfigError, InputError

__all__ = [
    "KernelSpec",
    "SpectralModel",
    "TargetFunction",
    "brownian_kernel",
    "gaussian_kernel",
    "spectral_kernel",
    "kernel_eval",
    "cross_kernel",
    "gram_matrix",
    "brownian_spectral_model",
    "synthetic_spectral_model",
    "synthesize_target",
    "target_eval",
    "spectral_norms",
    "spectral_to_dict",
    "spectral_from_dict",
    "H_RULES",
]


def _readonly(a) -> np.ndarray:
    a = np.array(a, dtype=float)
    a.setflags(write=False)
    return a


@dataclass(frozen=True, eq=False)
class SpectralModel:
    """Eigenvalues of L_K under the uniform marginal, in the sine basis.

    Parameters
    ----------
    mu : array of shape (K_max,)
        Positive, nonincreasing eigenvalues.
    tail_bound : float
        Upper bound on ``sum_{k > K_max} mu_k``.
    name : {"brownian", "synthetic"}
        ``brownian`` models have an infinite spectrum beyond the truncation
        whose tail is known in closed form; ``synthetic`` ones are finite rank.
    """

    mu: np.ndarray
    tail_bound: float
    name: str = "brownian"
    marginal: str = "uniform"

    def __post_init__(self):
        mu = _readonly(self.mu)
        if mu.ndim != 1 or mu.size == 0:
            raise ConfigError("spectral model needs a nonempty 1-d eigenvalue vector")
        if np.any(mu <= 0) or np.any(np.diff(mu) > 0):
            raise ConfigError("eigenvalues must be positive and nonincreasing")
        if self.tail_bound < 0:
            raise ConfigError("tail_bound must be >= 0")
        object.__setattr__(self, "mu", mu)

    @property
    def K_max(self) -> int:
        return int(self.mu.size)

    @property
    def kappa(self) -> float:
        # sup_x sum_k mu_k phi_k(x)^2 is attained at x = 1 where phi_k(1)^2 = 2.
        if self.name == "brownian":
            return 1.0
        return math.sqrt(2.0 * float(np.sum(self.mu)))

    def eigenfunctions(self, x, K: int | None = None) -> np.ndarray:
        """Evaluate ``phi_1..phi_K`` at every point; returns shape (len(x), K)."""
        K = self.K_max if K is None else K
        x = np.atleast_1d(np.asarray(x, dtype=float))
        freq = (np.arange(1, K + 1) - 0.5) * np.pi
        return math.sqrt(2.0) * np.sin(np.multiply.outer(x, freq))

    def trace(self) -> float:
        """Tr(L_K), including the analytic tail for the Brownian model."""
        if self.name == "brownian":
            return 0.5
        return float(np.sum(self.mu))

    def tail_effective_dimension(self, lam: float) -> float:
        """``sum_{k > K_max} mu_k / (mu_k + lam)`` (zero for finite-rank models).

        For the Brownian spectrum the summand is ``1 / (1 + a (k - 1/2)^2)``
        with ``a = lam pi^2``; it is convex in k, so the midpoint integral from
        ``K_max + 1/2`` is an accurate (slightly low) estimate.
        """
        if self.name != "brownian":
            return 0.0
        root_a = math.sqrt(lam) * math.pi
        return (math.pi / 2 - math.atan(root_a * self.K_max)) / root_a


@dataclass(frozen=True, eq=False)
class KernelSpec:
    """A Mercer kernel. Build with the ``*_kernel`` helpers below."""

    kind: str
    bandwidth: float | None = None
    spectral: SpectralModel | None = None

    def __post_init__(self):
        if self.kind not in ("brownian", "gaussian", "spectral"):
            raise ConfigError(f"unknown kernel kind {self.kind!r}")
        if self.kind == "gaussian" and not (self.bandwidth and self.bandwidth > 0):
            raise ConfigError("gaussian kernel needs a positive bandwidth")
        if self.kind == "spectral" and self.spectral is None:
            raise ConfigError("spectral kernel needs a SpectralModel")

    @property
    def kappa(self) -> float:
        if self.kind == "spectral":
            return self.spectral.kappa
        return 1.0

    @property
    def bounded_domain(self) -> bool:
        return self.kind != "gaussian"

    def matches(self, smodel: SpectralModel) -> bool:
        """True when ``smodel`` is the spectral model of this kernel."""
        if self.kind == "brownian":
            return smodel.name == "brownian"
        if self.kind == "spectral":
            return self.spectral is smodel or (
                smodel.name == self.spectral.name
                and np.array_equal(smodel.mu, self.spectral.mu)
            )
        return False

    def to_dict(self) -> dict:
        d = {"kind": self.kind}
        if self.kind == "gaussian":
            d["bandwidth"] = self.bandwidth
        if self.kind == "spectral":
            d["mu"] = self.spectral.mu.tolist()
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "KernelSpec":
        kind = d.get("kind")
        if kind == "brownian":
            return brownian_kernel()
        if kind == "gaussian":
            return gaussian_kernel(float(d["bandwidth"]))
        if kind == "spectral":
            return spectral_kernel(synthetic_spectral_model(d["mu"]))
        raise ConfigError(f"unknown kernel kind {kind!r}")


def brownian_kernel() -> KernelSpec:
    return KernelSpec("brownian")


def gaussian_kernel(bandwidth: float) -> KernelSpec:
    return KernelSpec("gaussian", bandwidth=float(bandwidth))


def spectral_kernel(model: SpectralModel) -> KernelSpec:
    return KernelSpec("spectral", spectral=model)


def _check_domain(spec: KernelSpec, x: np.ndarray) -> None:
    if not np.all(np.isfinite(x)):
        raise InputError("kernel arguments must be finite")
    if spec.bounded_domain and (np.any(x < 0.0) or np.any(x > 1.0)):
        raise InputError(f"{spec.kind} kernel is defined on [0, 1]")


def cross_kernel(spec: KernelSpec, a, b) -> np.ndarray:
    """Matrix ``K(a_i, b_j)`` of shape (len(a), len(b))."""
    a = np.atleast_1d(np.asarray(a, dtype=float))
    b = np.atleast_1d(np.asarray(b, dtype=float))
    _check_domain(spec, a)
    _check_domain(spec, b)
    if spec.kind == "brownian":
        return np.minimum.outer(a, b)
    if spec.kind == "gaussian":
        d = np.subtract.outer(a, b)
        return np.exp(-(d * d) / (2.0 * spec.bandwidth**2))
    sm = spec.spectral
    return (sm.eigenfunctions(a) * sm.mu) @ sm.eigenfunctions(b).T


def kernel_eval(spec: KernelSpec, x: float, x2: float) -> float:
    """K(x, x2) for a single pair of points."""
    return float(cross_kernel(spec, [x], [x2])[0, 0])


def gram_matrix(spec: KernelSpec, points: Sequence[float]) -> np.ndarray:
    """Symmetric Gram matrix of ``points`` (order preserved)."""
    points = np.asarray(points, dtype=float).ravel()
    if points.size == 0:
        raise InputError("gram_matrix needs at least one point")
    G = cross_kernel(spec, points, points)
    # exact symmetry; the spectral path can differ in the last ulp
    return 0.5 * (G + G.T)


def brownian_spectral_model(K_max: int = 500) -> SpectralModel:
    """Closed-form spectrum of ``min(x, x')`` under the uniform marginal."""
    if K_max < 1:
        raise ConfigError("K_max must be >= 1")
    k = np.arange(1, K_max + 1)
    mu = 1.0 / ((k - 0.5) * np.pi) ** 2
    # sum_{k > K} mu_k <= int_K^inf dt / ((t - 1/2) pi)^2
    tail = 1.0 / (np.pi**2 * (K_max - 0.5))
    return SpectralModel(mu=mu, tail_bound=tail, name="brownian")


def synthetic_spectral_model(mu: Sequence[float], tail_bound: float = 0.0) -> SpectralModel:
    """Finite-rank model with a user spectrum on the sine basis."""
    return SpectralModel(mu=np.asarray(mu, dtype=float), tail_bound=tail_bound, name="synthetic")


@dataclass(frozen=True, eq=False)
class TargetFunction:
    """Regression function ``f = sum_k c_k phi_k`` with ``c_k = mu_k^r h_k``."""

    coeffs: np.ndarray
    r: float
    h: np.ndarray
    h_rule: str = "custom"
    sup_bound: float = field(default=0.0)

    def __post_init__(self):
        object.__setattr__(self, "coeffs", _readonly(self.coeffs))
        object.__setattr__(self, "h", _readonly(self.h))

    @property
    def K_max(self) -> int:
        return int(self.coeffs.size)


def _h_single(K):
    h = np.zeros(K)
    h[0] = 1.0
    return h


H_RULES: dict[str, Callable[[int], np.ndarray]] = {
    "inv-k": lambda K: 1.0 / np.arange(1, K + 1),
    "single": _h_single,
    "zero": np.zeros,
}

HRule = Union[str, Sequence[float], np.ndarray]


def synthesize_target(
    model: SpectralModel, r: float, h: HRule = "inv-k", K_max: int | None = None
) -> TargetFunction:
    """Build ``f_rho = L_K^r h`` exactly in the eigenbasis.

    ``h`` is either a rule name from ``H_RULES`` or an explicit coefficient
    vector (padded with zeros to ``K_max``).
    """
    if not 0.5 <= r <= 1.0:
        raise ConfigError(f"source exponent r={r} outside [1/2, 1]")
    K = model.K_max if K_max is None else int(K_max)
    if not 1 <= K <= model.K_max:
        raise ConfigError(f"K_max={K} must lie in [1, {model.K_max}]")
    if isinstance(h, str):
        if h not in H_RULES:
            raise ConfigError(f"unknown h rule {h!r}; choose from {sorted(H_RULES)}")
        rule, hk = h, H_RULES[h](K)
    else:
        hk = np.zeros(K)
        given = np.asarray(h, dtype=float).ravel()[:K]
        hk[: given.size] = given
        rule = "custom"
    c = model.mu[:K] ** r * hk
    return TargetFunction(
        coeffs=c, r=float(r), h=hk, h_rule=rule, sup_bound=math.sqrt(2.0) * float(np.sum(np.abs(c)))
    )


def target_eval(f: TargetFunction, model: SpectralModel, x) -> np.ndarray | float:
    """Evaluate ``sum_k c_k phi_k(x)``; scalar in, scalar out."""
    scalar = np.ndim(x) == 0
    xs = np.atleast_1d(np.asarray(x, dtype=float))
    vals = model.eigenfunctions(xs, f.K_max) @ f.coeffs
    return float(vals[0]) if scalar else vals


def spectral_norms(coeffs, model: SpectralModel) -> tuple[float, float]:
    """(L2(rho_X) norm, RKHS norm) of ``sum_k c_k phi_k``."""
    c = np.asarray(coeffs, dtype=float).ravel()
    if c.size > model.K_max:
        raise InputError("more coefficients than the model's K_max")
    rho = math.sqrt(float(np.dot(c, c)))
    rkhs = math.sqrt(float(np.sum(c * c / model.mu[: c.size])))
    return rho, rkhs


def spectral_to_dict(model: SpectralModel, target: TargetFunction | None = None) -> dict:
    d = {
        "kernel": model.name,
        "K_max": model.K_max,
        "tail_bound": model.tail_bound,
        "mu": model.mu.tolist(),
    }
    if target is not None:
        d["target"] = {
            "r": target.r,
            "h_rule": target.h_rule,
            "h": target.h.tolist(),
            "c": target.coeffs.tolist(),
        }
    return d


def spectral_from_dict(d: dict) -> tuple[SpectralModel, TargetFunction | None]:
    try:
        if d["kernel"] == "brownian":
            model = brownian_spectral_model(int(d["K_max"]))
        else:
            model = synthetic_spectral_model(d["mu"], float(d.get("tail_bound", 0.0)))
        t = d.get("target")
        target = None
        if t is not None:
            rule = t.get("h_rule", "custom")
            target = synthesize_target(model, float(t["r"]), rule if rule in H_RULES else t["h"],
                                       K_max=len(t["c"]))
    except (KeyError, TypeError) as exc:
        raise ConfigError(f"malformed spectral model document: {exc}") from exc
    return model, target
