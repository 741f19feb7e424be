"""Stationary alpha-mixing input streams and the datasets built from them.

Every process produces an ordered sequence ``x_1..x_n`` in [0, 1]; the
responses are ``y_i = f(x_i) + eps_i`` with Gaussian noise truncated at
three standard deviations, so ``|y_i| <= M_f + 3 sigma`` always holds.

Order is meaningful: the mixing coefficients describe dependence across time,
so nothing in this module ever reorders samples.
"""
from __future__ import annotations

import csv
import json
import math
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import ClassVar

import numpy as np
from scipy import signal, special, stats

from .errors import ConfigError, InputError, ParseError
from .kernelspec import (
    SpectralModel,
    TargetFunction,
    spectral_from_dict,
    spectral_to_dict,
    target_eval,
)

__all__ = [
    "MixingModel",
    "IidMixing",
    "GeometricMixing",
    "AlgebraicMixing",
    "mixing_bound",
    "mixing_sum",
    "ProcessSpec",
    "IidUniform",
    "GaussCopulaAR1",
    "RenewalHold",
    "NonparametricARX",
    "ARMA",
    "DynamicTobit",
    "process_from_dict",
    "Dataset",
    "generate",
    "lag_pairs",
    "empirical_alpha",
    "check_sufficient_condition",
    "save_dataset",
    "load_dataset",
    "derive_seed",
]

BURN_IN = 1000


# ---------------------------------------------------------------------------
# mixing-coefficient envelopes
# ---------------------------------------------------------------------------


class MixingModel:
    """Upper envelope ``alpha_j <= bound(j)`` on the strong-mixing coefficients."""

    def bound(self, j):
        raise NotImplementedError

    def to_dict(self) -> dict:
        return {"kind": self.kind, **asdict(self)}


@dataclass(frozen=True)
class IidMixing(MixingModel):
    kind: ClassVar[str] = "iid"

    def bound(self, j):
        return np.zeros_like(np.asarray(j, dtype=float))


@dataclass(frozen=True)
class GeometricMixing(MixingModel):
    """``alpha_j <= c0_star exp(-b0 j^gamma0)``."""

    c0_star: float
    b0: float
    gamma0: float = 1.0
    kind: ClassVar[str] = "geometric"

    def __post_init__(self):
        if self.c0_star < 0 or self.b0 <= 0 or self.gamma0 <= 0:
            raise ConfigError("geometric mixing needs c0* >= 0, b0 > 0, gamma0 > 0")

    def bound(self, j):
        j = np.asarray(j, dtype=float)
        return self.c0_star * np.exp(-self.b0 * j**self.gamma0)


@dataclass(frozen=True)
class AlgebraicMixing(MixingModel):
    """``alpha_j <= c1_star j^-gamma1``."""

    c1_star: float
    gamma1: float
    kind: ClassVar[str] = "algebraic"

    def __post_init__(self):
        if self.c1_star <= 0 or self.gamma1 <= 0:
            raise ConfigError("algebraic mixing needs c1* > 0 and gamma1 > 0")

    def bound(self, j):
        j = np.asarray(j, dtype=float)
        return self.c1_star * j ** (-self.gamma1)


def mixing_bound(model: MixingModel, j: int) -> float:
    """Envelope value at lag ``j >= 1``."""
    if j < 1:
        raise InputError(f"mixing lag must be >= 1, got {j}")
    return float(model.bound(j))


def mixing_sum(model: MixingModel, n: int, power: float = 1.0) -> float:
    """``sum_{l=1}^{n} bound(l)^power``."""
    if n < 1:
        return 0.0
    vals = model.bound(np.arange(1, n + 1))
    return float(np.sum(vals**power))


def mixing_from_dict(d: dict) -> MixingModel:
    kind = d.get("kind")
    if kind == "iid":
        return IidMixing()
    if kind == "geometric":
        return GeometricMixing(float(d["c0_star"]), float(d["b0"]), float(d.get("gamma0", 1.0)))
    if kind == "algebraic":
        return AlgebraicMixing(float(d["c1_star"]), float(d["gamma1"]))
    raise ConfigError(f"unknown mixing model {kind!r}")


# ---------------------------------------------------------------------------
# processes
# ---------------------------------------------------------------------------


def _logistic(z):
    return special.expit(z)


@dataclass(frozen=True, kw_only=True)
class ProcessSpec:
    """Base class; subclasses implement ``sample_x`` and ``mixing``."""

    noise_sigma: float = 0.0
    kind: ClassVar[str] = ""

    def __post_init__(self):
        if not (self.noise_sigma >= 0 and math.isfinite(self.noise_sigma)):
            raise ConfigError("noise_sigma must be a finite value >= 0")

    def sample_x(self, rng: np.random.Generator, n: int, batch: int = 1) -> np.ndarray:
        """Draw ``batch`` independent paths of length ``n``; shape (batch, n)."""
        raise NotImplementedError

    def mixing(self) -> MixingModel:
        raise NotImplementedError

    def to_dict(self) -> dict:
        d = {"kind": self.kind}
        for k, v in asdict(self).items():
            d[k] = list(v) if isinstance(v, tuple) else v
        return d


@dataclass(frozen=True, kw_only=True)
class IidUniform(ProcessSpec):
    kind: ClassVar[str] = "iid"

    def sample_x(self, rng, n, batch=1):
        return rng.random((batch, n))

    def mixing(self):
        return IidMixing()


@dataclass(frozen=True, kw_only=True)
class GaussCopulaAR1(ProcessSpec):
    """``x_t = Phi(g_t)`` for a stationary Gaussian AR(1) latent ``g``.

    The marginal is exactly uniform from the first step on.
    """

    rho: float
    kind: ClassVar[str] = "ar1"

    def __post_init__(self):
        super().__post_init__()
        if not -1.0 < self.rho < 1.0:
            raise ConfigError(f"AR(1) coefficient must lie in (-1, 1), got {self.rho}")

    def sample_x(self, rng, n, batch=1):
        g0 = rng.standard_normal((batch, 1))
        xi = rng.standard_normal((batch, n))
        scale = math.sqrt(1.0 - self.rho**2)
        g, _ = signal.lfilter([scale], [1.0, -self.rho], xi, axis=1, zi=self.rho * g0)
        return special.ndtr(g)

    def mixing(self):
        if self.rho == 0.0:
            return IidMixing()
        # Markov chain: alpha_j = alpha(g_0, g_j) <= maximal correlation / 4 = |rho|^j / 4
        return GeometricMixing(c0_star=0.25, b0=-math.log(abs(self.rho)), gamma0=1.0)


@dataclass(frozen=True, kw_only=True)
class RenewalHold(ProcessSpec):
    """Hold a uniform value for Pareto-distributed integer durations.

    A fresh value is drawn at ``t = 1`` and after each holding time ``H``
    with ``P(H >= j) = j^-(beta - 1)``.  ``beta = inf`` forces a new draw at
    every step.  Every ``x_t`` is exactly uniform.
    """

    beta: float
    kind: ClassVar[str] = "renewal"

    def __post_init__(self):
        super().__post_init__()
        if not self.beta > 1.0:
            raise ConfigError(f"renewal tail index beta must exceed 1, got {self.beta}")

    def _holds(self, rng, size):
        if math.isinf(self.beta):
            return np.ones(size, dtype=np.int64)
        u = 1.0 - rng.random(size)  # (0, 1]
        h = np.floor(u ** (-1.0 / (self.beta - 1.0)))
        return np.minimum(h, 2**62).astype(np.int64)

    def sample_x(self, rng, n, batch=1):
        out = np.empty((batch, n))
        for b in range(batch):
            t = 0
            while t < n:
                chunk = self._holds(rng, max(8, n // 4))
                vals = rng.random(chunk.size)
                for h, v in zip(chunk, vals):
                    stop = min(n, t + int(h))
                    out[b, t:stop] = v
                    t = stop
                    if t >= n:
                        break
        return out

    def mixing(self):
        if math.isinf(self.beta):
            return IidMixing()
        return AlgebraicMixing(c1_star=1.0, gamma1=self.beta - 1.0)


_ARX_MAPS = {"tanh": np.tanh, "sin": np.sin}


@dataclass(frozen=True, kw_only=True)
class NonparametricARX(ProcessSpec):
    """``z_t = L * mean_i g(z_{t-i}) + mean_k g(z'_{t-k}) + e_t``, ``x_t = logistic(z_t)``.

    ``g`` is 1-Lipschitz, so the autoregressive map contracts with factor
    ``|L|`` in the sup norm of the lag vector.
    """

    p: int = 1
    q: int = 1
    f0: str = "tanh"
    contraction: float = 0.5
    kind: ClassVar[str] = "arx"

    def __post_init__(self):
        super().__post_init__()
        if self.p < 1 or self.q < 0:
            raise ConfigError("ARX needs p >= 1 and q >= 0")
        if self.f0 not in _ARX_MAPS:
            raise ConfigError(f"unknown ARX map {self.f0!r}; choose from {sorted(_ARX_MAPS)}")
        if not abs(self.contraction) < 1.0:
            raise ConfigError(
                f"ARX contraction factor {self.contraction} >= 1: stationarity not guaranteed"
            )

    def sample_x(self, rng, n, batch=1):
        g = _ARX_MAPS[self.f0]
        total = n + BURN_IN
        e = rng.standard_normal((batch, total))
        zx = rng.standard_normal((batch, total + self.q))
        z = np.zeros((batch, total + self.p))
        for t in range(total):
            ar = g(z[:, t : t + self.p]).mean(axis=1)
            exo = g(zx[:, t : t + self.q]).mean(axis=1) if self.q else 0.0
            z[:, t + self.p] = self.contraction * ar + exo + e[:, t]
        return _logistic(z[:, self.p + BURN_IN :])

    def mixing(self):
        rate = max(abs(self.contraction), 0.5)
        return GeometricMixing(c0_star=1.0, b0=-math.log(rate))


def _companion_radius(ar) -> float:
    if len(ar) == 0:
        return 0.0
    p = len(ar)
    C = np.zeros((p, p))
    C[0, :] = ar
    C[1:, :-1] = np.eye(p - 1)
    return float(np.max(np.abs(np.linalg.eigvals(C))))


@dataclass(frozen=True, kw_only=True)
class ARMA(ProcessSpec):
    """``z_t = sum_i ar_i z_{t-i} + sum_k ma_k eps_{t-k}``, ``x_t = logistic(z_t)``.

    ``ma`` starts at lag 0.
    """

    ar: tuple = (0.5,)
    ma: tuple = (1.0,)
    kind: ClassVar[str] = "arma"

    def __post_init__(self):
        object.__setattr__(self, "ar", tuple(float(a) for a in self.ar))
        object.__setattr__(self, "ma", tuple(float(a) for a in self.ma))
        super().__post_init__()
        if not self.ma:
            raise ConfigError("ARMA needs at least one moving-average coefficient")
        if _companion_radius(self.ar) >= 1.0:
            raise ConfigError("ARMA autoregressive part is not stable (companion radius >= 1)")

    def sample_x(self, rng, n, batch=1):
        eps = rng.standard_normal((batch, n + BURN_IN))
        z = signal.lfilter(self.ma, np.r_[1.0, -np.asarray(self.ar)], eps, axis=1)
        return _logistic(z[:, BURN_IN:])

    def mixing(self):
        rate = max(_companion_radius(self.ar), 0.5)
        return GeometricMixing(c0_star=1.0, b0=-math.log(rate))


@dataclass(frozen=True, kw_only=True)
class DynamicTobit(ProcessSpec):
    """``z_t = max(0, xi0 z'_t + eta0 z_{t-1} + gamma0 + eps_t)``, ``x_t = logistic(z_t)``."""

    xi0: float = 0.5
    eta0: float = 0.5
    gamma0: float = 0.0
    kind: ClassVar[str] = "tobit"

    def __post_init__(self):
        super().__post_init__()
        if not abs(self.eta0) < 1.0:
            raise ConfigError(f"Tobit persistence |eta0| must be < 1, got {self.eta0}")

    def sample_x(self, rng, n, batch=1):
        total = n + BURN_IN
        zx = rng.standard_normal((batch, total))
        eps = rng.standard_normal((batch, total))
        z = np.zeros((batch, total))
        prev = np.zeros(batch)
        for t in range(total):
            prev = np.maximum(0.0, self.xi0 * zx[:, t] + self.eta0 * prev + self.gamma0 + eps[:, t])
            z[:, t] = prev
        return _logistic(z[:, BURN_IN:])

    def mixing(self):
        rate = max(abs(self.eta0), 0.5)
        return GeometricMixing(c0_star=1.0, b0=-math.log(rate))


PROCESSES: dict[str, type[ProcessSpec]] = {
    cls.kind: cls for cls in (IidUniform, GaussCopulaAR1, RenewalHold, NonparametricARX, ARMA, DynamicTobit)
}


def process_from_dict(d: dict) -> ProcessSpec:
    d = dict(d)
    kind = d.pop("kind", None)
    if kind not in PROCESSES:
        raise ConfigError(f"unknown process {kind!r}; choose from {sorted(PROCESSES)}")
    try:
        return PROCESSES[kind](**d)
    except TypeError as exc:
        raise ConfigError(f"bad parameters for process {kind!r}: {exc}") from exc


# ---------------------------------------------------------------------------
# datasets
# ---------------------------------------------------------------------------


@dataclass(frozen=True, eq=False)
class Dataset:
    """Ordered sample ``(x_i, y_i)`` with the metadata that produced it."""

    x: np.ndarray
    y: np.ndarray
    process: ProcessSpec | None = None
    seed: int | None = None
    origin: str = "whole"
    bound: float | None = None
    target: TargetFunction | None = field(default=None, repr=False)
    smodel: SpectralModel | None = field(default=None, repr=False)

    def __post_init__(self):
        x = np.array(self.x, dtype=float).ravel()
        y = np.array(self.y, dtype=float).ravel()
        if x.shape != y.shape:
            raise InputError("x and y must have the same length")
        x.setflags(write=False)
        y.setflags(write=False)
        object.__setattr__(self, "x", x)
        object.__setattr__(self, "y", y)

    def __len__(self):
        return int(self.x.size)

    @property
    def n(self) -> int:
        return len(self)

    def mixing(self) -> MixingModel | None:
        return None if self.process is None else self.process.mixing()

    def block(self, start: int, stop: int, origin: str) -> "Dataset":
        """Contiguous sub-sequence sharing this dataset's metadata."""
        return Dataset(
            self.x[start:stop], self.y[start:stop], self.process, self.seed, origin,
            self.bound, self.target, self.smodel,
        )


def derive_seed(*keys: int) -> int:
    """Mix integer keys into one 64-bit seed (stable across platforms)."""
    return int(np.random.SeedSequence([int(k) for k in keys]).generate_state(1, np.uint64)[0])


def _rngs(seed: int) -> tuple[np.random.Generator, np.random.Generator]:
    if seed < 0 or seed >= 2**64:
        raise InputError("seed must be a 64-bit unsigned integer")
    sx, sy = np.random.SeedSequence(seed).spawn(2)
    return np.random.default_rng(sx), np.random.default_rng(sy)


def generate(
    spec: ProcessSpec,
    target: TargetFunction,
    model: SpectralModel,
    n: int,
    seed: int,
    origin: str = "whole",
) -> Dataset:
    """Draw ``n`` ordered samples; a pure function of (spec, target, n, seed).

    Inputs and noise use independent child streams of ``seed``, so changing
    ``noise_sigma`` leaves the x-sequence untouched.
    """
    if n < 1:
        raise InputError("n must be >= 1")
    rx, ry = _rngs(seed)
    x = np.clip(spec.sample_x(rx, n, 1)[0], 0.0, 1.0)
    sigma = spec.noise_sigma
    fx = target_eval(target, model, x)
    if sigma > 0:
        eps = sigma * stats.truncnorm.rvs(-3.0, 3.0, size=n, random_state=ry)
    else:
        eps = np.zeros(n)
    return Dataset(
        x, fx + eps, spec, int(seed), origin, target.sup_bound + 3.0 * sigma, target, model
    )


def lag_pairs(spec: ProcessSpec, j: int, trials: int, seed: int) -> np.ndarray:
    """``trials`` independent draws of ``(x_1, x_{1+j})``; shape (trials, 2)."""
    if j < 1:
        raise InputError("lag must be >= 1")
    rx, _ = _rngs(seed)
    paths = spec.sample_x(rx, j + 1, trials)
    return np.stack([paths[:, 0], paths[:, j]], axis=1)


# every union of the 8 level-3 dyadic cells, as 0/1 rows
_DYADIC_EVENTS = ((np.arange(256)[:, None] >> np.arange(8)) & 1).astype(float)


def empirical_alpha(spec: ProcessSpec, j: int, trials: int, seed: int) -> float:
    """Monte-Carlo lower bound on alpha_j over level-3 dyadic events.

    The supremum of ``|P(A and B) - P(A) P(B)|`` is taken over all unions of
    the cells ``[a/8, (a+1)/8)`` for ``A`` in sigma(x_1) and ``B`` in
    sigma(x_{1+j}); the true coefficient ranges over much larger sigma-fields.
    """
    if trials < 1000:
        raise InputError("empirical_alpha needs at least 1000 trials")
    pairs = lag_pairs(spec, j, trials, seed)
    cells = np.minimum((pairs * 8).astype(int), 7)
    joint = np.zeros((8, 8))
    np.add.at(joint, (cells[:, 0], cells[:, 1]), 1.0)
    joint /= trials
    dev = joint - np.outer(joint.sum(axis=1), joint.sum(axis=0))
    return float(np.max(np.abs(_DYADIC_EVENTS @ dev @ _DYADIC_EVENTS.T)))


def check_sufficient_condition(gamma1: float, r: float, s: float, norm: str) -> bool:
    """Whether algebraic decay ``gamma1`` meets the optimal-rate condition.

    RKHS norm: ``gamma1 > 3 + (s + 2) / (2r + s)``;
    L2 norm:   ``gamma1 > 2 + (2r - 1) / (2r + s)``.
    """
    if not (0.5 <= r <= 1.0 and 0.0 < s <= 1.0):
        raise ConfigError("need 1/2 <= r <= 1 and 0 < s <= 1")
    if norm == "rkhs":
        return gamma1 > 3.0 + (s + 2.0) / (2.0 * r + s)
    if norm == "rho":
        return gamma1 > 2.0 + (2.0 * r - 1.0) / (2.0 * r + s)
    raise InputError(f"norm must be 'rho' or 'rkhs', got {norm!r}")


# ---------------------------------------------------------------------------
# on-disk format: CSV ``index,x,y`` plus a JSON sidecar
# ---------------------------------------------------------------------------


def save_dataset(data: Dataset, path) -> tuple[Path, Path]:
    """Write ``<path>.csv`` and ``<path>.json``; returns both paths."""
    path = Path(path)
    csv_path, meta_path = path.with_suffix(".csv"), path.with_suffix(".json")
    with open(csv_path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["index", "x", "y"])
        for i, (x, y) in enumerate(zip(data.x, data.y), start=1):
            w.writerow([i, f"{x:.17g}", f"{y:.17g}"])
    meta = {
        "spec": None if data.process is None else data.process.to_dict(),
        "seed": data.seed,
        "n": data.n,
        "origin": data.origin,
        "M": data.bound,
    }
    if data.smodel is not None:
        meta["model"] = spectral_to_dict(data.smodel, data.target)
    with open(meta_path, "w") as fh:
        json.dump(meta, fh, indent=2)
        fh.write("\n")
    return csv_path, meta_path


def load_dataset(path) -> Dataset:
    """Read a dataset CSV (and its sidecar when present)."""
    csv_path = Path(path)
    if csv_path.suffix != ".csv":
        csv_path = csv_path.with_suffix(".csv")
    if not csv_path.exists():
        raise InputError(f"dataset file not found: {csv_path}")
    xs, ys = [], []
    with open(csv_path, newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header != ["index", "x", "y"]:
            raise ParseError("expected header 'index,x,y'", csv_path, 1)
        for lineno, row in enumerate(reader, start=2):
            try:
                idx, x, y = row
                if int(idx) != lineno - 1:
                    raise ValueError("index out of sequence")
                xs.append(float(x))
                ys.append(float(y))
            except ValueError as exc:
                raise ParseError(f"bad row {row!r}: {exc}", csv_path, lineno) from exc
    meta_path = csv_path.with_suffix(".json")
    kw = {}
    if meta_path.exists():
        try:
            meta = json.loads(meta_path.read_text())
        except json.JSONDecodeError as exc:
            raise ParseError(str(exc), meta_path, exc.lineno) from exc
        if meta.get("spec"):
            kw["process"] = process_from_dict(meta["spec"])
        kw["seed"] = meta.get("seed")
        kw["origin"] = meta.get("origin", "whole")
        kw["bound"] = meta.get("M")
        if meta.get("model"):
            kw["smodel"], kw["target"] = spectral_from_dict(meta["model"])
    return Dataset(np.array(xs), np.array(ys), **kw)
