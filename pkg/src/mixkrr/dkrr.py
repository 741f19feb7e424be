"""Divide-and-conquer KRR: local fits averaged with weights ``|D_j| / |D|``.

The aggregator never sees a local machine's data.  Prediction broadcasts the
query points, each ``LocalMachine`` answers with one real number per point,
and the answers are averaged in machine-index order.  An ``AuditLog`` keeps a
record of every message that crossed that boundary.
"""
from __future__ import annotations

import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from fractions import Fraction
from typing import Sequence

import numpy as np

from .errors import ConfigError, InputError, MixkrrError
from .kernelspec import KernelSpec, SpectralModel, TargetFunction
from .krr import (
    ErrorNorms,
    KrrModel,
    fit,
    model_from_dict,
    model_to_dict,
    predict as krr_predict,
    representer_error_norms,
    spectral_coeffs,
)
from .sequencegen import Dataset, ProcessSpec, generate

__all__ = [
    "LocalMachine",
    "AuditLog",
    "DkrrEnsemble",
    "partition_tandem",
    "generate_parallel",
    "fit_distributed",
    "predict",
    "ensemble_spectral_coeffs",
    "ensemble_error_norms",
    "lambda_rule",
    "max_machines",
    "ensemble_to_dict",
    "ensemble_from_dict",
]


def partition_tandem(data: Dataset, m: int) -> list[Dataset]:
    """Split one stream into ``m`` contiguous blocks (sizes differ by at most one).

    The first ``n mod m`` blocks carry the extra sample.
    """
    n = len(data)
    if not 1 <= m <= n:
        raise InputError(f"need 1 <= m <= n, got m={m}, n={n}")
    if m == 1:
        return [data]
    base, extra = divmod(n, m)
    blocks, start = [], 0
    for j in range(m):
        stop = start + base + (1 if j < extra else 0)
        blocks.append(data.block(start, stop, f"tandem-block({j + 1} of {m})"))
        start = stop
    return blocks


def generate_parallel(
    spec: ProcessSpec,
    target: TargetFunction,
    smodel: SpectralModel,
    sizes: Sequence[int],
    seeds: Sequence[int],
) -> list[Dataset]:
    """Independent streams, one per machine, each from its own seed."""
    if len(sizes) != len(seeds):
        raise InputError("sizes and seeds must have the same length")
    if len(set(seeds)) != len(seeds):
        raise ConfigError("parallel streams need distinct seeds")
    m = len(sizes)
    return [
        generate(spec, target, smodel, int(n), int(seed), origin=f"parallel-stream({j + 1} of {m})")
        for j, (n, seed) in enumerate(zip(sizes, seeds))
    ]


@dataclass
class AuditLog:
    """Messages received by the aggregator: (machine index, payload shape, dtype)."""

    records: list = field(default_factory=list)

    def record(self, machine: int, n_queries: int, payload: np.ndarray) -> None:
        if payload.ndim != 1 or payload.shape[0] != n_queries or payload.dtype.kind != "f":
            raise MixkrrError(
                f"machine {machine} returned a payload of shape {payload.shape}; "
                "only one real number per query may leave a machine"
            )
        self.records.append((machine, n_queries, payload.shape, str(payload.dtype)))


class LocalMachine:
    """Holds one local model and answers point queries with scalars."""

    def __init__(self, index: int, model: KrrModel, size: int):
        self.index = index
        self.size = size
        self._model = model

    def query(self, x) -> np.ndarray:
        return np.asarray(krr_predict(self._model, np.atleast_1d(np.asarray(x, dtype=float))), dtype=float)

    def spectral_summary(self, smodel: SpectralModel) -> np.ndarray:
        return spectral_coeffs(self._model, smodel)


@dataclass(eq=False)
class DkrrEnsemble:
    machines: tuple
    sizes: tuple
    lam: float
    kernel: KernelSpec
    scenario: str = "tandem"
    audit: AuditLog = field(default_factory=AuditLog)

    @property
    def m(self) -> int:
        return len(self.machines)

    @property
    def n_total(self) -> int:
        return int(sum(self.sizes))

    @property
    def weight_fractions(self) -> list[Fraction]:
        total = self.n_total
        return [Fraction(s, total) for s in self.sizes]

    @property
    def weights(self) -> np.ndarray:
        total = self.n_total
        return np.array([s / total for s in self.sizes])

    @property
    def local_models(self) -> list[KrrModel]:
        return [mach._model for mach in self.machines]


def fit_distributed(
    subsets: Sequence[Dataset],
    lam: float,
    kernel: KernelSpec,
    scenario: str = "tandem",
    jobs: int = 1,
) -> DkrrEnsemble:
    """Fit one KRR per subset with a shared lambda."""
    if not subsets:
        raise InputError("need at least one subset")
    for j, d in enumerate(subsets):
        if len(d) == 0:
            raise InputError(f"machine {j}: empty subset")

    def _fit(j):
        try:
            return fit(subsets[j], lam, kernel)
        except MixkrrError as exc:
            raise type(exc)(f"machine {j}: {exc}") from exc

    if jobs > 1 and len(subsets) > 1:
        with ThreadPoolExecutor(max_workers=jobs) as pool:
            models = list(pool.map(_fit, range(len(subsets))))
    else:
        models = [_fit(j) for j in range(len(subsets))]
    machines = tuple(LocalMachine(j, mdl, len(d)) for j, (mdl, d) in enumerate(zip(models, subsets)))
    return DkrrEnsemble(machines, tuple(len(d) for d in subsets), float(lam), kernel, scenario)


def predict(ensemble: DkrrEnsemble, x):
    """Weighted average of the machines' scalar answers at ``x``."""
    scalar = np.ndim(x) == 0
    xs = np.atleast_1d(np.asarray(x, dtype=float))
    total = np.zeros(xs.size)
    for w, machine in zip(ensemble.weights, ensemble.machines):
        answer = machine.query(xs)
        ensemble.audit.record(machine.index, xs.size, answer)
        total += w * answer
    return float(total[0]) if scalar else total


def ensemble_spectral_coeffs(ensemble: DkrrEnsemble, smodel: SpectralModel) -> np.ndarray:
    out = np.zeros(smodel.K_max)
    for w, machine in zip(ensemble.weights, ensemble.machines):
        out += w * machine.spectral_summary(smodel)
    return out


def ensemble_error_norms(
    ensemble: DkrrEnsemble, target: TargetFunction, smodel: SpectralModel
) -> ErrorNorms:
    """Error norms of the averaged estimator.

    The average is itself a kernel expansion over the union of the local
    support points with coefficients ``w_j a_ij``, so the exact-norm routine
    of the single-machine case applies unchanged.
    """
    models = ensemble.local_models
    x = np.concatenate([mdl.x for mdl in models])
    a = np.concatenate([w * mdl.a for w, mdl in zip(ensemble.weights, models)])
    return representer_error_norms(ensemble.kernel, x, a, target, smodel)


def _check_rs(r, s):
    if not (0.5 <= r <= 1.0 and 0.0 < s <= 1.0):
        raise ConfigError(f"need 1/2 <= r <= 1 and 0 < s <= 1, got r={r}, s={s}")


def lambda_rule(n_total: int, r: float, s: float) -> float:
    """A-priori regularization ``|D|^(-1 / (2r + s))``."""
    if n_total < 1:
        raise InputError("n_total must be >= 1")
    _check_rs(r, s)
    return float(n_total ** (-1.0 / (2.0 * r + s)))


def max_machines(n_total: int, r: float, s: float) -> int:
    """Largest machine count ``floor(|D|^((2r+s-2)/(4r+2s)))`` (at least 1)."""
    _check_rs(r, s)
    if 2.0 * r + s < 2.0:
        raise ConfigError(
            f"machine budget requires 2r + s >= 2 (got 2r + s = {2 * r + s:g})"
        )
    if n_total < 1:
        raise InputError("n_total must be >= 1")
    expo = (2.0 * r + s - 2.0) / (4.0 * r + 2.0 * s)
    # guard exact integer powers against a last-ulp shortfall
    return max(1, math.floor(n_total**expo * (1.0 + 1e-12)))


def ensemble_to_dict(ensemble: DkrrEnsemble) -> dict:
    return {
        "scenario": ensemble.scenario,
        "lambda": ensemble.lam,
        "weights": ensemble.weights.tolist(),
        "sizes": list(ensemble.sizes),
        "models": [model_to_dict(mdl) for mdl in ensemble.local_models],
    }


def ensemble_from_dict(d: dict) -> DkrrEnsemble:
    try:
        models = [model_from_dict(md) for md in d["models"]]
        sizes = tuple(int(s) for s in d["sizes"])
    except (KeyError, TypeError) as exc:
        raise ConfigError(f"malformed ensemble dump: {exc}") from exc
    if not models or len(models) != len(sizes):
        raise ConfigError("ensemble dump has inconsistent machine count")
    machines = tuple(LocalMachine(j, mdl, sz) for j, (mdl, sz) in enumerate(zip(models, sizes)))
    return DkrrEnsemble(machines, sizes, float(d["lambda"]), models[0].kernel, d.get("scenario", "tandem"))
