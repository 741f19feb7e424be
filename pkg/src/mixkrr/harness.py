"""Sample-size / machine-count sweeps, learning-rate fits and result files.

Each cell of a sweep is a pure function of ``(config, n, m, trial)``: its
data seed is mixed from the base seed and the cell coordinates, so grids can
be extended without changing existing cells and the output does not depend on
how many worker processes ran it.
"""
from __future__ import annotations

import csv
import json
import math
import time
import warnings
from collections import defaultdict
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field, fields
from functools import lru_cache
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np
from scipy import stats

from .dkrr import (
    ensemble_error_norms,
    fit_distributed,
    lambda_rule,
    max_machines,
    partition_tandem,
    generate_parallel,
)
from .errors import ConfigError, InputError, MixkrrError, ParseError
from .kernelspec import brownian_kernel, brownian_spectral_model, synthesize_target
from .krr import error_norms, fit
from .sequencegen import ProcessSpec, derive_seed, generate, process_from_dict

__all__ = [
    "ExperimentConfig",
    "config_from_dict",
    "load_config",
    "SweepRow",
    "RatioRow",
    "RateFitResult",
    "run_krr_sweep",
    "run_dkrr_sweep",
    "machine_counts",
    "theoretical_exponent",
    "fit_rate",
    "compare_dkrr_krr",
    "persist",
    "load",
    "emit_plot_data",
    "PLOT_KINDS",
]

M_POLICIES = ("fixed", "theory-cap", "overshoot")
SCENARIOS = ("tandem", "parallel")


@dataclass(frozen=True)
class ExperimentConfig:
    process: ProcessSpec
    n_grid: tuple
    r: float = 1.0
    s: float = 0.5
    kernel: str = "brownian"
    K_max: int = 500
    h_rule: str = "inv-k"
    trials: int = 10
    base_seed: int = 0
    m_policy: str = "fixed"
    m_list: tuple = (1,)
    scenario: str = "tandem"
    delta: float = 1.0
    norms: tuple = ("rho", "rkhs")
    tolerance: float = 0.1
    out_dir: str = "."
    record_timing: bool = False

    def __post_init__(self):
        grid = tuple(int(n) for n in self.n_grid)
        object.__setattr__(self, "n_grid", grid)
        object.__setattr__(self, "m_list", tuple(int(m) for m in self.m_list))
        object.__setattr__(self, "norms", tuple(self.norms))
        if len(grid) < 1 or any(n < 1 for n in grid):
            raise ConfigError("n grid must be a nonempty list of positive integers")
        if any(b <= a for a, b in zip(grid, grid[1:])):
            raise ConfigError("n grid must be strictly increasing")
        if self.trials < 1:
            raise ConfigError("trials must be >= 1")
        if self.kernel != "brownian":
            raise ConfigError("sweeps need a kernel with a known spectrum; only 'brownian' is supported")
        if self.m_policy not in M_POLICIES:
            raise ConfigError(f"m policy must be one of {M_POLICIES}")
        if self.scenario not in SCENARIOS:
            raise ConfigError(f"scenario must be one of {SCENARIOS}")
        if not self.m_list or any(m < 1 for m in self.m_list):
            raise ConfigError("m list must contain positive integers")
        if not set(self.norms) <= {"rho", "rkhs"}:
            raise ConfigError("norms must be drawn from {'rho', 'rkhs'}")
        if not (0.5 <= self.r <= 1.0 and 0.0 < self.s <= 1.0):
            raise ConfigError("need 1/2 <= r <= 1 and 0 < s <= 1")
        if self.base_seed < 0:
            raise ConfigError("base seed must be >= 0")


def config_from_dict(d: dict) -> ExperimentConfig:
    """Build a config from the nested ``process / model / sweep / output`` layout.

    ::

        [process]              # kind + process parameters + noise_sigma
        kind = "ar1"
        rho = 0.5
        noise_sigma = 0.2

        [model]
        kernel = "brownian"
        K_max = 500
        r = 1.0
        s = 0.5
        h_rule = "inv-k"

        [sweep]
        n_grid = [256, 512, 1024, 2048, 4096]
        trials = 10
        base_seed = 0
        m_policy = "fixed"     # fixed | theory-cap | overshoot
        m_list = [1]
        scenario = "tandem"    # tandem | parallel
        delta = 1.0
        norms = ["rho", "rkhs"]
        tolerance = 0.1

        [output]
        dir = "results"
        timing = false
    """
    try:
        proc = process_from_dict(d["process"])
        model = dict(d.get("model", {}))
        sweep = dict(d["sweep"])
        output = dict(d.get("output", {}))
    except KeyError as exc:
        raise ConfigError(f"config is missing section {exc}") from exc
    known_model = {"kernel", "K_max", "r", "s", "h_rule"}
    known_sweep = {"n_grid", "trials", "base_seed", "m_policy", "m_list", "scenario", "delta", "norms", "tolerance"}
    for name, sect, known in (("model", model, known_model), ("sweep", sweep, known_sweep),
                              ("output", output, {"dir", "timing"})):
        extra = set(sect) - known
        if extra:
            raise ConfigError(f"unknown keys in [{name}]: {sorted(extra)}")
    if "n_grid" not in sweep:
        raise ConfigError("[sweep] needs n_grid")
    kw = {**model, **sweep}
    if "dir" in output:
        kw["out_dir"] = str(output["dir"])
    if "timing" in output:
        kw["record_timing"] = bool(output["timing"])
    try:
        return ExperimentConfig(process=proc, **kw)
    except TypeError as exc:
        raise ConfigError(str(exc)) from exc


def load_config(path) -> ExperimentConfig:
    """Read a TOML experiment file (see ``config_from_dict`` for the schema)."""
    try:
        import tomllib as tomli
    except ModuleNotFoundError:  # Python < 3.11
        import tomli

    path = Path(path)
    if not path.exists():
        raise InputError(f"config file not found: {path}")
    try:
        d = tomli.loads(path.read_text())
    except tomli.TOMLDecodeError as exc:
        raise ParseError(str(exc), path, getattr(exc, "lineno", None)) from exc
    return config_from_dict(d)


# ---------------------------------------------------------------------------
# result rows
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class SweepRow:
    n: int
    m: int
    trial: int
    seed: int
    scenario: str
    rho_err: float
    rkhs_err: float
    within_budget: bool
    wall_ms: float = 0.0


@dataclass(frozen=True)
class RatioRow:
    n: int
    m: int
    ratio: float
    lo: float
    hi: float


@dataclass(frozen=True)
class RateFitResult:
    norm: str
    slope: float
    intercept: float
    stderr: float
    theoretical: float
    tolerance: float
    verdict: str
    n_points: int = 0

    @property
    def passed(self) -> bool:
        return self.verdict == "pass"


@lru_cache(maxsize=8)
def _ground_truth(K_max: int, r: float, h_rule: str):
    smodel = brownian_spectral_model(K_max)
    return smodel, synthesize_target(smodel, r, h_rule)


def _data_seed(cfg, n, trial):
    return derive_seed(cfg.base_seed, n, 1, trial)


def _krr_cell(cfg: ExperimentConfig, n: int, trial: int) -> SweepRow:
    t0 = time.perf_counter()
    smodel, target = _ground_truth(cfg.K_max, cfg.r, cfg.h_rule)
    seed = _data_seed(cfg, n, trial)
    try:
        data = generate(cfg.process, target, smodel, n, seed)
        model = fit(data, lambda_rule(n, cfg.r, cfg.s), brownian_kernel())
        errs = error_norms(model, target, smodel)
    except MixkrrError as exc:
        raise type(exc)(f"cell n={n} trial={trial}: {exc}") from exc
    wall = (time.perf_counter() - t0) * 1e3 if cfg.record_timing else 0.0
    return SweepRow(n, 1, trial, seed, "whole", errs.rho_err, errs.rkhs_err, True, wall)


def _budget(cfg, n, m):
    try:
        return m <= max_machines(n, cfg.r, cfg.s)
    except ConfigError:
        return m == 1


def _dkrr_cell(cfg: ExperimentConfig, n: int, m: int, trial: int) -> SweepRow:
    t0 = time.perf_counter()
    smodel, target = _ground_truth(cfg.K_max, cfg.r, cfg.h_rule)
    lam = lambda_rule(n, cfg.r, cfg.s)
    try:
        if cfg.scenario == "tandem" or m == 1:
            seed = _data_seed(cfg, n, trial)
            subsets = partition_tandem(generate(cfg.process, target, smodel, n, seed), m)
        else:
            seed = derive_seed(cfg.base_seed, n, m, trial)
            base, extra = divmod(n, m)
            sizes = [base + (1 if j < extra else 0) for j in range(m)]
            seeds = [derive_seed(seed, j) for j in range(m)]
            subsets = generate_parallel(cfg.process, target, smodel, sizes, seeds)
        ens = fit_distributed(subsets, lam, brownian_kernel(), scenario=cfg.scenario)
        errs = ensemble_error_norms(ens, target, smodel)
    except MixkrrError as exc:
        raise type(exc)(f"cell n={n} m={m} trial={trial}: {exc}") from exc
    wall = (time.perf_counter() - t0) * 1e3 if cfg.record_timing else 0.0
    return SweepRow(n, m, trial, seed, cfg.scenario, errs.rho_err, errs.rkhs_err, _budget(cfg, n, m), wall)


def _run_cells(func, cells, jobs):
    if jobs > 1 and len(cells) > 1:
        with ProcessPoolExecutor(max_workers=jobs) as pool:
            rows = list(pool.map(func, *zip(*cells)))
    else:
        rows = [func(*c) for c in cells]
    return sorted(rows, key=lambda r: (r.n, r.m, r.trial))


def run_krr_sweep(cfg: ExperimentConfig, jobs: int = 1) -> list[SweepRow]:
    """One row per (n, trial): generate, fit with the a-priori lambda, measure."""
    cells = [(cfg, n, t) for n in cfg.n_grid for t in range(cfg.trials)]
    return _run_cells(_krr_cell, cells, jobs)


def machine_counts(cfg: ExperimentConfig, n: int) -> list[int]:
    """Machine counts swept at sample size ``n`` under the config's policy."""
    if cfg.m_policy == "fixed":
        ms = set(cfg.m_list)
    else:
        cap = max_machines(n, cfg.r, cfg.s)
        ms = {1, cap}
        if cfg.m_policy == "overshoot":
            ms |= {4 * cap, 16 * cap}
    return sorted(m for m in ms if m <= n)


def run_dkrr_sweep(cfg: ExperimentConfig, jobs: int = 1) -> list[SweepRow]:
    """One row per (n, m, trial).

    In the tandem scenario every m splits the same whole-stream sample, so the
    m = 1 rows coincide with ``run_krr_sweep``.
    """
    cells = [(cfg, n, m, t) for n in cfg.n_grid for m in machine_counts(cfg, n) for t in range(cfg.trials)]
    return _run_cells(_dkrr_cell, cells, jobs)


# ---------------------------------------------------------------------------
# analysis
# ---------------------------------------------------------------------------


def theoretical_exponent(norm: str, r: float, s: float) -> float:
    if norm == "rho":
        return -r / (2.0 * r + s)
    if norm == "rkhs":
        return -(r - 0.5) / (2.0 * r + s)
    raise InputError(f"norm must be 'rho' or 'rkhs', got {norm!r}")


def _select(rows, where):
    if not where:
        return list(rows)
    return [row for row in rows if all(getattr(row, k) == v for k, v in where.items())]


def _errors_by_n(rows, norm):
    col = f"{norm}_err"
    groups = defaultdict(list)
    for row in rows:
        groups[row.n].append(getattr(row, col))
    return dict(sorted(groups.items()))


def fit_rate(
    rows: Iterable[SweepRow],
    norm: str,
    r: float,
    s: float,
    tolerance: float = 0.1,
    where: dict | None = None,
    log_mean: bool = False,
) -> RateFitResult:
    """OLS slope of log(mean error over trials) against log n.

    ``where`` filters rows by column value (e.g. ``{"m": 1}``).  With
    ``log_mean`` the per-n statistic is the mean of log errors instead.
    """
    theo = theoretical_exponent(norm, r, s)
    groups = _errors_by_n(_select(rows, where), norm)
    if len(groups) < 4:
        raise InputError(f"rate fit needs at least 4 distinct n values, got {len(groups)}")
    short = [n for n, errs in groups.items() if len(errs) < 5]
    if short:
        raise InputError(f"rate fit needs at least 5 trials per n; too few at n={short}")
    ns = np.array(list(groups), dtype=float)
    if math.log10(ns.max() / ns.min()) < 1.5:
        warnings.warn("n grid spans fewer than 1.5 decades; slope is noisier", stacklevel=2)
    if log_mean:
        stat = [math.fsum(math.log(e) for e in errs) / len(errs) for errs in groups.values()]
    else:
        means = [math.fsum(errs) / len(errs) for errs in groups.values()]
        if min(means) <= 0:
            raise InputError("mean errors must be positive for a log-log fit")
        stat = [math.log(v) for v in means]
    res = stats.linregress(np.log(ns), np.array(stat))
    slope = float(res.slope)
    verdict = "pass" if abs(slope - theo) <= tolerance else "fail"
    return RateFitResult(norm, slope, float(res.intercept), float(res.stderr), theo, tolerance, verdict, len(groups))


def compare_dkrr_krr(
    dkrr_rows: Sequence[SweepRow],
    krr_rows: Sequence[SweepRow],
    norm: str = "rho",
    resamples: int = 200,
    seed: int = 0,
) -> list[RatioRow]:
    """Mean DKRR error over mean KRR error per (n, m), with a 90% bootstrap band.

    Trials are resampled jointly when both tables carry the same trial ids.
    """
    col = f"{norm}_err"
    krr = defaultdict(dict)
    for row in krr_rows:
        krr[row.n][row.trial] = getattr(row, col)
    dk = defaultdict(lambda: defaultdict(dict))
    for row in dkrr_rows:
        dk[row.n][row.m][row.trial] = getattr(row, col)
    if sorted(krr) != sorted(dk):
        raise InputError(f"n grids differ: KRR {sorted(krr)} vs DKRR {sorted(dk)}")
    rng = np.random.default_rng(seed)
    out = []
    for n in sorted(dk):
        kt = sorted(krr[n])
        kv = np.array([krr[n][t] for t in kt])
        for m in sorted(dk[n]):
            dt = sorted(dk[n][m])
            dv = np.array([dk[n][m][t] for t in dt])
            ratio = math.fsum(dv) / len(dv) / (math.fsum(kv) / len(kv))
            if dt == kt:
                idx = rng.integers(0, len(dv), size=(resamples, len(dv)))
                boot = dv[idx].mean(axis=1) / kv[idx].mean(axis=1)
            else:
                i1 = rng.integers(0, len(dv), size=(resamples, len(dv)))
                i2 = rng.integers(0, len(kv), size=(resamples, len(kv)))
                boot = dv[i1].mean(axis=1) / kv[i2].mean(axis=1)
            lo, hi = np.percentile(boot, [5.0, 95.0])
            out.append(RatioRow(n, m, ratio, float(lo), float(hi)))
    return out


# ---------------------------------------------------------------------------
# persistence
# ---------------------------------------------------------------------------

SWEEP_COLUMNS = tuple(f.name for f in fields(SweepRow))
RATIO_COLUMNS = tuple(f.name for f in fields(RatioRow))


def _fmt(v) -> str:
    if isinstance(v, bool):
        return "true" if v else "false"
    if isinstance(v, float):
        return f"{v:.17g}"
    return str(v)


def _parse_bool(s: str) -> bool:
    if s == "true":
        return True
    if s == "false":
        return False
    raise ValueError(f"expected true/false, got {s!r}")


_CONVERTERS = {int: int, float: float, str: str, bool: _parse_bool,
               "int": int, "float": float, "str": str, "bool": _parse_bool}


def persist(obj, path) -> Path:
    """Write a row table (CSV) or a ``RateFitResult`` (JSON)."""
    path = Path(path)
    if isinstance(obj, RateFitResult):
        path.write_text(json.dumps(asdict(obj), indent=2) + "\n")
        return path
    rows = list(obj)
    cls = type(rows[0]) if rows else SweepRow
    if cls not in (SweepRow, RatioRow):
        raise InputError(f"cannot persist rows of type {cls.__name__}")
    cols = [f.name for f in fields(cls)]
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(cols)
        for row in rows:
            w.writerow([_fmt(getattr(row, c)) for c in cols])
    return path


def load(path):
    """Inverse of ``persist``; raises ``ParseError`` with the offending line."""
    path = Path(path)
    if not path.exists():
        raise InputError(f"file not found: {path}")
    if path.suffix == ".json":
        try:
            return RateFitResult(**json.loads(path.read_text()))
        except json.JSONDecodeError as exc:
            raise ParseError(str(exc), path, exc.lineno) from exc
        except TypeError as exc:
            raise ParseError(f"not a rate-fit result: {exc}", path) from exc
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        header = tuple(next(reader, ()))
        if header == SWEEP_COLUMNS:
            cls = SweepRow
        elif header == RATIO_COLUMNS:
            cls = RatioRow
        else:
            raise ParseError(f"unrecognized header {','.join(header)!r}", path, 1)
        convs = [_CONVERTERS[f.type] for f in fields(cls)]
        rows = []
        for lineno, rec in enumerate(reader, start=2):
            if len(rec) != len(convs):
                raise ParseError(f"expected {len(convs)} fields, got {len(rec)}", path, lineno)
            try:
                rows.append(cls(*(conv(v) for conv, v in zip(convs, rec))))
            except ValueError as exc:
                raise ParseError(str(exc), path, lineno) from exc
    return rows


# ---------------------------------------------------------------------------
# plot data
# ---------------------------------------------------------------------------

PLOT_KINDS = ("rate-curve", "dkrr-ratio", "effdim-curve", "alpha-decay")


def _as_dict(row):
    return asdict(row) if hasattr(row, "__dataclass_fields__") else dict(row)


def emit_plot_data(table, kind: str, path=None, norm: str = "rho", n: int | None = None, m: int | None = None) -> dict:
    """Series ``{x, y, yerr, labels}`` for an external plotting tool.

    ``rate-curve`` takes sweep rows (mean error per n, standard error over
    trials), ``dkrr-ratio`` takes ratio rows at one ``n`` (largest by
    default), ``effdim-curve`` takes ``{lambda, effdim}`` mappings and
    ``alpha-decay`` takes ``{lag, alpha}`` mappings.
    """
    if kind not in PLOT_KINDS:
        raise InputError(f"unknown plot kind {kind!r}; choose from {PLOT_KINDS}")
    rows = [_as_dict(r) for r in table]
    if not rows:
        raise InputError("cannot emit plot data for an empty table")
    if kind == "rate-curve":
        if m is not None:
            rows = [r for r in rows if r["m"] == m]
        groups = defaultdict(list)
        for r in rows:
            groups[r["n"]].append(r[f"{norm}_err"])
        xs = sorted(groups)
        ys = [float(np.mean(groups[k])) for k in xs]
        yerr = [float(np.std(groups[k], ddof=1) / math.sqrt(len(groups[k]))) if len(groups[k]) > 1 else 0.0
                for k in xs]
        labels, logx, logy = {"x": "n", "y": f"mean {norm} error"}, True, True
    elif kind == "dkrr-ratio":
        target_n = max(r["n"] for r in rows) if n is None else n
        sel = sorted((r for r in rows if r["n"] == target_n), key=lambda r: r["m"])
        xs = [r["m"] for r in sel]
        ys = [r["ratio"] for r in sel]
        yerr = [(r["hi"] - r["lo"]) / 2.0 for r in sel]
        labels, logx, logy = {"x": "m", "y": f"DKRR/KRR error ratio at n={target_n}"}, True, False
    elif kind == "effdim-curve":
        sel = sorted(rows, key=lambda r: r["lambda"])
        xs = [r["lambda"] for r in sel]
        ys = [r["effdim"] for r in sel]
        yerr = [0.0] * len(sel)
        labels, logx, logy = {"x": "lambda", "y": "effective dimension"}, True, True
    else:
        sel = sorted(rows, key=lambda r: r["lag"])
        xs = [r["lag"] for r in sel]
        ys = [r["alpha"] for r in sel]
        yerr = [0.0] * len(sel)
        labels, logx, logy = {"x": "lag", "y": "empirical alpha"}, True, True
    doc = {"kind": kind, "x": xs, "y": ys, "yerr": yerr, "labels": labels, "log_x": logx, "log_y": logy}
    if path is not None:
        Path(path).write_text(json.dumps(doc, indent=2) + "\n")
    return doc
