"""``mixkrr`` command-line entry point.

Exit codes: 0 success, 2 configuration/input error, 3 numeric failure.
Every artifact a subcommand writes lands under ``--out``.
"""
from __future__ import annotations

import argparse
import json
import math
import sys
from dataclasses import asdict, replace
from pathlib import Path

import numpy as np

from . import __version__
from .dkrr import (
    ensemble_error_norms,
    ensemble_from_dict,
    ensemble_to_dict,
    fit_distributed,
    generate_parallel,
    lambda_rule,
    max_machines,
    partition_tandem,
    predict as dkrr_predict,
)
from .errors import InputError, MixkrrError, NumericError
from .harness import (
    compare_dkrr_krr,
    emit_plot_data,
    fit_rate,
    load,
    load_config,
    persist,
    run_dkrr_sweep,
    run_krr_sweep,
)
from .kernelspec import (
    brownian_kernel,
    brownian_spectral_model,
    gaussian_kernel,
    synthesize_target,
)
from .krr import error_norms, fit, model_from_dict, model_to_dict, predict as krr_predict
from .sequencegen import (
    PROCESSES,
    derive_seed,
    empirical_alpha,
    generate,
    load_dataset,
    process_from_dict,
    save_dataset,
)
from .spectraldiag import (
    covariance_inequality_check,
    effective_dimension,
    fit_capacity_exponent,
    lemma_bound_check,
    operator_deviation_moments,
)


# ---------------------------------------------------------------------------
# helpers
# ---------------------------------------------------------------------------


def _out_path(args, name: str) -> Path:
    rel = Path(name)
    if rel.is_absolute() or ".." in rel.parts:
        raise InputError(f"output name {name!r} must stay inside --out")
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    return out / rel


def _emit(args, payload: dict, human: str) -> None:
    if args.json:
        print(json.dumps(payload, indent=2, default=_jsonable))
    else:
        print(human)


def _jsonable(v):
    if isinstance(v, np.generic):
        return v.item()
    if isinstance(v, np.ndarray):
        return v.tolist()
    raise TypeError(f"not serializable: {type(v).__name__}")


def _table(header, rows) -> str:
    cells = [list(map(str, header))] + [[_cell(v) for v in row] for row in rows]
    widths = [max(len(r[i]) for r in cells) for i in range(len(header))]
    return "\n".join("  ".join(c.rjust(w) for c, w in zip(r, widths)) for r in cells)


def _cell(v) -> str:
    if isinstance(v, float):
        return f"{v:.6g}"
    return str(v)


def _process(args):
    kind = args.process
    params = {"kind": kind, "noise_sigma": args.noise}
    if kind == "ar1":
        params["rho"] = args.rho
    elif kind == "renewal":
        params["beta"] = args.beta
    elif kind == "arx":
        params.update(p=args.p, q=args.q, f0=args.f0, contraction=args.contraction)
    elif kind == "arma":
        params.update(ar=tuple(args.ar), ma=tuple(args.ma))
    elif kind == "tobit":
        params.update(xi0=args.xi0, eta0=args.eta0, gamma0=args.gamma0)
    return process_from_dict(params)


def _lambda(args, n: int) -> float:
    if args.lam == "auto":
        return lambda_rule(n, args.r, args.s)
    try:
        return float(args.lam)
    except ValueError:
        raise InputError(f"--lambda must be 'auto' or a number, got {args.lam!r}") from None


def _kernel(args):
    if args.kernel == "brownian":
        return brownian_kernel()
    return gaussian_kernel(args.bandwidth)


def _read_json(path) -> dict:
    path = Path(path)
    if not path.exists():
        raise InputError(f"file not found: {path}")
    try:
        return json.loads(path.read_text())
    except json.JSONDecodeError as exc:
        raise InputError(f"{path}: invalid JSON ({exc})") from exc


# ---------------------------------------------------------------------------
# subcommands
# ---------------------------------------------------------------------------


def cmd_gen(args):
    spec = _process(args)
    smodel = brownian_spectral_model(args.kmax)
    target = synthesize_target(smodel, args.r, args.h_rule)
    data = generate(spec, target, smodel, args.n, args.seed)
    csv_path, meta_path = save_dataset(data, _out_path(args, args.name))
    _emit(args, {"csv": str(csv_path), "meta": str(meta_path), "n": data.n, "M": data.bound},
          f"wrote {data.n} samples to {csv_path} (sidecar {meta_path.name}), M = {data.bound:.6g}")


def _truth(data, kernel):
    if data.target is not None and data.smodel is not None and kernel.matches(data.smodel):
        return data.target, data.smodel
    return None, None


def cmd_fit(args):
    data = load_dataset(args.data)
    kernel = _kernel(args)
    lam = _lambda(args, len(data))
    model = fit(data, lam, kernel)
    path = _out_path(args, args.name)
    path.write_text(json.dumps(model_to_dict(model)) + "\n")
    payload = {"model": str(path), "lambda": lam, "n": model.n}
    human = f"fitted KRR on n={model.n} with lambda={lam:.6g}; model written to {path}"
    target, smodel = _truth(data, kernel)
    if target is not None:
        errs = error_norms(model, target, smodel)
        payload.update(errs._asdict())
        human += f"\nrho_err={errs.rho_err:.6g}  rkhs_err={errs.rkhs_err:.6g}"
    _emit(args, payload, human)


def cmd_predict(args):
    if args.grid:
        xs = np.linspace(0.0, 1.0, args.grid)
    elif args.x:
        xs = np.asarray(args.x, dtype=float)
    else:
        raise InputError("give query points with --x or --grid")
    d = _read_json(args.model)
    if "models" in d:
        vals = dkrr_predict(ensemble_from_dict(d), xs)
    else:
        vals = krr_predict(model_from_dict(d), xs)
    _emit(args, {"x": xs, "y": vals}, _table(("x", "prediction"), zip(xs.tolist(), vals.tolist())))


def cmd_dkrr(args):
    data = load_dataset(args.data)
    n = len(data)
    kernel = _kernel(args)
    lam = _lambda(args, n)
    m = args.machines
    if args.scenario == "tandem":
        subsets = partition_tandem(data, m)
    else:
        if data.process is None or data.target is None:
            raise InputError("parallel scenario needs a dataset sidecar with the process and target")
        if not 1 <= m <= n:
            raise InputError(f"need 1 <= machines <= n, got {m}")
        base, extra = divmod(n, m)
        sizes = [base + (1 if j < extra else 0) for j in range(m)]
        seed = data.seed if data.seed is not None else args.seed
        seeds = [derive_seed(seed, m, j) for j in range(m)]
        subsets = generate_parallel(data.process, data.target, data.smodel, sizes, seeds)
    ens = fit_distributed(subsets, lam, kernel, scenario=args.scenario)
    path = _out_path(args, args.name)
    path.write_text(json.dumps(ensemble_to_dict(ens)) + "\n")
    try:
        cap = max_machines(n, args.r, args.s)
    except MixkrrError:
        cap = None
    payload = {"ensemble": str(path), "lambda": lam, "machines": m, "sizes": list(ens.sizes),
               "max_machines": cap, "within_budget": cap is not None and m <= cap}
    human = (f"DKRR ({args.scenario}) over {m} machines, n={n}, lambda={lam:.6g}; "
             f"budget m <= {cap}; written to {path}")
    target, smodel = _truth(data, kernel)
    if target is not None:
        errs = ensemble_error_norms(ens, target, smodel)
        payload.update(errs._asdict())
        human += f"\nrho_err={errs.rho_err:.6g}  rkhs_err={errs.rkhs_err:.6g}"
    _emit(args, payload, human)


def cmd_effdim(args):
    if args.kernel != "brownian":
        raise InputError("effective dimension needs a kernel with a known spectrum (brownian)")
    smodel = brownian_spectral_model(args.kmax)
    rows = [{"lambda": lam, "effdim": effective_dimension(smodel, lam)} for lam in args.lam]
    payload = {"rows": rows}
    human = "\n".join(f"lambda={r['lambda']:g}  effdim={r['effdim']:.6f}" for r in rows)
    if args.capacity:
        s_hat, c0 = fit_capacity_exponent(smodel, args.lam)
        payload.update(s_hat=s_hat, C0_hat=c0)
        human += f"\ncapacity fit: s_hat={s_hat:.4f}  C0_hat={c0:.4f}"
    if args.plot:
        emit_plot_data(rows, "effdim-curve", _out_path(args, args.plot))
    _emit(args, payload, human)


def cmd_diagnose(args):
    spec = _process(args)
    smodel = brownian_spectral_model(args.kmax)
    target = synthesize_target(smodel, args.r, args.h_rule)
    lam = _lambda(args, args.n)
    rep = operator_deviation_moments(spec, target, smodel, args.n, lam, args.delta, args.trials, args.seed, args.jobs)
    checks = {"declared": lemma_bound_check(rep, spec.mixing(), smodel.kappa)}
    path = _out_path(args, args.name)
    payload = {"report": rep.to_dict(), "checks": checks}
    path.write_text(json.dumps(payload, indent=2, default=_jsonable) + "\n")
    rows = [(k, v["estimate"], v["rhs"], "pass" if v["pass"] else "FAIL") for k, v in checks["declared"].items()]
    human = (f"process={spec.kind} n={args.n} lambda={lam:.6g} delta={args.delta} trials={args.trials} "
             f"N(lambda)={rep.effdim:.4f}\n" + _table(("moment", "estimate", "bound", "verdict"), rows)
             + f"\nreport written to {path}")
    _emit(args, payload, human)


def cmd_alpha(args):
    spec = _process(args)
    rows = [{"lag": j, "alpha": empirical_alpha(spec, j, args.trials, args.seed)} for j in args.lags]
    payload = {"process": spec.to_dict(), "rows": rows}
    table_rows = [(r["lag"], r["alpha"]) for r in rows]
    header = ("lag", "alpha_hat")
    if args.covariance:
        covs = [covariance_inequality_check(spec, j, trials=args.trials, seed=args.seed) for j in args.lags]
        payload["covariance"] = [c.to_dict() for c in covs]
        table_rows = [(r["lag"], r["alpha"], c.lhs, c.rhs, "pass" if c.passed else "FAIL")
                      for r, c in zip(rows, covs)]
        header = ("lag", "alpha_hat", "cov_lhs", "cov_rhs", "verdict")
    if args.plot:
        emit_plot_data(rows, "alpha-decay", _out_path(args, args.plot))
    _emit(args, payload, _table(header, table_rows))


def cmd_sweep(args):
    cfg = load_config(args.config)
    if args.out is None:
        args.out = cfg.out_dir
    if args.seed is not None:
        cfg = replace(cfg, base_seed=args.seed)
    rows = run_dkrr_sweep(cfg, args.jobs) if args.dkrr else run_krr_sweep(cfg, args.jobs)
    path = persist(rows, _out_path(args, args.name))
    _emit(args, {"table": str(path), "rows": len(rows)}, f"wrote {len(rows)} rows to {path}")


def cmd_rate(args):
    rows = load(args.input)
    where = {"m": args.m} if args.m is not None else None
    res = fit_rate(rows, args.norm, args.r, args.s, args.tolerance, where=where, log_mean=args.log_mean)
    if args.save:
        persist(res, _out_path(args, args.save))
    _emit(args, asdict(res),
          f"{res.norm} slope {res.slope:.4f} +/- {res.stderr:.4f} (theory {res.theoretical:.4f}, "
          f"tolerance {res.tolerance:g}): {res.verdict}")


def cmd_report(args):
    import warnings

    rows = load(args.input)
    lines, payload = [], {"fits": [], "ratios": []}
    for m in sorted({r.m for r in rows}):
        for norm in ("rho", "rkhs"):
            try:
                with warnings.catch_warnings():
                    warnings.simplefilter("ignore")
                    res = fit_rate(rows, norm, args.r, args.s, args.tolerance, where={"m": m})
            except InputError as exc:
                lines.append(f"m={m} {norm}: no fit ({exc})")
                continue
            payload["fits"].append({"m": m, **asdict(res)})
            lines.append(f"m={m} {norm}: slope {res.slope:.4f} +/- {res.stderr:.4f} vs {res.theoretical:.4f} "
                         f"-> {res.verdict}")
    emit_plot_data(rows, "rate-curve", _out_path(args, "rate_curve_rho.json"), norm="rho", m=min(r.m for r in rows))
    if args.krr:
        ratios = compare_dkrr_krr(rows, load(args.krr), seed=args.seed or 0)
        persist(ratios, _out_path(args, "ratios.csv"))
        emit_plot_data(ratios, "dkrr-ratio", _out_path(args, "dkrr_ratio.json"))
        payload["ratios"] = [asdict(r) for r in ratios]
        lines.append(_table(("n", "m", "ratio", "lo90", "hi90"), [tuple(asdict(r).values()) for r in ratios]))
    _emit(args, payload, "\n".join(lines))


# ---------------------------------------------------------------------------
# parser
# ---------------------------------------------------------------------------


def _common(json_flag=True):
    p = argparse.ArgumentParser(add_help=False)
    p.add_argument("--out", default=".", help="directory for every file this command writes")
    if json_flag:
        p.add_argument("--json", action="store_true", help="print JSON instead of a table")
    return p


def _process_flags():
    p = argparse.ArgumentParser(add_help=False)
    g = p.add_argument_group("process")
    g.add_argument("--process", choices=sorted(PROCESSES), default="iid")
    g.add_argument("--noise", type=float, default=0.2, help="noise standard deviation (truncated at 3 sigma)")
    g.add_argument("--rho", type=float, default=0.5, help="ar1 latent correlation")
    g.add_argument("--beta", type=float, default=3.0, help="renewal tail index")
    g.add_argument("--p", type=int, default=1, help="arx autoregressive order")
    g.add_argument("--q", type=int, default=1, help="arx exogenous order")
    g.add_argument("--f0", default="tanh", help="arx nonlinearity")
    g.add_argument("--contraction", type=float, default=0.5, help="arx contraction factor")
    g.add_argument("--ar", type=float, nargs="+", default=[0.5], help="arma AR coefficients")
    g.add_argument("--ma", type=float, nargs="+", default=[1.0], help="arma MA coefficients from lag 0")
    g.add_argument("--xi0", type=float, default=0.5)
    g.add_argument("--eta0", type=float, default=0.5)
    g.add_argument("--gamma0", type=float, default=0.0)
    return p


def _target_flags():
    p = argparse.ArgumentParser(add_help=False)
    p.add_argument("--r", type=float, default=1.0, help="source exponent in [1/2, 1]")
    p.add_argument("--s", type=float, default=0.5, help="capacity exponent in (0, 1]")
    p.add_argument("--h-rule", default="inv-k", help="h coefficients: inv-k, single, zero")
    return p


def _kernel_flags():
    p = argparse.ArgumentParser(add_help=False)
    p.add_argument("--kernel", choices=("brownian", "gaussian"), default="brownian")
    p.add_argument("--bandwidth", type=float, default=0.1, help="gaussian kernel bandwidth")
    p.add_argument("--lambda", dest="lam", default="auto", help="'auto' for n^(-1/(2r+s)) or a number")
    return p


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="mixkrr", description="Distributed KRR on alpha-mixing data.")
    parser.add_argument("--version", action="version", version=f"mixkrr {__version__}")
    sub = parser.add_subparsers(dest="command", required=True, metavar="command")
    common, proc, tgt, kern = _common(), _process_flags(), _target_flags(), _kernel_flags()

    p = sub.add_parser("gen", parents=[common, proc, tgt], help="generate a dataset (CSV + JSON sidecar)")
    p.add_argument("--n", type=int, required=True)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--kmax", type=int, default=500)
    p.add_argument("--name", default="dataset", help="file stem for <name>.csv / <name>.json")
    p.set_defaults(func=cmd_gen)

    p = sub.add_parser("fit", parents=[common, tgt, kern], help="fit KRR to a dataset")
    p.add_argument("--data", required=True)
    p.add_argument("--name", default="model.json")
    p.set_defaults(func=cmd_fit)

    p = sub.add_parser("predict", parents=[common], help="evaluate a KRR model or DKRR ensemble")
    p.add_argument("--model", required=True, help="model or ensemble JSON")
    p.add_argument("--x", type=float, nargs="+")
    p.add_argument("--grid", type=int, help="evaluate on an equispaced grid of this many points")
    p.set_defaults(func=cmd_predict)

    p = sub.add_parser("dkrr", parents=[common, tgt, kern], help="fit distributed KRR")
    p.add_argument("--data", required=True)
    p.add_argument("--machines", type=int, required=True)
    p.add_argument("--scenario", choices=("tandem", "parallel"), default="tandem")
    p.add_argument("--seed", type=int, default=0, help="base seed for parallel streams without a sidecar seed")
    p.add_argument("--name", default="ensemble.json")
    p.set_defaults(func=cmd_dkrr)

    p = sub.add_parser("effdim", parents=[common], help="effective dimension N(lambda)")
    p.add_argument("--kernel", default="brownian")
    p.add_argument("--lambda", dest="lam", type=float, nargs="+", required=True)
    p.add_argument("--kmax", type=int, default=500)
    p.add_argument("--capacity", action="store_true", help="also fit the capacity exponent over the given lambdas")
    p.add_argument("--plot", help="write effdim-curve plot data to this file")
    p.set_defaults(func=cmd_effdim)

    p = sub.add_parser("diagnose", parents=[common, proc, tgt], help="operator-deviation moments vs lemma bounds")
    p.add_argument("--n", type=int, required=True)
    p.add_argument("--lambda", dest="lam", default="auto")
    p.add_argument("--delta", type=float, default=1.0)
    p.add_argument("--trials", type=int, default=200)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--kmax", type=int, default=200)
    p.add_argument("--jobs", type=int, default=1)
    p.add_argument("--name", default="diagnose.json")
    p.set_defaults(func=cmd_diagnose)

    p = sub.add_parser("alpha", parents=[common, proc], help="empirical mixing coefficients by lag")
    p.add_argument("--lags", type=int, nargs="+", default=[1, 2, 4, 8, 16])
    p.add_argument("--trials", type=int, default=10000)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--covariance", action="store_true", help="also check the Hilbert-space covariance inequality")
    p.add_argument("--plot", help="write alpha-decay plot data to this file")
    p.set_defaults(func=cmd_alpha)

    p = sub.add_parser("sweep", parents=[_common()], help="run a KRR or DKRR sweep from a TOML config")
    p.set_defaults(out=None)
    p.add_argument("--config", required=True)
    p.add_argument("--jobs", type=int, default=1)
    p.add_argument("--dkrr", action="store_true", help="sweep machine counts instead of plain KRR")
    p.add_argument("--seed", type=int, default=None, help="override the config's base seed")
    p.add_argument("--name", default="sweep.csv")
    p.set_defaults(func=cmd_sweep)

    p = sub.add_parser("rate", parents=[common], help="fit a learning-rate exponent to a sweep table")
    p.add_argument("--in", dest="input", required=True)
    p.add_argument("--norm", choices=("rho", "rkhs"), default="rho")
    p.add_argument("--r", type=float, default=1.0)
    p.add_argument("--s", type=float, default=0.5)
    p.add_argument("--tolerance", type=float, default=0.1)
    p.add_argument("--m", type=int, help="restrict to rows with this machine count")
    p.add_argument("--log-mean", action="store_true", help="average log errors instead of errors")
    p.add_argument("--save", help="write the fit as JSON under --out")
    p.set_defaults(func=cmd_rate)

    p = sub.add_parser("report", parents=[common], help="rate fits, DKRR/KRR ratios and plot data")
    p.add_argument("--in", dest="input", required=True, help="sweep table (KRR or DKRR)")
    p.add_argument("--krr", help="KRR sweep table for DKRR/KRR ratios")
    p.add_argument("--r", type=float, default=1.0)
    p.add_argument("--s", type=float, default=0.5)
    p.add_argument("--tolerance", type=float, default=0.1)
    p.add_argument("--seed", type=int, default=0, help="bootstrap seed")
    p.set_defaults(func=cmd_report)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        args.func(args)
    except NumericError as exc:
        print(f"mixkrr: numeric failure: {exc}", file=sys.stderr)
        return 3
    except (MixkrrError, OSError) as exc:
        print(f"mixkrr: {exc}", file=sys.stderr)
        return 2
    return 0


if __name__ == "__main__":
    sys.exit(main())
