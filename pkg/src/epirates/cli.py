"""Command-line interface.

All rates are per unit of the input time scale. Exit codes: 0 success,
2 configuration error, 3 data error, 4 conditioning failure, 5 no closed-form
expectation. Errors are reported as JSON on stderr.
"""

from __future__ import annotations

import argparse
import csv
import json
import sys
from dataclasses import asdict
from pathlib import Path

import numpy as np

from .bootstrap import BootstrapConfig, BootstrapError, bootstrap_t
from .core import DataError, IncompletePairError, KernelSpec, RateModel
from .dataio import (
    SCHEMA_VERSION,
    dumps,
    inject_missingness,
    load_cases,
    load_config,
    read_locations,
    write_case_table,
    write_records_csv,
)
from .estimate import EstimationError, estimate_rates
from .exposure import NoClosedFormError
from .mcmc import InitializationError, PriorSpec, ess, run_chains, split_rhat
from .simulate import EVENT_KINDS, ConditioningError, SimulationError, simulate_seir_het, simulate_sir
from .study import StudyConfig, run_study, write_study

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_DATA = 3
EXIT_CONDITIONING = 4
EXIT_NO_CLOSED_FORM = 5


class ConfigError(ValueError):
    """Invalid flags or configuration values."""


def _parse_group_sizes(text: str) -> dict:
    out = {}
    for item in text.split(","):
        if "=" not in item:
            raise ConfigError(f"group size {item!r} is not of the form label=count")
        label, count = item.split("=", 1)
        try:
            out[label.strip()] = int(count)
        except ValueError:
            raise ConfigError(f"group size {count!r} is not an integer") from None
    return out


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise ConfigError(f"{self.prog}: {message}")


def _floats(text: str) -> tuple:
    try:
        return tuple(float(v) for v in text.split(","))
    except ValueError:
        raise argparse.ArgumentTypeError(f"{text!r} is not a comma-separated list of numbers") from None


def _common(p: argparse.ArgumentParser):
    p.add_argument("--config", help="TOML file of flag defaults; flags override it")
    p.add_argument("--seed", type=int, default=None)
    p.add_argument("--output", choices=("json", "csv"), default="json")
    p.add_argument("--out", help="output file (default stdout)")
    p.add_argument("--model", choices=("sir", "seir"), default="sir")
    p.add_argument("--m", type=int, default=1, help="Erlang shape of the infectious period")
    p.add_argument("--delta", type=float, default=0.0, help="fixed incubation period (seir only)")


def _ingest(p: argparse.ArgumentParser):
    p.add_argument("--input", required=True, help="case table CSV")
    p.add_argument("--N", type=int, required=True, help="population size")
    p.add_argument("--infection-offset", type=float, default=0.0,
                   help="added to recorded infection times, e.g. -1 for a day before prodromes")
    p.add_argument("--removal-offset", type=float, default=0.0,
                   help="added to recorded removal times, e.g. 3 for days after rash")
    p.add_argument("--dequantize", action="store_true", help="add Normal noise to integer-valued times")
    p.add_argument("--noise-sd", type=float, default=0.1)


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="epirates", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("simulate", help="simulate an epidemic")
    _common(p)
    p.add_argument("--beta", type=float, required=True)
    p.add_argument("--gamma", type=float, required=True)
    p.add_argument("--N", type=int, required=True)
    p.add_argument("--events", help="also write the event log CSV here")

    p = sub.add_parser("inject", help="mask endpoints of a complete case table")
    _common(p)
    p.add_argument("--input", required=True)
    p.add_argument("--p-missing", type=float, required=True)
    p.add_argument("--p-inf-missing", type=float, required=True)

    p = sub.add_parser("estimate", help="point estimates of the infection and removal rates")
    _common(p)
    _ingest(p)
    p.add_argument("--method", choices=("mle", "tilde", "bar"), default="tilde")
    p.add_argument("--gamma", type=float, default=None, help="removal rate (default: calibrated MLE)")
    p.add_argument("--group-sizes", help="infection group sizes, e.g. 1=90,2=30,3=65")
    p.add_argument("--removal-groups", action="store_true", help="removal rate per removal group")
    p.add_argument("--kernel", choices=("constant", "exponential"), default=None)
    p.add_argument("--kernel-rate", type=float, default=0.0)
    p.add_argument("--susceptible-locations", help="CSV of x,y for never-infected individuals")
    p.add_argument("--fallback", choices=("raise", "mc"), default="raise")
    p.add_argument("--mc-samples", type=int, default=100_000)

    p = sub.add_parser("bootstrap", help="bootstrap-t intervals for beta and R0")
    _common(p)
    _ingest(p)
    p.add_argument("--B-out", type=int, default=200)
    p.add_argument("--B-in", type=int, default=20)
    p.add_argument("--se-reps", type=int, default=100)
    p.add_argument("--omega", type=float, default=0.1)
    p.add_argument("--alpha", type=float, default=0.05)
    p.add_argument("--p-missing", type=float, default=0.2)
    p.add_argument("--p-inf-missing", type=float, default=0.8)
    p.add_argument("--missingness", choices=("binomial", "mirror"), default="binomial")
    p.add_argument("--max-tries", type=int, default=10_000)

    p = sub.add_parser("mcmc", help="data-augmented MCMC")
    _common(p)
    _ingest(p)
    p.add_argument("--iter", type=int, default=1000)
    p.add_argument("--attempts", type=int, default=None, help="endpoint proposals per iteration")
    p.add_argument("--burn-in", type=int, default=0)
    p.add_argument("--chains", type=int, default=1)
    p.add_argument("--xi-beta", type=float, default=1.0)
    p.add_argument("--zeta-beta", type=float, default=1.0)
    p.add_argument("--xi-gamma", type=float, default=1.0)
    p.add_argument("--zeta-gamma", type=float, default=1.0)
    p.add_argument("--draws", help="also write per-iteration draws CSV here")

    p = sub.add_parser("diagnose", help="ESS and split R-hat of chain draws")
    _common(p)
    p.add_argument("--input", required=True, help="draws CSV with a chain column")
    p.add_argument("--burn-in", type=int, default=0)

    p = sub.add_parser("study", help="run a simulation study grid")
    _common(p)
    p.add_argument("--out-dir", required=True)
    p.add_argument("--betas", type=_floats, default=None, help="comma-separated infection rates")
    p.add_argument("--p-missing", type=_floats, default=None, help="comma-separated missingness levels")
    p.add_argument("--methods", type=lambda t: tuple(t.split(",")), default=None)
    p.add_argument("--gamma", type=float, default=None)
    p.add_argument("--N", dest="population_size", type=int, default=None)
    p.add_argument("--min-size", type=int, default=None)
    p.add_argument("--p-inf-missing", type=float, default=None)
    p.add_argument("--replicates", type=int, default=None)
    p.add_argument("--B-out", type=int, default=None)
    p.add_argument("--B-in", type=int, default=None)
    p.add_argument("--n-jobs", type=int, default=None)
    return parser


def _apply_config(parser, argv):
    """Parse with TOML values as defaults so that explicit flags win."""
    pre = argparse.ArgumentParser(add_help=False)
    pre.add_argument("command", nargs="?")
    pre.add_argument("--config")
    known, _ = pre.parse_known_args(argv)
    if not known.config or known.command not in parser._subparsers._group_actions[0].choices:
        return parser.parse_args(argv), {}
    try:
        values = load_config(known.config)
    except (OSError, ValueError) as exc:
        raise ConfigError(f"cannot read config {known.config}: {exc}") from None
    if known.command == "study":
        return parser.parse_args(argv), values
    sub_name = known.command
    sub = parser._subparsers._group_actions[0].choices[sub_name]
    dests = {a.dest for a in sub._actions}
    flat = {k.replace("-", "_"): v for k, v in values.items()}
    unknown = set(flat) - dests
    if unknown:
        raise ConfigError(f"unknown config keys {sorted(unknown)}")
    sub.set_defaults(**flat)
    # required flags may now come from the config file
    for action in sub._actions:
        if action.dest in flat:
            action.required = False
    return parser.parse_args(argv), values


def _delta(args) -> float:
    if args.model == "sir" and args.delta != 0:
        raise ConfigError("--delta needs --model seir")
    if args.delta < 0:
        raise ConfigError("--delta must be non-negative")
    if args.m < 1:
        raise ConfigError("--m must be a positive integer")
    return args.delta


def _config_dict(args) -> dict:
    out = {k: v for k, v in vars(args).items() if k not in ("out", "config")}
    return out


def _emit(args, text: str):
    if args.out:
        Path(args.out).write_text(text, encoding="utf-8")
    else:
        sys.stdout.write(text)


def _document(args, payload: dict) -> str:
    doc = {"schema_version": SCHEMA_VERSION, "command": args.command, "seed": args.seed, "config": _config_dict(args)}
    doc.update(payload)
    return dumps(doc)


def _load(args):
    return load_cases(
        args.input,
        infection_offset=args.infection_offset,
        removal_offset=args.removal_offset,
        noise_sd=args.noise_sd if args.dequantize else None,
        seed=args.seed,
    )


def cmd_simulate(args):
    delta = _delta(args)
    if args.model == "sir" and args.m == 1:
        log = simulate_sir(args.beta, args.gamma, args.N, args.seed)
    else:
        model = RateModel(args.N, args.beta, args.gamma, args.m, delta)
        log = simulate_seir_het(model, seed=args.seed)
    events = [
        {"time": float(t), "kind": EVENT_KINDS[k], "case_id": int(i)}
        for t, k, i in zip(log.times, log.kinds, log.ids)
    ]
    if args.events:
        write_records_csv(events, ("time", "kind", "case_id"), args.events)
    if args.output == "csv":
        _emit(args, write_case_table(log.cases))
    else:
        cases = [asdict(c) for c in log.cases]
        _emit(args, _document(args, {"n": log.n, "cases": cases, "events": events}))


def cmd_inject(args):
    cases = load_cases(args.input)
    masked, report = inject_missingness(cases, args.p_missing, args.p_inf_missing, args.seed)
    if args.output == "csv":
        _emit(args, write_case_table(masked))
    else:
        _emit(args, _document(args, {"report": asdict(report), "cases": [asdict(c) for c in masked]}))


def cmd_estimate(args):
    delta = _delta(args)
    cases = _load(args)
    group_sizes = _parse_group_sizes(args.group_sizes) if args.group_sizes else None
    kernel = KernelSpec(args.kernel, args.kernel_rate) if args.kernel else None
    sus = None
    if kernel is not None:
        if not args.susceptible_locations:
            raise ConfigError("--kernel needs --susceptible-locations")
        sus = read_locations(args.susceptible_locations)
    res = estimate_rates(
        cases, args.N, method=args.method, m=args.m, delta=delta, gamma=args.gamma,
        group_sizes=group_sizes, removal_groups=args.removal_groups, kernel=kernel,
        susceptible_locations=sus, fallback=args.fallback, mc_samples=args.mc_samples, seed=args.seed,
    )
    result = {
        "beta": res.value,
        "gamma": res.gamma,
        "R0": res.R0,
        "n": res.n,
        "N": res.N,
        "calibration_count": res.calibration_count,
        "flags": list(res.flags),
    }
    if args.output == "csv":
        rows = []
        betas = res.value if isinstance(res.value, dict) else {"": res.value}
        for g, b in betas.items():
            r0 = res.R0.get(g) if isinstance(res.R0, dict) else res.R0
            gam = res.gamma if not isinstance(res.gamma, dict) else None
            rows.append({"group": g, "beta": b, "gamma": gam, "R0": r0, "n": res.n, "calibration_count": res.calibration_count})
        _emit(args, write_records_csv(rows, ("group", "beta", "gamma", "R0", "n", "calibration_count")))
    else:
        _emit(args, _document(args, {"estimator": res.estimator, "result": result}))


def cmd_bootstrap(args):
    delta = _delta(args)
    cases = _load(args)
    cfg = BootstrapConfig(
        B_out=args.B_out, B_in=args.B_in, se_reps=args.se_reps, omega=args.omega, alpha=args.alpha,
        p_missing=args.p_missing, p_inf_missing=args.p_inf_missing, seed=args.seed,
        max_tries=args.max_tries, missingness=args.missingness,
    )
    res = bootstrap_t(cases, args.N, m=args.m, delta=delta, config=cfg)
    if args.output == "csv":
        rows = [dict(parameter=name, **asdict(iv)) for name, iv in (("beta", res.beta), ("R0", res.R0))]
        cols = ("parameter", "estimate", "lower", "upper", "midpoint", "se", "t_lower", "t_upper", "n_used")
        _emit(args, write_records_csv(rows, cols))
    else:
        body = res.to_dict()
        body.pop("config")
        _emit(args, _document(args, {"result": body}))


def cmd_mcmc(args):
    delta = _delta(args)
    cases = _load(args)
    if not 0 <= args.burn_in < args.iter:
        raise ConfigError("--burn-in must lie in [0, --iter)")
    prior = PriorSpec(args.xi_beta, args.zeta_beta, args.xi_gamma, args.zeta_gamma)
    chains = run_chains(cases, args.N, n_chains=args.chains, seed=args.seed, prior=prior,
                        m=args.m, delta=delta, T1=args.iter, T2=args.attempts)
    b = args.burn_in
    draws = {
        "beta": np.array([c.beta[b:] for c in chains]),
        "gamma": np.array([c.gamma[b:] for c in chains]),
        "R0": np.array([c.R0[b:] for c in chains]),
    }
    rows = [
        {"chain": ci, "iteration": t, "beta": c.beta[t], "gamma": c.gamma[t], "R0": c.R0[t]}
        for ci, c in enumerate(chains)
        for t in range(args.iter)
    ]
    cols = ("chain", "iteration", "beta", "gamma", "R0")
    if args.draws:
        write_records_csv(rows, cols, args.draws)
    if args.output == "csv":
        _emit(args, write_records_csv(rows, cols))
        return
    summary = {}
    for k, v in draws.items():
        summary[k] = {
            "mean": float(v.mean()),
            "sd": float(v.std(ddof=1)),
            "q025": float(np.quantile(v, 0.025)),
            "q975": float(np.quantile(v, 0.975)),
            "ess": ess(v),
            "rhat": split_rhat(v) if len(chains) > 1 else None,
        }
    acceptance = [
        {
            "infection": c.accepted_infection / c.proposed_infection if c.proposed_infection else None,
            "removal": c.accepted_removal / c.proposed_removal if c.proposed_removal else None,
        }
        for c in chains
    ]
    _emit(args, _document(args, {"summary": summary, "acceptance": acceptance}))


def cmd_diagnose(args):
    with open(args.input, newline="", encoding="utf-8") as fh:
        reader = csv.DictReader(fh)
        if reader.fieldnames is None or "chain" not in reader.fieldnames:
            raise DataError("draws table needs a chain column")
        params = [c for c in reader.fieldnames if c not in ("chain", "iteration")]
        by_chain: dict[str, list[dict]] = {}
        for rec in reader:
            by_chain.setdefault(rec["chain"], []).append(rec)
    lengths = {len(v) for v in by_chain.values()}
    if len(lengths) != 1:
        raise DataError("chains have different lengths")
    result = {}
    for p in params:
        try:
            arr = np.array([[float(r[p]) for r in rows[args.burn_in:]] for rows in by_chain.values()])
        except ValueError:
            raise DataError(f"column {p} is not numeric") from None
        result[p] = {"ess": ess(arr), "rhat": split_rhat(arr) if arr.shape[0] > 1 else None}
    if args.output == "csv":
        rows = [{"parameter": p, **v} for p, v in result.items()]
        _emit(args, write_records_csv(rows, ("parameter", "ess", "rhat")))
    else:
        _emit(args, _document(args, {"diagnostics": result}))


def cmd_study(args, values):
    values = dict(values)
    for key in ("seed", "betas", "p_missing", "methods", "gamma", "population_size", "min_size",
                "p_inf_missing", "replicates", "B_out", "B_in", "n_jobs"):
        if getattr(args, key) is not None:
            values[key] = getattr(args, key)
    if args.m != 1:
        values["erlang_shape"] = args.m
    if args.delta != 0:
        values["delta"] = _delta(args)
    try:
        cfg = StudyConfig.from_mapping(values)
    except (TypeError, ValueError) as exc:
        raise ConfigError(str(exc)) from None
    rows, summary = run_study(cfg)
    paths = write_study(cfg, rows, summary, args.out_dir)
    if args.output == "csv":
        _emit(args, paths["summary_csv"].read_text(encoding="utf-8"))
    else:
        _emit(args, paths["summary_json"].read_text(encoding="utf-8"))


def _fail(code: int, exc: BaseException) -> int:
    payload = {"error": type(exc).__name__, "message": str(exc), "exit_code": code}
    sys.stderr.write(json.dumps(payload) + "\n")
    return code


def main(argv=None) -> int:
    parser = build_parser()
    argv = sys.argv[1:] if argv is None else list(argv)
    try:
        args, values = _apply_config(parser, argv)
        if args.command == "study":
            cmd_study(args, values)
        else:
            {
                "simulate": cmd_simulate,
                "inject": cmd_inject,
                "estimate": cmd_estimate,
                "bootstrap": cmd_bootstrap,
                "mcmc": cmd_mcmc,
                "diagnose": cmd_diagnose,
            }[args.command](args)
    except NoClosedFormError as exc:
        return _fail(EXIT_NO_CLOSED_FORM, exc)
    except (ConditioningError, BootstrapError) as exc:
        return _fail(EXIT_CONDITIONING, exc)
    except (DataError, IncompletePairError, EstimationError, InitializationError, OSError) as exc:
        return _fail(EXIT_DATA, exc)
    except (ConfigError, SimulationError, ValueError, TypeError) as exc:
        return _fail(EXIT_CONFIG, exc)
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
