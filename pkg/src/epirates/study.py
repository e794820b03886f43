"""Simulation studies over a grid of infection rates and missingness levels.

Every replicate draws from its own stream keyed by ``(seed, cell, replicate)``,
so results do not depend on execution order or worker count.
"""

from __future__ import annotations

import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, fields
from pathlib import Path
from typing import Any, Mapping

import numpy as np

from . import _kernels as K
from .bootstrap import BootstrapConfig, BootstrapError, bootstrap_t
from .core import CaseRecord
from .dataio import SCHEMA_VERSION, dumps, inject_missingness, write_records_csv
from .estimate import EstimationError, impute_beta_bar, impute_beta_tilde, mle_beta, mle_gamma
from .exposure import NoClosedFormError
from .mcmc import PriorSpec, run_chains
from .simulate import make_rng

METHODS = ("mle", "tilde", "bar", "bootstrap", "mcmc")

REPLICATE_COLUMNS = (
    "cell",
    "beta",
    "p_missing",
    "replicate",
    "status",
    "n",
    "attempts",
    "n_complete",
    "gamma_hat",
    "beta_mle",
    "beta_tilde",
    "beta_bar",
    "R0_tilde",
    "boot_lower",
    "boot_upper",
    "boot_midpoint",
    "boot_width",
    "boot_hit",
    "boot_used",
    "mcmc_mean",
    "mcmc_lower",
    "mcmc_upper",
    "mcmc_width",
    "mcmc_hit",
)

SUMMARY_COLUMNS = (
    "cell",
    "beta",
    "p_missing",
    "p_complete",
    "replicates",
    "usable",
    "median_gamma_hat",
    "median_beta_mle",
    "median_beta_tilde",
    "median_beta_bar",
    "boot_coverage",
    "boot_width",
    "median_boot_midpoint",
    "mcmc_coverage",
    "mcmc_width",
    "median_mcmc_mean",
)

# stream sub-keys within a replicate
_SIM, _MASK, _BOOT, _MCMC = range(4)


@dataclass(frozen=True)
class StudyConfig:
    """Scenario grid and estimation settings for a simulation study."""

    betas: tuple[float, ...] = (2.0,)
    p_missing: tuple[float, ...] = (0.2,)
    gamma: float = 1.0
    erlang_shape: int = 1
    delta: float = 0.0
    population_size: int = 100
    min_size: int = 20
    p_inf_missing: float = 0.8
    replicates: int = 100
    methods: tuple[str, ...] = ("tilde", "bar")
    B_out: int = 200
    B_in: int = 20
    se_reps: int = 100
    omega: float = 0.1
    alpha: float = 0.05
    missingness: str = "binomial"
    mcmc_iter: int = 500
    mcmc_burn_in: int = 100
    mcmc_chains: int = 1
    xi_beta: float = 1.0
    zeta_beta: float = 1.0
    xi_gamma: float = 1.0
    zeta_gamma: float = 1.0
    max_tries: int = 10_000
    seed: int = 0
    n_jobs: int = 1

    def __post_init__(self):
        object.__setattr__(self, "betas", tuple(float(b) for b in self.betas))
        object.__setattr__(self, "p_missing", tuple(float(p) for p in self.p_missing))
        object.__setattr__(self, "methods", tuple(self.methods))
        if not self.betas or not self.p_missing:
            raise ValueError("the scenario grid is empty")
        if any(not b > 0 for b in self.betas) or not self.gamma > 0:
            raise ValueError("rates must be positive")
        if not 1 <= self.min_size <= self.population_size:
            raise ValueError("min_size must lie in [1, population_size]")
        for p in self.p_missing + (self.p_inf_missing,):
            if not 0 <= p <= 1:
                raise ValueError("probabilities must lie in [0, 1]")
        unknown = set(self.methods) - set(METHODS)
        if unknown:
            raise ValueError(f"unknown methods {sorted(unknown)}")
        if self.replicates < 1:
            raise ValueError("replicates must be positive")
        if not 0 <= self.mcmc_burn_in < self.mcmc_iter:
            raise ValueError("mcmc_burn_in must lie in [0, mcmc_iter)")

    @classmethod
    def from_mapping(cls, values: Mapping[str, Any]) -> "StudyConfig":
        known = {f.name for f in fields(cls)}
        unknown = set(values) - known
        if unknown:
            raise ValueError(f"unknown study settings {sorted(unknown)}")
        kwargs = dict(values)
        for key in ("betas", "p_missing", "methods"):
            if key in kwargs and not isinstance(kwargs[key], (list, tuple)):
                kwargs[key] = (kwargs[key],)
        return cls(**kwargs)

    def cells(self) -> list[tuple[int, float, float]]:
        out = []
        for b in self.betas:
            for p in self.p_missing:
                out.append((len(out), b, p))
        return out


def _derived_seed(seed: int, *keys) -> int:
    return int(np.random.SeedSequence(seed, spawn_key=keys).generate_state(1, np.uint64)[0] >> 1)


def _cases_from_arrays(inf, rem, delta) -> list[CaseRecord]:
    return [
        CaseRecord(pos + 1, float(i - delta), float(i), float(r))
        for pos, (i, r) in enumerate(zip(inf, rem))
    ]


def run_replicate(cfg: StudyConfig, cell: int, beta: float, p_missing: float, rep: int) -> dict:
    """Simulate, mask and estimate one replicate of one grid cell."""
    row: dict[str, Any] = {"cell": cell, "beta": beta, "p_missing": p_missing, "replicate": rep}
    N, m, delta = cfg.population_size, cfg.erlang_shape, cfg.delta
    rng = make_rng(cfg.seed, cell, rep, _SIM)
    inf, rem, attempts = K.conditional_homogeneous(
        rng, beta, cfg.gamma, N, m, delta, cfg.min_size, N, cfg.max_tries
    )
    row["attempts"] = attempts
    if attempts < 0:
        row["status"] = "not_retained"
        return row
    cases = _cases_from_arrays(inf, rem, delta)
    row["n"] = len(cases)
    if "mle" in cfg.methods:
        row["beta_mle"] = mle_beta(cases, N, delta)
    masked, _ = inject_missingness(cases, p_missing, cfg.p_inf_missing, make_rng(cfg.seed, cell, rep, _MASK))
    row["n_complete"] = sum(c.is_complete for c in masked)
    try:
        gamma_hat = mle_gamma(masked, m)
    except EstimationError:
        row["status"] = "no_calibration"
        return row
    row["gamma_hat"] = gamma_hat
    status = "ok"
    try:
        beta_tilde = impute_beta_tilde(masked, N, gamma_hat, m, delta, fallback="mc", seed=_derived_seed(cfg.seed, cell, rep, _MASK))
    except (EstimationError, NoClosedFormError):
        row["status"] = "tilde_failed"
        return row
    row["beta_tilde"] = beta_tilde
    row["R0_tilde"] = beta_tilde / gamma_hat
    if "bar" in cfg.methods:
        row["beta_bar"] = impute_beta_bar(masked, N, gamma_hat, m, delta)
    if "bootstrap" in cfg.methods:
        bcfg = BootstrapConfig(
            B_out=cfg.B_out,
            B_in=cfg.B_in,
            se_reps=cfg.se_reps,
            omega=cfg.omega,
            alpha=cfg.alpha,
            p_missing=p_missing,
            p_inf_missing=cfg.p_inf_missing,
            seed=_derived_seed(cfg.seed, cell, rep, _BOOT),
            max_tries=cfg.max_tries,
            missingness=cfg.missingness,
        )
        try:
            res = bootstrap_t(masked, N, beta_tilde, gamma_hat, m, delta, bcfg)
        except BootstrapError:
            status = "bootstrap_failed"
        else:
            iv = res.beta
            row.update(
                boot_lower=iv.lower,
                boot_upper=iv.upper,
                boot_midpoint=iv.midpoint,
                boot_width=iv.upper - iv.lower,
                boot_hit=bool(iv.lower <= beta <= iv.upper),
                boot_used=iv.n_used,
            )
    if "mcmc" in cfg.methods:
        prior = PriorSpec(cfg.xi_beta, cfg.zeta_beta, cfg.xi_gamma, cfg.zeta_gamma)
        chains = run_chains(
            masked, N, n_chains=cfg.mcmc_chains, seed=_derived_seed(cfg.seed, cell, rep, _MCMC),
            prior=prior, m=m, delta=delta, T1=cfg.mcmc_iter,
        )
        draws = np.concatenate([c.beta[cfg.mcmc_burn_in:] for c in chains])
        lo, hi = np.quantile(draws, [cfg.alpha / 2, 1 - cfg.alpha / 2])
        row.update(
            mcmc_mean=float(draws.mean()),
            mcmc_lower=float(lo),
            mcmc_upper=float(hi),
            mcmc_width=float(hi - lo),
            mcmc_hit=bool(lo <= beta <= hi),
        )
    row["status"] = status
    return row


def _median(rows, key):
    vals = [r[key] for r in rows if r.get(key) is not None and math.isfinite(r[key])]
    return float(np.median(vals)) if vals else None


def _mean(rows, key):
    vals = [float(r[key]) for r in rows if r.get(key) is not None]
    return float(np.mean(vals)) if vals else None


def summarize(cfg: StudyConfig, rows: list[dict]) -> list[dict]:
    """Per-cell medians, coverages and mean interval widths."""
    out = []
    for cell, beta, p in cfg.cells():
        cell_rows = [r for r in rows if r["cell"] == cell]
        usable = [r for r in cell_rows if r.get("beta_tilde") is not None]
        out.append(
            {
                "cell": cell,
                "beta": beta,
                "p_missing": p,
                "p_complete": 1.0 - p,
                "replicates": len(cell_rows),
                "usable": len(usable),
                "median_gamma_hat": _median(usable, "gamma_hat"),
                "median_beta_mle": _median(cell_rows, "beta_mle"),
                "median_beta_tilde": _median(usable, "beta_tilde"),
                "median_beta_bar": _median(usable, "beta_bar"),
                "boot_coverage": _mean(usable, "boot_hit"),
                "boot_width": _mean(usable, "boot_width"),
                "median_boot_midpoint": _median(usable, "boot_midpoint"),
                "mcmc_coverage": _mean(usable, "mcmc_hit"),
                "mcmc_width": _mean(usable, "mcmc_width"),
                "median_mcmc_mean": _median(usable, "mcmc_mean"),
            }
        )
    return out


def _run_task(args):
    return run_replicate(*args)


def run_study(cfg: StudyConfig) -> tuple[list[dict], list[dict]]:
    """Run every replicate of every cell; returns ``(replicate_rows, summary_rows)``."""
    tasks = [(cfg, cell, b, p, rep) for cell, b, p in cfg.cells() for rep in range(cfg.replicates)]
    if cfg.n_jobs > 1:
        with ProcessPoolExecutor(max_workers=cfg.n_jobs) as pool:
            rows = list(pool.map(_run_task, tasks, chunksize=max(1, len(tasks) // (4 * cfg.n_jobs))))
    else:
        rows = [_run_task(t) for t in tasks]
    return rows, summarize(cfg, rows)


def write_study(cfg: StudyConfig, rows: list[dict], summary: list[dict], out_dir) -> dict[str, Path]:
    """Write replicate and summary tables plus a JSON summary embedding the config."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    paths = {
        "replicates": out / "replicates.csv",
        "summary_csv": out / "summary.csv",
        "summary_json": out / "summary.json",
    }
    write_records_csv(rows, REPLICATE_COLUMNS, paths["replicates"])
    write_records_csv(summary, SUMMARY_COLUMNS, paths["summary_csv"])
    config = asdict(cfg)
    config.pop("n_jobs")
    doc = {"schema_version": SCHEMA_VERSION, "seed": cfg.seed, "config": config, "cells": summary}
    paths["summary_json"].write_text(dumps(doc), encoding="utf-8")
    return paths
