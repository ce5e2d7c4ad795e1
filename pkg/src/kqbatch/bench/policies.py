"""Baseline batch policies sharing the solver's GP, initial design and record schema."""
import time

import numpy as np

from kqbatch.domain import EmpiricalMeasure
from kqbatch.lifting import DENSE_LIMIT, joint_sample
from kqbatch.solver import (
    History,
    IterationRecord,
    Surrogate,
    best_observed,
    initial_design,
    measure_stats,
    run,
    seeds_for,
    simple_regret,
)

POLICIES = ("sober-lfi", "sober-ts", "random", "batch-ts-baseline")
NAN = float("nan")


def _select_random(problem, config, sur, rng):
    if problem.pool is not None:
        pool = np.asarray(problem.pool, dtype=float)
        X = pool[rng.choice(pool.shape[0], size=min(config.n_max, pool.shape[0]), replace=False)]
    else:
        X = problem.prior.sample(config.n_max, rng)
    return X, None


def _select_thompson(problem, config, sur, rng):
    """``n`` independent joint posterior draws over a shared candidate set; one argmax each."""
    gp, cmodel = sur.fit(rng)
    size = min(config.N, config.ts_candidates, DENSE_LIMIT)
    if problem.pool is not None:
        pool = np.asarray(problem.pool, dtype=float)
        cand = pool[rng.choice(pool.shape[0], size=min(size, pool.shape[0]), replace=False)]
    else:
        cand = problem.prior.sample(size, rng)
    Z = sur.embed(cand)
    F = joint_sample(gp, Z, config.n_max, rng)
    if len(cmodel):
        # draw constraint functions too; infeasible draws lose the argmax
        for cgp in cmodel.gps:
            Gd = joint_sample(cgp, Z, config.n_max, rng)
            F = np.where(Gd >= 0, F, -np.inf)
    idx = F.argmax(axis=0)
    counts = np.bincount(idx, minlength=cand.shape[0])
    measure = EmpiricalMeasure(cand, counts / counts.sum())
    keep = np.flatnonzero(counts)
    return cand[keep], measure


_SELECTORS = {"random": _select_random, "batch-ts-baseline": _select_thompson}


def run_baseline(problem, config, policy):
    """Run a non-quadrature policy with the same loop structure as :func:`run`."""
    select = _SELECTORS[policy]
    init_rng, rng = seeds_for(config.seed)
    hist = History()
    X = initial_design(problem, config, init_rng)
    try:
        Y = problem.evaluate(X)
        G = problem.evaluate_constraints(X)
    except Exception as exc:  # noqa: BLE001
        hist.failed, hist.error = True, f"{type(exc).__name__}: {exc}"
        return hist
    hist.n_init = X.shape[0]
    sur = Surrogate(problem, config, X, Y, G)
    for t in range(1, config.T + 1):
        tic = time.perf_counter()
        Xb, measure = select(problem, config, sur, rng)
        try:
            Yb = problem.evaluate(Xb)
            Gb = problem.evaluate_constraints(Xb)
        except Exception as exc:  # noqa: BLE001
            hist.failed, hist.error = True, f"{type(exc).__name__}: {exc}"
            break
        X, Y, G = np.vstack([X, Xb]), np.concatenate([Y, Yb]), np.vstack([G, Gb])
        sur.append(Xb, Yb, Gb)
        md, mv = (None, NAN) if measure is None else measure_stats(measure, problem.x_star)
        hist.records.append(IterationRecord(
            iteration=t,
            batch_size=Xb.shape[0],
            eps_lp=NAN,
            eps_vio=NAN,
            mmd2=NAN,
            mv=mv,
            md=NAN if md is None else md,
            simple_regret=simple_regret(problem, Y, G),
            z_mean=NAN,
            z_var=NAN,
            wall_ms=1e3 * (time.perf_counter() - tic),
            weights=np.full(Xb.shape[0], 1.0 / Xb.shape[0]),
            X=Xb,
            Y=Yb,
            G=Gb,
            violation_rate=float(np.mean(np.any(Gb < 0, axis=1))) if Gb.shape[1] else 0.0,
        ))
    hist.X, hist.Y, hist.G = X, Y, G
    best, i = best_observed(Y, G)
    hist.incumbent, hist.incumbent_x = best, (None if i is None else X[i])
    return hist


def run_policy(problem, config, policy):
    """Dispatch on the policy name; the two quadrature policies set the solver mode."""
    if policy not in POLICIES:
        raise ValueError(f"unknown policy {policy!r}; expected one of {POLICIES}")
    if policy in ("sober-lfi", "sober-ts"):
        from dataclasses import replace

        return run(problem, replace(config, mode="BO-LFI" if policy == "sober-lfi" else "BO-TS"))
    return run_baseline(problem, config, policy)
