"""Benchmark suites: expand (function, policy, seed) entries and run them in a worker pool."""
import csv
import json
import os
import traceback
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path

from kqbatch.bench.functions import get, make_problem
from kqbatch.bench.policies import POLICIES, run_policy
from kqbatch.solver import CSV_FIELDS, SolverConfig, _fmt

WORKERS_ENV = "KQBATCH_WORKERS"
RESULT_FIELDS = ("function", "policy", "seed") + CSV_FIELDS


def default_workers():
    try:
        return max(1, int(os.environ.get(WORKERS_ENV, "1")))
    except ValueError:
        return 1


@dataclass
class SuiteEntry:
    function: str
    policy: str
    seeds: list
    config: dict = field(default_factory=dict)


@dataclass
class BenchmarkSuite:
    entries: list
    name: str = "suite"

    def __post_init__(self):
        for e in self.entries:
            get(e.function)
            if e.policy not in POLICIES:
                raise ValueError(f"unknown policy {e.policy!r}; expected one of {POLICIES}")
            if len(set(e.seeds)) != len(e.seeds):
                raise ValueError(f"seeds must be distinct for {e.function}/{e.policy}")
            SolverConfig(**{k: v for k, v in e.config.items() if k != "seed"})

    @classmethod
    def from_dict(cls, doc):
        """Each entry may list several ``policies``; they expand to one entry per policy."""
        entries = []
        for raw in doc["entries"]:
            policies = raw.get("policies") or [raw["policy"]]
            for p in policies:
                entries.append(SuiteEntry(raw["function"], p, list(raw.get("seeds", [0])), dict(raw.get("config", {}))))
        return cls(entries, doc.get("name", "suite"))

    @classmethod
    def load(cls, path):
        with open(path) as fh:
            return cls.from_dict(json.load(fh))

    def jobs(self):
        for e in self.entries:
            for s in e.seeds:
                yield e.function, e.policy, int(s), dict(e.config)


def run_job(job):
    """Run one (function, policy, seed); never raises."""
    function, policy, seed, cfg = job
    out = {"function": function, "policy": policy, "seed": seed, "ok": False, "error": None, "rows": [], "summary": None}
    try:
        config = SolverConfig(**{**cfg, "seed": seed})
        hist = run_policy(make_problem(function), config, policy)
        out["rows"] = [rec.row() for rec in hist.records]
        out["summary"] = hist.summary()
        out["ok"] = not hist.failed
        out["error"] = hist.error
    except Exception as exc:  # noqa: BLE001 - failures are recorded per run
        out["error"] = f"{type(exc).__name__}: {exc}"
        out["traceback"] = traceback.format_exc()
    return out


def run_benchmark(suite, out_dir=None, workers=None):
    """Run every job of ``suite``; write per-run and combined CSV files when ``out_dir`` is given."""
    workers = default_workers() if workers is None else max(1, int(workers))
    jobs = list(suite.jobs())
    if workers == 1 or len(jobs) <= 1:
        results = [run_job(j) for j in jobs]
    else:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            results = list(pool.map(run_job, jobs))
    if out_dir is not None:
        write_results(results, out_dir)
    return results


def _stem(r):
    return f"{r['function']}__{r['policy']}__seed{r['seed']}"


def write_results(results, out_dir):
    out = Path(out_dir)
    runs = out / "runs"
    runs.mkdir(parents=True, exist_ok=True)
    with open(out / "results.csv", "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(RESULT_FIELDS)
        for r in results:
            for row in r["rows"]:
                w.writerow([r["function"], r["policy"], r["seed"]] + [_fmt(v) for v in row])
    for r in results:
        with open(runs / f"{_stem(r)}.csv", "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(CSV_FIELDS)
            for row in r["rows"]:
                w.writerow([_fmt(v) for v in row])
        doc = {k: r[k] for k in ("function", "policy", "seed", "ok", "error", "summary")}
        (runs / f"{_stem(r)}.json").write_text(json.dumps(doc, indent=2))
    status = [{k: r[k] for k in ("function", "policy", "seed", "ok", "error")} for r in results]
    (out / "status.json").write_text(json.dumps(status, indent=2))
