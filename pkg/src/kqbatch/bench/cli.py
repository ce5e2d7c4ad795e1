"""``bench`` command line: run suites, build reports, list objectives."""
import argparse
import json
import sys
from pathlib import Path

from kqbatch.bench.functions import REGISTRY
from kqbatch.bench.report import emit_report, read_results
from kqbatch.bench.runner import WORKERS_ENV, BenchmarkSuite, default_workers, run_benchmark


def _cmd_run(args):
    suite = BenchmarkSuite.load(args.suite)
    results = run_benchmark(suite, args.out, args.workers)
    failed = [r for r in results if not r["ok"]]
    for r in failed:
        print(f"FAILED {r['function']}/{r['policy']}/seed={r['seed']}: {r['error']}", file=sys.stderr)
    print(f"{len(results) - len(failed)}/{len(results)} runs succeeded; results in {args.out}")
    if any(r["rows"] for r in results):
        emit_report(read_results(Path(args.out) / "results.csv"), args.out)
    return 0 if not failed else 1


def _cmd_report(args):
    path = Path(args.dir) / "results.csv"
    if not path.exists():
        print(f"no results.csv in {args.dir}", file=sys.stderr)
        return 1
    rows = read_results(path)
    if not rows:
        print("results.csv has no rows", file=sys.stderr)
        return 1
    for p in emit_report(rows, args.dir):
        print(p)
    return 0


def _cmd_list(args):
    for name, fn in sorted(REGISTRY.items()):
        extra = f", {len(fn.constraints)} constraints" if fn.constraints else ""
        if args.json:
            continue
        print(f"{name:12s} d={fn.dim:<3d} {fn.description}{extra}")
    if args.json:
        doc = {
            n: {"dim": f.dim, "types": list(f.types), "y_star": f.y_star, "constraints": len(f.constraints)}
            for n, f in sorted(REGISTRY.items())
        }
        print(json.dumps(doc, indent=2))
    return 0


def build_parser():
    p = argparse.ArgumentParser(prog="bench", description="Kernel-quadrature batch BO benchmarks")
    sub = p.add_subparsers(dest="command", required=True)
    r = sub.add_parser("run", help="run a suite JSON file")
    r.add_argument("suite")
    r.add_argument("--out", required=True, help="output directory")
    r.add_argument("--workers", type=int, default=None,
                   help=f"worker processes (default ${WORKERS_ENV} or 1; now {default_workers()})")
    r.set_defaults(func=_cmd_run)
    rep = sub.add_parser("report", help="aggregate results.csv and draw charts")
    rep.add_argument("dir")
    rep.set_defaults(func=_cmd_report)
    ls = sub.add_parser("list-functions", help="list registered test functions")
    ls.add_argument("--json", action="store_true")
    ls.set_defaults(func=_cmd_list)
    return p


def main(argv=None):
    args = build_parser().parse_args(argv)
    return args.func(args)


if __name__ == "__main__":
    sys.exit(main())
