"""Benchmark harness: test functions, baseline policies, suite runner and reports."""
from kqbatch.bench.functions import REGISTRY, TestFunction, eval_testfn, make_problem
from kqbatch.bench.policies import POLICIES, run_policy
from kqbatch.bench.report import emit_report
from kqbatch.bench.runner import BenchmarkSuite, run_benchmark
