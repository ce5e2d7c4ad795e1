import io
import json
from dataclasses import replace

import numpy as np
import pytest
from scipy.stats import norm, qmc

from kqbatch.bench.functions import make_problem
from kqbatch.bench.policies import run_policy
from kqbatch.domain import ContinuousUniform, EmpiricalMeasure, Gaussian
from kqbatch.gp import Dataset, GPPosterior, Kernel
from kqbatch.quadrature import QuadratureRule
from kqbatch.solver import (
    CSV_FIELDS,
    Problem,
    SolverConfig,
    expected_violation,
    integral_estimates,
    load_config,
    measure_stats,
    run,
)

SMALL = dict(N=400, M=100, n_max=8, T=3, restarts=1)


def quadratic_problem(d=2, fail_after=None):
    calls = {"n": 0}

    def f(X):
        calls["n"] += 1
        if fail_after is not None and calls["n"] > fail_after:
            raise RuntimeError("oracle down")
        return -np.sum((X - 0.3) ** 2, axis=1)

    prior = ContinuousUniform(np.zeros(d), np.ones(d))
    return Problem(f, prior, x_star=np.full(d, 0.3), y_star=0.0, name="quad")


class TestConfig:
    def test_validation(self):
        with pytest.raises(ValueError):
            SolverConfig(mode="BO-UCB")
        with pytest.raises(ValueError):
            SolverConfig(N=5, n_max=10)
        with pytest.raises(ValueError):
            SolverConfig(N=100, M=200)
        with pytest.raises(ValueError):
            SolverConfig(delta=-1.0)

    def test_adaptive_keyword(self):
        cfg = SolverConfig(eps_lp="adaptive")
        assert cfg.eps_lp is None and cfg.to_dict()["eps_lp"] == "adaptive"

    def test_gmm_default(self):
        assert SolverConfig().gmm_components == 10

    def test_load_config_roundtrip(self, tmp_path):
        doc = {"function": "branin", "N": 500, "M": 50, "n_max": 5, "T": 2, "acquisition": {"kind": "ucb", "beta": 2.0}}
        path = tmp_path / "cfg.json"
        path.write_text(json.dumps(doc))
        for src in (str(path), json.dumps(doc), doc):
            problem, cfg = load_config(src)
            assert problem.name == "branin"
            assert cfg.N == 500 and cfg.acquisition.kind == "ucb" and cfg.acquisition.beta == 2.0

    def test_load_config_unknown_field(self):
        with pytest.raises(TypeError):
            load_config({"function": "branin", "bogus": 1})


class TestMeasureStats:
    def test_point_mass(self):
        md, mv = measure_stats(EmpiricalMeasure([[0.3, 0.3]], [1.0]), [0.3, 0.3])
        assert md == 0.0 and mv == 0.0

    def test_two_points(self):
        md, mv = measure_stats(EmpiricalMeasure([[-1.0], [1.0]], [0.5, 0.5]))
        assert md is None and mv == pytest.approx(1.0)

    def test_direct_sum(self):
        rng = np.random.default_rng(0)
        X = rng.standard_normal((50, 3))
        w = rng.random(50)
        w /= w.sum()
        bary = sum(wi * xi for wi, xi in zip(w, X))
        ref = sum(wi * sum((xi - bary) ** 2) for wi, xi in zip(w, X))
        md, mv = measure_stats(EmpiricalMeasure(X, w), np.zeros(3))
        np.testing.assert_allclose(mv, ref, rtol=1e-10)
        np.testing.assert_allclose(md, np.linalg.norm(bary), rtol=1e-10)


class TestExpectedViolation:
    def test_reexported(self):
        m = EmpiricalMeasure.uniform(np.zeros((4, 1)))
        assert expected_violation(m, [1, 1, 0, 0]) == pytest.approx(0.5)


class TestIntegralEstimates:
    def test_zero_variance_at_observed_support(self):
        X = np.array([[0.1], [0.5], [0.9]])
        gp = GPPosterior(Kernel([0.3]), Dataset(X, [1.0, 2.0, 3.0], 0.0))
        mean, var = integral_estimates(gp, EmpiricalMeasure.uniform(X))
        assert mean == pytest.approx(2.0)
        assert var == pytest.approx(0.0, abs=1e-10)

    def test_two_point_hand_sum(self):
        X = np.array([[0.0], [1.0]])
        gp = GPPosterior(Kernel([1.0], 2.0), Dataset(np.zeros((0, 1)), np.zeros(0), 1e-6))
        mean, var = integral_estimates(gp, EmpiricalMeasure(X, [0.25, 0.75]))
        k01 = 2.0 * np.exp(-0.5)
        assert mean == 0.0
        assert var == pytest.approx(0.25**2 * 2 + 0.75**2 * 2 + 2 * 0.25 * 0.75 * k01)

    def test_gaussian_prior_closed_form(self):
        # prior GP, N(0, s^2) measure: double integral of the RBF kernel is ell / sqrt(ell^2 + 2 s^2)
        ell, s = 0.7, 0.5
        u = qmc.Sobol(1, scramble=True, seed=0).random(2**12)
        X = s * norm.ppf(u)
        gp = GPPosterior(Kernel([ell]), Dataset(np.zeros((0, 1)), np.zeros(0), 1e-6))
        _, var = integral_estimates(gp, EmpiricalMeasure.uniform(X))
        assert var == pytest.approx(ell / np.sqrt(ell**2 + 2 * s**2), rel=1e-3)

    def test_rule_uses_discrepancy(self):
        X = np.linspace(0, 1, 20)[:, None]
        gp = GPPosterior(Kernel([0.3]), Dataset([[0.5]], [1.0], 1e-6))
        m = EmpiricalMeasure.uniform(X)
        rule = QuadratureRule(m.points, m.weights, np.arange(20))
        mean_full, _ = integral_estimates(gp, m)
        mean, var = integral_estimates(gp, m, rule)
        assert mean == pytest.approx(mean_full)
        assert var == pytest.approx(0.0, abs=1e-12)


class TestRun:
    def test_infinite_delta_stops_after_one_round(self):
        h = run(quadratic_problem(), SolverConfig(delta=np.inf, **SMALL))
        assert len(h) == 1

    def test_branin_structure(self):
        problem = make_problem("branin")
        h = run(problem, SolverConfig(N=1000, M=100, n_max=30, T=3, seed=1, restarts=1))
        assert len(h) == 3 and not h.failed
        sizes = [r.batch_size for r in h.records]
        assert all(1 <= s <= 30 for s in sizes)
        assert h.Y.shape[0] == h.n_init + sum(sizes) == h.X.shape[0]
        assert h.n_init == 10
        for r in h.records:
            assert r.X.shape == (r.batch_size, 2)
            np.testing.assert_allclose(r.weights.sum(), 1.0)
            assert r.mmd2 >= 0 and r.z_var >= 0 and r.mv >= 0
            assert np.isfinite(r.md)

    def test_regret_non_increasing(self):
        h = run(quadratic_problem(), SolverConfig(seed=3, **SMALL))
        regret = [r.simple_regret for r in h.records]
        assert np.all(np.diff(regret) <= 0)
        assert h.incumbent == pytest.approx(-regret[-1])

    def test_deterministic_except_wall_time(self):
        cfg = SolverConfig(seed=4, **SMALL)
        a = run(quadratic_problem(), cfg).to_csv(include_wall=False)
        b = run(quadratic_problem(), cfg).to_csv(include_wall=False)
        assert a == b

    def test_oracle_failure_gives_partial_history(self):
        h = run(quadratic_problem(fail_after=2), SolverConfig(seed=0, **SMALL))
        assert h.failed and "oracle down" in h.error
        assert len(h) == 1
        assert h.X.shape[0] == h.n_init + h.records[0].batch_size

    def test_oracle_failure_in_initial_design(self):
        h = run(quadratic_problem(fail_after=0), SolverConfig(seed=0, **SMALL))
        assert h.failed and len(h) == 0

    def test_adaptive_eps_lp_tracks_violation(self):
        h = run(make_problem("branin-c"), SolverConfig(N=800, M=100, n_max=10, T=2, seed=0, restarts=1))
        for r in h.records:
            assert r.eps_lp == pytest.approx(max(r.eps_vio, 1e-8))

    def test_fixed_eps_lp_is_kept(self):
        h = run(quadratic_problem(), SolverConfig(eps_lp=0.1, lp_mode="tolerance-LP", seed=0, **SMALL))
        assert all(r.eps_lp == pytest.approx(0.1) for r in h.records)

    @pytest.mark.parametrize("mode", ["BO-TS", "AL", "BQ"])
    def test_other_modes(self, mode):
        h = run(quadratic_problem(), SolverConfig(mode=mode, seed=0, ts_candidates=200, ts_draws=200, **SMALL))
        assert not h.failed and 1 <= len(h) <= 3
        # an early stop means the target measure collapsed to a point
        assert len(h) == 3 or h.records[-1].mv == 0.0

    def test_gaussian_prior_problem(self):
        prior = Gaussian([0.0, 0.0], np.eye(2) * 0.25)
        problem = Problem(lambda X: -np.sum(X**2, axis=1), prior, x_star=np.zeros(2), y_star=0.0)
        h = run(problem, SolverConfig(seed=0, **SMALL))
        assert len(h) == 3


class TestHistoryOutput:
    def test_csv_and_json(self, tmp_path):
        h = run(quadratic_problem(), SolverConfig(seed=0, **SMALL))
        h.write(tmp_path, "run")
        lines = (tmp_path / "run.csv").read_text().splitlines()
        assert lines[0].split(",") == list(CSV_FIELDS)
        assert len(lines) == 1 + len(h)
        summary = json.loads((tmp_path / "run.json").read_text())
        assert summary["iterations"] == len(h)
        assert summary["batch_sizes"] == [r.batch_size for r in h.records]
        assert summary["failed"] is False

    def test_to_csv_stream(self):
        h = run(quadratic_problem(), SolverConfig(seed=0, T=1, **{k: v for k, v in SMALL.items() if k != "T"}))
        buf = io.StringIO()
        assert h.to_csv(buf) is None
        assert buf.getvalue() == h.to_csv()


ACKLEY_CFG = SolverConfig(N=1000, M=200, n_max=20, T=10, restarts=2)


class TestAckleyRuns:
    def test_lfi_beats_random_on_continuous_ackley(self):
        final = {}
        for policy in ("sober-lfi", "random"):
            hs = [run_policy(make_problem("ackley2"), replace(ACKLEY_CFG, seed=s), policy) for s in range(10)]
            final[policy] = np.median([h.records[-1].simple_regret for h in hs])
        assert final["sober-lfi"] < final["random"]

    def test_mv_correlates_with_regret_on_mixed_ackley(self):
        hs = [run_policy(make_problem("ackley"), replace(ACKLEY_CFG, seed=s), "sober-lfi") for s in range(10)]
        mv = np.concatenate([[r.mv for r in h.records] for h in hs])
        regret = np.concatenate([[r.simple_regret for r in h.records] for h in hs])
        assert np.corrcoef(mv, regret)[0, 1] > 0
