import math

import numpy as np
import pytest
import scipy.stats

import banditxd as bx
from banditxd import PolicyConfig
from banditxd.engine import RunTrace
from banditxd.harness import (
    _event_probability,
    audit_event_triples,
    classify_noise_log,
    replication_seed,
)
from conftest import make_point_instance, make_uniform_instance


class TestRunReplication:
    def test_same_seed_bitwise_identical(self):
        inst = make_uniform_instance(2048, 2)
        cfg = PolicyConfig(kind="dpconse", alpha=0.5, epsilon=1.0)
        a = bx.run_replication(inst, cfg, (5, 0, 0), record_events=True)
        b = bx.run_replication(inst, cfg, (5, 0, 0), record_events=True)
        assert a.final_regret == b.final_regret
        assert np.array_equal(a.checkpoint_regret, b.checkpoint_regret)
        assert np.array_equal(a.estimates, b.estimates)
        assert a.events == b.events
        assert a.noise_log == b.noise_log

    def test_zero_gap_instance_has_zero_regret(self):
        inst = make_uniform_instance(512, 2, pairs=[(0.5, 0.5), (0.4, 0.4)])
        for kind, eps in (
            ("conse", None),
            ("dpconse", 1.0),
            ("rct", None),
            ("ucb", None),
            ("se-only", None),
        ):
            cfg = PolicyConfig(kind=kind, alpha=0.5, epsilon=eps)
            trace = bx.run_replication(inst, cfg, (7, 0, 0))
            assert trace.final_regret == 0.0

    def test_rct_regret_matches_expectation(self):
        # half the pulls are suboptimal: regret ~ 0.5 * 0.5 * n
        n = 10_000
        inst = make_uniform_instance(n, 1)
        trace = bx.run_replication(inst, PolicyConfig(kind="rct", alpha=0.5), (11, 0, 0))
        assert abs(trace.final_regret - 0.25 * n) <= 3 * math.sqrt(n) * 0.25

    def test_horizon_mismatch_rejected(self):
        inst = make_uniform_instance(512, 1)
        cfg = PolicyConfig(kind="conse", alpha=0.5, horizon=256)
        with pytest.raises(ValueError):
            bx.run_replication(inst, cfg, 0)

    def test_regret_path_nondecreasing(self):
        inst = make_uniform_instance(4096, 2)
        trace = bx.run_replication(inst, PolicyConfig(kind="conse", alpha=0.5), (13, 0, 0))
        assert np.all(np.diff(trace.checkpoint_regret) >= 0)
        assert trace.checkpoint_ts[-1] == inst.n
        assert trace.checkpoint_regret[-1] == trace.final_regret

    def test_regret_recomputable_from_event_log(self):
        inst = make_uniform_instance(1024, 2, pairs=[(0.25, 0.75), (0.8, 0.3)])
        trace = bx.run_replication(
            inst, PolicyConfig(kind="conse", alpha=0.5), (17, 0, 0), record_events=True
        )
        opt = {1: 1, 2: 0}
        regret = 0.0
        for ev in trace.events_by_kind("pull"):
            if ev["arm"] != opt[ev["feature"]]:
                regret += abs(inst.delta[ev["feature"] - 1])
        assert regret == trace.final_regret  # same accumulation order, bitwise
        per_feature = sum(
            abs(inst.delta[j0]) * trace.subopt_total[j0] for j0 in range(2)
        )
        assert per_feature == pytest.approx(trace.final_regret, abs=1e-9)


class TestRunMany:
    def test_seed_rule_is_documented_tuple(self):
        assert replication_seed(5, 7) == (5, 0, 7)
        assert replication_seed(5, 7, stream=3) == (5, 3, 7)

    def test_parallel_degree_does_not_change_results(self):
        inst = make_uniform_instance(1024, 2)
        cfg = PolicyConfig(kind="conse", alpha=0.5)
        seq = bx.run_many(inst, cfg, 12, master_seed=19, parallel=1)
        par = bx.run_many(inst, cfg, 12, master_seed=19, parallel=3)
        for a, b in zip(seq, par):
            assert a.seed_key == b.seed_key
            assert a.final_regret == b.final_regret
            assert np.array_equal(a.estimates, b.estimates)
        rep_seq = bx.aggregate(seq, inst)
        rep_par = bx.aggregate(par, inst)
        assert rep_seq.mean_regret == rep_par.mean_regret
        assert rep_seq.max_mse == rep_par.max_mse

    def test_replications_are_independent(self):
        inst = make_uniform_instance(512, 1)
        traces = bx.run_many(inst, PolicyConfig(kind="rct", alpha=0.5), 4, master_seed=23)
        regrets = {tr.final_regret for tr in traces}
        assert len(regrets) > 1


def synthetic_trace(inst, estimates, flags, regret=1.0, samples=10):
    m = inst.m
    return RunTrace(
        policy="conse",
        n=inst.n,
        m=m,
        alpha=0.5,
        epsilon=None,
        seed_key=(0,),
        backend="python",
        final_regret=regret,
        checkpoint_ts=np.array([inst.n]),
        checkpoint_regret=np.array([regret]),
        estimates=np.asarray(estimates, dtype=np.float64),
        est_flags=list(flags),
        est_samples=np.full(m, samples, dtype=np.int64),
        rct_counts=np.full((m, 2), samples // 2, dtype=np.int64),
        fhat=np.zeros(m, dtype=np.int64),
        occurrences=np.zeros(m, dtype=np.int64),
        subopt_first=np.zeros(m, dtype=np.int64),
        subopt_total=np.zeros(m, dtype=np.int64),
        elim_epoch=np.zeros(m, dtype=np.int64),
        elim_arm=np.full(m, -1, dtype=np.int8),
        viable=np.full(m, 2, dtype=np.int8),
        t_min=samples,
        t_j=np.full(m, samples, dtype=np.int64),
    )


class TestAggregate:
    def test_exact_estimates_give_zero_mse(self):
        # deterministic rewards make the RCT difference exactly the true gap
        inst = make_point_instance(512, lo=0.0, hi=1.0)
        traces = bx.run_many(inst, PolicyConfig(kind="conse", alpha=0.0), 20, master_seed=29)
        report = bx.aggregate(traces, inst)
        assert report.max_mse == 0.0
        assert report.product == 0.0

    def test_symmetric_errors_give_squared_amplitude(self):
        inst = make_uniform_instance(512, 1)
        a = 0.125
        traces = [
            synthetic_trace(inst, [0.5 + a], ["final"]),
            synthetic_trace(inst, [0.5 - a], ["final"]),
        ]
        report = bx.aggregate(traces, inst)
        assert report.mse[0] == a ** 2

    def test_missing_handling_modes(self):
        inst = make_uniform_instance(512, 1)
        traces = [
            synthetic_trace(inst, [0.5], ["final"]),
            synthetic_trace(inst, [0.0], ["missing"]),
        ]
        excl = bx.aggregate(traces, inst, missing_mode="exclude")
        assert excl.mse[0] == 0.0
        assert excl.missing_counts[0] == 1
        strict = bx.aggregate(traces, inst, missing_mode="strict")
        assert strict.mse[0] == pytest.approx(0.5 ** 2 / 2, abs=0)

    def test_permutation_invariance_is_bitwise(self):
        inst = make_uniform_instance(1024, 2)
        traces = bx.run_many(inst, PolicyConfig(kind="conse", alpha=0.5), 25, master_seed=31)
        fwd = bx.aggregate(traces, inst)
        rev = bx.aggregate(list(reversed(traces)), inst)
        assert fwd.mean_regret == rev.mean_regret
        assert fwd.se_regret == rev.se_regret
        assert np.array_equal(fwd.mse, rev.mse)
        assert fwd.max_mse == rev.max_mse

    def test_needs_at_least_two_traces(self):
        inst = make_uniform_instance(512, 1)
        with pytest.raises(ValueError):
            bx.aggregate([], inst)
        with pytest.raises(ValueError):
            bx.aggregate([synthetic_trace(inst, [0.5], ["final"])], inst)

    def test_full_rct_phase_matches_variance_benchmark(self):
        # alpha=0 on a single always-arriving feature pins the RCT length to
        # exactly n/4... the first-half count n/2 is deterministic, so T = n/2.
        n, reps = 2 ** 15, 1000
        inst = make_uniform_instance(n, 1, pairs=[(0.3, 0.8)])
        traces = bx.run_many(inst, PolicyConfig(kind="conse", alpha=0.0), reps, master_seed=37)
        report = bx.aggregate(traces, inst)
        t_min = n // 2
        var_sum = 0.3 * 0.7 + 0.8 * 0.2
        benchmark = var_sum * (1.0 / t_min + 1.0 / t_min)
        assert benchmark / 2 <= report.max_mse <= 2 * benchmark


class TestParetoSweep:
    def test_endpoints_trade_off(self):
        inst = make_uniform_instance(4096, 2)
        points = bx.pareto_sweep(inst, "conse", [0.0, 1.0], reps=60, master_seed=41)
        assert [p.alpha for p in points] == [0.0, 1.0]
        lo, hi = points
        assert hi.mean_regret <= lo.mean_regret + 3 * (hi.se_regret + lo.se_regret)
        assert hi.max_mse >= lo.max_mse - 3 * (hi.se_mse + lo.se_mse)

    def test_preconditions(self):
        inst = make_uniform_instance(512, 1)
        with pytest.raises(ValueError):
            bx.pareto_sweep(inst, "conse", [], reps=60, master_seed=0)
        with pytest.raises(ValueError):
            bx.pareto_sweep(inst, "conse", [0.5], reps=10, master_seed=0)
        with pytest.raises(ValueError):
            bx.pareto_sweep(inst, "ucb", [0.5], reps=60, master_seed=0)


class TestNormality:
    def test_calibration_on_standard_normal_draws(self, rng):
        passes = 0
        for _ in range(200):
            rep = bx.normality_test(rng.standard_normal(10_000))
            passes += rep.p_value > 0.01
        assert passes / 200 >= 0.95

    def test_statistic_matches_independent_implementation(self, rng):
        for _ in range(5):
            x = rng.standard_normal(1500) * 1.1 + 0.05
            ours = bx.normality_test(x)
            ref = scipy.stats.kstest(x, "norm")
            assert ours.ks_statistic == pytest.approx(ref.statistic, abs=1e-12)
            ref_asymp = scipy.stats.kstest(x, "norm", mode="asymp")
            assert ours.p_value == pytest.approx(ref_asymp.pvalue, rel=1e-6, abs=1e-12)

    def test_degenerate_sample_rejected(self):
        with pytest.raises(ValueError):
            bx.normality_test(np.full(500, 1.23))
        with pytest.raises(ValueError):
            bx.normality_test(np.arange(50, dtype=float))

    def test_reports_moments(self, rng):
        x = rng.standard_normal(5000)
        rep = bx.normality_test(x)
        assert rep.mean == pytest.approx(float(np.mean(x)), abs=1e-12)
        assert rep.variance == pytest.approx(float(np.var(x, ddof=1)), rel=1e-9)


class TestPrivacyAudit:
    def test_mechanism_sections_pass(self):
        report = bx.privacy_audit(1.0, trials=300, master_seed=43)
        assert report.laplace_ratio["pass"]
        assert report.laplace_ratio["log_ratio"] == 0.5
        assert all(row["pass"] for row in report.lap_plus_ratios)
        assert report.passed

    def test_identical_datasets_have_equal_rates(self):
        triple = audit_event_triples()[0]
        # same dataset on both sides of the comparison: probabilities agree
        # up to Monte Carlo noise only
        p1, se1 = _event_probability(triple, "a", 1.0, 600, 47, 0, None)
        p2, se2 = _event_probability(triple, "a", 1.0, 600, 47, 1, None)
        assert abs(p1 - p2) <= 4 * (se1 + se2)

    def test_epsilon_validation(self):
        with pytest.raises(ValueError):
            bx.privacy_audit(0.0, trials=10)

    def test_unknown_noise_kind_rejected(self):
        inst = make_uniform_instance(512, 1)
        trace = synthetic_trace(inst, [0.5], ["final"])
        trace.noise_log = [{"noise_kind": "mystery", "draw": 0.0}]
        with pytest.raises(ValueError):
            classify_noise_log(trace)
