import math

import numpy as np
import pytest
from sklearn.base import clone

from bmclab import ConfigurationError, UnsupportedExactError
from bmclab.environment import sample_env_sequence
from bmclab.experiments import (
    BackwardLLN,
    CLTExperiment,
    CoalescenceDiagnostic,
    DoeblinCheck,
    ExperimentConfig,
    ForwardLLN,
    ManyToOneGrid,
    SimulationRun,
    WholeTreeLLN,
    run_forward_lln,
)
from bmclab.gallery import make_example

SMALL = dict(n=8, replicates=100)


def test_config_defaults_and_validation():
    cfg = ExperimentConfig(model="ex3_1", n=10, replicates=200, seed=1)
    assert cfg.burn_in == 5
    assert cfg.cap == 10**7
    for bad in (dict(replicates=99), dict(n=1), dict(mode="fast"), dict(tolerance=-1.0), dict(burn_in=11),
                dict(targets=({"near": 1},))):
        with pytest.raises(ConfigurationError):
            ExperimentConfig(**{**dict(model="ex3_1", n=10, replicates=200, seed=1), **bad})


def test_estimator_params_round_trip():
    est = ForwardLLN(model="ex3_1", n=9, tolerance=0.05)
    assert est.get_params()["n"] == 9
    c = clone(est)
    assert c.get_params() == est.get_params()
    c.set_params(n=10)
    assert c.n == 10 and est.n == 9


def test_from_config_picks_relevant_fields():
    cfg = ExperimentConfig(model="ex3_4", n=8, replicates=100, seed=3, b=2, pairs=500)
    w = WholeTreeLLN.from_config(cfg)
    assert w.b == 2 and w.seed == 3
    assert "pairs" not in w.get_params()
    assert CoalescenceDiagnostic.from_config(cfg).pairs == 500


def test_forward_lln_report_shape():
    est = ForwardLLN(model="ex3_1", **SMALL).fit()
    rep = est.report_
    assert est.passed_ in (True, False)
    assert len(rep.rows) == 9
    assert rep.rows[0]["target"] == 1.0
    # delta_0 A^8 with eigenvalues 1 and 0.7
    assert rep.rows[-1]["target"] == pytest.approx(2 / 3 + 0.7**8 / 3, abs=1e-12)
    assert rep.record_columns[:6] == ["replicate", "generation", "env_state_id", "N_k", "logP_k", "W_k"]
    assert len(rep.records) == 100 * 9
    assert {"l2_bins_0_burn_in", "l2_bins_0_final"} <= set(rep.summary)
    assert est.score() == float(est.passed_)


def test_results_do_not_depend_on_thread_count():
    a = ForwardLLN(model="ex3_3", threads=1, **SMALL).fit().report_
    b = ForwardLLN(model="ex3_3", threads=4, **SMALL).fit().report_
    assert a.records == b.records
    assert a.rows == b.rows


def test_adding_replicates_keeps_existing_ones():
    a = SimulationRun(model="ex3_2", n=6, replicates=100).fit().report_.records
    b = SimulationRun(model="ex3_2", n=6, replicates=101).fit().report_.records
    assert b[: len(a)] == a
    assert len(b) == len(a) + 7


def test_zero_tolerance_gate_always_fails():
    rep = ForwardLLN(model="ex2_1", targets=((0, 1),), tolerance=0.0, **SMALL).fit().report_
    # the deviation is zero up to rounding, the gate still fails
    assert rep.gates[0].statistic < 1e-12
    assert rep.gates[0].verdict == "fail"


def test_few_survivors_make_gates_inconclusive():
    rep = ForwardLLN(model="ex3_1", params={"offspring": [0.6, 0.0, 0.4]}, **SMALL).fit().report_
    assert rep.summary["survivors"] < 50
    assert rep.gates[0].verdict == "inconclusive"
    assert rep.passed


def test_forward_lln_needs_exact_kernels():
    with pytest.raises(UnsupportedExactError):
        ForwardLLN(model="ex3_5", **SMALL).fit()


def test_environment_argument_is_used():
    e = make_example("ex3_3")
    env = sample_env_sequence(e.env, 99, 8)
    est = ForwardLLN(model="ex3_3", **SMALL).fit(env)
    assert est.env_ is env
    assert est.report_.summary["env_state_ids"] == list(env.ids)
    with pytest.raises(ConfigurationError):
        ForwardLLN(model="ex3_3", **SMALL).fit(env.prefix(5))


def test_annealed_runs_redraw_the_environment():
    rep = SimulationRun(model="ex3_3", annealed=True, **SMALL).fit().report_
    assert rep.summary["annealed"]
    per_rep = {}
    for row in rep.records:
        per_rep.setdefault(row[0], []).append(row[2])
    assert len({tuple(v) for v in per_rep.values()}) > 1


def test_backward_lln_rejects_subcritical_states():
    with pytest.raises(ConfigurationError, match="m >= a > 1"):
        BackwardLLN(model="ex3_3", params={"offspring": [[0, 1], [0, 0, 1]]}, **SMALL).fit()


def test_backward_target_is_the_reversed_product():
    est = BackwardLLN(model="ex3_3", ks_replicates=100, **SMALL).fit()
    e = est.entry_
    Qs = {s.id: s.trait_params["kernels"][(2, 1)] for s in e.env.states}
    v = np.array([1.0, 0.0])
    for i in reversed(est.env_.ids[:8]):
        v = v @ Qs[i]
    assert est.report_.rows[-1]["target"] == pytest.approx(v[0], abs=1e-12)


def test_backward_lln_markov_environment_is_inconclusive():
    est = BackwardLLN(model="ex3_3", params={"transition": [[0.8, 0.2], [0.4, 0.6]]}, ks_replicates=100,
                      **SMALL).fit()
    assert {g.verdict for g in est.report_.gates} == {"inconclusive"}
    assert est.report_.summary["reversible_checked"] is False


def test_backward_ks_on_a_nondegenerate_martingale():
    est = BackwardLLN(model="ex3_3", params={"offspring": [[0, 0.5, 0.5], [0, 0, 0.5, 0.5]]}, n=8,
                      replicates=100, ks_replicates=600).fit()
    ks = est.report_.gates[-1]
    assert ks.name == "ks_W_forward_vs_backward"
    assert ks.verdict == "pass"
    assert est.report_.summary["ks_samples"] == 600


def test_whole_tree_inconclusive_without_doeblin():
    est = WholeTreeLLN(model="ex3_3", params={"kernels": [[[1, 0], [0.5, 0.5]], [[1, 0], [0.5, 0.5]]]},
                       **SMALL).fit()
    assert not est.report_.summary["doeblin_passed"]
    assert est.report_.gates[0].verdict == "inconclusive"


def test_doeblin_command():
    assert DoeblinCheck(model="ex3_4", **SMALL).fit().passed_
    est = DoeblinCheck(model="ex3_3", params={"kernels": [[[1, 0], [0.5, 0.5]], [[0.5, 0.5], [0.5, 0.5]]]},
                       **SMALL).fit()
    assert not est.passed_


def test_clt_rejects_finite_models():
    with pytest.raises(ConfigurationError):
        CLTExperiment(model="ex3_1", **SMALL).fit()


def test_clt_rows_and_diagnostics():
    rep = CLTExperiment(model="ex3_5", n=10, replicates=100).fit().report_
    assert [r["y"] for r in rep.rows] == [-2.0, -1.0, 0.0, 1.0, 2.0]
    assert rep.rows[2]["Phi"] == 0.5
    diag = rep.summary["diagnostics_at_diag_horizon"]
    assert diag["b_ratio_r1"] == pytest.approx(np.sqrt(100 / 99))
    assert diag["a_shift_r2"] == 0.0


def test_clt_on_the_symmetric_walk_shows_the_lattice_atom():
    # positions after 12 steps are even, so F(0) picks up half the atom P(S_12 = 0) = C(12,6) / 2^12
    est = CLTExperiment(model="ex3_6", n=12, replicates=100).fit()
    rep = est.report_
    assert rep.summary["gamma_D_verified"]
    row0 = rep.rows[2]
    assert row0["mean_F"] == pytest.approx(0.5 + math.comb(12, 6) / 2**13, abs=0.03)
    for r in (rep.rows[0], rep.rows[-1]):
        assert r["abs_dev"] < 0.02


def test_coalescence_diagnostic_on_binary_tree():
    rep = CoalescenceDiagnostic(model="ex2_1", n=10, pairs=10_000).fit().report_
    assert rep.passed
    assert rep.rows[3]["exact_ge_K"] == pytest.approx(1 / 8)
    assert rep.summary["N_n"] == 1024


def test_coalescence_on_extinct_tree_is_inconclusive():
    rep = CoalescenceDiagnostic(model="ex2_1", params={"offspring": [0.9, 0.1]}, n=4).fit().report_
    assert rep.gates[0].verdict == "inconclusive"


def test_many_to_one_grid():
    rep = ManyToOneGrid(model="ex3_4", **SMALL).fit().report_
    assert rep.passed
    assert rep.summary["checks"] == 2 * 4 * 2 * 2


def test_run_wrapper_matches_estimator():
    cfg = ExperimentConfig(model="ex3_1", n=8, replicates=100, seed=2)
    assert run_forward_lln(cfg).records == ForwardLLN.from_config(cfg).fit().report_.records
