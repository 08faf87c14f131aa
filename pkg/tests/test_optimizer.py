import math

import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from srs_qmetro.metrology import evaluate
from srs_qmetro.optimizer import (SweepAxis, SweepPlan, crossover_scan, evaluate_point,
                                  optimize_probe, run_sweep, tms_curve)
from srs_qmetro.states import COHERENT, SQUEEZED, TMS, ProbeSpec, mean_total_photons, with_budget

GAMMA = 2e-3


# -- sweep plans --------------------------------------------------------------------


def test_plan_rejects_unknown_parameters_and_missing_required_ones():
    with pytest.raises(ValueError):
        SweepAxis("temperature", (1.0,))
    with pytest.raises(ValueError):
        SweepPlan(COHERENT, {"gamma_srs": GAMMA})
    with pytest.raises(ValueError):
        SweepPlan(COHERENT, {"gamma_srs": GAMMA, "n_tot": 1.0}, observables=("n_pump",))
    with pytest.raises(ValueError):
        SweepPlan(COHERENT, {"gamma_srs": GAMMA},
                  axes=({"param": "n_tot", "grid": (1.0,)}, {"param": "n_tot", "grid": (2.0,)}))
    with pytest.raises(ValueError):
        SweepAxis("n_tot", (1.0, math.nan))


def test_points_are_row_major_with_last_axis_fastest():
    plan = SweepPlan(COHERENT, {"gamma_srs": GAMMA},
                     axes=(SweepAxis("n_tot", (1.0, 2.0)), SweepAxis("n_pr", (0.1, 0.2, 0.3))))
    pts = [(p["n_tot"], p["n_pr"]) for p in plan.points()]
    assert plan.shape == (2, 3)
    assert pts == [(1.0, 0.1), (1.0, 0.2), (1.0, 0.3), (2.0, 0.1), (2.0, 0.2), (2.0, 0.3)]


def test_eta_axis_sets_both_efficiencies():
    plan = SweepPlan(TMS, {"gamma_srs": GAMMA, "n_tot": 1.0}, axes=(SweepAxis("eta", (0.8,)),))
    (point,) = plan.points()
    assert point["eta_pu"] == point["eta_pr"] == 0.8 and "eta" not in point


def test_single_point_sweep_equals_direct_evaluation():
    plan = SweepPlan(COHERENT, {"gamma_srs": GAMMA, "n_tot": 2.0, "n_pr": 0.5},
                     observables=("delta_n", "n_pr"))
    (res,) = run_sweep(plan)
    direct = evaluate(with_budget(COHERENT, 2.0, 0.5), GAMMA, observables=("delta_n", "n_pr"))
    assert res.qfi == direct.qfi
    assert res.mom == direct.mom


def test_over_budget_point_is_a_failed_cell_not_an_error():
    plan = SweepPlan(COHERENT, {"gamma_srs": GAMMA, "n_tot": 1.0}, axes=(SweepAxis("n_pr", (0.5, 2.0)),))
    ok, bad = run_sweep(plan)
    assert not any(f.startswith("failed") for f in ok.flags)
    assert bad.flags == ("failed:budget",)
    assert bad.qfi is None and math.isnan(bad.snr)


def test_results_do_not_depend_on_thread_count():
    plan = SweepPlan(SQUEEZED, {"gamma_srs": GAMMA, "n_sq": 0.1},
                     axes=(SweepAxis("n_tot", (0.5, 1.0, 2.0)), SweepAxis("n_pr", (0.0, 0.2))),
                     observables=("n_pr",), compute_qfi=False)
    one = run_sweep(plan, threads=1)
    four = run_sweep(plan, threads=4)
    assert [r.mom for r in one] == [r.mom for r in four]
    assert [r.n_tot for r in one] == [p["n_tot"] for p in plan.points()]


def test_evaluate_point_uses_the_point_photon_budget():
    plan = SweepPlan(COHERENT, {"gamma_srs": GAMMA, "n_tot": 3.0, "n_pr": 1.0})
    (point,) = plan.points()
    res = evaluate_point(plan, point)
    assert mean_total_photons(res.probe) == pytest.approx(3.0, rel=1e-12)
    assert abs(res.probe.alpha_pr) ** 2 == pytest.approx(1.0, rel=1e-12)


# -- optimization --------------------------------------------------------------------


def test_small_budget_coherent_optimum_has_no_probe_seed():
    rec = optimize_probe(COHERENT, 1.0, GAMMA, "snr:n_pr", starts=3)
    assert rec.n_pr < 1e-6
    assert rec.converged


def test_squeezed_family_without_squeezing_matches_coherent():
    coh = optimize_probe(COHERENT, 2.0, GAMMA, "mom:n_pr", starts=3)
    sq = optimize_probe(SQUEEZED, 2.0, GAMMA, "mom:n_pr", starts=3, n_sq=0.0)
    assert sq.best_value == pytest.approx(coh.best_value, rel=1e-6)


def test_same_seed_gives_identical_optimum():
    a = optimize_probe(SQUEEZED, 1.5, GAMMA, "mom:n_pr", starts=3, seed=7)
    b = optimize_probe(SQUEEZED, 1.5, GAMMA, "mom:n_pr", starts=3, seed=7)
    assert a == b


@settings(max_examples=5, deadline=None)
@given(st.floats(0.3, 3.0), st.integers(0, 2 ** 32 - 1))
def test_optimum_respects_the_photon_budget(n_tot, seed):
    rec = optimize_probe(SQUEEZED, n_tot, GAMMA, "mom:n_pr", starts=2, seed=seed, maxiter=60)
    assert mean_total_photons(rec.best_params) == pytest.approx(n_tot, rel=1e-8)
    assert rec.n_pr + rec.n_sq <= n_tot * (1 + 1e-12)


def test_optimum_is_at_least_as_good_as_the_unseeded_probe():
    rec = optimize_probe(COHERENT, 4.0, 0.05, "mom:n_pr", starts=3)
    plain = evaluate(ProbeSpec.coherent(2.0, 0.0), 0.05, observables=("n_pr",), compute_qfi=False)
    assert rec.best_value >= plain.mom["n_pr"] * (1 - 1e-9)


def test_optimizer_rejects_bad_requests():
    with pytest.raises(ValueError):
        optimize_probe(TMS, 1.0, GAMMA)
    with pytest.raises(ValueError):
        optimize_probe(COHERENT, 0.0, GAMMA)
    with pytest.raises(ValueError):
        optimize_probe(COHERENT, 1.0, GAMMA, n_sq=0.1)
    with pytest.raises(ValueError):
        optimize_probe(COHERENT, 1.0, GAMMA, "variance")


# -- crossover -------------------------------------------------------------------------


def test_crossover_is_censored_above_a_too_small_grid():
    table = crossover_scan(COHERENT, (GAMMA,), (0.5, 1.0), starts=2)
    (row,) = table.rows
    assert row.censored == "above" and row.n_cr is None
    assert table.slope is None


def test_crossover_bracket_contains_the_estimate():
    table = crossover_scan(COHERENT, (0.05,), (8.0, 24.0), starts=2, refine=2)
    (row,) = table.rows
    assert row.censored is None
    lo, hi = row.bracket
    assert lo < row.n_cr < hi
    assert row.n_pr_at_cr > 0.01 * hi * (1 - 1e-9)


def test_tms_curve_follows_the_grid():
    rows = tms_curve((0.5, 1.0), GAMMA, compute_qfi=False)
    assert [r.n_tot for r in rows] == pytest.approx([0.5, 1.0], rel=1e-12)
