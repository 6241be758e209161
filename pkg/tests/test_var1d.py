import numpy as np
import pytest
from scipy.optimize import brentq

from lightvar.covariance import VerticalCovariance, gaussian_vertical_covariance
from lightvar.obs_operator import extended_flash_rate, flash_rate
from lightvar.osse import OsseSpec, generate_osse
from lightvar.soundings import make_sounding
from lightvar.thermo import DRY_LAPSE_RATE, compute_cape, max_lapse_rate
from lightvar.toy_model import GridState
from lightvar.var1d import (ACCEPTED, REJECTED_LOW_CAPE, REJECTED_NONCONVERGENCE,
                            REJECTED_SMALL_IMPROVEMENT, SKIPPED_NEGATIVE_INNOVATION,
                            SKIPPED_ZERO_FLASH, LightningObservation, RetrievalConfig,
                            RetrievalResult, batch_retrieve, qc_filter,
                            retrieve_column, solve_1dvar, write_summary_table)


def bcov_for(col, std=2.0):
    return gaussian_vertical_covariance(col.geopotential_height, std, 1500.0, 0.05)


def column_with_cape(target):
    f = lambda t: compute_cape(make_sounding(t_sfc=t, rh_sfc=0.7)).cape - target
    return make_sounding(t_sfc=brentq(f, 294.0, 300.0, xtol=1e-10), rh_sfc=0.7)


def test_observation_validation():
    with pytest.raises(ValueError):
        LightningObservation((0, 0), -1.0)
    with pytest.raises(ValueError):
        LightningObservation((0, 0), 1.0, sigma0=0.0)


def test_scalar_analogue_matches_oi_formula():
    b, sigma0, d = 1.5, 1.0, 0.8
    xb = np.array([2.0])
    slope = 0.7

    def operator(x):
        # near-linear: a small curvature keeps the retrieval close to OI
        u = x[0] - xb[0]
        return slope * u + 1e-3 * u ** 2, np.array([slope + 2e-3 * u])

    xa, rep = solve_1dvar(xb, d, sigma0, VerticalCovariance.from_matrix([[b * b]]), operator,
                          RetrievalConfig(gradient_norm_reduction_target=1e-10))
    oi = b * b * slope * d / (b * b * slope ** 2 + sigma0 ** 2)
    assert rep.converged
    assert xa[0] - xb[0] == pytest.approx(oi, rel=0.05)


def test_zero_innovation_gives_zero_increment():
    col = make_sounding(t_sfc=300.0, rh_sfc=0.75)
    r = retrieve_column(col, LightningObservation((0, 0), flash_rate(col)), bcov_for(col))
    assert not np.any(r.temperature_increment)
    assert r.qc_status == REJECTED_SMALL_IMPROVEMENT


def test_cooled_background_is_warmed_near_surface():
    truth = make_sounding(t_sfc=301.0, rh_sfc=0.8)
    z = truth.geopotential_height
    background = truth.with_temperature(truth.temperature - 2.0 * np.exp(-z / 1000.0))
    y = flash_rate(truth)
    r = retrieve_column(background, LightningObservation((3, 4), y), bcov_for(truth))
    assert r.accepted
    assert abs(r.h_analysis - y) < abs(r.h_background - y)
    assert np.all(r.temperature_increment[:5] > 0)
    rep = r.minimize_report
    assert rep.cost_final < rep.cost_initial
    assert rep.grad_norm_final <= 1e-2 * rep.grad_norm_initial
    # only temperature changes
    np.testing.assert_array_equal(r.analysis.pressure, background.pressure)
    np.testing.assert_array_equal(r.analysis.vapor_mixing_ratio, background.vapor_mixing_ratio)
    np.testing.assert_array_equal(r.analysis.geopotential_height, background.geopotential_height)


def test_retrieval_is_deterministic():
    col = make_sounding(t_sfc=300.0, rh_sfc=0.75)
    obs = LightningObservation((0, 0), flash_rate(col) + 1.0)
    a = retrieve_column(col, obs, bcov_for(col))
    b = retrieve_column(col, obs, bcov_for(col))
    np.testing.assert_array_equal(a.temperature_increment, b.temperature_increment)


@pytest.mark.parametrize("cape, gated", [(300.0, True), (350.0, False)])
def test_cape_gate_boundary_pair(cape, gated):
    col = column_with_cape(cape)
    assert compute_cape(col).cape == pytest.approx(cape, abs=1e-3)
    r = retrieve_column(col, LightningObservation((0, 0), 2.0), bcov_for(col, 4.0))
    assert (r.qc_status == REJECTED_LOW_CAPE) == gated
    if gated:
        assert r.minimize_report is None and not np.any(r.temperature_increment)


def test_small_improvement_rejected_by_retrieval():
    col = make_sounding(t_sfc=300.0, rh_sfc=0.75)
    r = retrieve_column(col, LightningObservation((0, 0), flash_rate(col) + 1.0), bcov_for(col),
                        config=RetrievalConfig(min_improvement=50.0))
    assert r.qc_status == REJECTED_SMALL_IMPROVEMENT


def test_iteration_cap_marks_nonconvergence():
    col = make_sounding(t_sfc=300.0, rh_sfc=0.75)
    r = retrieve_column(col, LightningObservation((0, 0), flash_rate(col) + 3.0), bcov_for(col),
                        config=RetrievalConfig(max_iterations=2))
    assert r.qc_status == REJECTED_NONCONVERGENCE


def _fake(cell, gain, status=ACCEPTED, time=0.0, analysis=None):
    col = analysis if analysis is not None else make_sounding()
    obs = LightningObservation(cell, 5.0, time=time)
    return RetrievalResult(cell, np.zeros(col.n_levels), 1.0, 1.0 + gain, status, None, obs, col)


@pytest.mark.parametrize("gain, kept", [(0.19, False), (0.21, True)])
def test_qc_improvement_boundary_pair(gain, kept):
    out = qc_filter([_fake((1, 1), gain)])
    assert ((1, 1) in out) == kept


def test_qc_filter_rejects_non_accepted_and_keeps_latest():
    assert qc_filter([_fake((0, 0), 1.0, REJECTED_NONCONVERGENCE)]) == {}
    early = _fake((2, 2), 1.0, time=0.0, analysis=make_sounding(t_sfc=299.0))
    late = _fake((2, 2), 1.0, time=20.0, analysis=make_sounding(t_sfc=301.0))
    out = qc_filter([late, early], pseudo_obs_std=1.5)
    assert out[(2, 2)].time == 20.0
    assert out[(2, 2)].temperature[0] == 301.0
    np.testing.assert_array_equal(out[(2, 2)].error_std, 1.5)


def test_qc_filter_adjusts_superadiabatic_columns():
    col = make_sounding()
    t = col.temperature.copy()
    t[3] -= 15.0
    bad = col.with_temperature(t)
    assert max_lapse_rate(bad) > DRY_LAPSE_RATE
    out = qc_filter([_fake((0, 0), 1.0, analysis=bad)])
    adjusted = col.with_temperature(out[(0, 0)].temperature)
    assert max_lapse_rate(adjusted) <= DRY_LAPSE_RATE * (1 + 1e-12)


@pytest.fixture(scope="module")
def small_scenario():
    return generate_osse(OsseSpec(nx=8, ny=8, n_levels=30, n_hours=0, obs_per_hour=12,
                                  nmc_valid_times=10, seed=3))


def _grid(col, nx=3, ny=3):
    t = np.broadcast_to(col.temperature, (nx, ny, col.n_levels)).copy()
    q = np.broadcast_to(col.vapor_mixing_ratio, (nx, ny, col.n_levels)).copy()
    return GridState(col.pressure, col.geopotential_height, t, q)


@pytest.mark.filterwarnings("ignore::RuntimeWarning")
def test_batch_skips_and_never_aborts():
    col = make_sounding(t_sfc=300.0, rh_sfc=0.75)
    grid = _grid(col)
    h = flash_rate(col)
    obs = [LightningObservation((0, 0), 0.0),
           LightningObservation((0, 1), h * 0.5),
           LightningObservation((1, 1), h + 1.0),
           LightningObservation((2, 2), h + 1.0, sigma0=1e-300)]
    results, summary = batch_retrieve(grid, obs, bcov_for(col))
    assert summary.counts[SKIPPED_ZERO_FLASH] == 1
    assert summary.counts[SKIPPED_NEGATIVE_INNOVATION] == 1
    assert len(results) == 2
    assert sum(summary.counts.values()) == len(obs)
    broken = [r for r in results if r.cell == (2, 2)][0]
    # the degenerate sigma0 makes the cost overflow; it is recorded, not raised
    assert broken.qc_status == REJECTED_NONCONVERGENCE and broken.error
    assert len(summary.errors) == 1


def test_batch_empty_and_outside_grid():
    col = make_sounding()
    results, summary = batch_retrieve(_grid(col), [], bcov_for(col))
    assert results == [] and not any(summary.counts.values())
    assert summary.max_reduction_factor is None
    with pytest.raises(ValueError):
        batch_retrieve(_grid(col), [LightningObservation((5, 0), 1.0)], bcov_for(col))


def test_batch_order_and_threads_do_not_matter(small_scenario):
    from lightvar.covariance import nmc_vertical_covariance
    sc = small_scenario
    bcov = nmc_vertical_covariance(sc.forecast_pairs)
    obs = sc.observations_at(0)
    assert len(obs) >= 4
    a, sa = batch_retrieve(sc.background, obs, bcov)
    b, sb = batch_retrieve(sc.background, obs[::-1], bcov, threads=3)
    assert [r.cell for r in a] == [r.cell for r in b]
    for ra, rb in zip(a, b):
        assert ra.qc_status == rb.qc_status
        np.testing.assert_array_equal(ra.temperature_increment, rb.temperature_increment)
    assert sa.counts == sb.counts


def test_accepted_results_satisfy_invariants(small_scenario):
    from lightvar.covariance import nmc_vertical_covariance
    sc = small_scenario
    results, summary = batch_retrieve(sc.background, sc.observations_at(0),
                                      nmc_vertical_covariance(sc.forecast_pairs))
    for r in results:
        if r.accepted:
            assert r.h_analysis - r.h_background >= 0.2
            assert r.minimize_report.converged
            assert abs(r.innovation_after) < abs(r.innovation_before)
            h, _ = extended_flash_rate(r.analysis)
            assert h == r.h_analysis


def test_summary_table(tmp_path):
    col = make_sounding(t_sfc=300.0, rh_sfc=0.75)
    r = retrieve_column(col, LightningObservation((1, 2), flash_rate(col) + 1.0), bcov_for(col))
    path = tmp_path / "summary.csv"
    write_summary_table([r], path)
    header, row = path.read_text().splitlines()
    assert header == "i,j,qc_status,h_bg,h_an,iters"
    assert row.startswith("1,2,")
