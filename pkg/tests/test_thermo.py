import json
from pathlib import Path

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from lightvar.errors import InvalidProfileError
from lightvar.soundings import isothermal_column, make_sounding, sounding_corpus
from lightvar.thermo import (CP, DRY_LAPSE_RATE, G, AtmosColumn, compute_cape,
                            dry_adiabatic_adjust, log_theta_e, max_lapse_rate,
                            moist_adiabat_temperature)

ORACLE = json.loads((Path(__file__).parent / "data" / "cape_oracle.json").read_text())


def corpus():
    return sounding_corpus(50, seed=0)


def test_isothermal_column_has_no_cape():
    d = compute_cape(isothermal_column())
    assert d.cape == 0.0
    assert d.lfc_index is None and d.el_index is None
    assert not d.positive_mask.any()


@pytest.mark.parametrize("name", ["reference_300K", "warm_moist", "marginal"])
def test_named_soundings_match_fine_step_oracle(name):
    kw = {"reference_300K": dict(t_sfc=300.0, rh_sfc=0.75),
          "warm_moist": dict(t_sfc=304.0, rh_sfc=0.85),
          "marginal": dict(t_sfc=297.0, rh_sfc=0.7)}[name]
    d = compute_cape(make_sounding(**kw))
    ref = ORACLE["named"][name]
    assert d.cape == pytest.approx(ref["cape"], rel=1e-2)
    assert d.lcl_index == ref["lcl_index"]


def test_corpus_agrees_with_oracle_within_one_percent():
    capes = np.array([compute_cape(c).cape for c in corpus()])
    ref = np.array(ORACLE["corpus_seed0_cape"])
    assert np.all(ref > 0)
    np.testing.assert_allclose(capes, ref, rtol=1e-2)
    # in practice the agreement is far tighter than the tolerance
    assert np.max(np.abs(capes - ref) / ref) < 1e-3


def test_corpus_lcl_levels_match_oracle():
    lcl = [compute_cape(c).lcl_index for c in corpus()]
    assert lcl == ORACLE["corpus_seed0_lcl_index"]


@pytest.mark.slow
def test_frozen_oracle_values_are_reproducible():
    import freeze_oracles
    import oracles
    # the oracle steps all columns together, so replay the exact frozen batch
    named, cols = freeze_oracles.oracle_columns()
    capes = oracles.fine_step_cape(list(named.values()) + cols)
    np.testing.assert_allclose(capes[len(named):], ORACLE["corpus_seed0_cape"], rtol=1e-12)
    for k, name in enumerate(named):
        assert capes[k] == pytest.approx(ORACLE["named"][name]["cape"], rel=1e-12)


def test_surface_warming_by_3K_increases_cape():
    col = make_sounding(t_sfc=300.0, rh_sfc=0.75)
    t = col.temperature.copy()
    t[0] += 3.0
    assert compute_cape(col.with_temperature(t)).cape > compute_cape(col).cape


def test_cape_monotone_in_surface_temperature_on_corpus():
    for col in corpus():
        base = compute_cape(col)
        assert base.lfc_index is not None
        t = col.temperature.copy()
        t[0] += 0.05
        assert compute_cape(col.with_temperature(t)).cape >= base.cape


def test_diagnostics_are_internally_consistent():
    for col in corpus()[:20]:
        d = compute_cape(col)
        assert d.lcl_index <= d.lfc_index < d.el_index
        z = col.geopotential_height
        total = 0.0
        for k in range(d.lfc_index, d.el_index):
            total += 0.5 * (max(d.buoyancy[k], 0) + max(d.buoyancy[k + 1], 0)) * (z[k + 1] - z[k])
        assert d.cape == pytest.approx(G * total, rel=1e-12)
        assert d.cape == pytest.approx(float(d.weights @ d.buoyancy), rel=1e-12)
        assert np.all(d.buoyancy[d.positive_mask] > 0)


def test_compute_cape_is_deterministic():
    col = make_sounding()
    a, b = compute_cape(col), compute_cape(col)
    assert a.cape == b.cape
    np.testing.assert_array_equal(a.buoyancy, b.buoyancy)


def test_moist_adiabat_inverts_theta_e():
    p = np.linspace(95000.0, 20000.0, 30)
    target = log_theta_e(295.0, 95000.0)
    t = moist_adiabat_temperature(target, p, 295.0)
    np.testing.assert_allclose(log_theta_e(t, p), target, atol=1e-12)
    assert np.all(np.diff(t) < 0)


@pytest.mark.parametrize("mutate, message", [
    (lambda p, t, q, z: (p[::-1], t, q, z), "pressure"),
    (lambda p, t, q, z: (p, t, q, z[::-1]), "height"),
    (lambda p, t, q, z: (p, np.where(np.arange(t.size) == 3, 400.0, t), q, z), "temperature"),
    (lambda p, t, q, z: (p, t, -q, z), "mixing ratio"),
])
def test_invalid_profiles_are_rejected(mutate, message):
    c = make_sounding()
    p, t, q, z = mutate(c.pressure.copy(), c.temperature.copy(),
                        c.vapor_mixing_ratio.copy(), c.geopotential_height.copy())
    with pytest.raises(InvalidProfileError, match=message):
        compute_cape(AtmosColumn(p, t, q, z))


def test_mismatched_lengths_rejected():
    c = make_sounding()
    with pytest.raises(InvalidProfileError):
        AtmosColumn(c.pressure, c.temperature[:-1], c.vapor_mixing_ratio, c.geopotential_height)


# ---------------------------------------------------------------- adjustment


def _two_level(dt, dz=1000.0):
    return AtmosColumn([100000.0, 90000.0], [300.0, 300.0 + dt], [0.01, 0.005], [0.0, dz])


def test_standard_lapse_rate_column_is_unchanged():
    col = make_sounding(lapse_rate=6.5e-3)
    out = dry_adiabatic_adjust(col)
    np.testing.assert_array_equal(out.temperature, col.temperature)


def test_superadiabatic_layer_raised_to_dry_adiabat():
    out = dry_adiabatic_adjust(_two_level(-15.0))
    assert G / CP * 1000.0 == pytest.approx(9.7628, abs=1e-4)
    assert out.temperature[1] == pytest.approx(300.0 - 9.80665 / 1004.5 * 1000.0, abs=1e-12)


def test_adjustment_exactly_at_dry_lapse_rate_keeps_column():
    dz = 1000.0
    col = _two_level(-DRY_LAPSE_RATE * dz, dz)
    np.testing.assert_array_equal(dry_adiabatic_adjust(col).temperature, col.temperature)


profiles = st.lists(st.floats(-20.0, 5.0), min_size=3, max_size=25)


@settings(max_examples=60, deadline=None)
@given(profiles)
def test_adjustment_idempotent_monotone_and_stable(steps):
    n = len(steps) + 1
    z = np.arange(n) * 500.0
    t = 300.0 + np.concatenate([[0.0], np.cumsum(steps)])
    t = np.clip(t, 160.0, 340.0)
    col = AtmosColumn(np.linspace(100000.0, 40000.0, n), t, np.zeros(n), z)
    once = dry_adiabatic_adjust(col)
    twice = dry_adiabatic_adjust(once)
    np.testing.assert_array_equal(once.temperature, twice.temperature)
    assert np.all(once.temperature >= col.temperature)
    assert max_lapse_rate(once) <= DRY_LAPSE_RATE * (1 + 1e-12)


@settings(max_examples=30, deadline=None)
@given(st.floats(290.0, 306.0), st.floats(0.3, 0.95), st.floats(5.0e-3, 8.0e-3))
def test_cape_non_negative_and_zero_iff_no_lfc(t_sfc, rh, lapse):
    d = compute_cape(make_sounding(t_sfc=t_sfc, rh_sfc=rh, lapse_rate=lapse))
    assert d.cape >= 0.0
    assert (d.cape == 0.0) == (d.lfc_index is None)
