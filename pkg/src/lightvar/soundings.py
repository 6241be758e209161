"""Idealized soundings used by the scenario generator, demos and tests."""

import numpy as np

from .thermo import AtmosColumn, G, RD, saturation_mixing_ratio


def height_levels(n_levels=60, z_top=20000.0, stretch=1.5):
    """Stretched height grid, finer near the surface (m)."""
    s = np.linspace(0.0, 1.0, n_levels)
    return z_top * s ** stretch


def hydrostatic_pressure(height, temperature, p_sfc=1.0e5):
    """Integrate the hydrostatic equation upward with layer-mean temperature."""
    dz = np.diff(height)
    tbar = 0.5 * (temperature[1:] + temperature[:-1])
    logp = np.log(p_sfc) - np.concatenate([[0.0], np.cumsum(G * dz / (RD * tbar))])
    return np.exp(logp)


def make_sounding(t_sfc=300.0, rh_sfc=0.8, lapse_rate=6.5e-3,
                  tropopause=12000.0, moist_depth=1500.0, rh_top=0.2,
                  n_levels=60, z_top=20000.0, p_sfc=1.0e5, height=None,
                  pressure=None):
    """Piecewise-linear temperature sounding with a moist boundary layer.

    Relative humidity is ``rh_sfc`` up to ``moist_depth`` and falls linearly
    to ``rh_top`` at the tropopause. If ``pressure`` is given it is used as is
    (grids that share fixed pressure and height levels); otherwise it is
    integrated hydrostatically from ``p_sfc``.
    """
    z = height_levels(n_levels, z_top) if height is None else np.asarray(height, float)
    t = t_sfc - lapse_rate * np.minimum(z, tropopause)
    p = hydrostatic_pressure(z, t, p_sfc) if pressure is None else np.asarray(pressure, float)
    frac = np.clip((z - moist_depth) / max(tropopause - moist_depth, 1.0), 0.0, 1.0)
    rh = rh_sfc + (rh_top - rh_sfc) * frac
    q = rh * saturation_mixing_ratio(t, p)
    return AtmosColumn(p, t, q, z)


def isothermal_column(t=280.0, rh=0.5, n_levels=60, z_top=20000.0):
    z = height_levels(n_levels, z_top)
    temp = np.full(n_levels, t)
    p = hydrostatic_pressure(z, temp)
    q = rh * saturation_mixing_ratio(temp, p)
    return AtmosColumn(p, temp, q, z)


def sounding_corpus(n=50, seed=0, n_levels=60):
    """Random conditionally unstable soundings (surface-based CAPE > 0)."""
    rng = np.random.default_rng(seed)
    out = []
    while len(out) < n:
        col = make_sounding(
            t_sfc=rng.uniform(296.0, 306.0),
            rh_sfc=rng.uniform(0.65, 0.9),
            lapse_rate=rng.uniform(6.0e-3, 7.5e-3),
            tropopause=rng.uniform(11000.0, 14000.0),
            moist_depth=rng.uniform(800.0, 2500.0),
            n_levels=n_levels,
        )
        out.append(col)
    return out
