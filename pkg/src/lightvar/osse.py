"""Synthetic twin-experiment scenarios on the toy model.

A scenario is fully determined by an :class:`OsseSpec`. The truth is a grid
of idealized soundings whose unstable cells form smooth random patches
covering a prescribed fraction of the domain. The background is the truth
displaced by a few cells and cooled near the surface, and lightning
observations are the truth's flash rates at randomly chosen active cells
plus optional Gaussian noise.

Vertical background statistics come from the NMC recipe applied to the toy
model itself: perturbed states are forecast 12 h and 24 h ahead and the
differences of forecasts valid at the same time form the samples.
"""

from dataclasses import dataclass, field
from typing import List, Tuple

import numpy as np

from .covariance import ForecastPairSet, _smooth_axis, filter_coefficient, _kernel_norm
from .obs_operator import DEFAULT_PARAMS, LightningOperatorParams, _flash_unchecked
from .soundings import height_levels, hydrostatic_pressure, make_sounding
from .thermo import compute_cape
from .toy_model import GridState, ModelConfig, integrate, propagate_tl
from .var1d import LightningObservation


@dataclass(frozen=True)
class OsseSpec:
    seed: int = 0
    nx: int = 24
    ny: int = 24
    n_levels: int = 60
    z_top: float = 20000.0
    # truth
    unstable_fraction: float = 0.35
    patch_lengthscale: float = 2.5  # cells
    t_sfc_stable: float = 293.0
    t_sfc_unstable: Tuple[float, float] = (297.5, 302.5)
    rh_sfc_unstable: Tuple[float, float] = (0.72, 0.84)
    # model
    wind_u: float = 0.5
    wind_v: float = 0.25
    steps_per_hour: int = 6
    n_hours: int = 7
    # background
    displacement: Tuple[int, int] = (1, 1)
    cooling: float = 2.5  # K at the surface
    cooling_depth: float = 1000.0  # m, e-folding
    # observations
    obs_per_hour: int = 50
    obs_min_flash_rate: float = 1.0  # cells below this count as lightning-free
    obs_noise_std: float = 0.0
    # NMC forecast pairs
    nmc_valid_times: int = 40
    nmc_error_std: Tuple[float, float] = (4.0, 0.8)  # surface, aloft (K)
    nmc_error_scale_height: float = 3000.0
    nmc_vertical_lengthscale: float = 1500.0  # m
    nmc_nugget: float = 0.05
    nmc_horizontal_lengthscale: float = 5.0  # cells

    def __post_init__(self):
        if self.nx < 2 or self.ny < 2 or self.n_levels < 3:
            raise ValueError("grid too small")
        if not 0.0 <= self.unstable_fraction <= 1.0:
            raise ValueError("unstable_fraction must lie in [0, 1]")
        if self.obs_noise_std < 0 or self.cooling < 0:
            raise ValueError("noise and cooling must be non-negative")
        if self.n_hours < 0 or self.obs_per_hour < 0:
            raise ValueError("counts must be non-negative")

    def model_config(self) -> ModelConfig:
        return ModelConfig(wind_u=self.wind_u, wind_v=self.wind_v,
                           steps_per_hour=self.steps_per_hour)


@dataclass
class OsseScenario:
    spec: OsseSpec
    truth: List[GridState]  # hourly, n_hours + 1 states
    background: GridState
    observations: List[LightningObservation]
    forecast_pairs: ForecastPairSet
    unstable_mask: np.ndarray = field(repr=False)

    def observations_at(self, hour) -> List[LightningObservation]:
        t = 60.0 * hour
        return [o for o in self.observations if o.time == t]

    def free_run(self) -> List[GridState]:
        cfg = self.spec.model_config()
        traj = integrate(self.background, self.spec.n_hours * cfg.steps_per_hour, cfg)
        return traj[::cfg.steps_per_hour]


def smooth_random_field(rng, shape, lengthscale):
    """Unit-variance periodic random field with recursive-filter correlation.

    Smoothing acts on the first two axes; any further axes are independent.
    """
    white = rng.standard_normal(shape)
    a = filter_coefficient(lengthscale, 4)
    out = white
    norm = 1.0
    for axis in (0, 1):
        out = _smooth_axis(out, a, 4, axis)
        norm *= _kernel_norm(shape[axis], a, 4)
    return norm * out


def _reference_levels(spec: OsseSpec):
    z = height_levels(spec.n_levels, spec.z_top)
    t = spec.t_sfc_stable - 6.5e-3 * np.minimum(z, 12000.0)
    return z, hydrostatic_pressure(z, t)


def _truth_initial(spec: OsseSpec, rng) -> Tuple[GridState, np.ndarray]:
    z, p = _reference_levels(spec)
    phi = smooth_random_field(rng, (spec.nx, spec.ny), spec.patch_lengthscale)
    n_cells = spec.nx * spec.ny
    n_unstable = int(round(spec.unstable_fraction * n_cells))
    order = np.argsort(phi, axis=None)[::-1]
    rank = np.empty(n_cells)
    rank[order] = np.arange(n_cells)
    rank = rank.reshape(spec.nx, spec.ny)
    unstable = rank < n_unstable
    # intensity 1 at the patch cores, falling to 0 at the patch edges
    intensity = np.where(unstable, 1.0 - rank / max(n_unstable, 1), 0.0)

    t = np.empty((spec.nx, spec.ny, spec.n_levels))
    q = np.empty_like(t)
    for i in range(spec.nx):
        for j in range(spec.ny):
            if unstable[i, j]:
                s = intensity[i, j]
                lo, hi = spec.t_sfc_unstable
                rlo, rhi = spec.rh_sfc_unstable
                col = make_sounding(t_sfc=lo + (hi - lo) * s, rh_sfc=rlo + (rhi - rlo) * s,
                                    lapse_rate=6.8e-3, moist_depth=1500.0,
                                    height=z, pressure=p)
            else:
                col = make_sounding(t_sfc=spec.t_sfc_stable + rng.uniform(-1.0, 1.0),
                                    rh_sfc=0.45, lapse_rate=6.0e-3, moist_depth=800.0,
                                    height=z, pressure=p)
            t[i, j] = col.temperature
            q[i, j] = col.vapor_mixing_ratio
    return GridState(p, z, t, q), unstable


def _nmc_perturbations(spec: OsseSpec, rng, z) -> np.ndarray:
    sfc, top = spec.nmc_error_std
    std = (sfc - top) * np.exp(-z / spec.nmc_error_scale_height) + top
    corr = np.exp(-0.5 * ((z[:, None] - z[None, :]) / spec.nmc_vertical_lengthscale) ** 2)
    corr = (1.0 - spec.nmc_nugget) * corr + spec.nmc_nugget * np.eye(z.size)
    chol = np.linalg.cholesky(corr * np.outer(std, std))
    white = smooth_random_field(rng, (spec.nx, spec.ny, z.size),
                                spec.nmc_horizontal_lengthscale)
    return white @ chol.T


def nmc_forecast_pairs(spec: OsseSpec, base: GridState, rng) -> ForecastPairSet:
    """12 h minus 24 h forecast differences from perturbed toy-model runs.

    The 24 h run starts from ``base`` plus one perturbation, the 12 h run
    from the 12 h forecast of ``base`` plus another. The model is affine,
    so the unperturbed parts cancel exactly and only the perturbations
    need propagating.
    """
    cfg = spec.model_config()
    n12 = 12 * cfg.steps_per_hour
    fc12_all, fc24_all = [], []
    for _ in range(spec.nmc_valid_times):
        e24 = _nmc_perturbations(spec, rng, base.height)
        e12 = _nmc_perturbations(spec, rng, base.height)
        fc24_all.append(propagate_tl(e24, 2 * n12, cfg))
        fc12_all.append(propagate_tl(e12, n12, cfg))
    return ForecastPairSet.from_forecasts(np.array(fc12_all), np.array(fc24_all))


def _displaced_cooled(spec: OsseSpec, truth0: GridState) -> GridState:
    shift = tuple(int(s) for s in spec.displacement)
    t = np.roll(truth0.temperature, shift, axis=(0, 1))
    q = np.roll(truth0.mixing_ratio, shift, axis=(0, 1))
    t = t - spec.cooling * np.exp(-truth0.height / spec.cooling_depth)
    return truth0.with_fields(temperature=t, mixing_ratio=q)


def _synthesize_obs(spec: OsseSpec, truth: List[GridState], rng,
                    params: LightningOperatorParams) -> List[LightningObservation]:
    obs = []
    for hour, state in enumerate(truth):
        rates = {}
        for i in range(spec.nx):
            for j in range(spec.ny):
                cape = compute_cape(state.column(i, j)).cape
                if cape >= params.cape_min:
                    rates[(i, j)] = _flash_unchecked(cape, params)
        active = sorted(c for c, r in rates.items()
                        if r > 0 and r >= spec.obs_min_flash_rate)
        n = min(spec.obs_per_hour, len(active))
        picks = rng.choice(len(active), size=n, replace=False) if n else []
        for k in sorted(picks):
            cell = active[k]
            y = rates[cell] + spec.obs_noise_std * rng.standard_normal()
            obs.append(LightningObservation(cell, max(y, 0.0), time=60.0 * hour))
    return obs


def generate_osse(spec: OsseSpec = OsseSpec(),
                  params: LightningOperatorParams = DEFAULT_PARAMS) -> OsseScenario:
    """Build truth, background, observations and NMC pairs from ``spec``."""
    # independent streams: changing the observation count or the run length
    # leaves the truth and the NMC sample untouched
    rng_truth, rng_obs, rng_nmc = (np.random.default_rng(s)
                                   for s in np.random.SeedSequence(spec.seed).spawn(3))
    truth0, unstable = _truth_initial(spec, rng_truth)
    cfg = spec.model_config()
    traj = integrate(truth0, spec.n_hours * cfg.steps_per_hour, cfg)
    truth = traj[::cfg.steps_per_hour]
    background = _displaced_cooled(spec, truth0)
    obs = _synthesize_obs(spec, truth, rng_obs, params)
    pairs = nmc_forecast_pairs(spec, truth0, rng_nmc)
    return OsseScenario(spec, truth, background, obs, pairs, unstable)


def unstable_fraction(state: GridState, params=DEFAULT_PARAMS) -> float:
    """Fraction of columns whose CAPE exceeds the operator threshold."""
    n = 0
    for i in range(state.nx):
        for j in range(state.ny):
            n += compute_cape(state.column(i, j)).cape > params.cape_min
    return n / (state.nx * state.ny)
