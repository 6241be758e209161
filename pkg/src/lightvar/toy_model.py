"""Linear toy forecast model on a periodic grid of atmospheric columns.

Each step advects temperature and mixing ratio with constant winds using
first-order upwind differences (x sweep, then y sweep) and relaxes both
toward a reference state. The step is affine in the state, so its
tangent-linear is exact and its adjoint is the transpose of the linear
part. An optional quadratic temperature term (off by default) makes the
model weakly nonlinear for outer-loop experiments.
"""

from dataclasses import dataclass, replace
from typing import List, Optional

import numpy as np

from .errors import ShapeMismatchError
from .thermo import AtmosColumn


@dataclass(frozen=True)
class GridState:
    """Grid of columns sharing fixed pressure and height levels.

    ``temperature`` and ``mixing_ratio`` have shape (nx, ny, n_levels).
    """

    pressure: np.ndarray
    height: np.ndarray
    temperature: np.ndarray
    mixing_ratio: np.ndarray

    def __post_init__(self):
        for name in ("pressure", "height", "temperature", "mixing_ratio"):
            object.__setattr__(self, name, np.asarray(getattr(self, name), dtype=float))
        n = self.pressure.size
        if self.height.shape != (n,):
            raise ShapeMismatchError("pressure and height differ in length")
        if self.temperature.ndim != 3 or self.temperature.shape[2] != n:
            raise ShapeMismatchError("temperature must have shape (nx, ny, n_levels)")
        if self.mixing_ratio.shape != self.temperature.shape:
            raise ShapeMismatchError("mixing ratio and temperature differ in shape")

    @property
    def nx(self) -> int:
        return self.temperature.shape[0]

    @property
    def ny(self) -> int:
        return self.temperature.shape[1]

    @property
    def n_levels(self) -> int:
        return self.pressure.size

    @property
    def shape(self):
        return self.temperature.shape

    def column(self, i, j) -> AtmosColumn:
        return AtmosColumn(self.pressure, self.temperature[i, j],
                           self.mixing_ratio[i, j], self.height)

    def with_fields(self, temperature=None, mixing_ratio=None) -> "GridState":
        return replace(
            self,
            temperature=self.temperature if temperature is None else temperature,
            mixing_ratio=self.mixing_ratio if mixing_ratio is None else mixing_ratio,
        )

    def with_columns(self, temperatures: dict) -> "GridState":
        """Copy with the temperature of some cells replaced, {(i, j): profile}."""
        t = self.temperature.copy()
        for (i, j), prof in temperatures.items():
            t[i, j] = prof
        return self.with_fields(temperature=t)

    def add_increment(self, dt) -> "GridState":
        return self.with_fields(temperature=self.temperature + dt)

    @classmethod
    def from_columns(cls, columns) -> "GridState":
        """Build from a nested list [nx][ny] of columns sharing p and z."""
        first = columns[0][0]
        t = np.array([[c.temperature for c in row] for row in columns])
        q = np.array([[c.vapor_mixing_ratio for c in row] for row in columns])
        return cls(first.pressure, first.geopotential_height, t, q)


@dataclass(frozen=True)
class ModelConfig:
    """Constant winds (cells per step), relaxation and timing.

    ``reference`` is the state relaxed toward; it is required whenever
    ``relaxation_rate`` or ``quadratic_coeff`` is non-zero.
    """

    wind_u: float = 0.5
    wind_v: float = 0.25
    dt: float = 600.0
    relaxation_rate: float = 0.0
    steps_per_hour: int = 6
    reference: Optional[GridState] = None
    quadratic_coeff: float = 0.0

    def __post_init__(self):
        if abs(self.wind_u) > 1 or abs(self.wind_v) > 1:
            raise ValueError("|wind| must not exceed one cell per step")
        if not 0.0 <= self.relaxation_rate < 1.0:
            raise ValueError("relaxation_rate must lie in [0, 1)")
        if self.steps_per_hour < 1:
            raise ValueError("steps_per_hour must be positive")
        if (self.relaxation_rate or self.quadratic_coeff) and self.reference is None:
            raise ValueError("a reference state is needed for relaxation")

    @property
    def linear(self) -> bool:
        return self.quadratic_coeff == 0.0


def _advect(f, c, axis):
    """One upwind sweep with Courant number c on a periodic axis."""
    if c >= 0:
        return (1.0 - c) * f + c * np.roll(f, 1, axis=axis)
    return (1.0 + c) * f - c * np.roll(f, -1, axis=axis)


def _advect_adjoint(f, c, axis):
    if c >= 0:
        return (1.0 - c) * f + c * np.roll(f, -1, axis=axis)
    return (1.0 + c) * f - c * np.roll(f, 1, axis=axis)


def _linear_part(f, config):
    f = _advect(f, config.wind_u, 0)
    f = _advect(f, config.wind_v, 1)
    return (1.0 - config.relaxation_rate) * f


def _linear_part_adjoint(f, config):
    f = (1.0 - config.relaxation_rate) * f
    f = _advect_adjoint(f, config.wind_v, 1)
    return _advect_adjoint(f, config.wind_u, 0)


def step(state: GridState, config: ModelConfig) -> GridState:
    """Advance one step."""
    t = _linear_part(state.temperature, config)
    q = _linear_part(state.mixing_ratio, config)
    ref = config.reference
    if config.relaxation_rate:
        t = t + config.relaxation_rate * ref.temperature
        q = q + config.relaxation_rate * ref.mixing_ratio
    if config.quadratic_coeff:
        t = t + config.quadratic_coeff * (state.temperature - ref.temperature) ** 2
    return state.with_fields(temperature=t, mixing_ratio=q)


def step_tl(dstate: GridState, config: ModelConfig,
            base: Optional[GridState] = None) -> GridState:
    """Tangent-linear step; ``base`` is needed only for the quadratic term.

    ``dstate`` carries perturbations in its temperature and mixing-ratio
    fields; its pressure and height are passed through untouched.
    """
    dt = _linear_part(dstate.temperature, config)
    dq = _linear_part(dstate.mixing_ratio, config)
    if config.quadratic_coeff:
        if base is None:
            raise ValueError("the quadratic term needs the linearization state")
        dt = dt + 2.0 * config.quadratic_coeff * (
            base.temperature - config.reference.temperature) * dstate.temperature
    return dstate.with_fields(temperature=dt, mixing_ratio=dq)


def step_adjoint(dstate_star: GridState, config: ModelConfig,
                 base: Optional[GridState] = None) -> GridState:
    """Transpose of :func:`step_tl`."""
    t_star = _linear_part_adjoint(dstate_star.temperature, config)
    q_star = _linear_part_adjoint(dstate_star.mixing_ratio, config)
    if config.quadratic_coeff:
        if base is None:
            raise ValueError("the quadratic term needs the linearization state")
        t_star = t_star + 2.0 * config.quadratic_coeff * (
            base.temperature - config.reference.temperature) * dstate_star.temperature
    return dstate_star.with_fields(temperature=t_star, mixing_ratio=q_star)


def integrate(state: GridState, n_steps: int, config: ModelConfig) -> List[GridState]:
    """Trajectory of ``n_steps + 1`` states, starting with ``state``."""
    if n_steps < 0:
        raise ValueError("n_steps must be non-negative")
    traj = [state]
    for _ in range(n_steps):
        traj.append(step(traj[-1], config))
    return traj


def propagate_tl(dt, n_steps, config, trajectory=None):
    """Temperature perturbation carried ``n_steps`` forward by the TL model."""
    d = dt
    for k in range(n_steps):
        base = trajectory[k] if trajectory is not None else None
        d = _tl_temperature(d, config, base)
    return d


def propagate_adjoint(dt_star, n_steps, config, trajectory=None):
    """Adjoint of :func:`propagate_tl` (steps applied in reverse order)."""
    d = dt_star
    for k in reversed(range(n_steps)):
        base = trajectory[k] if trajectory is not None else None
        d = _adj_temperature(d, config, base)
    return d


def _tl_temperature(dt, config, base):
    out = _linear_part(dt, config)
    if config.quadratic_coeff:
        out = out + 2.0 * config.quadratic_coeff * (
            base.temperature - config.reference.temperature) * dt
    return out


def _adj_temperature(dt_star, config, base):
    out = _linear_part_adjoint(dt_star, config)
    if config.quadratic_coeff:
        out = out + 2.0 * config.quadratic_coeff * (
            base.temperature - config.reference.temperature) * dt_star
    return out
