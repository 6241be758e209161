"""Incremental 3D-VAR and 4D-VAR on the toy model, plus cycling drivers.

The control vector v lives in CVT space, dx = U v, so the background term
is 1/2 v^T v. For time slot k with linearized observation operator H_k,
toy-model propagator M_k and innovation d_k (taken at the outer-loop
guess), the inner cost is

    J(v) = 1/2 v^T v + 1/2 sum_k (H_k M_k U (v - v_g) - d_k)^T R_k^-1 (...)

where v_g is the control vector of the current guess (zero in the first
outer loop). Two kinds of observations are supported: temperature
pseudo-observations (full columns from a 1D-VAR retrieval, H is a column
selection) and flash rates assimilated directly through the frozen-switch
lightning tangent-linear.
"""

import logging
from dataclasses import dataclass, field
from typing import Dict, List, Optional, Sequence, Union

import numpy as np

from .covariance import CvtSpec, VerticalCovariance, cvt_adjoint, cvt_apply
from .errors import LightvarError, NonFiniteCostError, ShapeMismatchError
from .minimizer import MinimizeProblem, MinimizeReport, conmin_cg
from .obs_operator import DEFAULT_PARAMS, LightningOperatorParams, extended_flash_rate
from .thermo import compute_cape
from .toy_model import GridState, ModelConfig, integrate, propagate_adjoint, propagate_tl
from .var1d import (LightningObservation, PseudoObservation, RetrievalConfig,
                    batch_retrieve, qc_filter)
from .verify import InnovationStats, innovation_stats

log = logging.getLogger(__name__)

DEFAULT_INNOVATION_CAP = 10.0

SCHEMES = ("3dvar_direct", "1d3dvar", "1d4dvar")


@dataclass
class ControlVector:
    values: np.ndarray  # (n_modes, nx, ny)

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=float)
        if self.values.ndim != 3:
            raise ShapeMismatchError("control vector must have shape (n_modes, nx, ny)")
        if not np.all(np.isfinite(self.values)):
            raise NonFiniteCostError("control vector has non-finite entries")

    @classmethod
    def zeros(cls, cvt: CvtSpec, grid_shape) -> "ControlVector":
        return cls(np.zeros((cvt.n_modes,) + tuple(grid_shape)))

    @classmethod
    def from_flat(cls, flat, cvt: CvtSpec, grid_shape) -> "ControlVector":
        return cls(np.reshape(flat, (cvt.n_modes,) + tuple(grid_shape)))

    @property
    def flat(self) -> np.ndarray:
        return self.values.ravel()

    def norm(self) -> float:
        return float(np.linalg.norm(self.values))

    def max_abs(self) -> float:
        return float(np.max(np.abs(self.values))) if self.values.size else 0.0


Observation = Union[PseudoObservation, LightningObservation]


@dataclass
class AssimilationWindow:
    """Observation batches in time order; slot k is valid ``k * slot_steps`` steps
    after the window start."""

    slots: List[List[Observation]]
    model: ModelConfig = ModelConfig()
    start_time: float = 0.0  # minutes
    slot_steps: int = 6

    def __post_init__(self):
        if not self.slots:
            raise ValueError("a window needs at least one slot")
        if self.slot_steps < 0:
            raise ValueError("slot_steps must be non-negative")

    @property
    def n_timeslots(self) -> int:
        return len(self.slots)

    def steps_to(self, k) -> int:
        return k * self.slot_steps

    def check_cells(self, nx, ny):
        for batch in self.slots:
            for ob in batch:
                i, j = ob.cell
                if not (0 <= i < nx and 0 <= j < ny):
                    raise ShapeMismatchError(f"observation cell {ob.cell} outside the grid")


@dataclass
class AnalysisResult:
    analysis: GridState
    increment: np.ndarray  # (nx, ny, n_levels)
    cost_history: List[float]
    innovation_before: InnovationStats
    innovation_after: InnovationStats
    outer_loops_used: int
    status: str = "converged"
    reports: List[MinimizeReport] = field(default_factory=list)
    exclusions: Dict[str, int] = field(default_factory=dict)
    control: Optional[ControlVector] = None

    @property
    def converged(self) -> bool:
        return self.status == "converged"


# ---------------------------------------------------------------- operators


class _ColumnSelection:
    """Linear H for full-column temperature pseudo-observations."""

    def __init__(self, obs: Sequence[PseudoObservation], state: GridState):
        self.cells = [o.cell for o in obs]
        self.y = np.concatenate([o.temperature for o in obs]) if obs else np.zeros(0)
        std = np.concatenate([o.error_std for o in obs]) if obs else np.zeros(0)
        if np.any(std <= 0):
            raise ValueError("pseudo-observation error std must be positive")
        self.r_inv = 1.0 / std ** 2
        self.hx = self.forward(state.temperature)
        self.innovation = self.y - self.hx

    def forward(self, dx):
        if not self.cells:
            return np.zeros(0)
        return np.concatenate([dx[i, j] for i, j in self.cells])

    def adjoint(self, w, shape):
        out = np.zeros(shape)
        nl = shape[2]
        for k, (i, j) in enumerate(self.cells):
            out[i, j] += w[k * nl:(k + 1) * nl]
        return out


class _LinearizedLightning:
    """Frozen-switch TL of the flash-rate operator at each observed column."""

    def __init__(self, obs: Sequence[LightningObservation], state: GridState,
                 params: LightningOperatorParams):
        self.cells = [o.cell for o in obs]
        self.y = np.array([o.flash_rate for o in obs], dtype=float)
        self.r_inv = np.array([1.0 / o.sigma0 ** 2 for o in obs], dtype=float)
        hx, grads = [], []
        for o in obs:
            h, g = extended_flash_rate(state.column(*o.cell), params)
            hx.append(h)
            grads.append(g)
        self.hx = np.array(hx, dtype=float)
        self.grads = grads
        self.innovation = self.y - self.hx

    def forward(self, dx):
        return np.array([g @ dx[i, j] for g, (i, j) in zip(self.grads, self.cells)])

    def adjoint(self, w, shape):
        out = np.zeros(shape)
        for wk, g, (i, j) in zip(w, self.grads, self.cells):
            out[i, j] += wk * g
        return out


def _slot_operator(batch, state, params):
    if all(isinstance(o, PseudoObservation) for o in batch):
        return _ColumnSelection(batch, state)
    if all(isinstance(o, LightningObservation) for o in batch):
        return _LinearizedLightning(batch, state, params)
    raise TypeError("a slot must hold a single observation type")


@dataclass
class Linearization:
    """Innovations and linear operators at an outer-loop guess."""

    operators: list
    trajectory: List[GridState]  # guess states, one per model step
    v_guess: np.ndarray

    @property
    def n_obs(self) -> int:
        return sum(op.y.size for op in self.operators)


def linearize(window: AssimilationWindow, guess: GridState, v_guess=None,
              params: LightningOperatorParams = DEFAULT_PARAMS) -> Linearization:
    n_steps = window.steps_to(window.n_timeslots - 1)
    traj = integrate(guess, n_steps, window.model)
    ops = [_slot_operator(batch, traj[window.steps_to(k)], params)
           for k, batch in enumerate(window.slots)]
    return Linearization(ops, traj, v_guess)


def incremental_cost_grad(v, window: AssimilationWindow, background: GridState,
                          cvt: CvtSpec, linearization: Optional[Linearization] = None,
                          params: LightningOperatorParams = DEFAULT_PARAMS):
    """Incremental cost and its gradient in control space.

    ``v`` may be a :class:`ControlVector` or a flat array. Without an
    explicit ``linearization`` the innovations are taken at ``background``.
    """
    grid = (background.nx, background.ny)
    flat = v.flat if isinstance(v, ControlVector) else np.asarray(v, dtype=float).ravel()
    if flat.size != cvt.control_size(grid):
        raise ShapeMismatchError(
            f"control vector has {flat.size} entries, expected {cvt.control_size(grid)}")
    if linearization is None:
        linearization = linearize(window, background, None, params)
    lin = linearization
    shape = background.shape
    dv = flat if lin.v_guess is None else flat - lin.v_guess
    dx0 = cvt_apply(dv, cvt, grid)

    cost = 0.5 * float(flat @ flat)
    residuals = []
    dx, done = dx0, 0
    for k, op in enumerate(lin.operators):
        steps = window.steps_to(k)
        dx = propagate_tl(dx, steps - done, window.model, lin.trajectory[done:steps])
        done = steps
        r = op.forward(dx) - op.innovation
        residuals.append(r)
        cost += 0.5 * float(np.sum(r * r * op.r_inv))
    if not np.isfinite(cost):
        raise NonFiniteCostError("incremental cost is not finite")

    lam = np.zeros(shape)
    for k in reversed(range(len(lin.operators))):
        op = lin.operators[k]
        lam = lam + op.adjoint(op.r_inv * residuals[k], shape)
        prev = window.steps_to(k - 1) if k > 0 else 0
        steps = window.steps_to(k)
        lam = propagate_adjoint(lam, steps - prev, window.model, lin.trajectory[prev:steps])
    grad = flat + cvt_adjoint(lam, cvt, grid).ravel()
    return cost, grad


# ------------------------------------------------------------------ drivers


@dataclass(frozen=True)
class AnalysisConfig:
    max_iterations: int = 300
    gradient_norm_reduction_target: float = 1e-8
    outer_loops: int = 1


def _observation_space(lin: Linearization):
    y = np.concatenate([op.y for op in lin.operators]) if lin.operators else np.zeros(0)
    hx = np.concatenate([op.hx for op in lin.operators]) if lin.operators else np.zeros(0)
    return y, hx


def _minimize_window(background: GridState, window: AssimilationWindow, cvt: CvtSpec,
                     params, config: AnalysisConfig, exclusions=None) -> AnalysisResult:
    grid = (background.nx, background.ny)
    window.check_cells(*grid)
    n = cvt.control_size(grid)
    v = np.zeros(n)
    history: List[float] = []
    reports: List[MinimizeReport] = []
    status = "converged"
    lin0 = linearize(window, background, None, params)
    lin = lin0
    loops = 0
    if lin0.n_obs == 0:
        config = AnalysisConfig(max_iterations=0, outer_loops=config.outer_loops)

    for loop in range(max(config.outer_loops, 1)):
        if loop > 0:
            guess = background.add_increment(cvt_apply(v, cvt, grid))
            lin = linearize(window, guess, v.copy(), params)
        current = lin

        def evaluate(x):
            return incremental_cost_grad(x, window, background, cvt, current, params)

        problem = MinimizeProblem(n, evaluate, max_iterations=config.max_iterations,
                                  gradient_norm_reduction_target=config.gradient_norm_reduction_target)
        try:
            v_new, report = conmin_cg(problem, v)
        except LightvarError as exc:
            log.warning("analysis minimization failed: %s", exc)
            status = f"failed: {exc.category}"
            v = np.zeros(n)
            break
        loops += 1
        reports.append(report)
        history.extend(c for _, c, _ in report.history)
        if report.cost_final > report.cost_initial:
            status = "failed: cost increased"
            v = np.zeros(n)
            break
        v = v_new
        status = report.status

    increment = cvt_apply(v, cvt, grid)
    analysis = background.add_increment(increment)
    y, hx_b = _observation_space(lin0)
    lin_a = linearize(window, analysis, None, params)
    _, hx_a = _observation_space(lin_a)
    return AnalysisResult(
        analysis=analysis,
        increment=increment,
        cost_history=history,
        innovation_before=innovation_stats(y, hx_b),
        innovation_after=innovation_stats(y, hx_a),
        outer_loops_used=loops,
        status=status,
        reports=reports,
        exclusions=dict(exclusions or {}),
        control=ControlVector.from_flat(v, cvt, grid),
    )


def screen_lightning(background: GridState, obs: Sequence[LightningObservation],
                     params: LightningOperatorParams = DEFAULT_PARAMS,
                     innovation_cap: Optional[float] = DEFAULT_INNOVATION_CAP):
    """Split direct lightning observations into (kept, exclusion counts).

    A cell is dropped when its background CAPE does not exceed the operator
    threshold, when the innovation is not positive, or when the innovation
    exceeds ``innovation_cap`` (kept when exactly equal to it).
    """
    counts = {"assimilated": 0, "capped": 0, "low_cape": 0, "negative_innovation": 0}
    kept = []
    for o in obs:
        col = background.column(*o.cell)
        if compute_cape(col).cape <= params.cape_min:
            counts["low_cape"] += 1
            continue
        h, _ = extended_flash_rate(col, params)
        d = o.flash_rate - h
        if d <= 0:
            counts["negative_innovation"] += 1
        elif innovation_cap is not None and d > innovation_cap:
            counts["capped"] += 1
        else:
            counts["assimilated"] += 1
            kept.append(o)
    return kept, counts


def analyze_3dvar_direct(background: GridState, obs: Sequence[LightningObservation],
                         cvt: CvtSpec, params: LightningOperatorParams = DEFAULT_PARAMS,
                         innovation_cap: Optional[float] = DEFAULT_INNOVATION_CAP,
                         config: AnalysisConfig = AnalysisConfig()) -> AnalysisResult:
    """3D-VAR of flash rates through the lightning operator."""
    kept, counts = screen_lightning(background, obs, params, innovation_cap)
    window = AssimilationWindow([kept], slot_steps=0)
    return _minimize_window(background, window, cvt, params, config, counts)


def analyze_3dvar_pseudo(background: GridState,
                         pseudo_obs: Union[Dict, Sequence[PseudoObservation]],
                         cvt: CvtSpec, config: AnalysisConfig = AnalysisConfig()) -> AnalysisResult:
    """3D-VAR of temperature pseudo-observations (exactly quadratic)."""
    batch = list(pseudo_obs.values()) if isinstance(pseudo_obs, dict) else list(pseudo_obs)
    window = AssimilationWindow([batch], slot_steps=0)
    return _minimize_window(background, window, cvt, DEFAULT_PARAMS, config,
                            {"assimilated": len(batch)})


def analyze_4dvar(background: GridState, window: AssimilationWindow, cvt: CvtSpec,
                  model: Optional[ModelConfig] = None, outer_loops: int = 1,
                  params: LightningOperatorParams = DEFAULT_PARAMS,
                  config: AnalysisConfig = AnalysisConfig()) -> AnalysisResult:
    """4D-VAR over ``window``; the increment is applied at the window start."""
    if model is not None:
        window = AssimilationWindow(window.slots, model, window.start_time, window.slot_steps)
    config = AnalysisConfig(config.max_iterations, config.gradient_norm_reduction_target,
                            outer_loops)
    counts = {"assimilated": sum(len(b) for b in window.slots)}
    return _minimize_window(background, window, cvt, params, config, counts)


# ------------------------------------------------------------------ cycling


@dataclass(frozen=True)
class CycleSettings:
    cycle_hours: int = 1
    window_slots: int = 2
    innovation_cap: Optional[float] = DEFAULT_INNOVATION_CAP
    pseudo_obs_std: float = 1.0
    retrieval: RetrievalConfig = RetrievalConfig()
    analysis: AnalysisConfig = AnalysisConfig()
    threads: int = 1


@dataclass
class CycleRecord:
    hour: float
    background: GridState
    analysis: GridState
    result: Optional[AnalysisResult] = None
    retrievals: int = 0
    note: str = ""


@dataclass
class CycleOutput:
    scheme: str
    records: List[CycleRecord]
    forecast: List[GridState]  # hourly free forecast after the last analysis

    @property
    def hours(self) -> List[float]:
        return [r.hour for r in self.records]


def _obs_at(obs: Sequence[LightningObservation], hour) -> List[LightningObservation]:
    t = 60.0 * hour
    return [o for o in obs if abs(o.time - t) < 1e-9]


def _pseudo_obs(background: GridState, obs, bcov, params, settings: CycleSettings):
    if not obs:
        return [], 0
    results, _ = batch_retrieve(background, obs, bcov, params, settings.retrieval,
                                threads=settings.threads)
    accepted = qc_filter(results, settings.pseudo_obs_std,
                         settings.retrieval.min_improvement)
    return list(accepted.values()), len(accepted)


def _advance(state: GridState, hours, model: ModelConfig) -> GridState:
    return integrate(state, int(round(hours * model.steps_per_hour)), model)[-1]


def cycle(initial: GridState, observations: Sequence[LightningObservation], scheme: str,
          n_cycles: int, cvt: CvtSpec, bcov: VerticalCovariance,
          model: ModelConfig = ModelConfig(),
          params: LightningOperatorParams = DEFAULT_PARAMS,
          settings: CycleSettings = CycleSettings(), forecast_hours: int = 0) -> CycleOutput:
    """Run ``n_cycles`` analysis times of ``scheme`` starting from ``initial``.

    ``3dvar_direct`` and ``1d3dvar`` analyse every ``cycle_hours`` and
    forecast to the next analysis time. ``1d4dvar`` runs a single window
    with ``window_slots`` hourly slots and then forecasts freely; its
    records hold the analysis trajectory at the slot times followed by the
    free forecast at the remaining cycle times.
    """
    if scheme not in SCHEMES:
        raise ValueError(f"unknown scheme {scheme!r}; choose from {SCHEMES}")
    if n_cycles < 1:
        raise ValueError("n_cycles must be positive")
    step_hours = settings.cycle_hours
    records: List[CycleRecord] = []

    if scheme == "1d4dvar":
        slots, n_ret, bg_k = [], 0, initial
        for k in range(settings.window_slots):
            if k > 0:
                bg_k = _advance(bg_k, step_hours, model)
            pseudo, n = _pseudo_obs(bg_k, _obs_at(observations, k * step_hours), bcov,
                                    params, settings)
            slots.append(pseudo)
            n_ret += n
        window = AssimilationWindow(slots, model, 0.0,
                                    int(round(step_hours * model.steps_per_hour)))
        try:
            result = analyze_4dvar(initial, window, cvt, params=params,
                                   config=settings.analysis)
            state, note = result.analysis, result.status
        except LightvarError as exc:
            log.warning("4D-VAR window failed: %s", exc)
            result, state, note = None, initial, f"failed: {exc.category}"
        background = initial
        for c in range(n_cycles):
            if c > 0:
                state = _advance(state, step_hours, model)
                background = _advance(background, step_hours, model)
            records.append(CycleRecord(c * step_hours, background, state,
                                       result if c == 0 else None,
                                       n_ret if c == 0 else 0, note if c == 0 else ""))
    else:
        background = initial
        for c in range(n_cycles):
            hour = c * step_hours
            obs = _obs_at(observations, hour)
            result, note, n_ret = None, "", 0
            try:
                if scheme == "3dvar_direct":
                    result = analyze_3dvar_direct(background, obs, cvt, params,
                                                  settings.innovation_cap, settings.analysis)
                else:
                    pseudo, n_ret = _pseudo_obs(background, obs, bcov, params, settings)
                    result = analyze_3dvar_pseudo(background, pseudo, cvt, settings.analysis)
                analysis, note = result.analysis, result.status
            except LightvarError as exc:
                log.warning("cycle at hour %s failed: %s", hour, exc)
                analysis, note = background, f"failed: {exc.category}"
            records.append(CycleRecord(hour, background, analysis, result, n_ret, note))
            if c < n_cycles - 1:
                background = _advance(analysis, step_hours, model)
        state = records[-1].analysis

    forecast = [state]
    for _ in range(forecast_hours):
        forecast.append(_advance(forecast[-1], step_hours, model))
    return CycleOutput(scheme, records, forecast)
