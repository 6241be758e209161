"""1D-VAR temperature retrieval from flash-rate observations.

For one column the retrieval minimizes

    J(T) = 1/2 (T - T_b)^T B^+ (T - T_b) + 1/2 ((H(T) - y) / sigma0)^2

over the temperature profile with the CONMIN-style minimizer, where H is
the lightning operator and B^+ the eigen-pseudo-inverse of the vertical
background covariance. Accepted retrievals become temperature
pseudo-observations for the 3D/4D-VAR stage.
"""

import csv
import logging
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np

from .covariance import VerticalCovariance
from .errors import LightvarError
from .minimizer import MinimizeProblem, MinimizeReport, conmin_cg
from .obs_operator import DEFAULT_PARAMS, LightningOperatorParams, extended_flash_rate
from .thermo import T_MAX, T_MIN, AtmosColumn, compute_cape, dry_adiabatic_adjust

log = logging.getLogger(__name__)

ACCEPTED = "accepted"
REJECTED_LOW_CAPE = "rejected_low_cape"
REJECTED_SMALL_IMPROVEMENT = "rejected_small_improvement"
REJECTED_NONCONVERGENCE = "rejected_nonconvergence"
SKIPPED_ZERO_FLASH = "skipped_zero_flash"
SKIPPED_NEGATIVE_INNOVATION = "skipped_negative_innovation"

QC_STATUSES = (ACCEPTED, REJECTED_LOW_CAPE, REJECTED_SMALL_IMPROVEMENT,
               REJECTED_NONCONVERGENCE)


@dataclass(frozen=True)
class LightningObservation:
    """Binned flash rate in flashes (9 km)^-2 min^-1 at a grid cell."""

    cell: Tuple[int, int]
    flash_rate: float
    time: float = 0.0  # minutes
    sigma0: float = 1.0

    def __post_init__(self):
        object.__setattr__(self, "cell", (int(self.cell[0]), int(self.cell[1])))
        if self.flash_rate < 0:
            raise ValueError("flash rate must be non-negative")
        if self.sigma0 <= 0:
            raise ValueError("sigma0 must be positive")


@dataclass(frozen=True)
class RetrievalConfig:
    max_iterations: int = 200
    gradient_norm_reduction_target: float = 1e-2
    min_improvement: float = 0.2
    pseudo_obs_std: float = 1.0


@dataclass
class RetrievalResult:
    cell: Tuple[int, int]
    temperature_increment: np.ndarray
    h_background: float
    h_analysis: float
    qc_status: str
    minimize_report: Optional[MinimizeReport]
    observation: Optional[LightningObservation] = None
    analysis: Optional[AtmosColumn] = None
    error: Optional[str] = None

    @property
    def innovation_before(self) -> float:
        return self.observation.flash_rate - self.h_background

    @property
    def innovation_after(self) -> float:
        return self.observation.flash_rate - self.h_analysis

    @property
    def accepted(self) -> bool:
        return self.qc_status == ACCEPTED


@dataclass(frozen=True)
class PseudoObservation:
    """Retrieved temperature column assimilated as a conventional observation."""

    cell: Tuple[int, int]
    temperature: np.ndarray
    error_std: np.ndarray
    time: float = 0.0


def one_d_var_problem(xb, y0, sigma0, bcov: VerticalCovariance, operator,
                      config=RetrievalConfig(), lower=None, upper=None):
    """1D-VAR cost/gradient contract for a generic scalar operator.

    ``operator(x)`` returns ``(H(x), dH/dx)``. The background term uses the
    eigen-pseudo-inverse of ``bcov``; gradients are projected onto its
    range, so iterates started at ``xb`` never leave ``xb + range(B)``.
    """
    xb = np.asarray(xb, dtype=float)
    proj = bcov.range_projector()
    full_rank = np.allclose(proj, np.eye(xb.size), atol=1e-12)

    def evaluate(x):
        dx = x - xb
        binv_dx = bcov.pseudo_inverse_apply(dx)
        h, dh = operator(x)
        r = (h - y0) / sigma0
        cost = 0.5 * float(dx @ binv_dx) + 0.5 * r * r
        grad = binv_dx + dh * (r / sigma0)
        if not full_rank:
            grad = proj @ grad
        return cost, grad

    return MinimizeProblem(
        dimension=xb.size,
        evaluate=evaluate,
        max_iterations=config.max_iterations,
        gradient_norm_reduction_target=config.gradient_norm_reduction_target,
        lower=lower,
        upper=upper,
    )


def solve_1dvar(xb, y0, sigma0, bcov, operator, config=RetrievalConfig(),
                lower=None, upper=None):
    """Minimize the 1D-VAR cost from the background; returns (x_a, report)."""
    problem = one_d_var_problem(xb, y0, sigma0, bcov, operator, config, lower, upper)
    return conmin_cg(problem, xb)


def column_operator(background: AtmosColumn, params=DEFAULT_PARAMS):
    """Flash rate and its temperature gradient as a function of temperature."""
    def operator(t):
        return extended_flash_rate(background.with_temperature(t), params)
    return operator


def retrieval_problem(background: AtmosColumn, obs: LightningObservation,
                      bcov: VerticalCovariance, params=DEFAULT_PARAMS,
                      config=RetrievalConfig()) -> MinimizeProblem:
    """The cost minimized by :func:`retrieve_column` for one column."""
    n = background.n_levels
    return one_d_var_problem(background.temperature, obs.flash_rate, obs.sigma0,
                             bcov, column_operator(background, params), config,
                             lower=np.full(n, T_MIN), upper=np.full(n, T_MAX))


def retrieve_column(background: AtmosColumn, obs: LightningObservation,
                    bcov: VerticalCovariance,
                    params: LightningOperatorParams = DEFAULT_PARAMS,
                    config: RetrievalConfig = RetrievalConfig()) -> RetrievalResult:
    """Retrieve the temperature profile that explains an observed flash rate."""
    n = background.n_levels
    zero = np.zeros(n)
    h_b, _ = extended_flash_rate(background, params)
    cape_b = compute_cape(background).cape
    if cape_b <= params.cape_min:
        return RetrievalResult(obs.cell, zero, h_b, h_b, REJECTED_LOW_CAPE,
                               None, obs, background)

    problem = retrieval_problem(background, obs, bcov, params, config)
    ta, report = conmin_cg(problem, background.temperature)
    analysis = background.with_temperature(ta)
    h_a, _ = extended_flash_rate(analysis, params)
    if not report.converged:
        status = REJECTED_NONCONVERGENCE
    elif h_a - h_b < config.min_improvement:
        status = REJECTED_SMALL_IMPROVEMENT
    else:
        status = ACCEPTED
    return RetrievalResult(obs.cell, ta - background.temperature, h_b, h_a,
                           status, report, obs, analysis)


def qc_filter(results: Sequence[RetrievalResult], pseudo_obs_std=1.0,
              min_improvement=0.2) -> Dict[Tuple[int, int], PseudoObservation]:
    """Accepted retrievals, dry-adiabatically adjusted, keyed by cell.

    A retrieval passes when it is accepted and its flash-rate gain
    H(x_a) - H(x_b) is at least ``min_improvement``. When one cell has
    several accepted retrievals the latest observation time wins.
    """
    out = {}
    for r in sorted(results, key=_result_key):
        if r.qc_status != ACCEPTED or r.h_analysis - r.h_background < min_improvement:
            continue
        adjusted = dry_adiabatic_adjust(r.analysis)
        std = np.broadcast_to(np.asarray(pseudo_obs_std, dtype=float),
                              adjusted.temperature.shape).copy()
        time = r.observation.time if r.observation is not None else 0.0
        out[r.cell] = PseudoObservation(r.cell, adjusted.temperature, std, time)
    return out


def _result_key(r):
    t = r.observation.time if r.observation is not None else 0.0
    return (t, r.cell)


@dataclass
class BatchSummary:
    counts: Dict[str, int] = field(default_factory=dict)
    innovation_before_max: Optional[float] = None
    innovation_before_mean: Optional[float] = None
    innovation_after_max: Optional[float] = None
    innovation_after_mean: Optional[float] = None
    errors: List[str] = field(default_factory=list)

    @property
    def max_reduction_factor(self) -> Optional[float]:
        if not self.innovation_after_max:
            return None
        return self.innovation_before_max / self.innovation_after_max


def batch_retrieve(grid_background, obs_list: Sequence[LightningObservation],
                   bcov: VerticalCovariance, params=DEFAULT_PARAMS,
                   config: RetrievalConfig = RetrievalConfig(), threads: int = 1):
    """Run independent column retrievals for a batch of observations.

    Zero-flash observations and those not exceeding the background flash
    rate are skipped. Failures are recorded per observation and never abort
    the batch. Returns (results sorted by time and cell, summary).
    """
    from .verify import innovation_stats

    counts = {s: 0 for s in QC_STATUSES + (SKIPPED_ZERO_FLASH, SKIPPED_NEGATIVE_INNOVATION)}
    summary = BatchSummary(counts=counts)
    todo = []
    for obs in obs_list:
        i, j = obs.cell
        if not (0 <= i < grid_background.nx and 0 <= j < grid_background.ny):
            raise ValueError(f"observation cell {obs.cell} outside the grid")
        if obs.flash_rate <= 0:
            counts[SKIPPED_ZERO_FLASH] += 1
            continue
        todo.append(obs)

    def run(obs):
        col = grid_background.column(*obs.cell)
        try:
            h_b, _ = extended_flash_rate(col, params)
            if obs.flash_rate <= h_b:
                return SKIPPED_NEGATIVE_INNOVATION
            return retrieve_column(col, obs, bcov, params, config)
        except LightvarError as exc:
            log.warning("retrieval at %s failed: %s", obs.cell, exc)
            return RetrievalResult(obs.cell, np.zeros(col.n_levels), np.nan,
                                   np.nan, REJECTED_NONCONVERGENCE, None, obs,
                                   col, error=f"{exc.category}: {exc}")

    if threads > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            outcomes = list(pool.map(run, todo))
    else:
        outcomes = [run(o) for o in todo]

    results = []
    for out in outcomes:
        if isinstance(out, str):
            counts[out] += 1
            continue
        counts[out.qc_status] += 1
        if out.error:
            summary.errors.append(f"{out.cell}: {out.error}")
        results.append(out)
    results.sort(key=_result_key)

    accepted = [r for r in results if r.accepted]
    if accepted:
        y = [r.observation.flash_rate for r in accepted]
        before = innovation_stats(y, [r.h_background for r in accepted])
        after = innovation_stats(y, [r.h_analysis for r in accepted])
        summary.innovation_before_max = before.max
        summary.innovation_before_mean = before.mean
        summary.innovation_after_max = after.max
        summary.innovation_after_mean = after.mean
    return results, summary


def write_summary_table(results: Sequence[RetrievalResult], path):
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["i", "j", "qc_status", "h_bg", "h_an", "iters"])
        for r in results:
            iters = r.minimize_report.iterations_used if r.minimize_report else 0
            writer.writerow([r.cell[0], r.cell[1], r.qc_status,
                             repr(float(r.h_background)), repr(float(r.h_analysis)), iters])
