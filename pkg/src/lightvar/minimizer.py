"""Limited-memory quasi-Newton conjugate-gradient minimization.

A Shanno-Phua style CONMIN: the search direction is the memoryless BFGS
update of a scaled identity, refreshed with a Beale restart pair, so only
two (s, y) pairs are kept. Restarts follow Powell's orthogonality test.
Steps come from a strong-Wolfe line search with cubic interpolation.
"""

import csv
from dataclasses import dataclass, field
from typing import Callable, List, Optional, Tuple

import numpy as np

from .errors import NonFiniteCostError

C1 = 1e-4
C2 = 0.9
POWELL_RESTART = 0.2

CONVERGED = "converged"
MAX_ITERATIONS = "max_iterations"
LINE_SEARCH_FAILURE = "line_search_failure"


@dataclass
class MinimizeProblem:
    """Cost/gradient contract for :func:`conmin_cg`.

    ``evaluate(x)`` returns ``(cost, gradient)``. Optional ``lower`` and
    ``upper`` bounds are never crossed by any evaluated point.
    """

    dimension: int
    evaluate: Callable[[np.ndarray], Tuple[float, np.ndarray]]
    max_iterations: int = 200
    gradient_norm_reduction_target: float = 1e-2
    cost_tolerance: float = 0.0
    lower: Optional[np.ndarray] = None
    upper: Optional[np.ndarray] = None

    def __post_init__(self):
        if self.dimension < 1:
            raise ValueError("dimension must be at least 1")


@dataclass
class MinimizeReport:
    iterations_used: int
    cost_initial: float
    cost_final: float
    grad_norm_initial: float
    grad_norm_final: float
    status: str
    evaluations: int = 0
    history: List[Tuple[int, float, float]] = field(default_factory=list)

    @property
    def converged(self) -> bool:
        return self.status == CONVERGED

    def iterations_to_cost_fraction(self, fraction=0.1) -> Optional[int]:
        """First iteration at which cost <= fraction * initial cost."""
        for it, cost, _ in self.history:
            if cost <= fraction * self.cost_initial:
                return it
        return None

    def write_trace(self, path):
        with open(path, "w", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow(["iter", "cost", "grad_norm"])
            for it, cost, gnorm in self.history:
                writer.writerow([it, repr(cost), repr(gnorm)])


class _Evaluator:
    def __init__(self, problem):
        self.problem = problem
        self.count = 0

    def __call__(self, x):
        self.count += 1
        f, g = self.problem.evaluate(x)
        f = float(f)
        g = np.asarray(g, dtype=float)
        return f, g


def _cubic_min(a, fa, da, b, fb, db):
    """Minimizer of the cubic interpolating (a, fa, da) and (b, fb, db)."""
    d1 = da + db - 3.0 * (fa - fb) / (a - b)
    disc = d1 * d1 - da * db
    if disc < 0:
        return None
    d2 = np.copysign(np.sqrt(disc), b - a)
    denom = db - da + 2.0 * d2
    if denom == 0:
        return None
    return b - (b - a) * (db + d2 - d1) / denom


def _line_search(evaluate, x, d, f0, g0, alpha1, alpha_max, lower, upper,
                 max_evals=30):
    """Strong-Wolfe search along d; returns (alpha, x, f, g) or None."""
    dphi0 = float(g0 @ d)

    def trial(alpha):
        xt = x + alpha * d
        if lower is not None:
            xt = np.maximum(xt, lower)
        if upper is not None:
            xt = np.minimum(xt, upper)
        f, g = evaluate(xt)
        if not np.isfinite(f) or not np.all(np.isfinite(g)):
            f = np.inf
        return xt, f, g, (float(g @ d) if np.isfinite(f) else np.inf)

    best = None  # best point satisfying sufficient decrease

    def note(alpha, xt, f, g):
        nonlocal best
        if f <= f0 + C1 * alpha * dphi0 and (best is None or f < best[2]):
            best = (alpha, xt, f, g)

    def zoom(lo, f_lo, d_lo, hi, f_hi, d_hi, evals):
        while evals < max_evals:
            width = hi - lo
            a = None
            if np.isfinite(f_hi) and np.isfinite(d_hi):
                a = _cubic_min(lo, f_lo, d_lo, hi, f_hi, d_hi)
            lo_b, hi_b = sorted((lo + 0.1 * width, hi - 0.1 * width))
            if a is None or not (lo_b <= a <= hi_b):
                a = 0.5 * (lo + hi)
            xt, f, g, dphi = trial(a)
            evals += 1
            note(a, xt, f, g)
            if f > f0 + C1 * a * dphi0 or f >= f_lo:
                hi, f_hi, d_hi = a, f, dphi
            else:
                if abs(dphi) <= -C2 * dphi0:
                    return a, xt, f, g
                if dphi * (hi - lo) >= 0:
                    hi, f_hi, d_hi = lo, f_lo, d_lo
                lo, f_lo, d_lo = a, f, dphi
            if abs(hi - lo) <= 1e-16 * max(1.0, abs(lo)):
                break
        return None

    def refine(alpha, f, dphi):
        # one cubic interpolation past an accepted first trial keeps
        # successive directions conjugate on near-quadratic costs
        a = _cubic_min(0.0, f0, dphi0, alpha, f, dphi)
        if a is None or not (0.0 < a <= alpha_max) or abs(a - alpha) <= 1e-12 * alpha:
            return None
        xt, fa, ga, da = trial(a)
        if (fa < f and fa <= f0 + C1 * a * dphi0
                and abs(da) <= -C2 * dphi0):
            return a, xt, fa, ga
        return None

    a_prev, f_prev, d_prev = 0.0, f0, dphi0
    alpha = min(alpha1, alpha_max)
    evals = 0
    while evals < max_evals:
        xt, f, g, dphi = trial(alpha)
        evals += 1
        note(alpha, xt, f, g)
        if f > f0 + C1 * alpha * dphi0 or (evals > 1 and f >= f_prev):
            found = zoom(a_prev, f_prev, d_prev, alpha, f, dphi, evals)
            break
        if abs(dphi) <= -C2 * dphi0:
            found = (alpha, xt, f, g)
            if evals == 1 and max_evals > 1:
                found = refine(alpha, f, dphi) or found
            break
        if dphi >= 0:
            found = zoom(alpha, f, dphi, a_prev, f_prev, d_prev, evals)
            break
        if alpha >= alpha_max:
            found = (alpha, xt, f, g)
            break
        a_prev, f_prev, d_prev = alpha, f, dphi
        alpha = min(4.0 * alpha, alpha_max)
    else:
        found = None
    return found if found is not None else best


def _bfgs_apply(base, s, y, v):
    """Inverse-BFGS update of the operator ``base`` by (s, y), applied to v."""
    rho = float(s @ y)
    bv = base(v)
    by = base(y)
    sv = float(s @ v)
    return (bv - (s * float(y @ bv) + by * sv) / rho
            + (1.0 + float(y @ by) / rho) * sv / rho * s)


def _max_step(x, d, lower, upper):
    alpha = np.inf
    if upper is not None:
        up = d > 0
        if np.any(up):
            alpha = min(alpha, np.min((upper[up] - x[up]) / d[up]))
    if lower is not None:
        dn = d < 0
        if np.any(dn):
            alpha = min(alpha, np.min((lower[dn] - x[dn]) / d[dn]))
    return alpha


def _project_direction(x, d, lower, upper):
    """Drop direction components that point out of the box at active bounds."""
    d = d.copy()
    if lower is not None:
        d[(x <= lower) & (d < 0)] = 0.0
    if upper is not None:
        d[(x >= upper) & (d > 0)] = 0.0
    return d


def conmin_cg(problem: MinimizeProblem, x0) -> Tuple[np.ndarray, MinimizeReport]:
    """Minimize ``problem`` from ``x0``.

    Stops when the gradient norm falls to ``gradient_norm_reduction_target``
    times its initial value, when the relative cost decrease of an iteration
    is at most ``cost_tolerance`` (disabled at 0), or after
    ``max_iterations``. Accepted iterates never increase the cost.
    """
    x = np.array(x0, dtype=float)
    if x.shape != (problem.dimension,):
        raise ValueError("x0 does not match the problem dimension")
    lower = None if problem.lower is None else np.broadcast_to(
        np.asarray(problem.lower, float), x.shape)
    upper = None if problem.upper is None else np.broadcast_to(
        np.asarray(problem.upper, float), x.shape)
    if lower is not None:
        x = np.maximum(x, lower)
    if upper is not None:
        x = np.minimum(x, upper)

    evaluate = _Evaluator(problem)
    f, g = evaluate(x)
    if not np.isfinite(f) or not np.all(np.isfinite(g)):
        raise NonFiniteCostError("cost or gradient is not finite at x0")
    gnorm0 = float(np.linalg.norm(g))
    history = [(0, f, gnorm0)]
    report = MinimizeReport(0, f, f, gnorm0, gnorm0, CONVERGED, 1, history)
    if gnorm0 == 0.0:
        return x, report

    target = problem.gradient_norm_reduction_target * gnorm0
    restart_pair = None
    since_restart = 0
    d = -g
    alpha1 = min(1.0, 1.0 / gnorm0)
    status = MAX_ITERATIONS
    it = 0
    gnorm = gnorm0
    fresh_descent = True  # d is the (projected) steepest-descent direction
    while it < problem.max_iterations:
        d = _project_direction(x, d, lower, upper)
        if not float(g @ d) < 0:
            d = _project_direction(x, -g, lower, upper)
            restart_pair = None
            fresh_descent = True
            if not float(g @ d) < 0:
                status = LINE_SEARCH_FAILURE
                break
        alpha_max = _max_step(x, d, lower, upper)
        if alpha_max <= 0:
            status = LINE_SEARCH_FAILURE
            break
        found = _line_search(evaluate, x, d, f, g, alpha1, alpha_max, lower, upper)
        if found is not None and not found[2] < f:
            found = None  # stagnation: the cost no longer resolves progress
        if found is None:
            if fresh_descent:
                status = LINE_SEARCH_FAILURE
                break
            # retry once along steepest descent before giving up
            d = -g
            restart_pair = None
            since_restart = 0
            fresh_descent = True
            alpha1 = min(1.0, 1.0 / gnorm)
            continue
        fresh_descent = False
        _, x_new, f_new, g_new = found
        it += 1
        s = x_new - x
        y = g_new - g
        g_old = g
        f_old = f
        x, f, g = x_new, f_new, g_new
        gnorm = float(np.linalg.norm(g))
        history.append((it, f, gnorm))
        if gnorm <= target:
            status = CONVERGED
            break
        if (problem.cost_tolerance > 0
                and f_old - f <= problem.cost_tolerance * max(1.0, abs(f_old))):
            status = CONVERGED
            break

        alpha1 = 1.0
        sy = float(s @ y)
        if sy <= 1e-300 or not np.isfinite(sy):
            d = -g
            restart_pair = None
            since_restart = 0
            fresh_descent = True
            alpha1 = min(1.0, 1.0 / gnorm)
            continue
        since_restart += 1
        restart = (restart_pair is None
                   or abs(float(g @ g_old)) >= POWELL_RESTART * gnorm ** 2
                   or since_restart >= problem.dimension)
        if restart:
            restart_pair = (s, y)
            since_restart = 0
            gamma = sy / float(y @ y)
            d = -_bfgs_apply(lambda v: gamma * v, s, y, g)
        else:
            sr, yr = restart_pair
            gamma = float(sr @ yr) / float(yr @ yr)

            def h_restart(v, sr=sr, yr=yr, gamma=gamma):
                return _bfgs_apply(lambda w: gamma * w, sr, yr, v)

            d = -_bfgs_apply(h_restart, s, y, g)

    report.iterations_used = it
    report.cost_final = f
    report.grad_norm_final = gnorm
    report.status = status
    report.evaluations = evaluate.count
    return x, report


def gradient_check(problem: MinimizeProblem, x0, epsilon=1e-5) -> float:
    """Largest component-wise relative gap between analytic and central-difference gradients."""
    x0 = np.asarray(x0, dtype=float)
    _, g = problem.evaluate(x0)
    g = np.asarray(g, dtype=float)
    if not np.all(np.isfinite(g)):
        raise NonFiniteCostError("gradient is not finite at x0")
    fd = np.empty_like(g)
    for i in range(x0.size):
        e = np.zeros_like(x0)
        e[i] = epsilon
        fp, _ = problem.evaluate(x0 + e)
        fm, _ = problem.evaluate(x0 - e)
        if not (np.isfinite(fp) and np.isfinite(fm)):
            raise NonFiniteCostError("cost is not finite near x0")
        fd[i] = (fp - fm) / (2.0 * epsilon)
    floor = 1e-8 * max(np.max(np.abs(g)), np.max(np.abs(fd)), 1e-300)
    denom = np.maximum(np.maximum(np.abs(g), np.abs(fd)), floor)
    return float(np.max(np.abs(g - fd) / denom))
