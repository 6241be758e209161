"""Dot-product adjoint checks for every linear operator in the package.

For a linear map L and its claimed adjoint L*, the check compares
<L x, y> with <x, L* y> for random x and y. The relative gap is at
rounding level when L* is the exact transpose.
"""

from typing import Callable, Dict, List

import numpy as np

from .covariance import CvtSpec, cvt_adjoint, cvt_apply, recursive_filter_apply
from .obs_operator import DEFAULT_PARAMS, flash_rate_adjoint, flash_rate_tl
from .soundings import sounding_corpus
from .thermo import compute_cape
from .toy_model import GridState, ModelConfig, integrate, propagate_adjoint, propagate_tl

COMPONENTS = ("operator", "filter", "cvt", "model")


def dot_product_gap(lx_y: float, x_lsy: float) -> float:
    """Relative difference of the two inner products."""
    scale = max(abs(lx_y), abs(x_lsy), np.finfo(float).tiny)
    return abs(lx_y - x_lsy) / scale


def _operator_cases(rng, n_cases, params):
    errors = []
    columns = [c for c in sounding_corpus(3 * n_cases, seed=int(rng.integers(2**31)))
               if compute_cape(c).cape > params.cape_min]
    for col in columns[:n_cases]:
        dx = rng.standard_normal(col.n_levels)
        w = float(rng.standard_normal())
        lhs = flash_rate_tl(col, dx, params) * w
        rhs = float(dx @ flash_rate_adjoint(col, w, params))
        errors.append(dot_product_gap(lhs, rhs))
    return errors


def _filter_cases(rng, n_cases):
    errors = []
    for _ in range(n_cases):
        shape = tuple(int(n) for n in rng.integers(4, 20, size=2))
        length = float(rng.uniform(0.5, 5.0))
        passes = int(rng.integers(1, 5))
        x = rng.standard_normal(shape)
        y = rng.standard_normal(shape)
        lhs = float(np.sum(recursive_filter_apply(x, length, passes) * y))
        rhs = float(np.sum(x * recursive_filter_apply(y, length, passes)))
        errors.append(dot_product_gap(lhs, rhs))
    return errors


def _cvt_cases(rng, n_cases):
    errors = []
    for _ in range(n_cases):
        nx, ny = (int(n) for n in rng.integers(3, 12, size=2))
        n_levels = int(rng.integers(3, 15))
        n_modes = int(rng.integers(1, n_levels + 1))
        spec = CvtSpec(rng.standard_normal((n_levels, n_modes)),
                       horizontal_lengthscale=float(rng.uniform(0.5, 4.0)),
                       filter_passes=int(rng.integers(0, 5)),
                       variance_scale=rng.uniform(0.5, 2.0, n_levels))
        v = rng.standard_normal(spec.control_size((nx, ny)))
        w = rng.standard_normal((nx, ny, n_levels))
        lhs = float(np.sum(cvt_apply(v, spec, (nx, ny)) * w))
        rhs = float(v @ cvt_adjoint(w, spec, (nx, ny)).ravel())
        errors.append(dot_product_gap(lhs, rhs))
    return errors


def _model_cases(rng, n_cases):
    errors = []
    for k in range(n_cases):
        nx, ny, nz = (int(n) for n in rng.integers(3, 10, size=3))
        n_steps = int(rng.integers(1, 12))
        wind = rng.uniform(-1.0, 1.0, size=2)
        trajectory = None
        if k % 2:
            # weakly nonlinear variant: TL and adjoint depend on the trajectory
            z = np.linspace(0.0, 1.0e4, nz)
            ref = GridState(np.linspace(1e5, 3e4, nz), z,
                            280.0 + rng.standard_normal((nx, ny, nz)),
                            np.full((nx, ny, nz), 1e-3))
            cfg = ModelConfig(wind_u=wind[0], wind_v=wind[1],
                              relaxation_rate=float(rng.uniform(0.0, 0.2)),
                              reference=ref, quadratic_coeff=float(rng.uniform(0.0, 0.05)))
            start = ref.add_increment(rng.standard_normal(ref.shape))
            trajectory = integrate(start, n_steps, cfg)
        else:
            cfg = ModelConfig(wind_u=wind[0], wind_v=wind[1])
        x = rng.standard_normal((nx, ny, nz))
        y = rng.standard_normal((nx, ny, nz))
        lhs = float(np.sum(propagate_tl(x, n_steps, cfg, trajectory) * y))
        rhs = float(np.sum(x * propagate_adjoint(y, n_steps, cfg, trajectory)))
        errors.append(dot_product_gap(lhs, rhs))
    return errors


def adjoint_suite(components=COMPONENTS, n_cases: int = 100, seed: int = 0,
                  params=DEFAULT_PARAMS) -> Dict[str, List[float]]:
    """Relative dot-product gaps per component over ``n_cases`` seeded cases."""
    runners: Dict[str, Callable] = {
        "operator": lambda rng: _operator_cases(rng, n_cases, params),
        "filter": lambda rng: _filter_cases(rng, n_cases),
        "cvt": lambda rng: _cvt_cases(rng, n_cases),
        "model": lambda rng: _model_cases(rng, n_cases),
    }
    out = {}
    for name in components:
        if name not in runners:
            raise ValueError(f"unknown component {name!r}; choose from {COMPONENTS}")
        # one stream per component, so selecting a subset does not change cases
        rng = np.random.default_rng([seed, COMPONENTS.index(name)])
        out[name] = runners[name](rng)
    return out
