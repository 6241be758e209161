"""Lightning observation operator: flash rate from column CAPE.

    H(X) = c * (a * sqrt(2 * CAPE(X)) - b) ** k

The bracket is the updraft speed estimated from CAPE; it is positive only
above ``cape_min = b**2 / (2 a**2)``. Only the temperature profile is a
control variable, so the tangent-linear and adjoint act on temperature.
Both linearize with the parcel branches (LCL level, LFC/EL, dry or moist
ascent at each level) frozen at the base state, which makes the adjoint
an exact transpose of the tangent-linear.
"""

import csv
from dataclasses import dataclass
from typing import Callable, Optional, Sequence

import numpy as np

from .errors import BelowThresholdError, DegenerateDirectionError
from .thermo import AtmosColumn, cape_adjoint, cape_tl, compute_cape


@dataclass(frozen=True)
class LightningOperatorParams:
    coefficient: float = 5.0e-7
    slope: float = 0.677
    offset: float = 17.286
    exponent: float = 4.55
    cape_min: float = 325.973

    def __post_init__(self):
        for name in ("coefficient", "slope", "offset", "exponent", "cape_min"):
            if not getattr(self, name) > 0:
                raise ValueError(f"{name} must be strictly positive")

    @property
    def bracket_zero(self) -> float:
        """CAPE at which the updraft bracket vanishes, b**2 / (2 a**2)."""
        return self.offset ** 2 / (2.0 * self.slope ** 2)


DEFAULT_PARAMS = LightningOperatorParams()


def updraft_bracket(cape, params=DEFAULT_PARAMS):
    return params.slope * np.sqrt(2.0 * cape) - params.offset


def flash_rate_from_cape(cape: float, params=DEFAULT_PARAMS) -> float:
    """Flash rate, flashes (9 km)^-2 min^-1, for a CAPE value (J/kg)."""
    if cape < params.cape_min:
        raise BelowThresholdError(
            f"CAPE {cape:.3f} J/kg below threshold {params.cape_min} J/kg")
    return _flash_unchecked(cape, params)


def _flash_unchecked(cape, params):
    bracket = max(updraft_bracket(cape, params), 0.0)
    return params.coefficient * bracket ** params.exponent


def flash_rate_dcape(cape: float, params=DEFAULT_PARAMS) -> float:
    """d(flash rate)/d(CAPE); zero where the bracket is not positive."""
    bracket = updraft_bracket(cape, params)
    if bracket <= 0:
        return 0.0
    return (params.coefficient * params.exponent
            * bracket ** (params.exponent - 1.0)
            * params.slope / np.sqrt(2.0 * cape))


def extended_flash_rate(column: AtmosColumn, params=DEFAULT_PARAMS):
    """Flash rate continued by zero below the threshold, with its gradient.

    Used inside minimizations, where trial columns may dip below the CAPE
    gate. Returns (value, gradient with respect to temperature).
    """
    diag = compute_cape(column)
    value = _flash_unchecked(diag.cape, params) if diag.cape > 0 else 0.0
    slope = flash_rate_dcape(diag.cape, params) if diag.cape > 0 else 0.0
    grad = cape_adjoint(column, diag, slope) if slope else np.zeros(column.n_levels)
    return value, grad


def _screened(column, params, strict):
    diag = compute_cape(column)
    below = diag.cape <= params.cape_min if strict else diag.cape < params.cape_min
    if below:
        rel = ">" if strict else ">="
        raise BelowThresholdError(
            f"CAPE {diag.cape:.3f} J/kg, operator requires CAPE {rel} "
            f"{params.cape_min} J/kg")
    return diag


def flash_rate(column: AtmosColumn, params=DEFAULT_PARAMS) -> float:
    """Simulated flash rate for a column; raises below the CAPE gate."""
    diag = _screened(column, params, strict=False)
    return _flash_unchecked(diag.cape, params)


def flash_rate_tl(column: AtmosColumn, dt, params=DEFAULT_PARAMS) -> float:
    """Tangent-linear of :func:`flash_rate` along temperature direction dt.

    Undefined at CAPE exactly equal to the threshold, so that case raises.
    """
    dt = np.asarray(dt, dtype=float)
    if dt.shape != (column.n_levels,):
        raise ValueError("perturbation length must equal n_levels")
    diag = _screened(column, params, strict=True)
    return flash_rate_dcape(diag.cape, params) * cape_tl(column, diag, dt)


def flash_rate_adjoint(column: AtmosColumn, d_flash_star: float,
                       params=DEFAULT_PARAMS) -> np.ndarray:
    """Adjoint of :func:`flash_rate_tl`: temperature sensitivities."""
    diag = _screened(column, params, strict=True)
    cape_star = flash_rate_dcape(diag.cape, params) * float(d_flash_star)
    return cape_adjoint(column, diag, cape_star)


@dataclass(frozen=True)
class AlphaTestResult:
    alphas: np.ndarray
    f: np.ndarray
    log10_error: np.ndarray

    def write(self, path):
        with open(path, "w", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow(["alpha", "F", "log10_abs_1_minus_F"])
            for row in zip(self.alphas, self.f, self.log10_error):
                writer.writerow([repr(float(v)) for v in row])


def alpha_linearity_test(column: AtmosColumn, dt, alphas: Sequence[float],
                         params=DEFAULT_PARAMS,
                         forward: Optional[Callable] = None,
                         tangent: Optional[Callable] = None) -> AlphaTestResult:
    """Ratio of finite-difference to tangent-linear change of the operator.

    F(alpha) = (H(x + alpha dx) - H(x)) / (alpha * H' dx)

    ``forward(temperature)`` and ``tangent(dt)`` default to the lightning
    operator around ``column``; pass replacements to test another operator.
    """
    dt = np.asarray(dt, dtype=float)
    t0 = column.temperature
    if forward is None:
        def forward(t):
            return flash_rate(column.with_temperature(t), params)
    if tangent is None:
        def tangent(d):
            return flash_rate_tl(column, d, params)

    h0 = forward(t0)
    hd = tangent(dt)
    if hd == 0:
        raise DegenerateDirectionError("tangent-linear response is zero")
    alphas = np.asarray(alphas, dtype=float)
    f = np.array([(forward(t0 + a * dt) - h0) / (a * hd) for a in alphas])
    with np.errstate(divide="ignore"):
        err = np.log10(np.abs(1.0 - f))
    return AlphaTestResult(alphas, f, err)
