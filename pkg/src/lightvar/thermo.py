"""Column thermodynamics: surface-parcel CAPE and dry-adiabatic adjustment.

The parcel is lifted from the lowest model level. Below the lifting
condensation level (LCL) it follows a dry adiabat; above it, it follows the
pseudo-adiabat that conserves the equivalent potential temperature

    theta_e = T (p_ref / p)**kappa * exp(Lv * r_s(T, p) / (cp * T))

with the saturation vapour pressure from Bolton's formula,

    e_s(T) = 611.2 * exp(17.67 * (T - 273.15) / (T - 29.65))   [Pa].

No virtual-temperature correction is applied. The CAPE integral is a
trapezoid in height over the first contiguous positive-buoyancy layer above
the LCL, with the LFC and EL taken at the model levels where the sign of
the buoyancy changes.
"""

from dataclasses import dataclass, field
from typing import Optional

import numpy as np
from scipy.optimize import brentq

from .errors import InvalidProfileError

G = 9.80665
CP = 1004.5
RD = 287.04
RV = 461.5
EPS = RD / RV
LV = 2.501e6
P_REF = 1.0e5
KAPPA = RD / CP
DRY_LAPSE_RATE = G / CP  # K/m

T_MIN, T_MAX = 150.0, 350.0

_BISECT_ITERS = 14
_NEWTON_ITERS = 4


@dataclass(frozen=True)
class AtmosColumn:
    """One vertical profile, ordered surface first.

    Parameters
    ----------
    pressure : array
        Pressure (Pa), strictly decreasing with level index.
    temperature : array
        Temperature (K).
    vapor_mixing_ratio : array
        Water vapour mixing ratio (kg/kg).
    geopotential_height : array
        Height (m), strictly increasing with level index.
    """

    pressure: np.ndarray
    temperature: np.ndarray
    vapor_mixing_ratio: np.ndarray
    geopotential_height: np.ndarray

    def __post_init__(self):
        for name in ("pressure", "temperature", "vapor_mixing_ratio",
                     "geopotential_height"):
            arr = np.asarray(getattr(self, name), dtype=float)
            if arr.ndim != 1:
                raise InvalidProfileError(f"{name} must be one-dimensional")
            object.__setattr__(self, name, arr)
        n = self.pressure.size
        if not (self.temperature.size == self.vapor_mixing_ratio.size
                == self.geopotential_height.size == n):
            raise InvalidProfileError("profile arrays differ in length")

    @property
    def n_levels(self) -> int:
        return self.pressure.size

    def validate(self) -> "AtmosColumn":
        """Raise InvalidProfileError unless every column invariant holds."""
        p, t = self.pressure, self.temperature
        q, z = self.vapor_mixing_ratio, self.geopotential_height
        if self.n_levels < 2:
            raise InvalidProfileError("a column needs at least two levels")
        if not (np.all(np.isfinite(p)) and np.all(np.isfinite(z))
                and np.all(np.isfinite(q))):
            raise InvalidProfileError("non-finite pressure, height or moisture")
        if np.any(np.diff(p) >= 0):
            raise InvalidProfileError("pressure must strictly decrease upward")
        if np.any(np.diff(z) <= 0):
            raise InvalidProfileError("height must strictly increase upward")
        if p[-1] <= 0:
            raise InvalidProfileError("pressure must be positive")
        if not np.all(np.isfinite(t)) or t.min() < T_MIN or t.max() > T_MAX:
            raise InvalidProfileError(
                f"temperature outside [{T_MIN}, {T_MAX}] K")
        if np.any(q < 0):
            raise InvalidProfileError("negative mixing ratio")
        return self

    def with_temperature(self, temperature) -> "AtmosColumn":
        """Copy of the column with only the temperature profile replaced."""
        temperature = np.asarray(temperature, dtype=float)
        if temperature.shape != self.temperature.shape:
            raise InvalidProfileError("temperature profile has wrong length")
        return AtmosColumn(self.pressure, temperature,
                           self.vapor_mixing_ratio, self.geopotential_height)


@dataclass(frozen=True)
class ParcelDiagnostics:
    """Result of lifting the surface parcel through a column.

    ``weights`` holds the per-level trapezoid weights (already multiplied by
    g) such that ``cape == sum(weights * buoyancy)``; it is zero outside the
    positive area. ``parcel_sensitivity`` is d(parcel T)/d(surface T) along
    the frozen ascent path.
    """

    cape: float
    lcl_index: Optional[int]
    lfc_index: Optional[int]
    el_index: Optional[int]
    buoyancy: np.ndarray
    positive_mask: np.ndarray
    parcel_temperature: np.ndarray = field(repr=False)
    parcel_sensitivity: np.ndarray = field(repr=False)
    weights: np.ndarray = field(repr=False)
    lcl_pressure: Optional[float] = None


def saturation_vapor_pressure(t):
    """Bolton saturation vapour pressure over liquid water (Pa)."""
    return 611.2 * np.exp(17.67 * (t - 273.15) / (t - 29.65))


def saturation_vapor_pressure_dt(t):
    return saturation_vapor_pressure(t) * 17.67 * 243.5 / (t - 29.65) ** 2


def saturation_mixing_ratio(t, p):
    es = saturation_vapor_pressure(t)
    return EPS * es / (p - es)


def _rs_partials(t, p):
    """Saturation mixing ratio and its partial derivatives in T and p."""
    es = saturation_vapor_pressure(t)
    des = saturation_vapor_pressure_dt(t)
    denom = p - es
    rs = EPS * es / denom
    rs_t = EPS * p * des / denom ** 2
    rs_p = -EPS * es / denom ** 2
    return rs, rs_t, rs_p


def log_theta_e(t, p):
    """Natural log of the saturated equivalent potential temperature."""
    rs = saturation_mixing_ratio(t, p)
    return np.log(t) - KAPPA * np.log(p / P_REF) + LV * rs / (CP * t)


def log_theta_e_dt(t, p):
    rs, rs_t, _ = _rs_partials(t, p)
    return 1.0 / t + LV / CP * (rs_t / t - rs / t ** 2)


def exner(p):
    return (p / P_REF) ** KAPPA


def moist_adiabat_temperature(target_log_theta_e, p, t_hi):
    """Temperature on the pseudo-adiabat ``target_log_theta_e`` at pressures p.

    Vectorized bisection on [100 K, t_hi] narrows the bracket, then Newton
    steps (kept inside the bracket) polish the root to machine precision.
    Temperatures at which the saturation vapour pressure would exceed p
    count as too warm.
    """
    p = np.asarray(p, dtype=float)
    lo = np.full(p.shape, 100.0)
    hi = np.broadcast_to(np.asarray(t_hi, dtype=float), p.shape).copy()
    for _ in range(_BISECT_ITERS):
        mid = 0.5 * (lo + hi)
        es = saturation_vapor_pressure(mid)
        valid = es < 0.5 * p
        with np.errstate(divide="ignore", invalid="ignore"):
            g = np.where(valid, log_theta_e(mid, np.where(valid, p, 2 * es)),
                         np.inf)
        too_warm = g > target_log_theta_e
        hi = np.where(too_warm, mid, hi)
        lo = np.where(too_warm, lo, mid)
    t = 0.5 * (lo + hi)
    for _ in range(_NEWTON_ITERS):
        with np.errstate(divide="ignore", invalid="ignore", over="ignore"):
            step = (log_theta_e(t, p) - target_log_theta_e) / log_theta_e_dt(t, p)
        t_new = t - step
        t = np.where(np.isfinite(t_new), np.clip(t_new, lo, hi), t)
    return t


def _lcl_pressure(theta0, q0, p0, p_floor):
    """Pressure where the dry adiabat theta0 saturates at mixing ratio q0.

    Returns None when the parcel does not saturate above ``p_floor``.
    """
    def excess(p):
        return saturation_mixing_ratio(theta0 * exner(p), p) - q0

    if excess(p0) <= 0:
        return p0
    if q0 <= 0 or excess(p_floor) > 0:
        return None
    return brentq(excess, p_floor, p0, xtol=1e-10, rtol=4 * np.finfo(float).eps,
                  maxiter=200)


def lift_parcel(column: AtmosColumn):
    """Lift the lowest-level parcel; return (T_parcel, dT_parcel/dT_sfc, lcl_index, p_lcl).

    Derivatives are those of the frozen ascent: the dry/moist branch of each
    level is fixed, while the LCL pressure and the pseudo-adiabat move with
    the surface temperature.
    """
    p = column.pressure
    t0 = column.temperature[0]
    q0 = column.vapor_mixing_ratio[0]
    p0 = p[0]
    n = p.size
    pi0 = exner(p0)
    theta0 = t0 / pi0

    tp = theta0 * exner(p)
    sens = exner(p) / pi0
    tp[0] = t0
    sens[0] = 1.0

    p_lcl = _lcl_pressure(theta0, q0, p0, p[-1])
    if p_lcl is None:
        return tp, sens, None, None

    if p_lcl >= p0:
        # saturated at the surface: the parcel starts on its own pseudo-adiabat
        lte = log_theta_e(t0, p0)
        dlte_dt0 = log_theta_e_dt(t0, p0)
        t_top = t0
        lcl_index = 0
        moist = np.arange(n) >= 1
    else:
        rs, rs_t, rs_p = _rs_partials(theta0 * exner(p_lcl), p_lcl)
        pi_l = exner(p_lcl)
        t_lcl = theta0 * pi_l
        h_theta = rs_t * pi_l
        h_p = rs_t * theta0 * KAPPA * pi_l / p_lcl + rs_p
        dplcl_dtheta = -h_theta / h_p
        dtlcl_dtheta = pi_l + theta0 * KAPPA * pi_l / p_lcl * dplcl_dtheta
        lte = np.log(theta0) + LV * q0 / (CP * t_lcl)
        dlte_dt0 = (1.0 / theta0
                    - LV * q0 / (CP * t_lcl ** 2) * dtlcl_dtheta) / pi0
        t_top = t_lcl
        moist = p < p_lcl
        lcl_index = int(np.argmax(p <= p_lcl))

    if np.any(moist):
        tm = moist_adiabat_temperature(lte, p[moist], t_top)
        tp[moist] = tm
        sens[moist] = dlte_dt0 / log_theta_e_dt(tm, p[moist])
    return tp, sens, lcl_index, p_lcl


def positive_area(buoyancy, height, start):
    """Locate the first positive-buoyancy area at or above level ``start``.

    Returns (lfc_index, el_index, weights) with ``weights`` the trapezoid
    weights in height (not yet scaled by g); lfc/el are None when there is
    no area.
    """
    n = buoyancy.size
    weights = np.zeros(n)
    pos = np.nonzero(buoyancy[start:] > 0)[0]
    if pos.size == 0:
        return None, None, weights
    lfc = start + int(pos[0])
    above = np.nonzero(buoyancy[lfc + 1:] <= 0)[0]
    el = lfc + 1 + int(above[0]) if above.size else n - 1
    if el <= lfc:
        return None, None, weights
    dz = np.diff(height)
    for k in range(lfc, el):
        half = 0.5 * dz[k]
        weights[k] += half
        if buoyancy[k + 1] > 0:
            weights[k + 1] += half
    return lfc, el, weights


def compute_cape(column: AtmosColumn) -> ParcelDiagnostics:
    """Surface-based CAPE (J/kg) and its parcel-theory levels."""
    column.validate()
    t_env = column.temperature
    tp, sens, lcl, p_lcl = lift_parcel(column)
    buoyancy = (tp - t_env) / t_env
    start = max(lcl, 1) if lcl is not None else 1
    lfc, el, weights = positive_area(buoyancy, column.geopotential_height,
                                     start)
    weights = G * weights
    cape = float(np.dot(weights, buoyancy)) if lfc is not None else 0.0
    return ParcelDiagnostics(
        cape=cape,
        lcl_index=lcl,
        lfc_index=lfc,
        el_index=el,
        buoyancy=buoyancy,
        positive_mask=weights > 0,
        parcel_temperature=tp,
        parcel_sensitivity=sens,
        weights=weights,
        lcl_pressure=p_lcl,
    )


def cape_tl(column: AtmosColumn, diag: ParcelDiagnostics, dt) -> float:
    """Directional derivative of CAPE along temperature perturbation dt."""
    dt = np.asarray(dt, dtype=float)
    t_env = column.temperature
    dtp = diag.parcel_sensitivity * dt[0]
    db = dtp / t_env - diag.parcel_temperature * dt / t_env ** 2
    return float(np.dot(diag.weights, db))


def cape_adjoint(column: AtmosColumn, diag: ParcelDiagnostics,
                 cape_star: float) -> np.ndarray:
    """Transpose of :func:`cape_tl`."""
    t_env = column.temperature
    b_star = diag.weights * cape_star
    dt_star = -diag.parcel_temperature / t_env ** 2 * b_star
    tp_star = b_star / t_env
    dt_star[0] += np.dot(diag.parcel_sensitivity, tp_star)
    return dt_star


def dry_adiabatic_adjust(column: AtmosColumn) -> AtmosColumn:
    """Remove super-adiabatic layers by a bottom-up sweep.

    Wherever the lapse rate between two levels exceeds g/cp, the upper
    temperature is raised onto the dry adiabat through the lower one.
    """
    column.validate()
    t = column.temperature.copy()
    dz = np.diff(column.geopotential_height)
    for k in range(1, t.size):
        if (t[k - 1] - t[k]) / dz[k - 1] > DRY_LAPSE_RATE:
            t[k] = t[k - 1] - DRY_LAPSE_RATE * dz[k - 1]
    return column.with_temperature(t)


def max_lapse_rate(column: AtmosColumn) -> float:
    """Largest layer lapse rate -dT/dz in the column (K/m)."""
    return float(np.max(-np.diff(column.temperature)
                        / np.diff(column.geopotential_height)))
