"""Independent reference computations used to freeze expected values.

Nothing here calls into the code paths it is used to check, apart from the
shared thermodynamic constants and the saturation formula.
"""

import numpy as np

from lightvar.thermo import CP, EPS, G, KAPPA, LV, saturation_vapor_pressure


def _rs(t, p):
    es = saturation_vapor_pressure(t)
    return EPS * es / (p - es)


def _moist_slope(t, p, h=1e-3):
    """dT/dp along constant ln(theta_e), partial derivatives by differencing."""
    def f(tt, pp):
        return np.log(tt) - KAPPA * np.log(pp) + LV * _rs(tt, pp) / (CP * tt)
    f_t = (f(t + h, p) - f(t - h, p)) / (2 * h)
    f_p = (f(t, p + 1.0) - f(t, p - 1.0)) / 2.0
    return -f_p / f_t


def fine_step_parcel(columns, max_step=1.0):
    """Lift the surface parcel of every column in pressure steps <= max_step Pa.

    Dry ascent integrates dT/dp = kappa T / p; once r_s(T, p) <= q0 the parcel
    follows dT/dp from the total differential of ln(theta_e) (RK4). The
    columns are advanced together, so they must share the level count.
    Returns parcel temperatures at the environment levels, shape (m, n).
    """
    p_env = np.array([c.pressure for c in columns])
    t = np.array([c.temperature[0] for c in columns], dtype=float)
    q0 = np.array([c.vapor_mixing_ratio[0] for c in columns])
    m, n = p_env.shape
    out = np.empty((m, n))
    out[:, 0] = t
    p = p_env[:, 0].copy()
    sat = _rs(t, p) <= q0

    def slope(tt, pp, moist):
        return np.where(moist, _moist_slope(tt, pp), KAPPA * tt / pp)

    for k in range(n - 1):
        dp_total = p_env[:, k + 1] - p_env[:, k]
        nsub = int(np.ceil(np.max(np.abs(dp_total)) / max_step))
        h = dp_total / nsub
        for _ in range(nsub):
            k1 = slope(t, p, sat)
            k2 = slope(t + 0.5 * h * k1, p + 0.5 * h, sat)
            k3 = slope(t + 0.5 * h * k2, p + 0.5 * h, sat)
            k4 = slope(t + h * k3, p + h, sat)
            t = t + h / 6.0 * (k1 + 2 * k2 + 2 * k3 + k4)
            p = p + h
            sat = sat | (_rs(t, p) <= q0)
        p = p_env[:, k + 1].copy()
        out[:, k + 1] = t
    return out


def cape_from_parcel(column, t_parcel, lcl_index):
    """Trapezoid CAPE over the first positive area above the LCL level."""
    b = (t_parcel - column.temperature) / column.temperature
    z = column.geopotential_height
    start = max(lcl_index, 1)
    k = start
    while k < b.size and b[k] <= 0:
        k += 1
    if k >= b.size - 1:
        return 0.0
    total = 0.0
    while k < b.size - 1:
        upper = max(b[k + 1], 0.0)
        total += 0.5 * (b[k] + upper) * (z[k + 1] - z[k])
        if b[k + 1] <= 0:
            break
        k += 1
    return G * total


def oracle_lcl_index(column, step=1.0):
    """First level at or above the 1-Pa-resolved dry-adiabatic saturation point."""
    t0, p0, q0 = column.temperature[0], column.pressure[0], column.vapor_mixing_ratio[0]
    p = p0
    while _rs(t0 * (p / p0) ** KAPPA, p) > q0:
        p -= step
    return int(np.argmax(column.pressure <= p))


def fine_step_cape(columns):
    tp = fine_step_parcel(columns)
    return np.array([cape_from_parcel(c, tp[i], oracle_lcl_index(c))
                     for i, c in enumerate(columns)])


def flash_rate_scalar(cape, c=5e-7, a=0.677, b=17.286, k=4.55):
    """Direct scalar evaluation of the power law; plain-float arithmetic."""
    import math
    return c * (a * math.sqrt(2.0 * cape) - b) ** k


def dense_circulant_smoother(n, alpha):
    """Dense matrix of one forward+backward periodic first-order smoother."""
    shift = np.roll(np.eye(n), 1, axis=0)  # (S x)_i = x_{i-1}
    fwd = (1 - alpha) * np.linalg.inv(np.eye(n) - alpha * shift)
    return fwd.T @ fwd
