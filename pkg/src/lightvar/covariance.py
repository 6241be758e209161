"""Background error covariance: NMC estimate, EOF square root, recursive filter.

The control-variable transform maps a control vector v of shape
(n_modes, nx, ny) to a temperature increment of shape (nx, ny, n_levels):

    dx = F_h  S  U_v v

where U_v holds the leading vertical EOFs scaled by the square root of
their variances, S is an optional per-level scaling, and F_h is a
normalized periodic recursive filter applied along both horizontal axes.
F_h runs ``filter_passes`` passes at lengthscale L / sqrt(2), so the
implied correlation F_h F_h^T has ``2 * filter_passes`` passes at
lengthscale L and unit variance.
"""

from dataclasses import dataclass
from typing import Optional

import numpy as np

from .errors import InsufficientSamplesError, ShapeMismatchError


@dataclass(frozen=True)
class ForecastPairSet:
    """Differences of 12 h and 24 h forecasts valid at the same time."""

    samples: np.ndarray  # (n_samples, n_levels), K

    def __post_init__(self):
        s = np.atleast_2d(np.asarray(self.samples, dtype=float))
        object.__setattr__(self, "samples", s)
        if s.shape[0] < 2:
            raise InsufficientSamplesError("NMC estimation needs at least two samples")

    @property
    def n_levels(self) -> int:
        return self.samples.shape[1]

    @classmethod
    def from_forecasts(cls, fc12, fc24):
        """Build samples from paired 12 h / 24 h forecast columns (..., n_levels)."""
        fc12 = np.asarray(fc12, dtype=float)
        fc24 = np.asarray(fc24, dtype=float)
        if fc12.shape != fc24.shape:
            raise ShapeMismatchError("forecast arrays differ in shape")
        diff = fc12 - fc24
        return cls(diff.reshape(-1, diff.shape[-1]))


@dataclass(frozen=True)
class VerticalCovariance:
    matrix: np.ndarray
    correlation: np.ndarray
    eigenvalues: np.ndarray  # descending
    eigenvectors: np.ndarray

    @property
    def n_levels(self) -> int:
        return self.matrix.shape[0]

    @classmethod
    def from_matrix(cls, matrix) -> "VerticalCovariance":
        c = np.asarray(matrix, dtype=float)
        if c.ndim != 2 or c.shape[0] != c.shape[1]:
            raise ShapeMismatchError("covariance must be square")
        c = 0.5 * (c + c.T)
        w, v = np.linalg.eigh(c)
        order = np.argsort(w)[::-1]
        w, v = w[order], v[:, order]
        w = np.where(w > 0, w, 0.0)
        return cls(c, correlation_from_covariance(c), w, v)

    def pseudo_inverse_apply(self, x, rtol=1e-10):
        """B^+ x through the eigendecomposition; near-null modes are dropped."""
        keep = self.eigenvalues > rtol * max(self.eigenvalues[0], 0.0)
        vk = self.eigenvectors[:, keep]
        return vk @ ((vk.T @ x) / self.eigenvalues[keep])

    def range_projector(self, rtol=1e-10):
        keep = self.eigenvalues > rtol * max(self.eigenvalues[0], 0.0)
        vk = self.eigenvectors[:, keep]
        return vk @ vk.T

    def write_correlation(self, path):
        np.savetxt(path, self.correlation, delimiter=",", fmt="%.10f")


def correlation_from_covariance(c):
    std = np.sqrt(np.clip(np.diag(c), 0.0, None))
    with np.errstate(divide="ignore", invalid="ignore"):
        corr = c / np.outer(std, std)
    corr[~np.isfinite(corr)] = 0.0
    corr = np.clip(corr, -1.0, 1.0)
    np.fill_diagonal(corr, 1.0)
    return corr


def nmc_vertical_covariance(pairs: ForecastPairSet) -> VerticalCovariance:
    """Vertical B as one half of the sample covariance of forecast differences."""
    if not isinstance(pairs, ForecastPairSet):
        pairs = ForecastPairSet(pairs)
    cov = 0.5 * np.cov(pairs.samples, rowvar=False, ddof=1)
    return VerticalCovariance.from_matrix(np.atleast_2d(cov))


def gaussian_vertical_covariance(height, std=1.0, lengthscale=1500.0, nugget=0.0):
    """Analytic B with Gaussian vertical correlation, for tests and demos.

    A ``nugget`` fraction of the variance is uncorrelated between levels,
    which bounds the condition number.
    """
    z = np.asarray(height, dtype=float)
    std = np.broadcast_to(np.asarray(std, dtype=float), z.shape)
    corr = np.exp(-0.5 * ((z[:, None] - z[None, :]) / lengthscale) ** 2)
    corr = (1.0 - nugget) * corr + nugget * np.eye(z.size)
    return VerticalCovariance.from_matrix(corr * np.outer(std, std))


def factor_vertical_sqrt(cov: VerticalCovariance, mode_fraction=0.99):
    """Leading EOFs times sqrt(variance), shape (n_levels, n_modes).

    Keeps the fewest leading modes that both capture ``mode_fraction`` of
    the total variance and leave a relative Frobenius reconstruction error
    of at most ``1 - mode_fraction``. Zero-variance modes are never kept.
    """
    if not 0.0 < mode_fraction <= 1.0:
        raise ValueError("mode_fraction must lie in (0, 1]")
    w = cov.eigenvalues
    total = w.sum()
    if total <= 0:
        return np.zeros((cov.n_levels, 0))
    captured = np.cumsum(w) / total
    tail_sq = np.concatenate([np.cumsum((w ** 2)[::-1])[::-1][1:], [0.0]])
    frob_err = np.sqrt(tail_sq / np.sum(w ** 2))
    tol = 1e-12
    ok = (captured >= mode_fraction - tol) & (frob_err <= 1.0 - mode_fraction + tol)
    n_modes = int(np.argmax(ok)) + 1 if np.any(ok) else w.size
    n_modes = min(n_modes, int(np.count_nonzero(w > 0)))
    return cov.eigenvectors[:, :n_modes] * np.sqrt(w[:n_modes])


def filter_coefficient(lengthscale, passes):
    """Smoothing coefficient of an n-pass first-order recursive filter.

    Each forward+backward pass of y_i = a y_{i-1} + (1 - a) x_i adds a
    variance of 2a / (1 - a)**2 cells**2; n passes match a Gaussian of
    standard deviation ``lengthscale`` when that sum equals lengthscale**2.
    """
    if lengthscale <= 0:
        raise ValueError("lengthscale must be positive")
    e = passes / lengthscale ** 2
    return 1.0 + e - np.sqrt(e * (e + 2.0))


def _sweep_forward(x, a, axis):
    """Periodic y_i = a y_{i-1} + (1 - a) x_i along ``axis``, solved exactly."""
    x = np.moveaxis(x, axis, 0)
    n = x.shape[0]
    powers = a ** np.arange(n)
    # wrap-around start: y_0 = (1 - a) / (1 - a^n) * sum_j a^j x_{-j}
    idx = (-np.arange(n)) % n
    y = np.empty_like(x)
    y[0] = (1 - a) / (1 - a ** n) * np.tensordot(powers, x[idx], axes=(0, 0))
    for i in range(1, n):
        y[i] = a * y[i - 1] + (1 - a) * x[i]
    return np.moveaxis(y, 0, axis)


def _sweep_backward(x, a, axis):
    x = np.moveaxis(x, axis, 0)
    y = _sweep_forward(x[::-1], a, 0)[::-1]
    return np.moveaxis(y, 0, axis)


def _smooth_axis(field, a, passes, axis):
    for _ in range(passes):
        field = _sweep_backward(_sweep_forward(field, a, axis), a, axis)
    return field


def recursive_filter_apply(field, lengthscale, passes=4, axes=(0, 1)):
    """Periodic recursive smoother along the given axes.

    Each pass is a forward sweep followed by the matching backward sweep,
    so the operator is symmetric with unit row sums: constants are kept and
    the output stays within the input range.
    """
    out = np.asarray(field, dtype=float)
    if passes == 0:
        return out.copy()
    a = filter_coefficient(lengthscale, passes)
    for axis in axes:
        out = _smooth_axis(out, a, passes, axis)
    return out


def _kernel_norm(n, a, passes):
    """1 / sqrt(sum of squared kernel weights) of the 1-D periodic smoother."""
    impulse = np.zeros(n)
    impulse[0] = 1.0
    k = _smooth_axis(impulse, a, passes, 0)
    return 1.0 / np.sqrt(np.sum(k ** 2))


@dataclass(frozen=True)
class CvtSpec:
    vertical_sqrt: np.ndarray  # (n_levels, n_modes)
    horizontal_lengthscale: float = 2.0
    filter_passes: int = 4
    variance_scale: Optional[np.ndarray] = None

    def __post_init__(self):
        u = np.atleast_2d(np.asarray(self.vertical_sqrt, dtype=float))
        object.__setattr__(self, "vertical_sqrt", u)
        if self.horizontal_lengthscale <= 0:
            raise ValueError("horizontal_lengthscale must be positive")
        if u.shape[1] > u.shape[0]:
            raise ValueError("more modes than levels")
        scale = (np.ones(u.shape[0]) if self.variance_scale is None
                 else np.asarray(self.variance_scale, dtype=float))
        if scale.shape != (u.shape[0],):
            raise ShapeMismatchError("variance_scale must have n_levels entries")
        object.__setattr__(self, "variance_scale", scale)

    @property
    def n_levels(self) -> int:
        return self.vertical_sqrt.shape[0]

    @property
    def n_modes(self) -> int:
        return self.vertical_sqrt.shape[1]

    def control_size(self, grid_shape) -> int:
        nx, ny = grid_shape
        return self.n_modes * nx * ny


def _horizontal_sqrt(field, spec: CvtSpec, grid_shape):
    """Normalized square-root horizontal filter on (nx, ny, ...) arrays."""
    if spec.filter_passes == 0:
        return field.copy()
    nx, ny = grid_shape
    half_l = spec.horizontal_lengthscale / np.sqrt(2.0)
    a = filter_coefficient(half_l, spec.filter_passes)
    norm = _kernel_norm(nx, a, spec.filter_passes) * _kernel_norm(ny, a, spec.filter_passes)
    out = _smooth_axis(field, a, spec.filter_passes, 0)
    out = _smooth_axis(out, a, spec.filter_passes, 1)
    return norm * out


def cvt_apply(v, spec: CvtSpec, grid_shape) -> np.ndarray:
    """Control vector (n_modes, nx, ny) or flat -> increment (nx, ny, n_levels)."""
    nx, ny = grid_shape
    v = np.asarray(v, dtype=float)
    if v.size != spec.control_size(grid_shape):
        raise ShapeMismatchError(
            f"control vector has {v.size} entries, expected "
            f"{spec.control_size(grid_shape)}")
    v = v.reshape(spec.n_modes, nx, ny)
    column = np.einsum("lm,mij->ijl", spec.vertical_sqrt, v)
    column *= spec.variance_scale
    return _horizontal_sqrt(column, spec, grid_shape)


def cvt_adjoint(dx_star, spec: CvtSpec, grid_shape) -> np.ndarray:
    """Transpose of :func:`cvt_apply`; returns shape (n_modes, nx, ny)."""
    nx, ny = grid_shape
    dx_star = np.asarray(dx_star, dtype=float)
    if dx_star.shape != (nx, ny, spec.n_levels):
        raise ShapeMismatchError(
            f"increment has shape {dx_star.shape}, expected "
            f"{(nx, ny, spec.n_levels)}")
    h = _horizontal_sqrt(dx_star, spec, grid_shape)
    h = h * spec.variance_scale
    return np.einsum("lm,ijl->mij", spec.vertical_sqrt, h)


def implied_variance(spec: CvtSpec) -> np.ndarray:
    """Per-level variance of the covariance U U^T (K^2)."""
    return spec.variance_scale ** 2 * np.sum(spec.vertical_sqrt ** 2, axis=1)
