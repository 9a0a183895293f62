"""Sub-Gaussian vector algebra.

A random vector X is sub-Gaussian with mean mu and variance proxy S (symmetric
PSD) if

    E exp(l' (X - mu)) <= exp(l' S l / 2)   for all l.

This module holds the value types for scalar and matrix proxies, the exact
propagation rules (linear maps, conditionally sub-Gaussian sums), and the
empirical MGF calibration used to fit scalar proxies from noise samples.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.special import logsumexp

# Tolerances for the proxy validity checks. Asymmetry and negative eigenvalues
# below these are treated as round-off and repaired, anything larger is a bug.
SYM_TOL = 1e-10
PSD_TOL = 1e-10


def _as_matrix(p) -> np.ndarray:
    p = np.atleast_2d(np.asarray(p, dtype=float))
    if p.ndim != 2 or p.shape[0] != p.shape[1]:
        raise ValueError(f"expected a square matrix, got shape {p.shape}")
    return p


def _check_proxy(p: np.ndarray) -> np.ndarray:
    """Validate symmetry/PSD of a proxy matrix and clip round-off negatives."""
    scale = max(1.0, float(np.max(np.abs(p))) if p.size else 1.0)
    if np.max(np.abs(p - p.T)) > SYM_TOL * scale:
        raise ValueError("proxy matrix is not symmetric")
    p = 0.5 * (p + p.T)
    eigval, eigvec = np.linalg.eigh(p)
    if eigval[0] < -PSD_TOL * scale:
        raise ValueError(f"proxy matrix is not PSD (min eigenvalue {eigval[0]:.3e})")
    if eigval[0] < 0.0:
        # round-off repair only; keeps downstream Cholesky factorizations alive
        eigval = np.clip(eigval, 0.0, None)
        p = (eigvec * eigval) @ eigvec.T
        p = 0.5 * (p + p.T)
    return p


@dataclass(frozen=True)
class SubGaussianVector:
    """Mean vector and matrix variance proxy of a sub-Gaussian random vector."""

    mean: np.ndarray
    proxy: np.ndarray

    def __post_init__(self):
        mean = np.atleast_1d(np.asarray(self.mean, dtype=float))
        if mean.ndim != 1:
            raise ValueError("mean must be a vector")
        proxy = _check_proxy(_as_matrix(self.proxy))
        if proxy.shape != (mean.size, mean.size):
            raise ValueError(
                f"mean dimension {mean.size} does not match proxy shape {proxy.shape}"
            )
        object.__setattr__(self, "mean", mean)
        object.__setattr__(self, "proxy", proxy)

    @property
    def dim(self) -> int:
        return self.mean.size


@dataclass(frozen=True)
class ScalarProxy:
    """Scalar variance proxy sigma (so the matrix proxy is sigma^2 I)."""

    sigma: float

    def __post_init__(self):
        sigma = float(self.sigma)
        if not np.isfinite(sigma) or sigma < 0.0:
            raise ValueError(f"sigma must be finite and nonnegative, got {sigma}")
        object.__setattr__(self, "sigma", sigma)


def linear_transform(x: SubGaussianVector, a) -> SubGaussianVector:
    """Image of x under the linear map a: (mu, S) -> (a mu, a S a')."""
    a = np.atleast_2d(np.asarray(a, dtype=float))
    if a.shape[1] != x.dim:
        raise ValueError(f"map has {a.shape[1]} columns, vector has dimension {x.dim}")
    proxy = a @ x.proxy @ a.T
    return SubGaussianVector(a @ x.mean, 0.5 * (proxy + proxy.T))


def add_conditional(x: SubGaussianVector, y: SubGaussianVector) -> SubGaussianVector:
    """Sum of x and a conditionally-on-x sub-Gaussian y: proxies add.

    The caller asserts that y's proxy is valid for the conditional law of y
    given x; independence is the usual special case.
    """
    if x.dim != y.dim:
        raise ValueError(f"dimension mismatch: {x.dim} vs {y.dim}")
    return SubGaussianVector(x.mean + y.mean, x.proxy + y.proxy)


def scalar_to_matrix(s: ScalarProxy, n: int) -> np.ndarray:
    """Matrix proxy sigma^2 I_n equivalent to the scalar proxy."""
    if n < 1:
        raise ValueError("dimension must be >= 1")
    return s.sigma**2 * np.eye(n)


def matrix_to_scalar(p) -> ScalarProxy:
    """Scalar proxy sqrt(||S||_2) equivalent to the matrix proxy S."""
    p = _check_proxy(_as_matrix(p))
    top = float(np.linalg.eigvalsh(p)[-1])
    return ScalarProxy(np.sqrt(max(top, 0.0)))


@dataclass(frozen=True)
class CalibrationResult:
    sigma: float
    direction: np.ndarray  # unit vector achieving the max
    scale: float           # |lambda| at the max
    objective: float       # raw max of 2 ln MGF / |lambda|^2 (may dip < 0 on samples)


# smallest admissible scale (in per-direction standard deviations); the
# objective is 0/0 at lambda = 0 and catastrophically noisy just above it
MIN_SCALE = 1e-2


def _mgf_objective(centered: np.ndarray, dirs: np.ndarray, scales: np.ndarray):
    """2 ln( mean_i exp(l u'(s_i - mu)) ) / l^2 per direction u and scale c.

    Scales are measured in units of the per-direction sample deviation
    (l = c / std(u's)), which makes the fit equivariant under rescaling of
    the samples; with standardized projections z the objective factors as
    std^2 * 2 ln( mean exp(c z) ) / c^2. Directions where the projection is
    constant contribute 0. Returns (objective (n_dirs, n_scales), stds).
    """
    proj = centered @ dirs.T  # (N, n_dirs)
    n = centered.shape[0]
    stds = proj.std(axis=0)
    live = stds > 0.0
    z = np.zeros_like(proj)
    z[:, live] = proj[:, live] / stds[live]
    out = np.zeros((dirs.shape[0], scales.size))
    for j, c in enumerate(scales):
        out[live, j] = stds[live] ** 2 * 2.0 * (logsumexp(c * z[:, live], axis=0) - np.log(n)) / c**2
    return out, stds


def calibrate_details(
    samples,
    n_directions: int = 64,
    scale_grid=None,
    seed: int = 0,
) -> CalibrationResult:
    """Fit a scalar proxy to samples by maximizing the empirical MGF ratio.

    sigma^2 = max_lambda 2 ln( N^-1 sum_i exp(lambda'(s_i - mu_hat)) ) / |lambda|^2

    The max is searched over n_directions random unit directions plus the
    +-coordinate axes, crossed with scale_grid (in units of the per-direction
    sample deviation), then refined by golden-section in the scale along the
    best direction.
    """
    s = np.asarray(samples, dtype=float)
    if s.ndim == 1:
        s = s[:, None]
    if s.ndim != 2 or s.shape[0] < 2:
        raise ValueError("need at least two samples of equal dimension")
    if not np.all(np.isfinite(s)):
        raise ValueError("samples contain non-finite values")
    n_dim = s.shape[1]

    if scale_grid is None:
        scale_grid = np.logspace(np.log10(0.1), np.log10(3.0), 40)
    scales = np.asarray(scale_grid, dtype=float)
    scales = scales[scales >= MIN_SCALE]
    if scales.size == 0:
        raise ValueError(f"scale grid has no entries >= {MIN_SCALE}")
    scales = np.sort(scales)
    # at scale c the empirical MGF of a standardized sample carries relative
    # noise ~ sqrt((e^{c^2}-1)/N); scales past that 5% point only measure
    # their own sampling error, and the max would harvest it as fake proxy
    c_max = np.sqrt(np.log(1.0 + 0.0025 * s.shape[0]))
    if scales[0] <= c_max:
        scales = scales[scales <= c_max]
    else:
        scales = scales[:1]

    centered = s - s.mean(axis=0)
    if np.max(np.abs(centered)) == 0.0:
        # degenerate cloud: MGF of the centered samples is identically 1
        e0 = np.zeros(n_dim)
        e0[0] = 1.0
        return CalibrationResult(0.0, e0, scales[0], 0.0)

    rng = np.random.default_rng(seed)
    dirs = rng.standard_normal((n_directions, n_dim))
    dirs /= np.linalg.norm(dirs, axis=1, keepdims=True)
    axes = np.vstack([np.eye(n_dim), -np.eye(n_dim)])
    dirs = np.vstack([dirs, axes])

    grid, stds = _mgf_objective(centered, dirs, scales)
    i_best, j_best = np.unravel_index(np.argmax(grid), grid.shape)
    best_dir = dirs[i_best]

    # golden-section refinement of the scale on the winning direction
    proj = centered @ best_dir
    std_b = float(stds[i_best])
    if std_b == 0.0:
        return CalibrationResult(0.0, best_dir, float(scales[j_best]), 0.0)
    z_b = proj / std_b
    log_n = np.log(centered.shape[0])

    def obj(c: float) -> float:
        return std_b**2 * 2.0 * (logsumexp(c * z_b) - log_n) / c**2

    lo = scales[max(j_best - 1, 0)]
    hi = scales[min(j_best + 1, scales.size - 1)]
    if hi <= lo:
        hi = lo * (1.0 + 1e-9)
    invphi = (np.sqrt(5.0) - 1.0) / 2.0
    c1 = hi - invphi * (hi - lo)
    c2 = lo + invphi * (hi - lo)
    f1, f2 = obj(c1), obj(c2)
    for _ in range(60):
        if f1 >= f2:
            hi, c2, f2 = c2, c1, f1
            c1 = hi - invphi * (hi - lo)
            f1 = obj(c1)
        else:
            lo, c1, f1 = c1, c2, f2
            c2 = lo + invphi * (hi - lo)
            f2 = obj(c2)
    candidates = [
        (float(grid[i_best, j_best]), float(scales[j_best])),
        (f1, c1),
        (f2, c2),
    ]
    objective, scale = max(candidates)
    sigma = float(np.sqrt(max(objective, 0.0)))
    # report the raw maximizing |lambda|, not the standardized grid value
    return CalibrationResult(sigma, best_dir, float(scale) / std_b, float(objective))


def calibrate_scalar_proxy(samples, n_directions: int = 64, scale_grid=None, seed: int = 0) -> ScalarProxy:
    """Scalar proxy from samples; see calibrate_details for the search."""
    return ScalarProxy(calibrate_details(samples, n_directions, scale_grid, seed).sigma)
