"""Confidence sets for sub-Gaussian vectors.

Half-space bounds, elliptical bounds through the inverse of
g(x) = exp(x)/(1+x), cylindrical (subspace) bounds, moment bounds, and the
distribution-free Chebyshev ellipsoid used by the DR baseline. Support
functions over all set variants feed the constraint-tightening code.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.special import gammaln

from .subgaussian import SubGaussianVector, _as_matrix, _check_proxy


class UnboundedDirectionError(ValueError):
    """The set is unbounded along the requested support direction."""


# ---------------------------------------------------------------------------
# set variants


@dataclass(frozen=True)
class HalfSpace:
    """{x : h' x <= offset}"""

    h: np.ndarray
    offset: float

    def __post_init__(self):
        h = np.atleast_1d(np.asarray(self.h, dtype=float))
        if np.linalg.norm(h) == 0.0:
            raise ValueError("half-space normal must be nonzero")
        object.__setattr__(self, "h", h)
        object.__setattr__(self, "offset", float(self.offset))

    def contains(self, points) -> np.ndarray:
        pts = np.atleast_2d(np.asarray(points, dtype=float))
        return pts @ self.h <= self.offset + 1e-12 * max(1.0, abs(self.offset))


@dataclass(frozen=True)
class Ellipsoid:
    """{x : (x-center)' shape^-1 (x-center) <= radius_sq}, shape PSD.

    Rank-deficient shapes describe flat ellipsoids; membership then also
    requires x - center to lie in the range of shape.
    """

    center: np.ndarray
    shape: np.ndarray
    radius_sq: float

    def __post_init__(self):
        center = np.atleast_1d(np.asarray(self.center, dtype=float))
        shape = _check_proxy(_as_matrix(self.shape))
        if shape.shape[0] != center.size:
            raise ValueError("center/shape dimension mismatch")
        if self.radius_sq < 0.0:
            raise ValueError("radius_sq must be nonnegative")
        object.__setattr__(self, "center", center)
        object.__setattr__(self, "shape", shape)
        object.__setattr__(self, "radius_sq", float(self.radius_sq))

    def contains(self, points) -> np.ndarray:
        pts = np.atleast_2d(np.asarray(points, dtype=float)) - self.center
        eigval, eigvec = np.linalg.eigh(self.shape)
        tol = max(1e-14, 1e-12 * eigval[-1])
        proj = pts @ eigvec
        live = eigval > tol
        quad = np.sum(proj[:, live] ** 2 / eigval[live], axis=1)
        inside = quad <= self.radius_sq * (1.0 + 1e-9) + 1e-12
        if not np.all(live):
            # flat directions admit no excursion beyond round-off
            flat = np.abs(proj[:, ~live])
            inside &= np.all(flat <= 1e-7 * max(1.0, np.sqrt(eigval[-1])), axis=1)
        return inside


@dataclass(frozen=True)
class Cylinder:
    """Preimage of an ellipsoid under H: {x : H x in inner}, unbounded on Null(H)."""

    H: np.ndarray
    inner: Ellipsoid

    def __post_init__(self):
        H = np.atleast_2d(np.asarray(self.H, dtype=float))
        sv = np.linalg.svd(H, compute_uv=False)
        if sv.size == 0 or sv[-1] <= 1e-12 * sv[0]:
            raise ValueError("cylinder map H must have full row rank")
        if H.shape[0] != self.inner.center.size:
            raise ValueError("H row count must match inner ellipsoid dimension")
        object.__setattr__(self, "H", H)

    def contains(self, points) -> np.ndarray:
        pts = np.atleast_2d(np.asarray(points, dtype=float))
        return self.inner.contains(pts @ self.H.T)


@dataclass(frozen=True)
class Box:
    """Axis-aligned box {x : lower <= x <= upper}."""

    lower: np.ndarray
    upper: np.ndarray

    def __post_init__(self):
        lower = np.atleast_1d(np.asarray(self.lower, dtype=float))
        upper = np.atleast_1d(np.asarray(self.upper, dtype=float))
        if lower.shape != upper.shape or np.any(lower > upper + 1e-15):
            raise ValueError("box bounds must satisfy lower <= upper")
        object.__setattr__(self, "lower", lower)
        object.__setattr__(self, "upper", upper)

    def contains(self, points) -> np.ndarray:
        pts = np.atleast_2d(np.asarray(points, dtype=float))
        slack = 1e-12 * np.maximum(1.0, np.abs(self.upper - self.lower))
        return np.all((pts >= self.lower - slack) & (pts <= self.upper + slack), axis=1)


@dataclass(frozen=True)
class ChebyshevEllipsoid(Ellipsoid):
    """Chebyshev set {x : (x-c)' Cov^-1 (x-c) <= n_c / delta} from a covariance."""


# union of the five variants; everything below dispatches on isinstance
ConfidenceSet = HalfSpace | Ellipsoid | Cylinder | Box | ChebyshevEllipsoid


# ---------------------------------------------------------------------------
# constructors


def half_space_set(x: SubGaussianVector, h, delta: float) -> HalfSpace:
    """One-sided bound: h'(X - mu) <= |h|_S sqrt(2 ln 1/delta) w.p. >= 1-delta."""
    if not 0.0 < delta <= 1.0:
        raise ValueError(f"delta must be in (0, 1], got {delta}")
    h = np.atleast_1d(np.asarray(h, dtype=float))
    if np.linalg.norm(h) == 0.0:
        raise ValueError("direction h must be nonzero")
    if h.size != x.dim:
        raise ValueError("direction dimension mismatch")
    hsh = float(h @ x.proxy @ h)
    offset = float(h @ x.mean) + np.sqrt(max(hsh, 0.0)) * np.sqrt(2.0 * np.log(1.0 / delta))
    return HalfSpace(h, offset)


def _g_inverse_from_log(log_y: float) -> float:
    """Solve s - ln(1+s) = log_y for s >= 0 (log form of exp(s)/(1+s) = y)."""
    if log_y < 0.0:
        raise ValueError("g_inverse requires y >= 1")
    if log_y == 0.0:
        return 0.0

    def f(s: float) -> float:
        return s - np.log1p(s) - log_y

    hi = max(1.0, 2.0 * log_y + 2.0 * np.log1p(2.0 * log_y) + 1.0)
    lo = 0.0
    for _ in range(80):
        mid = 0.5 * (lo + hi)
        if f(mid) < 0.0:
            lo = mid
        else:
            hi = mid
    s = 0.5 * (lo + hi)
    for _ in range(3):
        # f'(s) = s / (1+s)
        step = f(s) * (1.0 + s) / s
        s = max(s - step, 1e-300)
    return float(s)


def g_inverse(y: float) -> float:
    """Inverse of g(x) = exp(x)/(1+x) on x >= 0; absolute tolerance 1e-10."""
    if y < 1.0:
        raise ValueError(f"g_inverse requires y >= 1, got {y}")
    return _g_inverse_from_log(float(np.log(y)))


def elliptical_radius_sq(n: int, delta: float) -> float:
    """tau^2 = n + n g^-1(delta^(-2/n)); delta^(-2/n) handled in log space."""
    if not 0.0 < delta < 1.0:
        raise ValueError(f"delta must be in (0, 1), got {delta}")
    if n < 1:
        raise ValueError("dimension must be >= 1")
    return n + n * _g_inverse_from_log(-2.0 * np.log(delta) / n)


def elliptical_set(x: SubGaussianVector, delta: float) -> Ellipsoid:
    """Elliptical bound |X - mu|^2_{S^-1} <= tau^2(n, delta) w.p. >= 1-delta."""
    eigval = np.linalg.eigvalsh(x.proxy)
    if eigval[0] <= 1e-12 * max(eigval[-1], 1e-300):
        raise ValueError(
            "proxy is singular; build a cylindrical set on the range of the proxy"
        )
    return Ellipsoid(x.mean, x.proxy, elliptical_radius_sq(x.dim, delta))


def cylindrical_set(x: SubGaussianVector, H, delta: float) -> Cylinder:
    """Elliptical bound on the subspace image H X, free along Null(H)."""
    H = np.atleast_2d(np.asarray(H, dtype=float))
    if H.shape[1] != x.dim:
        raise ValueError("H column count must match vector dimension")
    if H.shape[0] >= x.dim:
        raise ValueError("cylindrical set requires n_c < n; use elliptical_set")
    sv = np.linalg.svd(H, compute_uv=False)
    if sv[-1] <= 1e-12 * sv[0]:
        raise ValueError("H must have full row rank")
    proxy_h = H @ x.proxy @ H.T
    inner = elliptical_set(SubGaussianVector(H @ x.mean, 0.5 * (proxy_h + proxy_h.T)), delta)
    return Cylinder(H, inner)


def corollary_growth_bound(n: int, delta: float) -> float:
    """Closed-form upper bound (1 + ln 4) n + 4 ln(1/delta) on tau^2."""
    if not 0.0 < delta < 1.0:
        raise ValueError(f"delta must be in (0, 1), got {delta}")
    return (1.0 + np.log(4.0)) * n + 4.0 * np.log(1.0 / delta)


def moment_bound(p: float, n: int) -> float:
    """B(p, n) = p 2^((p-1)/2) (2e/n)^(n/2) Gamma((n+p+1)/2), via log-Gamma."""
    if p < 1.0:
        raise ValueError("p must be >= 1")
    if n < 1:
        raise ValueError("n must be >= 1")
    log_b = (
        np.log(p)
        + 0.5 * (p - 1.0) * np.log(2.0)
        + 0.5 * n * (np.log(2.0) + 1.0 - np.log(n))
        + gammaln(0.5 * (n + p + 1.0))
    )
    return float(np.exp(log_b))


def chebyshev_set(center, covariance, delta: float, n_c: int | None = None) -> ChebyshevEllipsoid:
    """DR baseline set {x : (x-c)' Cov^-1 (x-c) <= n_c/delta}; distribution-free."""
    if not 0.0 < delta < 1.0:
        raise ValueError(f"delta must be in (0, 1), got {delta}")
    center = np.atleast_1d(np.asarray(center, dtype=float))
    cov = _check_proxy(_as_matrix(covariance))
    eigval = np.linalg.eigvalsh(cov)
    if eigval[0] <= 1e-12 * max(eigval[-1], 1e-300):
        raise ValueError("covariance is singular")
    if n_c is None:
        n_c = center.size
    return ChebyshevEllipsoid(center, cov, n_c / delta)


# ---------------------------------------------------------------------------
# support functions

_PARALLEL_TOL = 1e-9


def support_function(conf_set: ConfidenceSet, direction) -> float:
    """sup_{x in set} direction' x; raises UnboundedDirectionError when infinite."""
    d = np.atleast_1d(np.asarray(direction, dtype=float))
    norm_d = np.linalg.norm(d)
    if norm_d == 0.0:
        raise ValueError("direction must be nonzero")

    if isinstance(conf_set, HalfSpace):
        h = conf_set.h
        alpha = float(d @ h) / float(h @ h)
        if alpha <= 0.0 or np.linalg.norm(d - alpha * h) > _PARALLEL_TOL * norm_d:
            raise UnboundedDirectionError(
                "half-space support is finite only along its outward normal"
            )
        return alpha * conf_set.offset

    if isinstance(conf_set, Ellipsoid):  # covers ChebyshevEllipsoid
        quad = float(d @ conf_set.shape @ d)
        return float(d @ conf_set.center) + np.sqrt(max(quad, 0.0) * conf_set.radius_sq)

    if isinstance(conf_set, Box):
        return float(np.sum(np.maximum(d * conf_set.lower, d * conf_set.upper)))

    if isinstance(conf_set, Cylinder):
        # finite only for d = H' a; then sup d'x = sup a'(Hx) over the inner set
        a, residual, *_ = np.linalg.lstsq(conf_set.H.T, d, rcond=None)
        if np.linalg.norm(conf_set.H.T @ a - d) > _PARALLEL_TOL * norm_d:
            raise UnboundedDirectionError("direction leaves the cylinder's bounded subspace")
        return support_function(conf_set.inner, a)

    raise TypeError(f"unsupported set type {type(conf_set).__name__}")


def contains_points(conf_set: ConfidenceSet, points) -> np.ndarray:
    """Vectorized membership test; returns a boolean array over rows of points."""
    return conf_set.contains(points)
