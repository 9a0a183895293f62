"""Robust and distributionally-robust error-set baselines.

Both share the stacked error dynamics with the main pipeline but replace the
variance-proxy calculus: the robust baseline propagates the noise support
exactly as zonotopes (reported as interval-hull boxes), the DR baseline
propagates empirical covariances and applies the Chebyshev inequality.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .bounds import Box, ChebyshevEllipsoid
from .design import ErrorSystem

# large enough that the steady-window recursions (<= 800 steps, <= 10
# generators per step) never reduce; reduction over-approximates, and the
# resulting support wobble breaks the convergence certificate downstream
GENERATOR_CAP = 20_000


@dataclass(frozen=True)
class RobustNoiseBounds:
    """Axis-aligned support boxes for the disturbances.

    x0_box bounds the initial spread x_0 - mu_0 (None means the initial
    error is exactly zero).
    """

    w_box: Box
    eps_box: Box
    x0_box: Box | None = None

    @classmethod
    def from_samples(cls, w_samples, eps_samples, x0_samples=None):
        """Component-wise min/max boxes over noise sample arrays (n_samples, dim)."""
        w = np.atleast_2d(np.asarray(w_samples, dtype=float))
        e = np.atleast_2d(np.asarray(eps_samples, dtype=float))
        x0_box = None
        if x0_samples is not None:
            x0 = np.atleast_2d(np.asarray(x0_samples, dtype=float))
            x0_box = Box(x0.min(axis=0), x0.max(axis=0))
        return cls(
            w_box=Box(w.min(axis=0), w.max(axis=0)),
            eps_box=Box(e.min(axis=0), e.max(axis=0)),
            x0_box=x0_box,
        )


@dataclass(frozen=True)
class _Zonotope:
    center: np.ndarray
    generators: np.ndarray  # (dim, n_gen)

    def affine(self, mat) -> "_Zonotope":
        return _Zonotope(mat @ self.center, mat @ self.generators)

    def radius(self) -> np.ndarray:
        if self.generators.shape[1] == 0:
            return np.zeros(self.center.size)
        return np.abs(self.generators).sum(axis=1)

    def interval_hull(self) -> Box:
        r = self.radius()
        return Box(self.center - r, self.center + r)

    def reduce(self, cap: int) -> "_Zonotope":
        """Girard reduction: box the least-elongated generators down to cap."""
        n, m = self.generators.shape
        if m <= cap:
            return self
        # boxing k generators costs n columns, so keep cap - n exact ones
        keep = max(cap - n, 0)
        score = np.abs(self.generators).sum(axis=0) - np.max(
            np.abs(self.generators), axis=0
        )
        order = np.argsort(score)
        boxed = self.generators[:, order[: m - keep]]
        kept = self.generators[:, order[m - keep :]]
        hull = np.diag(np.abs(boxed).sum(axis=1))
        return _Zonotope(self.center, np.hstack([kept, hull]))


def _box_zonotope(box: Box) -> _Zonotope:
    center = 0.5 * (box.lower + box.upper)
    radius = 0.5 * (box.upper - box.lower)
    return _Zonotope(center, np.diag(radius))


@dataclass(frozen=True)
class RobustSets:
    """Interval-hull boxes of the propagated support, one per time step.

    Behaves as a list of Box; `reduced` flags whether the generator cap
    forced an interval-hull reduction anywhere along the recursion.
    """

    per_step: tuple
    reduced: bool = False

    def __len__(self) -> int:
        return len(self.per_step)

    def __getitem__(self, i):
        return self.per_step[i]

    def __iter__(self):
        return iter(self.per_step)


def robust_propagate(
    err: ErrorSystem,
    bounds: RobustNoiseBounds,
    steps: int,
    proj=None,
    cap: int = GENERATOR_CAP,
) -> RobustSets:
    """Exact support propagation E_{t+1} = A_e E_t + B1 W + B2 V as zonotopes.

    Minkowski sums concatenate generators; beyond `cap` generators the set is
    reduced to a slightly larger zonotope (flagged on the result). The
    returned boxes are interval hulls of proj @ E_t (proj defaults to the
    identity on the stacked error space), for t = 0..steps.
    """
    if steps < 1:
        raise ValueError("steps must be >= 1")
    rho = err.spectral_radius
    if rho >= 1.0:
        raise ValueError(f"error dynamics not Schur (spectral radius {rho:.6f})")
    a_e, b1, b2 = err.a_e, err.b1_e, err.b2_e
    dim = a_e.shape[0]
    proj = np.eye(dim) if proj is None else np.atleast_2d(np.asarray(proj, dtype=float))
    if proj.shape[1] != dim:
        raise ValueError("projection width must match the stacked error dimension")

    w_gen = _box_zonotope(bounds.w_box).affine(b1)
    eps_gen = _box_zonotope(bounds.eps_box).affine(b2)
    noise_center = w_gen.center + eps_gen.center
    noise_gens = np.hstack([w_gen.generators, eps_gen.generators])

    if bounds.x0_box is None:
        current = _Zonotope(np.zeros(dim), np.zeros((dim, 0)))
    else:
        n = bounds.x0_box.lower.size
        if 2 * n != dim:
            raise ValueError("x0_box dimension must be half the stacked dimension")
        lift = np.vstack([np.zeros((n, n)), np.eye(n)])
        current = _box_zonotope(bounds.x0_box).affine(lift)

    reduced = False
    hulls = [current.affine(proj).interval_hull()]
    for _ in range(steps):
        current = _Zonotope(
            a_e @ current.center + noise_center,
            np.hstack([a_e @ current.generators, noise_gens]),
        )
        if current.generators.shape[1] > cap:
            current = current.reduce(cap)
            reduced = True
        hulls.append(current.affine(proj).interval_hull())
    return RobustSets(per_step=tuple(hulls), reduced=reduced)


def dr_propagate(
    err: ErrorSystem,
    cov_w,
    cov_eps,
    delta: float,
    steps: int,
    cov0=None,
    proj=None,
    n_c: int | None = None,
) -> list:
    """Chebyshev reachable sets from empirical covariances.

    The covariance recursion has the same form as the proxy recursion; each
    set is {xi : xi' S_t^+ xi <= n_c / delta} on the projected covariance
    S_t = proj Sigma_t proj'. Singular S_t is allowed: membership is then
    restricted to the range space.
    """
    if steps < 1:
        raise ValueError("steps must be >= 1")
    if not 0.0 < delta < 1.0:
        raise ValueError("delta must lie in (0, 1)")
    rho = err.spectral_radius
    if rho >= 1.0:
        raise ValueError(f"error dynamics not Schur (spectral radius {rho:.6f})")
    a_e, b1, b2 = err.a_e, err.b1_e, err.b2_e
    dim = a_e.shape[0]
    cov_w = np.atleast_2d(np.asarray(cov_w, dtype=float))
    cov_eps = np.atleast_2d(np.asarray(cov_eps, dtype=float))
    for name, cov in (("cov_w", cov_w), ("cov_eps", cov_eps)):
        if np.min(np.linalg.eigvalsh(0.5 * (cov + cov.T))) < -1e-10 * max(
            1.0, float(np.max(np.abs(cov)))
        ):
            raise ValueError(f"{name} must be positive semidefinite")
    proj = np.eye(dim) if proj is None else np.atleast_2d(np.asarray(proj, dtype=float))
    if proj.shape[1] != dim:
        raise ValueError("projection width must match the stacked error dimension")
    n_cheb = proj.shape[0] if n_c is None else int(n_c)
    if n_cheb < 1:
        raise ValueError("n_c must be >= 1")
    radius_sq = n_cheb / delta

    sigma = np.zeros((dim, dim)) if cov0 is None else np.atleast_2d(np.asarray(cov0, dtype=float))
    if sigma.shape != (dim, dim):
        raise ValueError("cov0 dimension mismatch")

    drive = b1 @ cov_w @ b1.T + b2 @ cov_eps @ b2.T
    out = []
    center = np.zeros(proj.shape[0])
    for _ in range(steps + 1):
        shape = proj @ sigma @ proj.T
        out.append(ChebyshevEllipsoid(center, 0.5 * (shape + shape.T), radius_sq))
        sigma = a_e @ sigma @ a_e.T + drive
        sigma = 0.5 * (sigma + sigma.T)
    return out
