"""Polytopes, support-function constraint tightening, invariant terminal sets,
and the polytopic inner approximation of the surgical-planning funnel.

All polytopes are in half-space form {x : A x <= b}. Tightening a polytope by
a confidence set E shrinks each row offset by the support of E in the row
direction, which is the exact Minkowski difference for convex E.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy.optimize import linprog

from .bounds import ConfidenceSet, UnboundedDirectionError, support_function

REDUNDANCY_TOL = 1e-9


class EmptyTightenedError(RuntimeError):
    """Constraint tightening produced an empty set (LP feasibility failed)."""


def _lp_max(c, a_ub, b_ub):
    """max c'x s.t. a_ub x <= b_ub. Returns +inf when unbounded, -inf when empty."""
    res = linprog(
        -np.asarray(c, dtype=float),
        A_ub=a_ub,
        b_ub=b_ub,
        bounds=[(None, None)] * a_ub.shape[1],
        method="highs",
    )
    if res.status == 0:
        return -res.fun
    if res.status == 3:
        return np.inf
    if res.status == 2:
        return -np.inf
    raise RuntimeError(f"LP solver failure: {res.message}")


@dataclass(frozen=True)
class Polytope:
    """{x : a x <= b}; rows are (normal, offset) pairs."""

    a: np.ndarray
    b: np.ndarray

    def __post_init__(self):
        a = np.atleast_2d(np.asarray(self.a, dtype=float))
        b = np.atleast_1d(np.asarray(self.b, dtype=float))
        if a.shape[0] != b.size:
            raise ValueError("row count mismatch between a and b")
        norms = np.linalg.norm(a, axis=1)
        if np.any(norms == 0.0):
            raise ValueError("polytope rows must be nonzero")
        object.__setattr__(self, "a", a)
        object.__setattr__(self, "b", b)
        if not self.is_feasible():
            raise EmptyTightenedError("polytope is empty (LP feasibility certificate)")

    @property
    def dim(self) -> int:
        return self.a.shape[1]

    @property
    def n_rows(self) -> int:
        return self.a.shape[0]

    @property
    def rows(self):
        return list(zip(self.a, self.b))

    def is_feasible(self) -> bool:
        res = linprog(
            np.zeros(self.dim),
            A_ub=self.a,
            b_ub=self.b,
            bounds=[(None, None)] * self.dim,
            method="highs",
        )
        return res.status == 0

    def contains(self, points, tol: float = 1e-9) -> np.ndarray:
        pts = np.atleast_2d(np.asarray(points, dtype=float))
        slack = tol * np.maximum(1.0, np.abs(self.b))
        return np.all(pts @ self.a.T <= self.b + slack, axis=1)

    def support(self, direction) -> float:
        val = _lp_max(direction, self.a, self.b)
        if np.isposinf(val):
            raise UnboundedDirectionError("polytope unbounded in this direction")
        return float(val)

    def bounding_box(self):
        """Component-wise bounds via 2 dim LPs; raises if unbounded."""
        lo = np.empty(self.dim)
        hi = np.empty(self.dim)
        for i in range(self.dim):
            e = np.zeros(self.dim)
            e[i] = 1.0
            hi[i] = self.support(e)
            lo[i] = -self.support(-e)
        return lo, hi

    def sample(self, n: int, rng, max_batches: int = 2000) -> np.ndarray:
        """Uniform samples by rejection from the bounding box."""
        lo, hi = self.bounding_box()
        out = []
        got = 0
        for _ in range(max_batches):
            cand = rng.uniform(lo, hi, size=(max(n, 1024), self.dim))
            keep = cand[self.contains(cand, tol=0.0)]
            if keep.size:
                out.append(keep)
                got += keep.shape[0]
            if got >= n:
                break
        else:
            raise RuntimeError("rejection sampling failed; polytope volume too small")
        return np.vstack(out)[:n]


@dataclass(frozen=True)
class TightenedSequence:
    """Per-step tightened state-input polytopes plus the terminal set on z."""

    per_step: tuple
    terminal: Polytope

    def step(self, i: int) -> Polytope:
        if i < len(self.per_step):
            return self.per_step[i]
        return self.per_step[-1]


def minkowski_diff(p: Polytope, e: ConfidenceSet) -> Polytope:
    """Row-wise support tightening: (h, b) -> (h, b - sup_{x in e} h'x)."""
    new_b = np.empty_like(p.b)
    for i, (h, b) in enumerate(zip(p.a, p.b)):
        try:
            new_b[i] = b - support_function(e, h)
        except UnboundedDirectionError as exc:
            raise UnboundedDirectionError(
                f"confidence set unbounded along polytope row {i}: {exc}"
            ) from exc
    return Polytope(p.a, new_b)  # ctor raises EmptyTightenedError when infeasible


def _drop_redundant(a: np.ndarray, b: np.ndarray, tol: float = REDUNDANCY_TOL):
    """Remove rows implied by the others (LP test row by row)."""
    keep = list(range(a.shape[0]))
    i = 0
    while i < len(keep):
        others = keep[:i] + keep[i + 1 :]
        if not others:
            break
        row = keep[i]
        val = _lp_max(a[row], a[others], b[others])
        if val <= b[row] + tol * max(1.0, abs(b[row])):
            keep.pop(i)
        else:
            i += 1
    return a[keep], b[keep]


def maximal_invariant_set(a_cl, base: Polytope, iteration_cap: int = 500) -> Polytope:
    """Maximal positively invariant subset of base under z -> a_cl z.

    Iterates Omega_{k+1} = Omega_k intersect {z : a_cl z in Omega_k} by adding
    the rows (a_cl^k)' h until every candidate row is redundant, then strips
    redundant rows. Requires a_cl Schur and the origin strictly inside base.
    """
    a_cl = np.atleast_2d(np.asarray(a_cl, dtype=float))
    rho = float(np.max(np.abs(np.linalg.eigvals(a_cl)))) if a_cl.size else 0.0
    if rho >= 1.0:
        raise ValueError(f"a_cl must be Schur (spectral radius {rho:.6f})")
    if np.any(base.b <= 0.0):
        raise ValueError("base must contain the origin strictly")

    a_rows = base.a.copy()
    b_rows = base.b.copy()
    power = a_cl.copy()
    for _ in range(iteration_cap):
        candidates_a = base.a @ power
        fixed_point = True
        for h_new, b_new in zip(candidates_a, base.b):
            if np.linalg.norm(h_new) <= 1e-14:
                continue
            worst = _lp_max(h_new, a_rows, b_rows)
            if worst > b_new + REDUNDANCY_TOL * max(1.0, abs(b_new)):
                a_rows = np.vstack([a_rows, h_new])
                b_rows = np.append(b_rows, b_new)
                fixed_point = False
        if fixed_point:
            break
        power = power @ a_cl
    else:
        raise RuntimeError("invariant set not finitely determined within the cap")

    a_red, b_red = _drop_redundant(a_rows, b_rows)
    omega = Polytope(a_red, b_red)

    # certify invariance: image of each face direction stays inside
    for h, b in zip(omega.a, omega.b):
        if omega.support(a_cl.T @ h) > b + 1e-7 * max(1.0, abs(b)):
            raise RuntimeError("invariance certification failed after reduction")
    return omega


@dataclass(frozen=True)
class FunnelParams:
    """Radial clearance r(x0) = gain sqrt(exp(-quad x0^2 - offset) + floor)
    on the lateral coordinates (x1, x2), over depth x0 in [x0_min, x0_max]."""

    gain: float = 0.2
    quad: float = 2500.0
    offset: float = 5.0
    floor: float = 0.0004
    x0_min: float = -0.02
    x0_max: float = 0.12

    def radius(self, x0):
        x0 = np.asarray(x0, dtype=float)
        return self.gain * np.sqrt(np.exp(-self.quad * x0**2 - self.offset) + self.floor)

    def violated(self, states, tol: float = 0.0) -> np.ndarray:
        """Boolean mask over rows of states (columns x0, x1, x2, ...)."""
        pts = np.atleast_2d(np.asarray(states, dtype=float))
        lat = np.linalg.norm(pts[:, 1:3], axis=1)
        return lat > self.radius(pts[:, 0]) + tol


def _concave_minorant(params: FunnelParams, n_slices: int, grid_per_slice: int = 64):
    """Optimal piecewise-linear concave under-approximation of the radius.

    Knot values solve a small LP: maximize the knot sum subject to concavity
    and chord-below-radius constraints on a dense grid, with a Lipschitz
    safety margin so the certificate holds between grid points.
    """
    knots = np.linspace(params.x0_min, params.x0_max, n_slices + 1)
    h = knots[1] - knots[0]
    fine = np.linspace(params.x0_min, params.x0_max, 4096)
    lip = float(np.max(np.abs(np.diff(params.radius(fine)) / np.diff(fine)))) * 1.5

    n_var = knots.size
    rows_a, rows_b = [], []
    # concavity: v_{k-1} - 2 v_k + v_{k+1} <= 0
    for k in range(1, n_var - 1):
        row = np.zeros(n_var)
        row[k - 1], row[k], row[k + 1] = 1.0, -2.0, 1.0
        rows_a.append(row)
        rows_b.append(0.0)
    # chord below radius on each slice
    for k in range(n_slices):
        xs = np.linspace(knots[k], knots[k + 1], grid_per_slice)
        step = xs[1] - xs[0]
        margin = lip * step
        alphas = (xs - knots[k]) / h
        for x, al in zip(xs, alphas):
            row = np.zeros(n_var)
            row[k], row[k + 1] = 1.0 - al, al
            rows_a.append(row)
            rows_b.append(float(params.radius(x)) - margin)
    res = linprog(
        -np.ones(n_var),
        A_ub=np.vstack(rows_a),
        b_ub=np.asarray(rows_b),
        bounds=[(1e-9, None)] * n_var,
        method="highs",
    )
    if res.status != 0:
        raise ValueError("degenerate funnel parameterization: minorant LP infeasible")
    return knots, res.x


def inner_polytope_of_funnel(
    params: FunnelParams,
    n_facets_angular: int = 12,
    n_slices: int = 24,
) -> Polytope:
    """Inner polytopic approximation of the funnel in (x0, x1, x2).

    Disk cross-sections become inscribed regular polygons (apothem scaled by
    cos(pi/m)); the radius profile is replaced by its piecewise-linear concave
    minorant, so every facet chord is global and the intersection is convex
    and strictly inside the funnel. Verified by a sampling audit before
    returning.
    """
    if n_facets_angular < 3:
        raise ValueError("need at least 3 angular facets")
    if n_slices < 2:
        raise ValueError("need at least 2 slices")
    knots, vals = _concave_minorant(params, n_slices)
    cos_f = np.cos(np.pi / n_facets_angular)
    thetas = 2.0 * np.pi * np.arange(n_facets_angular) / n_facets_angular

    rows_a, rows_b = [], []
    for k in range(n_slices):
        beta = (vals[k + 1] - vals[k]) / (knots[k + 1] - knots[k])
        alpha = vals[k] - beta * knots[k]
        for th in thetas:
            # d . (x1,x2) <= cos_f * (alpha + beta x0)
            rows_a.append([-cos_f * beta, np.cos(th), np.sin(th)])
            rows_b.append(cos_f * alpha)
    rows_a.append([1.0, 0.0, 0.0])
    rows_b.append(params.x0_max)
    rows_a.append([-1.0, 0.0, 0.0])
    rows_b.append(-params.x0_min)

    a_red, b_red = _drop_redundant(np.asarray(rows_a), np.asarray(rows_b))
    poly = Polytope(a_red, b_red)

    # sampling audit of the inner-approximation contract
    rng = np.random.default_rng(12345)
    pts = poly.sample(20_000, rng)
    if np.any(params.violated(pts, tol=1e-12)):
        raise RuntimeError("funnel inner approximation failed the sampling audit")
    return poly
