"""Benchmark environments and noise samplers.

Two test beds: a mass-spring-damper (MSD) with a position bound and actuator
limits under heteroscedastic truncated Student-t noise, and a surgical
planning (SP) task where the tool tip must travel down a funnel-shaped
corridor under bounded Laplace noise.

Noise families are truncated by rejection so the support is bounded (hence
sub-Gaussian); symmetric truncation keeps them zero-mean.
"""
from __future__ import annotations

from dataclasses import dataclass, replace

import numpy as np

from .design import LinearSystem
from .tightening import FunnelParams, Polytope, inner_polytope_of_funnel


@dataclass(frozen=True)
class HeteroRule:
    """Scale multiplier active when state[index] > threshold."""

    index: int = 0
    threshold: float = 0.2
    multiplier: float = 5.0

    def active(self, states) -> np.ndarray:
        pts = np.atleast_2d(np.asarray(states, dtype=float))
        return pts[:, self.index] > self.threshold


@dataclass(frozen=True)
class TruncatedStudentT:
    """Student-t draws rejected outside |component| <= trunc_radius."""

    dof: float
    scale: float
    trunc_radius: float

    def __post_init__(self):
        if self.dof <= 0.0 or self.scale < 0.0 or self.trunc_radius < 0.0:
            raise ValueError("dof must be positive, scale and trunc_radius >= 0")
        if self.trunc_radius == 0.0 and self.scale > 0.0:
            raise ValueError("positive scale needs a positive trunc_radius")

    def draw(self, rng, n: int, dim: int) -> np.ndarray:
        return _rejection_draw(
            lambda size: self.scale * rng.standard_t(self.dof, size=size),
            n,
            dim,
            self.trunc_radius,
        )


@dataclass(frozen=True)
class BoundedLaplace:
    """Laplace draws rejected outside |component| <= trunc_radius."""

    scale: float
    trunc_radius: float

    def __post_init__(self):
        if self.scale < 0.0 or self.trunc_radius < 0.0:
            raise ValueError("scale and trunc_radius must be >= 0")
        if self.trunc_radius == 0.0 and self.scale > 0.0:
            raise ValueError("positive scale needs a positive trunc_radius")

    def draw(self, rng, n: int, dim: int) -> np.ndarray:
        return _rejection_draw(
            lambda size: rng.laplace(scale=self.scale, size=size) if self.scale > 0.0
            else np.zeros(size),
            n,
            dim,
            self.trunc_radius,
        )


def _rejection_draw(sampler, n: int, dim: int, radius: float, max_rounds: int = 1000):
    """Componentwise rejection: redraw entries with |value| > radius."""
    out = sampler((n, dim))
    bad = np.abs(out) > radius
    rounds = 0
    while np.any(bad):
        rounds += 1
        if rounds > max_rounds:
            raise RuntimeError("rejection sampling failed to converge")
        fresh = sampler((int(bad.sum()),))
        out[bad] = fresh
        bad = np.abs(out) > radius
    return out


NoiseFamily = TruncatedStudentT | BoundedLaplace


@dataclass(frozen=True)
class NoiseSampler:
    """Process and measurement noise families plus an optional hetero rule.

    The multiplier scales the whole draw (truncation radius included), so the
    active-branch distribution is exactly the base distribution stretched by
    the multiplier.
    """

    w_family: NoiseFamily
    eps_family: NoiseFamily
    hetero_rule: HeteroRule | None = None

    def multipliers(self, states) -> np.ndarray:
        pts = np.atleast_2d(np.asarray(states, dtype=float))
        mult = np.ones(pts.shape[0])
        if self.hetero_rule is not None:
            mult[self.hetero_rule.active(pts)] = self.hetero_rule.multiplier
        return mult

    @property
    def max_multiplier(self) -> float:
        if self.hetero_rule is None:
            return 1.0
        return max(1.0, float(self.hetero_rule.multiplier))


def sample_noise(sampler: NoiseSampler, state, rng):
    """Draw (w, eps) for the current true state; hetero multiplier applied
    to both sources when the rule fires. Accepts a single state vector or a
    batch (n, dim); the return shapes follow the input."""
    pts = np.atleast_2d(np.asarray(state, dtype=float))
    n, dim = pts.shape
    mult = sampler.multipliers(pts)
    w = sampler.w_family.draw(rng, n, dim) * mult[:, None]
    eps = sampler.eps_family.draw(rng, n, dim) * mult[:, None]
    if np.asarray(state).ndim == 1:
        return w[0], eps[0]
    return w, eps


@dataclass(frozen=True)
class Environment:
    """A control benchmark: model, state-input constraint polytope, target,
    quadratic cost weights, noise, and the initial-state distribution.

    `constraints` lives on (x, u); `funnel` is set for SP only and carries
    the exact nonconvex corridor used for violation accounting (the polytope
    is its inner convex approximation).

    `prs` declares how the chance constraints are meant probabilistically:
    "half_space" treats every polytope row as its own marginal constraint
    (each row gets the scalar tail factor), "elliptical" asks for joint
    containment of the whole deviation vector at level 1 - delta.
    """

    name: str
    system: LinearSystem
    constraints: Polytope
    target_state: np.ndarray
    target_input: np.ndarray
    q_env: np.ndarray
    r_env: np.ndarray
    noise: NoiseSampler
    init_family: NoiseFamily
    mu0: np.ndarray
    dt: float
    funnel: FunnelParams | None = None
    prs: str = "half_space"

    def __post_init__(self):
        if self.dt <= 0.0:
            raise ValueError("dt must be positive")
        if self.prs not in ("half_space", "elliptical"):
            raise ValueError(f"unknown prs kind {self.prs!r}")
        n, m = self.system.n_x, self.system.n_u
        for name, size in (
            ("target_state", n),
            ("target_input", m),
            ("mu0", n),
        ):
            vec = np.atleast_1d(np.asarray(getattr(self, name), dtype=float))
            if vec.size != size:
                raise ValueError(f"{name} dimension mismatch")
            object.__setattr__(self, name, vec)
        object.__setattr__(self, "q_env", np.atleast_2d(np.asarray(self.q_env, dtype=float)))
        object.__setattr__(self, "r_env", np.atleast_2d(np.asarray(self.r_env, dtype=float)))
        if self.constraints.dim != n + m:
            raise ValueError("constraint polytope must live on (x, u)")
        zv = np.concatenate([self.target_state, self.target_input])
        if not self.constraints.contains(zv[None, :], tol=1e-9)[0]:
            raise ValueError("target must satisfy the constraints")

    def stage_cost(self, x, u) -> float:
        dx = np.asarray(x, dtype=float) - self.target_state
        u = np.asarray(u, dtype=float)
        return float(dx @ self.q_env @ dx + u @ self.r_env @ u)

    def violations(self, states) -> np.ndarray:
        """Per-state breach of the true safety constraints (not the inner
        polytope): used for MCP accounting."""
        pts = np.atleast_2d(np.asarray(states, dtype=float))
        if self.funnel is not None:
            return self.funnel.violated(pts)
        state_rows = self.constraints.a[:, : self.system.n_x]
        input_rows = self.constraints.a[:, self.system.n_x :]
        pure_state = np.abs(input_rows).sum(axis=1) == 0.0
        a = state_rows[pure_state]
        b = self.constraints.b[pure_state]
        slack = 1e-9 * np.maximum(1.0, np.abs(b))
        return np.any(pts @ a.T > b + slack, axis=1)


def _embed_rows(a_sub, cols, total) -> np.ndarray:
    out = np.zeros((a_sub.shape[0], total))
    out[:, cols] = a_sub
    return out


def mass_spring_damper(
    w_scale: float = 0.004,
    eps_scale: float = 0.004,
    init_scale: float = 0.01,
    trunc: float = 6.0,
    dof: float = 3.0,
    hetero_multiplier: float = 5.0,
) -> Environment:
    """Discretized mass-spring-damper: dt=0.1, m=2, k=1, b=1; position must
    stay below 0.5 (the target sits exactly on that bound). Full-state
    measurement. Both noises are truncated Student-t, five times larger
    whenever position > 0.2."""
    dt, mass, spring, damper = 0.1, 2.0, 1.0, 1.0
    a = np.array([[1.0, dt], [-spring * dt / mass, 1.0 - damper * dt / mass]])
    b = np.array([[0.0], [dt / mass]])
    c = np.eye(2)
    system = LinearSystem(a, b, c)

    # single row on (x, u): position <= 0.5
    rows = np.array([[1.0, 0.0, 0.0]])
    offsets = np.array([0.5])
    family = TruncatedStudentT(dof=dof, scale=w_scale, trunc_radius=trunc * w_scale)
    eps_family = TruncatedStudentT(dof=dof, scale=eps_scale, trunc_radius=trunc * eps_scale)
    init_family = TruncatedStudentT(dof=dof, scale=init_scale, trunc_radius=trunc * init_scale)
    return Environment(
        name="msd",
        system=system,
        constraints=Polytope(rows, offsets),
        target_state=np.array([0.5, 0.0]),
        target_input=np.array([0.5]),
        q_env=np.eye(2),
        r_env=np.zeros((1, 1)),
        noise=NoiseSampler(family, eps_family, HeteroRule(0, 0.2, hetero_multiplier)),
        init_family=init_family,
        mu0=np.zeros(2),
        dt=dt,
    )


def surgical_planning(
    w_scale: float = 1.5e-4,
    eps_scale: float = 1.5e-4,
    init_scale: float = 2.0e-4,
    trunc: float = 8.0,
    n_facets_angular: int = 12,
    n_slices: int = 24,
) -> Environment:
    """Tool-pose regulation toward a pedicle-screw target: integrator
    dynamics dt=0.075 on 5 states (3 relative position, 2 direction), the
    first three constrained to a funnel-shaped corridor, depth capped at
    0.12 (the target depth). Bounded Laplace noise on both channels."""
    dt = 0.075
    n = 5
    system = LinearSystem(np.eye(n), dt * np.eye(n), np.eye(n))
    funnel = FunnelParams()
    poly3 = inner_polytope_of_funnel(
        funnel, n_facets_angular=n_facets_angular, n_slices=n_slices
    )
    rows = _embed_rows(poly3.a, [0, 1, 2], n + n)
    w_family = BoundedLaplace(scale=w_scale, trunc_radius=trunc * w_scale)
    eps_family = BoundedLaplace(scale=eps_scale, trunc_radius=trunc * eps_scale)
    init_family = BoundedLaplace(scale=init_scale, trunc_radius=trunc * init_scale)
    return Environment(
        name="sp",
        system=system,
        constraints=Polytope(rows, poly3.b),
        target_state=np.array([0.12, 0.0, 0.0, 0.0, 0.0]),
        target_input=np.zeros(n),
        q_env=np.eye(n),
        r_env=0.001 * np.eye(n),
        noise=NoiseSampler(w_family, eps_family, None),
        init_family=init_family,
        mu0=np.zeros(n),
        dt=dt,
        funnel=funnel,
        # the funnel is one joint containment requirement, not per-row margins
        prs="elliptical",
    )


def with_noise_scales(env: Environment, w_scale=None, eps_scale=None) -> Environment:
    """Copy of env with rescaled noise families (radii rescale with them)."""

    def _rescale(family, scale):
        if scale is None:
            return family
        ratio = scale / family.scale if family.scale > 0 else 1.0
        return replace(family, scale=scale, trunc_radius=family.trunc_radius * ratio)

    noise = NoiseSampler(
        _rescale(env.noise.w_family, w_scale),
        _rescale(env.noise.eps_family, eps_scale),
        env.noise.hetero_rule,
    )
    return replace(env, noise=noise)
