"""Error-proxy propagation and probabilistic reachable sets.

The stacked error proxy evolves as

    S_{t+1} = A_e S_t A_e' + sigma_w^2 B1_e B1_e' + sigma_eps^2 B2_e B2_e',
    S_0 = sigma_0^2 I,

and converges to a steady state because A_e is Schur. Reachable sets at
confidence 1-delta are built on the state-input image K_e S_t K_e'.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import bounds
from .design import ErrorSystem, NoiseSpec
from .subgaussian import SubGaussianVector

STEADY_REL_TOL = 1e-10
STEADY_ITER_CAP = 100_000


@dataclass(frozen=True)
class ProxySequence:
    """Per-step stacked error proxies S_0..S_{steps-1} plus the fixed point."""

    per_step: tuple
    steady: np.ndarray

    def entry(self, t: int) -> np.ndarray:
        """S_t, frozen at the steady state beyond the computed horizon."""
        if t < 0:
            raise IndexError("negative step")
        if t < len(self.per_step):
            return self.per_step[t]
        return self.steady

    def __len__(self) -> int:
        return len(self.per_step)


def _recursion_step(s, err: ErrorSystem, noise: NoiseSpec) -> np.ndarray:
    nxt = (
        err.a_e @ s @ err.a_e.T
        + noise.sigma_w.sigma**2 * (err.b1_e @ err.b1_e.T)
        + noise.sigma_eps.sigma**2 * (err.b2_e @ err.b2_e.T)
    )
    return 0.5 * (nxt + nxt.T)


def propagate_proxy(err: ErrorSystem, noise: NoiseSpec, steps: int) -> ProxySequence:
    """Run the proxy recursion for `steps` entries and iterate to the fixed point."""
    if steps < 1:
        raise ValueError("steps must be >= 1")
    rho = err.spectral_radius
    if rho >= 1.0:
        raise ValueError(f"error dynamics not Schur (spectral radius {rho:.6f})")

    s = noise.sigma0.sigma**2 * np.eye(2 * err.n_x)
    per_step = [s]
    for _ in range(steps - 1):
        s = _recursion_step(s, err, noise)
        per_step.append(s)

    steady = per_step[-1]
    for _ in range(STEADY_ITER_CAP):
        nxt = _recursion_step(steady, err, noise)
        gap = np.linalg.norm(nxt - steady, "fro")
        steady = nxt
        if gap <= STEADY_REL_TOL * max(np.linalg.norm(steady, "fro"), 1e-300):
            break
    else:
        raise RuntimeError("steady-state iteration cap exceeded")
    return ProxySequence(tuple(per_step), steady)


def state_input_proxy(s, err: ErrorSystem) -> np.ndarray:
    """Map a stacked error proxy to the state-input error space via K_e."""
    out = err.k_e @ s @ err.k_e.T
    return 0.5 * (out + out.T)


def _one_set(proxy_xi: np.ndarray, delta: float, kind: str, direction, subspace):
    x = SubGaussianVector(np.zeros(proxy_xi.shape[0]), proxy_xi)
    if kind == "half_space":
        if direction is None:
            raise ValueError("half_space kind needs a direction")
        return bounds.half_space_set(x, direction, delta)
    if kind == "elliptical":
        return bounds.elliptical_set(x, delta)
    if kind == "cylinder":
        if subspace is None:
            raise ValueError("cylinder kind needs a subspace map")
        return bounds.cylindrical_set(x, subspace, delta)
    raise ValueError(f"unknown PRS kind {kind!r}")


def prs_sequence(
    seq: ProxySequence,
    err: ErrorSystem,
    delta: float,
    kind: str = "elliptical",
    direction=None,
    subspace=None,
    include_steady: bool = False,
):
    """Reachable sets on the state-input error for each propagated step.

    kind selects the bound: "half_space" (needs direction, ideal for a single
    linear constraint), "elliptical" (needs a PD state-input proxy), or
    "cylinder" (needs subspace, for rank-deficient proxies / subspace
    constraints). With include_steady, the steady-state set is appended last.
    """
    if not 0.0 < delta < 1.0:
        raise ValueError(f"delta must be in (0, 1), got {delta}")
    sets = [
        _one_set(state_input_proxy(s, err), delta, kind, direction, subspace)
        for s in seq.per_step
    ]
    if include_steady:
        sets.append(_one_set(state_input_proxy(seq.steady, err), delta, kind, direction, subspace))
    return sets
