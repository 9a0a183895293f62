"""Offline controller synthesis: LQR gain, steady-state Kalman gain, and the
stacked closed-loop error system.

The error state is e = [x - x_hat; x - z] (estimation error on top, tracking
error below). With the observer correction applied to the one-step prediction
and u = K(x_hat - z) + v, the error recursion is

    e_{t+1} = A_e e_t + B1_e w_t + B2_e eps_{t+1}

with the block matrices assembled in build_error_system. The state-input error
xi = [x - z; u - v] is read off through K_e.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .subgaussian import ScalarProxy

_PBH_TOL = 1e-8


def _spectral_radius(a: np.ndarray) -> float:
    if a.size == 0:
        return 0.0
    return float(np.max(np.abs(np.linalg.eigvals(a))))


def _pbh_stabilizable(a: np.ndarray, b: np.ndarray, tol: float = _PBH_TOL) -> bool:
    """PBH test: rank [lam I - A, B] = n for every eigenvalue |lam| >= 1."""
    n = a.shape[0]
    for lam in np.linalg.eigvals(a):
        if abs(lam) < 1.0 - tol:
            continue
        m = np.hstack([lam * np.eye(n) - a, b.astype(complex)])
        sv = np.linalg.svd(m, compute_uv=False)
        if sv[-1] <= tol * max(sv[0], 1.0):
            return False
    return True


@dataclass(frozen=True)
class LinearSystem:
    """x_{t+1} = A x_t + B u_t + w_t, y_t = C x_t + eps_t."""

    a: np.ndarray
    b: np.ndarray
    c: np.ndarray

    def __post_init__(self):
        a = np.atleast_2d(np.asarray(self.a, dtype=float))
        b = np.atleast_2d(np.asarray(self.b, dtype=float))
        c = np.atleast_2d(np.asarray(self.c, dtype=float))
        n = a.shape[0]
        if a.shape != (n, n) or b.shape[0] != n or c.shape[1] != n:
            raise ValueError("inconsistent system dimensions")
        if not _pbh_stabilizable(a, b):
            raise ValueError("(a, b) is not stabilizable")
        if not _pbh_stabilizable(a.T, c.T):
            raise ValueError("(a, c) is not detectable")
        object.__setattr__(self, "a", a)
        object.__setattr__(self, "b", b)
        object.__setattr__(self, "c", c)

    @property
    def n_x(self) -> int:
        return self.a.shape[0]

    @property
    def n_u(self) -> int:
        return self.b.shape[1]

    @property
    def n_y(self) -> int:
        return self.c.shape[0]


@dataclass(frozen=True)
class NoiseSpec:
    """Scalar proxies of the initial-state, process, and measurement noise."""

    sigma0: ScalarProxy
    sigma_w: ScalarProxy
    sigma_eps: ScalarProxy


@dataclass(frozen=True)
class ErrorSystem:
    """Stacked error dynamics blocks; a_e must be Schur."""

    a_e: np.ndarray
    b1_e: np.ndarray
    b2_e: np.ndarray
    k_e: np.ndarray
    k: np.ndarray
    l: np.ndarray

    @property
    def n_x(self) -> int:
        return self.a_e.shape[0] // 2

    @property
    def spectral_radius(self) -> float:
        return _spectral_radius(self.a_e)


def _dare_residual(p, a, b, q, r) -> float:
    btp = b.T @ p
    gain = np.linalg.solve(r + btp @ b, btp @ a)
    res = a.T @ p @ a - p - a.T @ p @ b @ gain + q
    return float(np.linalg.norm(res, "fro"))


def solve_dare(a, b, q, r, max_iter: int = 100_000):
    """Solve A'PA - P - A'PB (R + B'PB)^-1 B'PA + Q = 0 for the stabilizing P.

    Structured doubling iteration with a plain fixed-point fallback; the
    residual is certified at <= 1e-9 relative before returning. Also returns
    the LQR gain k = -(R + B'PB)^-1 B'PA (so A + BK is Schur).
    """
    a = np.atleast_2d(np.asarray(a, dtype=float))
    b = np.atleast_2d(np.asarray(b, dtype=float))
    q = np.atleast_2d(np.asarray(q, dtype=float))
    r = np.atleast_2d(np.asarray(r, dtype=float))
    n = a.shape[0]
    if np.linalg.eigvalsh(0.5 * (r + r.T))[0] <= 0.0:
        raise ValueError("r must be positive definite")
    if np.linalg.eigvalsh(0.5 * (q + q.T))[0] < -1e-12:
        raise ValueError("q must be positive semidefinite")
    if not _pbh_stabilizable(a, b):
        raise ValueError("(a, b) is not stabilizable")

    # doubling: A_{k+1} = A_k (I + G_k H_k)^-1 A_k, with G, H converging to
    # the closed-loop grammian and P respectively
    a_k = a.copy()
    g_k = b @ np.linalg.solve(r, b.T)
    h_k = q.copy()
    p = None
    for _ in range(100):
        try:
            w = np.linalg.solve(np.eye(n) + g_k @ h_k, np.hstack([a_k, g_k]))
        except np.linalg.LinAlgError:
            break
        wa, wg = w[:, :n], w[:, n:]
        a_next = a_k @ wa
        g_next = g_k + a_k @ wg @ a_k.T
        h_next = h_k + a_k.T @ h_k @ wa
        h_next = 0.5 * (h_next + h_next.T)
        if np.linalg.norm(h_next - h_k, "fro") <= 1e-15 * max(1.0, np.linalg.norm(h_k, "fro")):
            p = h_next
            break
        a_k, g_k, h_k = a_next, 0.5 * (g_next + g_next.T), h_next
    if p is None:
        p = h_k

    scale = max(np.linalg.norm(p, "fro"), 1e-300)
    if _dare_residual(p, a, b, q, r) > 1e-9 * scale:
        # fixed-point fallback from the doubling iterate
        for it in range(max_iter):
            btp = b.T @ p
            gain = np.linalg.solve(r + btp @ b, btp @ a)
            p_next = q + a.T @ p @ (a - b @ gain)
            p_next = 0.5 * (p_next + p_next.T)
            diff = np.linalg.norm(p_next - p, "fro")
            p = p_next
            if diff <= 1e-14 * max(1.0, np.linalg.norm(p, "fro")):
                break
        else:
            raise RuntimeError("DARE iteration cap exceeded without convergence")
        scale = max(np.linalg.norm(p, "fro"), 1e-300)
        if _dare_residual(p, a, b, q, r) > 1e-9 * scale:
            raise RuntimeError("DARE residual above tolerance after fallback")

    k = -np.linalg.solve(r + b.T @ p @ b, b.T @ p @ a)
    if _spectral_radius(a + b @ k) >= 1.0:
        raise RuntimeError("DARE gain failed to stabilize the closed loop")
    return p, k


def design_observer(sys: LinearSystem, noise: NoiseSpec) -> np.ndarray:
    """Steady-state (a-posteriori) Kalman gain with sigma_w^2 I / sigma_eps^2 I weights.

    The filter is x_hat_{t+1} = pred + L (y_{t+1} - C pred) with
    pred = A x_hat_t + B u_t, so the estimation error map is (I - LC) A.
    """
    if noise.sigma_eps.sigma <= 0.0:
        raise ValueError("measurement proxy sigma_eps must be > 0 for observer design")
    q = noise.sigma_w.sigma**2 * np.eye(sys.n_x)
    r = noise.sigma_eps.sigma**2 * np.eye(sys.n_y)
    # dual DARE: predicted error covariance of the steady-state filter
    phi, _ = solve_dare(sys.a.T, sys.c.T, q, r)
    l = phi @ sys.c.T @ np.linalg.inv(sys.c @ phi @ sys.c.T + r)
    if _spectral_radius((np.eye(sys.n_x) - l @ sys.c) @ sys.a) >= 1.0:
        raise RuntimeError("observer design failed: (I - LC) A is not Schur")
    return l


def build_error_system(sys: LinearSystem, k, l) -> ErrorSystem:
    """Assemble the stacked error dynamics and the state-input read-out map."""
    k = np.atleast_2d(np.asarray(k, dtype=float))
    l = np.atleast_2d(np.asarray(l, dtype=float))
    n, m, p = sys.n_x, sys.n_u, sys.n_y
    if k.shape != (m, n) or l.shape != (n, p):
        raise ValueError("gain dimensions inconsistent with the system")
    a, b, c = sys.a, sys.b, sys.c
    i_n = np.eye(n)

    a_e = np.block([
        [a - l @ c @ a, np.zeros((n, n))],
        [-b @ k, a + b @ k],
    ])
    b1_e = np.vstack([i_n - l @ c, i_n])
    b2_e = np.vstack([-l, np.zeros((n, p))])
    # u - v = K(xhat - z) = -K(x - xhat) + K(x - z), so the input row is [-K, K]
    k_e = np.block([
        [np.zeros((n, n)), i_n],
        [-k, k],
    ])

    rho = _spectral_radius(a_e)
    if rho >= 1.0:
        raise ValueError(f"stacked error dynamics not Schur (spectral radius {rho:.6f})")
    return ErrorSystem(a_e, b1_e, b2_e, k_e, k, l)
