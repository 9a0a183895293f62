"""Dense convex QP solver for the condensed MPC problems.

    minimize    0.5 x' P x + q' x
    subject to  G x <= h

Operator-splitting (ADMM) iterations with step-size adaptation drive the
iterate near the solution; an active-set polish then solves the reduced KKT
system to certify tight residuals. Primal infeasibility is detected through
the dual ray built from the y-updates (Farkas certificate).

Zero rows in G are legal: a zero row with negative offset is an immediately
certifiable infeasibility (the certificate is the corresponding unit vector),
which is how constant constraint violations from the condensing step surface.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy.linalg import cho_factor, cho_solve

OPTIMAL = "optimal"
INFEASIBLE = "infeasible"
MAXITER = "max_iter"

# residual targets for a certified-Optimal solution
PRIMAL_TOL = 1e-7
STATIONARITY_TOL = 1e-6
COMPLEMENTARITY_TOL = 1e-6
INFEAS_TOL = 1e-7


@dataclass(frozen=True)
class Qp:
    p: np.ndarray
    q: np.ndarray
    g: np.ndarray
    h: np.ndarray
    const: float = 0.0

    def __post_init__(self):
        p = np.atleast_2d(np.asarray(self.p, dtype=float))
        q = np.atleast_1d(np.asarray(self.q, dtype=float))
        g = np.asarray(self.g, dtype=float).reshape(-1, q.size)
        h = np.atleast_1d(np.asarray(self.h, dtype=float)).reshape(g.shape[0])
        if p.shape != (q.size, q.size):
            raise ValueError("objective dimension mismatch")
        object.__setattr__(self, "p", 0.5 * (p + p.T))
        object.__setattr__(self, "q", q)
        object.__setattr__(self, "g", g)
        object.__setattr__(self, "h", h)

    @property
    def n_var(self) -> int:
        return self.q.size

    @property
    def n_con(self) -> int:
        return self.h.size

    def objective(self, x) -> float:
        return float(0.5 * x @ self.p @ x + self.q @ x + self.const)


@dataclass
class SolverResult:
    x: np.ndarray
    y: np.ndarray
    status: str
    iterations: int
    primal_res: float
    stationarity_res: float
    complementarity_res: float
    objective: float
    certificate: np.ndarray | None = None
    polished: bool = False

    @property
    def kkt_residual(self) -> float:
        return max(self.primal_res, self.stationarity_res, self.complementarity_res)


def _residuals(qp: Qp, x: np.ndarray, y: np.ndarray):
    slack = qp.h - qp.g @ x if qp.n_con else np.zeros(0)
    primal = float(max(0.0, -slack.min())) if qp.n_con else 0.0
    stat = qp.p @ x + qp.q
    if qp.n_con:
        stat = stat + qp.g.T @ y
    stationarity = float(np.max(np.abs(stat))) if stat.size else 0.0
    comp = float(np.max(np.abs(y * slack))) if qp.n_con else 0.0
    return primal, stationarity, comp


def _try_polish(qp: Qp, x: np.ndarray, y: np.ndarray):
    """Active-set refinement from the ADMM iterate; None when it fails.

    Adds every violated row and drops every negative-multiplier row per
    cycle; oscillation is caught by the cycle cap.
    """
    m, n = qp.n_con, qp.n_var
    slack = qp.h - qp.g @ x
    scale = np.maximum(1.0, np.abs(qp.h))
    active = set(np.flatnonzero((slack <= 1e-5 * scale) | (y >= 1e-8)))
    for _ in range(40):
        idx = sorted(active)
        g_a = qp.g[idx]
        k = len(idx)
        kkt = np.zeros((n + k, n + k))
        kkt[:n, :n] = qp.p
        if k:
            kkt[:n, n:] = g_a.T
            kkt[n:, :n] = g_a
            kkt[n:, n:] = -1e-12 * np.eye(k)
        rhs = np.concatenate([-qp.q, qp.h[idx]])
        try:
            sol = np.linalg.solve(kkt, rhs)
        except np.linalg.LinAlgError:
            sol, *_ = np.linalg.lstsq(kkt, rhs, rcond=None)
        x_new = sol[:n]
        nu = sol[n:]

        negative = [i for i, val in zip(idx, nu) if val < -1e-9]
        if negative:
            active.difference_update(negative)
            continue
        viol = qp.g @ x_new - qp.h
        blocked = np.flatnonzero(viol > PRIMAL_TOL * scale)
        if blocked.size:
            if any(int(i) in active for i in blocked):
                return None  # numerically stuck
            active.update(int(i) for i in blocked)
            continue
        y_new = np.zeros(m)
        y_new[idx] = np.maximum(nu, 0.0)
        return x_new, y_new
    return None


def _check_infeasibility(qp: Qp, dy: np.ndarray):
    norm = np.max(np.abs(dy)) if dy.size else 0.0
    if norm <= 1e-14:
        return None
    ray = np.maximum(dy, 0.0) / norm
    if np.max(np.abs(qp.g.T @ ray)) <= INFEAS_TOL and qp.h @ ray < -INFEAS_TOL:
        return ray
    return None


def solve_qp(
    qp: Qp,
    x0=None,
    y0=None,
    max_iter: int = 20_000,
    eps: float = 1e-9,
    rho: float = 0.1,
    sigma: float = 1e-6,
    alpha: float = 1.6,
    check_every: int = 25,
) -> SolverResult:
    """Solve the QP; returns a certified Optimal, Infeasible, or MaxIter result."""
    n, m = qp.n_var, qp.n_con
    try:
        p_fac = cho_factor(qp.p)
    except np.linalg.LinAlgError as exc:
        raise ValueError("objective must be positive definite") from exc

    if m == 0:
        x = cho_solve(p_fac, -qp.q)
        return SolverResult(
            x, np.zeros(0), OPTIMAL, 0, 0.0, 0.0, 0.0, qp.objective(x), polished=True
        )

    x = np.zeros(n) if x0 is None else np.asarray(x0, dtype=float).copy()
    y = np.zeros(m) if y0 is None else np.maximum(np.asarray(y0, dtype=float), 0.0)
    z = np.minimum(qp.g @ x, qp.h)

    def factor(rho_val):
        return cho_factor(qp.p + sigma * np.eye(n) + rho_val * qp.g.T @ qp.g)

    fac = factor(rho)
    y_checkpoint = y.copy()
    status = MAXITER
    scale_h = max(1.0, float(np.max(np.abs(qp.h))))
    scale_q = max(1.0, float(np.max(np.abs(qp.q))))

    def verified(x_cand, y_cand) -> bool:
        p_res, s_res, c_res = _residuals(qp, x_cand, y_cand)
        return (
            p_res <= PRIMAL_TOL * scale_h
            and s_res <= STATIONARITY_TOL * scale_q
            and c_res <= COMPLEMENTARITY_TOL * scale_h * scale_q
        )

    polished = False
    polish_level = 1e-4  # failed attempts back this off so they stay cheap
    it = 0
    for it in range(1, max_iter + 1):
        rhs = sigma * x - qp.q + qp.g.T @ (rho * z - y)
        x_tilde = cho_solve(fac, rhs)
        gx_tilde = qp.g @ x_tilde
        x = alpha * x_tilde + (1.0 - alpha) * x
        gx_relaxed = alpha * gx_tilde + (1.0 - alpha) * z
        z = np.minimum(gx_relaxed + y / rho, qp.h)
        y = y + rho * (gx_relaxed - z)

        if it % check_every == 0:
            gx = qp.g @ x
            r_prim = np.max(np.abs(gx - z))
            r_dual = np.max(np.abs(qp.p @ x + qp.q + qp.g.T @ y))
            prim_scale = max(1.0, np.max(np.abs(gx)), np.max(np.abs(z)))
            dual_scale = max(1.0, np.max(np.abs(qp.p @ x)), np.max(np.abs(qp.q)))
            if r_prim <= eps * prim_scale and r_dual <= eps * dual_scale:
                status = OPTIMAL
                break
            # a loose iterate usually already identifies the active set, so
            # try the polish early; only a verified KKT pass is accepted
            if r_prim <= polish_level * prim_scale and r_dual <= polish_level * dual_scale:
                refined = _try_polish(qp, x, y)
                if refined is not None and verified(*refined):
                    x, y = refined
                    status = OPTIMAL
                    polished = True
                    break
                polish_level = min(r_prim / prim_scale, r_dual / dual_scale) / 10.0
            ray = _check_infeasibility(qp, y - y_checkpoint)
            if ray is not None:
                res = float(np.max(np.abs(qp.g.T @ ray)))
                return SolverResult(
                    x, y, INFEASIBLE, it, np.inf, res, np.inf, np.inf, certificate=ray
                )
            y_checkpoint = y.copy()
            # step-size adaptation on the residual ratio
            ratio = (r_prim / prim_scale) / max(r_dual / dual_scale, 1e-16)
            rho_new = float(np.clip(rho * np.sqrt(ratio), 1e-6, 1e6))
            if rho_new > 5.0 * rho or rho_new < rho / 5.0:
                rho = rho_new
                fac = factor(rho)

    if not polished:
        refined = _try_polish(qp, x, y)
        if refined is not None:
            x_ref, y_ref = refined
            p_ref, s_ref, c_ref = _residuals(qp, x_ref, y_ref)
            p_cur, s_cur, c_cur = _residuals(qp, x, y)
            if max(p_ref, s_ref, c_ref) <= max(p_cur, s_cur, c_cur) or verified(x_ref, y_ref):
                x, y = x_ref, y_ref
                polished = True

    primal, stationarity, comp = _residuals(qp, x, y)
    ok = (
        primal <= PRIMAL_TOL * scale_h
        and stationarity <= STATIONARITY_TOL * scale_q
        and comp <= COMPLEMENTARITY_TOL * scale_h * scale_q
    )
    final_status = OPTIMAL if ok else (status if status != OPTIMAL else MAXITER)
    return SolverResult(
        x,
        y,
        final_status,
        it,
        primal,
        stationarity,
        comp,
        qp.objective(x),
        polished=polished,
    )
