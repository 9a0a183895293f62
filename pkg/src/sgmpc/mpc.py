"""Receding-horizon output-feedback controller.

The online problem minimizes the certainty-equivalent cost over nominal
inputs v_{0:H-1}:

    min  lf(xbar_H) + sum_i l(xbar_i, v_i + K (xbar_i - z_i))
    s.t. z_{i+1} = A z_i + B v_i,          z_0 = z_t
         xbar_{i+1} = A xbar_i + B u_i,    xbar_0 = x_hat_t
         (z_i, v_i) in tightened step set, z_H in terminal set.

States are eliminated by forward substitution (condensing); the offset
d_i = xbar_i - z_i = (A+BK)^i (x_hat_t - z_t) is input-independent, so the
decision variable is just the stacked v. The applied input each period is
u_t = K (x_hat_t - z_t) + v*_0, the nominal state advances with v*_0, and the
observer advances with the next measurement. On infeasibility at t > 0 the
controller falls back to the time-shifted previous plan, whose feasibility is
certified against the fresh constraint data before use.
"""
from __future__ import annotations

from dataclasses import dataclass, field, replace

import numpy as np

from . import qp as qp_mod
from .design import LinearSystem
from .qp import INFEASIBLE, MAXITER, OPTIMAL, Qp
from .tightening import TightenedSequence

FEAS_TOL = 1e-7
LYAPUNOV_TOL = 1e-8


class InfeasibleAtStartError(RuntimeError):
    """Problem 10 infeasible at t = 0; the controller cannot start."""


def _check_pd(mat, name):
    m = np.atleast_2d(np.asarray(mat, dtype=float))
    if np.max(np.abs(m - m.T)) > 1e-10 * max(1.0, float(np.max(np.abs(m)))):
        raise ValueError(f"{name} must be symmetric")
    if np.linalg.eigvalsh(0.5 * (m + m.T))[0] <= 0.0:
        raise ValueError(f"{name} must be positive definite")
    return 0.5 * (m + m.T)


@dataclass(frozen=True, eq=False)
class _CondensedMaps:
    """State-elimination matrices shared by every solve under one config."""

    f_stack: np.ndarray      # (H+1)n x n, blocks A^i
    gamma: np.ndarray        # (H+1)n x Hm, blocks A^(i-1-j) B
    acl_pows: np.ndarray     # (H+1, n, n), powers of A + BK
    hessian: np.ndarray      # constant QP hessian (2x the quadratic form)
    w_cost: np.ndarray       # gamma' Qbar, for the linear term
    g_mat: np.ndarray        # stacked constraint rows over V
    hz_f: np.ndarray         # maps z0 to the rhs shift
    b_all: np.ndarray        # raw offsets
    q_bar: np.ndarray        # blockdiag(Q..Q, P)
    r_blk: np.ndarray        # R


@dataclass(frozen=True, eq=False)
class MpcConfig:
    """Immutable controller data: model, gains, costs, and tightened sets.

    target_state/target_input set the tracking objective; steady_state and
    steady_input are the feasible artificial equilibrium whose neighborhood
    the terminal set was built around (the target itself may sit on or beyond
    the tightened boundary).
    """

    system: LinearSystem
    k: np.ndarray
    l: np.ndarray
    horizon: int
    q: np.ndarray
    r: np.ndarray
    p: np.ndarray
    tightened: TightenedSequence
    target_state: np.ndarray
    target_input: np.ndarray
    steady_state: np.ndarray
    steady_input: np.ndarray
    maps: _CondensedMaps = field(init=False, repr=False)

    def __post_init__(self):
        sys = self.system
        n, m = sys.n_x, sys.n_u
        if self.horizon < 1:
            raise ValueError("horizon must be >= 1")
        q = _check_pd(self.q, "q")
        r = _check_pd(self.r, "r")
        p = _check_pd(self.p, "p")
        k = np.atleast_2d(np.asarray(self.k, dtype=float))
        l = np.atleast_2d(np.asarray(self.l, dtype=float))
        if k.shape != (m, n) or l.shape != (n, sys.n_y):
            raise ValueError("gain dimensions inconsistent with the system")
        for name in ("target_state", "steady_state"):
            vec = np.atleast_1d(np.asarray(getattr(self, name), dtype=float))
            if vec.size != n:
                raise ValueError(f"{name} dimension mismatch")
            object.__setattr__(self, name, vec)
        for name in ("target_input", "steady_input"):
            vec = np.atleast_1d(np.asarray(getattr(self, name), dtype=float))
            if vec.size != m:
                raise ValueError(f"{name} dimension mismatch")
            object.__setattr__(self, name, vec)
        object.__setattr__(self, "q", q)
        object.__setattr__(self, "r", r)
        object.__setattr__(self, "p", p)
        object.__setattr__(self, "k", k)
        object.__setattr__(self, "l", l)

        a_cl = sys.a + sys.b @ k
        lyap = a_cl.T @ p @ a_cl - p + q + k.T @ r @ k
        lam_max = float(np.linalg.eigvalsh(0.5 * (lyap + lyap.T))[-1])
        if lam_max > LYAPUNOV_TOL * max(1.0, float(np.linalg.norm(p, 2))):
            raise ValueError(
                f"terminal cost violates the Lyapunov decrease condition ({lam_max:.3e})"
            )

        drift = self.steady_state - (sys.a @ self.steady_state + sys.b @ self.steady_input)
        if np.linalg.norm(drift) > 1e-8 * max(1.0, np.linalg.norm(self.steady_state)):
            raise ValueError("steady_state/steady_input is not an equilibrium")
        zv = np.concatenate([self.steady_state, self.steady_input])
        for i, poly in enumerate(self.tightened.per_step):
            if not poly.contains(zv[None, :], tol=1e-9)[0]:
                raise ValueError(f"artificial equilibrium violates tightened step set {i}")
        if not self.tightened.terminal.contains(self.steady_state[None, :], tol=1e-9)[0]:
            raise ValueError("artificial equilibrium outside the terminal set")

        object.__setattr__(self, "maps", _build_maps(self))

    @property
    def n_x(self) -> int:
        return self.system.n_x

    @property
    def n_u(self) -> int:
        return self.system.n_u


def _build_maps(cfg: MpcConfig) -> _CondensedMaps:
    sys, h_len = cfg.system, cfg.horizon
    a, b = sys.a, sys.b
    n, m = sys.n_x, sys.n_u
    a_cl = a + b @ cfg.k

    a_pows = [np.eye(n)]
    acl_pows = [np.eye(n)]
    for _ in range(h_len):
        a_pows.append(a @ a_pows[-1])
        acl_pows.append(a_cl @ acl_pows[-1])
    f_stack = np.vstack(a_pows)

    gamma = np.zeros(((h_len + 1) * n, h_len * m))
    for i in range(1, h_len + 1):
        for j in range(i):
            gamma[i * n : (i + 1) * n, j * m : (j + 1) * m] = a_pows[i - 1 - j] @ b

    q_bar = np.zeros(((h_len + 1) * n, (h_len + 1) * n))
    for i in range(h_len):
        q_bar[i * n : (i + 1) * n, i * n : (i + 1) * n] = cfg.q
    q_bar[h_len * n :, h_len * n :] = cfg.p

    w_cost = gamma.T @ q_bar
    hessian = 2.0 * (w_cost @ gamma + np.kron(np.eye(h_len), cfg.r))
    hessian = 0.5 * (hessian + hessian.T)

    g_rows, hzf_rows, b_rows = [], [], []
    for i in range(h_len):
        poly = cfg.tightened.step(i)
        hz, hv = poly.a[:, :n], poly.a[:, n:]
        g_rows.append(hz @ gamma[i * n : (i + 1) * n] + _v_block(hv, i, h_len))
        hzf_rows.append(hz @ f_stack[i * n : (i + 1) * n])
        b_rows.append(poly.b)
    term = cfg.tightened.terminal
    g_rows.append(term.a @ gamma[h_len * n :])
    hzf_rows.append(term.a @ f_stack[h_len * n :])
    b_rows.append(term.b)

    return _CondensedMaps(
        f_stack=f_stack,
        gamma=gamma,
        acl_pows=np.stack(acl_pows),
        hessian=hessian,
        w_cost=w_cost,
        g_mat=np.vstack(g_rows),
        hz_f=np.vstack(hzf_rows),
        b_all=np.concatenate(b_rows),
        q_bar=q_bar,
        r_blk=cfg.r,
    )


def _v_block(hv: np.ndarray, i: int, h_len: int) -> np.ndarray:
    m = hv.shape[1]
    out = np.zeros((hv.shape[0], h_len * m))
    out[:, i * m : (i + 1) * m] = hv
    return out


@dataclass(frozen=True)
class ControllerState:
    """Nominal state, one-step state-estimate prediction, and the shifted plan."""

    z: np.ndarray
    x_hat_pred: np.ndarray
    t: int = 0
    candidate: np.ndarray | None = None
    y_warm: np.ndarray | None = None


def init_state(cfg: MpcConfig, mu0, x_hat0) -> ControllerState:
    """Start the controller at z_0 = mu0 with the given initial estimate."""
    return ControllerState(
        z=np.atleast_1d(np.asarray(mu0, dtype=float)),
        x_hat_pred=np.atleast_1d(np.asarray(x_hat0, dtype=float)),
    )


@dataclass(frozen=True)
class AssembledQp:
    """Condensed QP for one solve, plus the data to rebuild trajectories."""

    qp: Qp
    z_base: np.ndarray   # (H+1, n): A^i z0
    d_offsets: np.ndarray  # (H+1, n): (A+BK)^i (x_hat - z)
    const_violation: float
    gamma: np.ndarray = field(repr=False, default=None)

    def z_traj(self, v: np.ndarray) -> np.ndarray:
        h_len = self.z_base.shape[0] - 1
        n = self.z_base.shape[1]
        flat = self.z_base.reshape(-1) + self.gamma @ v
        return flat.reshape(h_len + 1, n)

    def xbar_traj(self, v: np.ndarray) -> np.ndarray:
        return self.z_traj(v) + self.d_offsets


@dataclass(frozen=True)
class QpSolution:
    v: np.ndarray         # (H, n_u)
    z_traj: np.ndarray    # (H+1, n_x)
    xbar_traj: np.ndarray
    objective: float
    kkt_residual: float
    status: str
    iterations: int = 0
    y: np.ndarray | None = None


def assemble_qp(cfg: MpcConfig, state: ControllerState, x_hat=None) -> AssembledQp:
    """Condense Problem 10 at (z_t, x_hat_t) into an inequality-form QP."""
    maps = cfg.maps
    h_len, n, m = cfg.horizon, cfg.n_x, cfg.n_u
    z0 = state.z
    xh = state.x_hat_pred if x_hat is None else np.asarray(x_hat, dtype=float)
    if z0.size != n or xh.size != n:
        raise ValueError("state dimension mismatch")

    d0 = xh - z0
    d_offsets = maps.acl_pows @ d0  # (H+1, n)
    z_base = (maps.f_stack @ z0).reshape(h_len + 1, n)

    c_stack = (z_base + d_offsets - cfg.target_state).reshape(-1)
    e_stack = (d_offsets[:h_len] @ cfg.k.T - cfg.target_input).reshape(-1)
    r_big = np.kron(np.eye(h_len), maps.r_blk)
    q_lin = 2.0 * (maps.w_cost @ c_stack + r_big @ e_stack)
    const = float(c_stack @ maps.q_bar @ c_stack + e_stack @ r_big @ e_stack)

    h_vec = maps.b_all - maps.hz_f @ z0
    g_mat = maps.g_mat
    row_norms = np.linalg.norm(g_mat, axis=1)
    const_rows = row_norms <= 1e-12
    const_violation = 0.0
    if np.any(const_rows):
        # rows without decision content are checked here, not handed to the
        # solver; dropping all of them keeps n_con identical across steps so
        # dual warm starts stay valid
        worst = float(np.min(h_vec[const_rows]))
        const_violation = max(0.0, -worst)
        g_mat = g_mat[~const_rows]
        h_vec = h_vec[~const_rows]

    return AssembledQp(
        qp=Qp(maps.hessian, q_lin, g_mat, h_vec, const),
        z_base=z_base,
        d_offsets=d_offsets,
        const_violation=const_violation,
        gamma=maps.gamma,
    )


def solve_qp(asm: AssembledQp, warm_v=None, warm_y=None, max_iter: int = 20_000) -> QpSolution:
    """Solve the assembled QP and decode the predicted trajectories."""
    if warm_v is not None and np.size(warm_v) != asm.qp.n_var:
        warm_v = None
    if warm_y is not None and np.size(warm_y) != asm.qp.n_con:
        warm_y = None
    if asm.const_violation > FEAS_TOL:
        h_len = asm.z_base.shape[0] - 1
        m = asm.qp.n_var // h_len
        return QpSolution(
            v=np.zeros((h_len, m)),
            z_traj=asm.z_base,
            xbar_traj=asm.z_base + asm.d_offsets,
            objective=np.inf,
            kkt_residual=np.inf,
            status=INFEASIBLE,
            y=np.zeros(asm.qp.n_con),
        )
    res = qp_mod.solve_qp(asm.qp, x0=warm_v, y0=warm_y, max_iter=max_iter)
    h_len = asm.z_base.shape[0] - 1
    m = asm.qp.n_var // h_len
    if res.status != OPTIMAL:
        return QpSolution(
            v=res.x.reshape(h_len, m),
            z_traj=asm.z_traj(res.x),
            xbar_traj=asm.xbar_traj(res.x),
            objective=res.objective,
            kkt_residual=res.kkt_residual,
            status=res.status,
            iterations=res.iterations,
            y=res.y,
        )
    return QpSolution(
        v=res.x.reshape(h_len, m),
        z_traj=asm.z_traj(res.x),
        xbar_traj=asm.xbar_traj(res.x),
        objective=res.objective,
        kkt_residual=res.kkt_residual,
        status=OPTIMAL,
        iterations=res.iterations,
        y=res.y,
    )


@dataclass(frozen=True)
class StepDiagnostics:
    t: int
    objective: float
    kkt_residual: float
    status: str
    fallback: bool
    iterations: int
    fallback_certified: bool = True


def _shift_candidate(cfg: MpcConfig, v_flat: np.ndarray, z_h: np.ndarray) -> np.ndarray:
    m = cfg.n_u
    tail = cfg.steady_input + cfg.k @ (z_h - cfg.steady_state)
    return np.concatenate([v_flat[m:], tail])


def step(cfg: MpcConfig, state: ControllerState, y=None):
    """One control period: observer correction, QP solve (or certified
    fallback), input application, and nominal/prediction advance.

    y is the measurement of the current state x_t; it is unused at t = 0
    where the estimate is initialized directly.
    """
    sys = cfg.system
    if state.t == 0:
        x_hat = state.x_hat_pred
    else:
        if y is None:
            raise ValueError("measurement required for t > 0")
        y = np.atleast_1d(np.asarray(y, dtype=float))
        pred = state.x_hat_pred
        x_hat = pred + cfg.l @ (y - sys.c @ pred)

    asm = assemble_qp(cfg, state, x_hat=x_hat)
    sol = solve_qp(asm, warm_v=state.candidate, warm_y=state.y_warm)

    fallback = False
    fallback_certified = True
    if sol.status == OPTIMAL:
        v_flat = sol.v.reshape(-1)
    elif sol.status == INFEASIBLE and state.t == 0:
        raise InfeasibleAtStartError(
            "Problem infeasible at t = 0 "
            f"(constant-row violation {asm.const_violation:.3e})"
        )
    elif sol.status == INFEASIBLE:
        if state.candidate is None:
            raise RuntimeError("infeasible QP with no stored candidate plan")
        v_flat = state.candidate
        viol = asm.qp.g @ v_flat - asm.qp.h
        worst = float(np.max(viol)) if viol.size else 0.0
        fallback_certified = worst <= FEAS_TOL * max(1.0, float(np.max(np.abs(asm.qp.h))))
        if not fallback_certified:
            raise RuntimeError(
                f"shifted candidate failed the feasibility certificate ({worst:.3e})"
            )
        fallback = True
        sol = QpSolution(
            v=v_flat.reshape(cfg.horizon, cfg.n_u),
            z_traj=asm.z_traj(v_flat),
            xbar_traj=asm.xbar_traj(v_flat),
            objective=asm.qp.objective(v_flat),
            kkt_residual=np.inf,
            status=INFEASIBLE,
        )
    else:
        raise RuntimeError(f"QP solver failed to converge (status {sol.status})")

    v0 = v_flat[: cfg.n_u]
    u = cfg.k @ (x_hat - state.z) + v0

    z_next = sys.a @ state.z + sys.b @ v0
    x_hat_pred_next = sys.a @ x_hat + sys.b @ u
    candidate = _shift_candidate(cfg, v_flat, sol.z_traj[-1])
    new_state = ControllerState(
        z=z_next,
        x_hat_pred=x_hat_pred_next,
        t=state.t + 1,
        candidate=candidate,
        y_warm=sol.y if sol.status == OPTIMAL else None,
    )
    diag = StepDiagnostics(
        t=state.t,
        objective=sol.objective,
        kkt_residual=sol.kkt_residual,
        status=sol.status,
        fallback=fallback,
        iterations=sol.iterations,
        fallback_certified=fallback_certified,
    )
    return u, new_state, diag
