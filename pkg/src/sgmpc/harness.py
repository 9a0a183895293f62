"""Monte-Carlo harness: offline design, tightened controller assembly for
each uncertainty method, closed-loop campaigns, and the containment / MPC
metrics.

Conventions fixed here (and relied on by the metrics):
  - the observer is initialized at the true state (x_hat_0 = x_0), which is
    what makes the sigma0^2 I initial proxy on the stacked error valid;
  - constraint tightening is uniform over the horizon at the sup-over-time
    support level (per constraint row), so the shifted candidate plan stays
    feasible without any monotonicity assumption;
  - the heteroscedastic rule is handled by calibrating proxies, covariances,
    and support boxes on the worst (largest-multiplier) noise branch.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import mpc
from .baselines import RobustNoiseBounds, dr_propagate, robust_propagate
from .bounds import Box, Ellipsoid, elliptical_radius_sq, support_function
from .design import (
    ErrorSystem,
    LinearSystem,
    NoiseSpec,
    build_error_system,
    design_observer,
    solve_dare,
)
from .envs import Environment, sample_noise
from .mpc import InfeasibleAtStartError, MpcConfig, init_state
from .reachability import propagate_proxy
from .subgaussian import calibrate_scalar_proxy
from .tightening import (
    EmptyTightenedError,
    Polytope,
    TightenedSequence,
    maximal_invariant_set,
)

METHODS = ("subgaussian", "dr", "robust")
STEADY_STEPS = 400


@dataclass(frozen=True)
class DesignBundle:
    """Offline design artifacts shared by every method on one environment."""

    system: LinearSystem
    k: np.ndarray
    l: np.ndarray
    err: ErrorSystem
    noise_spec: NoiseSpec
    bounds: RobustNoiseBounds
    cov_w: np.ndarray
    cov_eps: np.ndarray
    cov0: np.ndarray          # stacked-error initial covariance
    proxy_cov_w: np.ndarray   # sigma_w^2 I etc., the proxy-sourced DR option
    proxy_cov_eps: np.ndarray
    proxy_cov0: np.ndarray
    q_ctrl: np.ndarray
    r_ctrl: np.ndarray
    p_ctrl: np.ndarray
    n_samples: int
    rng_seed: int


def calibrate_design(
    env: Environment,
    n_samples: int = 5000,
    rng_seed: int = 12345,
    q_ctrl=None,
    r_ctrl=None,
) -> DesignBundle:
    """Draw calibration samples, fit proxies / covariances / support boxes on
    the worst noise branch, and design the feedback and observer gains."""
    sys = env.system
    n = sys.n_x
    rng = np.random.default_rng(np.random.SeedSequence(rng_seed))

    w_base = env.noise.w_family.draw(rng, n_samples, n)
    eps_base = env.noise.eps_family.draw(rng, n_samples, n)
    x0_base = env.init_family.draw(rng, n_samples, n)
    mult = env.noise.max_multiplier
    w_samples = mult * w_base
    eps_samples = mult * eps_base

    noise_spec = NoiseSpec(
        sigma0=calibrate_scalar_proxy(x0_base),
        sigma_w=calibrate_scalar_proxy(w_samples),
        sigma_eps=calibrate_scalar_proxy(eps_samples),
    )

    q_ctrl = np.asarray(env.q_env if q_ctrl is None else q_ctrl, dtype=float)
    if r_ctrl is None:
        r_env = np.atleast_2d(env.r_env)
        r_ctrl = r_env if np.linalg.eigvalsh(r_env)[0] > 0.0 else 0.1 * np.eye(sys.n_u)
    r_ctrl = np.atleast_2d(np.asarray(r_ctrl, dtype=float))
    p_ctrl, k = solve_dare(sys.a, sys.b, q_ctrl, r_ctrl)
    l = design_observer(sys, noise_spec)
    err = build_error_system(sys, k, l)

    # robust baseline gets the true support boxes (truncation radii, worst
    # heteroscedastic branch), not sample min/max: fresh draws may exceed any
    # finite sample and the worst-case sets must contain every realization
    r_w = mult * env.noise.w_family.trunc_radius
    r_eps = mult * env.noise.eps_family.trunc_radius
    r_x0 = env.init_family.trunc_radius
    bounds = RobustNoiseBounds(
        w_box=Box(np.full(n, -r_w), np.full(n, r_w)),
        eps_box=Box(np.full(n, -r_eps), np.full(n, r_eps)),
        x0_box=Box(np.full(n, -r_x0), np.full(n, r_x0)),
    )
    cov_w = np.atleast_2d(np.cov(w_samples.T))
    cov_eps = np.atleast_2d(np.cov(eps_samples.T))
    cov_x0 = np.atleast_2d(np.cov(x0_base.T))
    cov0 = np.zeros((2 * n, 2 * n))
    cov0[n:, n:] = cov_x0  # x_hat_0 = x_0 leaves no initial estimation error

    return DesignBundle(
        system=sys,
        k=k,
        l=l,
        err=err,
        noise_spec=noise_spec,
        bounds=bounds,
        cov_w=cov_w,
        cov_eps=cov_eps,
        cov0=cov0,
        proxy_cov_w=noise_spec.sigma_w.sigma**2 * np.eye(n),
        proxy_cov_eps=noise_spec.sigma_eps.sigma**2 * np.eye(n),
        proxy_cov0=noise_spec.sigma0.sigma**2 * np.eye(2 * n),
        q_ctrl=q_ctrl,
        r_ctrl=r_ctrl,
        p_ctrl=p_ctrl,
        n_samples=n_samples,
        rng_seed=rng_seed,
    )


def _dr_covariances(bundle: DesignBundle, dr_source: str):
    if dr_source == "proxy":
        return bundle.proxy_cov_w, bundle.proxy_cov_eps, bundle.proxy_cov0
    if dr_source == "empirical":
        return bundle.cov_w, bundle.cov_eps, bundle.cov0
    raise ValueError(f"unknown dr_source {dr_source!r}")


# ---------------------------------------------------------------------------
# per-method uncertainty sets on the constraint space (x - z, u - v)


def _deviation_geometry(bundle: DesignBundle, env: Environment):
    """How the stage constraints read the stacked error.

    Rows that touch the input need the joint (x - z, u - v) deviation; pure
    state rows only see e2 = x - z, and the smaller marginal keeps the
    dimension-dependent radii (joint elliptical, Chebyshev) from over-padding.
    Whether rows are tightened one half-space at a time or held jointly is the
    environment's declaration (env.prs), independent of the projection.

    Returns (proj, row_map, per_row): proj maps the stacked error to the
    deviation the sets live on, row_map sends a stacked constraint row to a
    functional on that space.
    """
    err = bundle.err
    n, n_u = env.system.n_x, env.system.n_u
    per_row = env.prs == "half_space"
    if np.any(np.abs(env.constraints.a[:, n:]) > 0.0):
        return err.k_e, np.eye(n + n_u), per_row
    proj = np.hstack([np.zeros((n, n)), np.eye(n)])
    row_map = np.vstack([np.eye(n), np.zeros((n_u, n))])
    return proj, row_map, per_row


def _constraint_sets(
    bundle: DesignBundle,
    env: Environment,
    delta: float,
    method: str,
    dr_source: str = "empirical",
):
    """Per-step confidence sets for the constraint-facing deviation over the
    steady window, plus a converged steady set computed on a window twice as
    long."""
    err = bundle.err
    proj, _, per_row = _deviation_geometry(bundle, env)
    n_dim = proj.shape[0]
    if method == "subgaussian":
        seq = propagate_proxy(err, bundle.noise_spec, STEADY_STEPS)
        radius_sq = (
            2.0 * np.log(1.0 / delta)
            if per_row
            else elliptical_radius_sq(n_dim, delta)
        )
        sets = [
            Ellipsoid(np.zeros(n_dim), proj @ s @ proj.T, radius_sq)
            for s in seq.per_step
        ]
        steady = Ellipsoid(np.zeros(n_dim), proj @ seq.steady @ proj.T, radius_sq)
        return sets, steady
    if method == "dr":
        cov_w, cov_eps, cov0 = _dr_covariances(bundle, dr_source)
        n_c = 1 if per_row else n_dim
        long_run = dr_propagate(
            err, cov_w, cov_eps, delta, 2 * STEADY_STEPS, cov0=cov0, proj=proj, n_c=n_c
        )
        return long_run[: STEADY_STEPS + 1], long_run[-1]
    if method == "robust":
        long_run = robust_propagate(bundle.err, bundle.bounds, 2 * STEADY_STEPS, proj=proj)
        return list(long_run)[: STEADY_STEPS + 1], long_run[-1]
    raise ValueError(f"unknown method {method!r}")


def _sup_supports(rows: np.ndarray, sets, steady) -> np.ndarray:
    """Per-row sup over time of the support function, steady set included."""
    sup = np.full(rows.shape[0], -np.inf)
    for s in list(sets) + [steady]:
        vals = np.array([support_function(s, row) for row in rows])
        sup = np.maximum(sup, vals)
    return sup


def build_tightening(
    bundle: DesignBundle,
    env: Environment,
    delta: float,
    method: str,
    dr_source: str = "empirical",
) -> tuple[Polytope, np.ndarray]:
    """Uniform (sup-over-time) row tightening of the stage constraints.

    Returns the tightened stage polytope and the per-row tightening amounts.
    Raises EmptyTightenedError when a method's sets swallow the constraints.
    """
    sets, steady = _constraint_sets(bundle, env, delta, method, dr_source=dr_source)
    _, row_map, _ = _deviation_geometry(bundle, env)
    rows = env.constraints.a
    srows = rows @ row_map
    sup = _sup_supports(srows, sets, steady)
    # certify the window end is converged, so the max over it is the sup over
    # all times (the recursions are contractions toward the steady set)
    last = np.array([support_function(sets[-1], row) for row in srows])
    steady_vals = np.array([support_function(steady, row) for row in srows])
    if np.any(np.abs(last - steady_vals) > 1e-6 * np.maximum(1.0, np.abs(steady_vals))):
        raise RuntimeError("support recursion not converged within the steady window")
    tightened = Polytope(rows, env.constraints.b - sup)
    return tightened, sup


def steady_equilibrium(env: Environment, tightened: Polytope, margin: float = 0.99):
    """Artificial steady state on the segment mu0 -> target, pushed as far
    toward the target as the tightened constraints allow (with a strict
    interior margin so the terminal set has volume)."""
    sys = env.system
    d = env.target_state - env.mu0
    dist = float(np.linalg.norm(d))
    if dist == 0.0:
        raise ValueError("target coincides with mu0")
    d = d / dist
    eye_a = np.eye(sys.n_x) - sys.a
    v_base, *_ = np.linalg.lstsq(sys.b, eye_a @ env.mu0, rcond=None)
    v_dir, *_ = np.linalg.lstsq(sys.b, eye_a @ d, rcond=None)
    resid = max(
        float(np.linalg.norm(eye_a @ env.mu0 - sys.b @ v_base)),
        float(np.linalg.norm(eye_a @ d - sys.b @ v_dir)),
    )
    if resid > 1e-9:
        raise ValueError("no equilibrium family along the target direction")
    base_pt = np.concatenate([env.mu0, v_base])
    coefs = tightened.a @ np.concatenate([d, v_dir])
    offs = margin * tightened.b - tightened.a @ base_pt
    if np.any(offs <= 0.0):
        raise InfeasibleAtStartError(
            "initial nominal equilibrium violates the tightened constraints"
        )
    caps = np.where(coefs > 1e-12, offs / np.maximum(coefs, 1e-300), np.inf)
    p = float(min(np.min(caps), dist))
    z_s = env.mu0 + p * d
    u_s = v_base + p * v_dir
    return z_s, u_s


def terminal_set(
    sys: LinearSystem, k: np.ndarray, tightened: Polytope, z_s, u_s
) -> Polytope:
    """Maximal invariant set around the artificial equilibrium under the
    terminal controller u = u_s + K (z - z_s), expressed in z coordinates."""
    n = sys.n_x
    hx = tightened.a[:, :n]
    hu = tightened.a[:, n:]
    rows = hx + hu @ k
    offs = tightened.b - hx @ z_s - hu @ u_s
    norms = np.linalg.norm(rows, axis=1)
    live = norms > 1e-12
    if np.any(offs[~live] < 0.0):
        raise EmptyTightenedError("terminal controller violates a fixed constraint")
    base = Polytope(rows[live], offs[live])
    a_cl = sys.a + sys.b @ k
    mpi = maximal_invariant_set(a_cl, base)
    return Polytope(mpi.a, mpi.b + mpi.a @ z_s)


def make_controller_config(
    env: Environment,
    bundle: DesignBundle,
    delta: float,
    horizon: int,
    method: str = "subgaussian",
    dr_source: str = "empirical",
) -> MpcConfig:
    """Assemble the full receding-horizon configuration for one method.

    Raises EmptyTightenedError or InfeasibleAtStartError when the method's
    uncertainty sets leave no feasible controller (the robust baseline's
    expected fate on tight input bounds)."""
    tightened, _ = build_tightening(bundle, env, delta, method, dr_source=dr_source)
    z_s, u_s = steady_equilibrium(env, tightened)
    term = terminal_set(env.system, bundle.k, tightened, z_s, u_s)
    return MpcConfig(
        system=env.system,
        k=bundle.k,
        l=bundle.l,
        horizon=horizon,
        q=bundle.q_ctrl,
        r=bundle.r_ctrl,
        p=bundle.p_ctrl,
        tightened=TightenedSequence(per_step=(tightened,) * horizon, terminal=term),
        target_state=env.target_state,
        target_input=env.target_input,
        steady_state=z_s,
        steady_input=u_s,
    )


def make_controller_factory(
    env: Environment,
    bundle: DesignBundle,
    delta: float,
    horizon: int,
    method: str = "subgaussian",
    dr_source: str = "empirical",
):
    """Build the (immutable) config once; the factory hands it to each trial."""
    cfg = make_controller_config(
        env, bundle, delta, horizon, method, dr_source=dr_source
    )
    return lambda: cfg


# ---------------------------------------------------------------------------
# closed-loop campaigns


@dataclass(frozen=True)
class TrialRecord:
    """One closed-loop rollout; cost is exactly recomputable from the data."""

    states: np.ndarray        # (T+1, n)
    inputs: np.ndarray        # (T, m)
    measurements: np.ndarray  # (T, p), entry t is y_t (unused at t = 0)
    violations: np.ndarray    # (T+1,) bool, true safety constraints
    cost: float
    fallbacks: int
    seed: str

    def __post_init__(self):
        t = self.inputs.shape[0]
        if self.states.shape[0] != t + 1 or self.measurements.shape[0] != t:
            raise ValueError("trajectory lengths inconsistent")
        if self.violations.shape[0] != t + 1:
            raise ValueError("violation flags inconsistent")


def _run_trial(
    env: Environment,
    cfg: MpcConfig,
    horizon_t: int,
    rng,
    seed_label: str,
    diag_sink=None,
):
    sys = env.system
    x = env.mu0 + env.init_family.draw(rng, 1, sys.n_x)[0]
    state = init_state(cfg, env.mu0, x)
    states = [x]
    inputs, measurements = [], []
    fallbacks = 0
    cost = 0.0
    for t in range(horizon_t):
        if not np.all(np.isfinite(x)):
            raise RuntimeError(f"non-finite state at step {t} (trial seed {seed_label})")
        w, eps = sample_noise(env.noise, x, rng)
        y = sys.c @ x + eps
        u, state, diag = mpc.step(cfg, state, y=None if t == 0 else y)
        if diag_sink is not None:
            diag_sink(
                {
                    "trial": seed_label,
                    "t": t,
                    "objective": diag.objective,
                    "kkt_residual": diag.kkt_residual,
                    "status": diag.status,
                    "fallback": bool(diag.fallback),
                }
            )
        fallbacks += int(diag.fallback)
        cost += env.stage_cost(x, u)
        x = sys.a @ x + sys.b @ u + w
        measurements.append(y)
        inputs.append(u)
        states.append(x)
    states = np.array(states)
    return TrialRecord(
        states=states,
        inputs=np.array(inputs),
        measurements=np.array(measurements),
        violations=env.violations(states),
        cost=cost,
        fallbacks=fallbacks,
        seed=seed_label,
    )


def run_campaign(
    env: Environment,
    controller_factory,
    n_trials: int,
    horizon_T: int,
    rng_seed: int,
    diag_sink=None,
) -> list:
    """n_trials independent rollouts with per-trial seeds spawned from
    rng_seed; deterministic for a fixed seed regardless of worker count
    (trials are run and reduced in index order)."""
    if n_trials < 1 or horizon_T < 1:
        raise ValueError("n_trials and horizon_T must be >= 1")
    root = np.random.SeedSequence(rng_seed)
    children = root.spawn(n_trials)
    records = []
    for idx, child in enumerate(children):
        cfg = controller_factory()
        rng = np.random.default_rng(child)
        records.append(
            _run_trial(env, cfg, horizon_T, rng, f"{rng_seed}:{idx}", diag_sink)
        )
    return records


# ---------------------------------------------------------------------------
# open-loop error trajectories (containment study)


def simulate_error_trajectories(
    env: Environment,
    bundle: DesignBundle,
    n_traj: int,
    steps: int,
    rng_seed: int,
):
    """Vectorized rollout of the stacked error dynamics under a fixed nominal
    plan steered toward the target; returns errors of shape
    (n_traj, steps+1, 2n) with blocks (x - x_hat, x - z).

    The measurement noise entering the observer update at t+1 is drawn with
    the heteroscedastic predicate evaluated at x_{t+1}, matching the
    closed-loop timing in _run_trial.
    """
    sys = env.system
    n = sys.n_x
    err = bundle.err
    a_e = err.a_e
    a11 = a_e[:n, :n]      # (I - LC) A
    a21 = a_e[n:, :n]      # -BK
    a22 = a_e[n:, n:]      # A + BK
    b1_top = err.b1_e[:n]  # I - LC
    l_gain = bundle.l

    rng = np.random.default_rng(np.random.SeedSequence(rng_seed))
    x0 = env.mu0 + env.init_family.draw(rng, n_traj, n)
    e1 = np.zeros((n_traj, n))   # x - x_hat, zero because x_hat_0 = x_0
    e2 = x0 - env.mu0            # x - z
    z = env.mu0.copy()

    out = np.empty((n_traj, steps + 1, 2 * n))
    out[:, 0, :n] = e1
    out[:, 0, n:] = e2
    for t in range(steps):
        x_true = z + e2
        mult = env.noise.multipliers(x_true)[:, None]
        w = env.noise.w_family.draw(rng, n_traj, n) * mult
        v = env.target_input + bundle.k @ (z - env.target_state)
        z_next = sys.a @ z + sys.b @ v
        e2_next = e2 @ a22.T + e1 @ a21.T + w
        x_next = z_next + e2_next
        mult_next = env.noise.multipliers(x_next)[:, None]
        eps_next = env.noise.eps_family.draw(rng, n_traj, n) * mult_next
        e1_next = e1 @ a11.T + w @ b1_top.T - eps_next @ l_gain.T
        e1, e2, z = e1_next, e2_next, z_next
        out[:, t + 1, :n] = e1
        out[:, t + 1, n:] = e2
    return out


def state_error_sets(
    bundle: DesignBundle,
    env: Environment,
    delta: float,
    steps: int,
    method: str,
    dr_source: str = "empirical",
):
    """Per-step confidence sets on the tracking error x - z for t = 0..steps
    (the marginal every method is scored on in the containment study)."""
    n = bundle.system.n_x
    proj = np.hstack([np.zeros((n, n)), np.eye(n)])
    if method == "subgaussian":
        seq = propagate_proxy(bundle.err, bundle.noise_spec, steps + 1)
        radius_sq = elliptical_radius_sq(n, delta)
        return [
            Ellipsoid(np.zeros(n), proj @ s @ proj.T, radius_sq) for s in seq.per_step
        ]
    if method == "dr":
        cov_w, cov_eps, cov0 = _dr_covariances(bundle, dr_source)
        return dr_propagate(
            bundle.err, cov_w, cov_eps, delta, steps, cov0=cov0, proj=proj, n_c=n
        )
    if method == "robust":
        return list(robust_propagate(bundle.err, bundle.bounds, steps, proj=proj))
    raise ValueError(f"unknown method {method!r}")


def containment_metrics(error_trajectories, sets):
    """Fraction of trajectories inside the per-step sets; returns
    (min over time in percent, the per-step list).

    Trajectories may carry the stacked error; they are scored on their
    trailing block matching the set dimension (the tracking error)."""
    errors = np.asarray(error_trajectories, dtype=float)
    if errors.ndim != 3 or errors.shape[0] == 0:
        raise ValueError("expected nonempty (n_traj, steps+1, dim) errors")
    steps = errors.shape[1]
    if len(sets) != steps:
        raise ValueError("trajectory and set horizons must match")
    first = sets[0]
    dim = first.lower.size if hasattr(first, "lower") else first.center.size
    if errors.shape[2] < dim:
        raise ValueError("error dimension smaller than the set dimension")
    pts = errors[:, :, -dim:]
    per_step = []
    for t in range(steps):
        inside = sets[t].contains(pts[:, t, :])
        per_step.append(100.0 * float(np.mean(inside)))
    return min(per_step), per_step


def support_curves(sets, direction) -> np.ndarray:
    """Support function of each per-step set along one direction."""
    direction = np.asarray(direction, dtype=float)
    return np.array([support_function(s, direction) for s in sets])


def empirical_quantile_curve(error_trajectories, direction, level: float) -> np.ndarray:
    """Per-step empirical quantile of direction' (x - z)."""
    errors = np.asarray(error_trajectories, dtype=float)
    direction = np.asarray(direction, dtype=float)
    n = direction.size
    proj = errors[:, :, -n:] @ direction
    return np.quantile(proj, level, axis=0)


def mpc_metrics(records, n_boot: int = 1000, boot_seed: int = 987):
    """(max over time of violation fraction in %, mean cost, 95% bootstrap CI).

    The per-step violation fraction is computed across trials from the true
    safety constraints recorded in each trial."""
    if not records:
        raise ValueError("at least one record required")
    viol = np.stack([r.violations for r in records])  # (trials, T+1)
    mcp = 100.0 * float(np.max(np.mean(viol, axis=0)))
    costs = np.array([r.cost for r in records])
    mean_cost = float(np.mean(costs))
    rng = np.random.default_rng(boot_seed)
    n = costs.size
    resampled = costs[rng.integers(0, n, size=(n_boot, n))].mean(axis=1)
    ci = (float(np.quantile(resampled, 0.025)), float(np.quantile(resampled, 0.975)))
    return mcp, mean_cost, ci
