"""Acceptance gate: one PASS/FAIL line per headline requirement.

Runs the full-size studies (1e5 error trajectories, 100-trial campaigns on
both benchmarks) plus compact timed re-runs of the property suites. Every
criterion prints its own verdict line before the assertion fires, so a partial
failure still shows the complete scoreboard for its test.
"""
import time

import numpy as np
import pytest

from _oracles import (
    brute_force_qp,
    ellipsoid_points,
    fixed_point_residual,
    random_feasible_qp,
)
from sgmpc.bounds import (
    Ellipsoid,
    chebyshev_set,
    corollary_growth_bound,
    elliptical_radius_sq,
    g_inverse,
    moment_bound,
)
from sgmpc.harness import (
    containment_metrics,
    empirical_quantile_curve,
    make_controller_config,
    make_controller_factory,
    mpc_metrics,
    run_campaign,
    simulate_error_trajectories,
    state_error_sets,
    support_curves,
)
from sgmpc.mpc import InfeasibleAtStartError
from sgmpc.qp import solve_qp
from sgmpc.reachability import propagate_proxy
from sgmpc.subgaussian import (
    ScalarProxy,
    SubGaussianVector,
    linear_transform,
    matrix_to_scalar,
    scalar_to_matrix,
)
from sgmpc.tightening import (
    EmptyTightenedError,
    Polytope,
    maximal_invariant_set,
    minkowski_diff,
)

DELTA = 0.05
N_TRAJ = 100_000
STEPS = 40


def _verdict(pairs):
    for ok, label in pairs:
        print(f"{'PASS' if ok else 'FAIL'}: {label}", flush=True)
    failed = [label for ok, label in pairs if not ok]
    assert not failed, f"{len(failed)} criterion(s) failed: {failed}"


# ---------------------------------------------------------------------------
# full-size artifacts, built once


@pytest.fixture(scope="module")
def msd_traj(msd_env, msd_bundle):
    return simulate_error_trajectories(msd_env, msd_bundle, N_TRAJ, STEPS, rng_seed=0)


@pytest.fixture(scope="module")
def msd_sets(msd_env, msd_bundle):
    return {
        method: state_error_sets(msd_bundle, msd_env, DELTA, STEPS, method)
        for method in ("subgaussian", "dr", "robust")
    }


@pytest.fixture(scope="module")
def msd_campaigns(msd_env, msd_bundle):
    out = {}
    for method in ("subgaussian", "dr"):
        factory = make_controller_factory(msd_env, msd_bundle, DELTA, 15, method)
        out[method] = run_campaign(msd_env, factory, 100, 60, rng_seed=0)
    return out


@pytest.fixture(scope="module")
def sp_campaign(sp_env, sp_bundle):
    diags = []
    factory = make_controller_factory(sp_env, sp_bundle, DELTA, 20)
    records = run_campaign(
        sp_env, factory, 100, 40, rng_seed=0, diag_sink=diags.append
    )
    return records, diags


# ---------------------------------------------------------------------------
# criteria


def test_tail_constants_exact_and_ordered():
    t0 = time.perf_counter()
    ginv = g_inverse(20.0)
    tau_sq = elliptical_radius_sq(2, DELTA)
    half = float(np.sqrt(2.0 * np.log(1.0 / DELTA)))
    growth = corollary_growth_bound(2, DELTA)
    cheb = chebyshev_set(np.zeros(2), np.eye(2), DELTA).radius_sq
    elapsed = time.perf_counter() - t0
    _verdict(
        [
            (abs(ginv - 4.7445) <= 1e-3, f"g_inverse(20) = {ginv:.5f}, within 1e-3 of 4.7445"),
            (
                abs(tau_sq - 11.489) <= 0.01,
                f"joint radius_sq(2, 0.05) = {tau_sq:.4f}, within 0.01 of 11.489",
            ),
            (
                abs(half - 2.44775) <= 1e-4,
                f"half-space factor sqrt(2 ln 20) = {half:.6f}, within 1e-4 of 2.44775",
            ),
            (
                tau_sq <= growth + 1e-12,
                f"joint radius_sq {tau_sq:.4f} <= closed-form growth bound {growth:.4f}",
            ),
            (
                growth <= cheb + 1e-12 and abs(cheb - 40.0) <= 1e-9,
                f"growth bound {growth:.4f} <= Chebyshev radius_sq {cheb:.1f} (= n/delta)",
            ),
            (elapsed < 1.0, f"all bound evaluations finished in {elapsed:.4f}s < 1s"),
        ]
    )


def test_containment_meets_declared_levels(msd_traj, msd_sets):
    mins = {m: containment_metrics(msd_traj, msd_sets[m])[0] for m in msd_sets}
    _verdict(
        [
            (
                mins["subgaussian"] >= 95.0,
                f"sub-Gaussian min containment {mins['subgaussian']:.3f}% >= 95% "
                f"over {N_TRAJ} trajectories",
            ),
            (
                mins["dr"] >= 99.99,
                f"DR min containment {mins['dr']:.3f}% is 100% up to MC resolution",
            ),
            (
                mins["robust"] >= 99.99,
                f"robust min containment {mins['robust']:.3f}% is 100% up to MC resolution",
            ),
        ]
    )


def test_per_step_bound_ordering(msd_env, msd_traj, msd_sets):
    direction = msd_env.constraints.a[0, :2].copy()
    q = empirical_quantile_curve(msd_traj, direction, 1.0 - DELTA)
    sg = support_curves(msd_sets["subgaussian"], direction)
    dr = support_curves(msd_sets["dr"], direction)
    rb = support_curves(msd_sets["robust"], direction)
    tol = 1e-9
    _verdict(
        [
            (
                bool(np.all(q <= sg + tol)),
                "empirical 95% quantile <= sub-Gaussian bound at every step",
            ),
            (bool(np.all(sg <= dr + tol)), "sub-Gaussian <= DR bound at every step"),
            (bool(np.all(sg <= rb + tol)), "sub-Gaussian <= robust bound at every step"),
            (
                bool(q[-1] < sg[-1] < dr[-1] and sg[-1] < rb[-1]),
                f"strict ordering at the window end: {q[-1]:.4f} < {sg[-1]:.4f} "
                f"< {dr[-1]:.4f} and {sg[-1]:.4f} < {rb[-1]:.4f}",
            ),
        ]
    )


def test_msd_closed_loop_metrics(msd_env, msd_bundle, msd_campaigns):
    mcp_sg, cost_sg, _ = mpc_metrics(msd_campaigns["subgaussian"])
    mcp_dr, cost_dr, _ = mpc_metrics(msd_campaigns["dr"])
    fallbacks = sum(r.fallbacks for recs in msd_campaigns.values() for r in recs)
    try:
        make_controller_config(msd_env, msd_bundle, DELTA, 15, "robust")
        robust_infeasible = False
    except (InfeasibleAtStartError, EmptyTightenedError):
        robust_infeasible = True
    _verdict(
        [
            (mcp_sg <= 5.0, f"sub-Gaussian campaign MCP {mcp_sg:.2f}% <= 5%"),
            (mcp_dr <= 5.0, f"DR campaign MCP {mcp_dr:.2f}% <= 5%"),
            (
                cost_sg < cost_dr,
                f"sub-Gaussian mean cost {cost_sg:.4f} < DR mean cost {cost_dr:.4f}",
            ),
            (robust_infeasible, "robust controller is infeasible at t=0 on this benchmark"),
            (fallbacks == 0, f"fallback count {fallbacks} == 0 across both campaigns"),
        ]
    )


def test_sp_closed_loop_metrics(sp_campaign):
    records, diags = sp_campaign
    mcp, mean_cost, _ = mpc_metrics(records)
    fallbacks = sum(r.fallbacks for r in records)
    flagged = [d for d in diags if d["fallback"]]
    completion = float(
        np.mean(
            [
                float(np.max(r.states[:, 0]) >= 0.115 and not r.violations.any())
                for r in records
            ]
        )
    )
    _verdict(
        [
            (mcp <= 5.0, f"needle campaign MCP {mcp:.2f}% <= 5%"),
            (
                fallbacks == 0 and not flagged,
                f"fallback count {fallbacks} == 0 (none left to certify)",
            ),
            (
                completion >= 0.95,
                f"insertion completed without violation in {100 * completion:.1f}% "
                f"of trials (mean cost {mean_cost:.5f})",
            ),
        ]
    )


def test_property_suites_rerun_quickly(msd_env, msd_bundle, sp_bundle, msd_traj):
    rng = np.random.default_rng(2024)
    results = []

    def timed(label, fn):
        t0 = time.perf_counter()
        ok, note = True, ""
        try:
            fn()
        except AssertionError as exc:
            ok, note = False, f" ({exc})"
        dt = time.perf_counter() - t0
        results.append((ok and dt < 120.0, f"{label}: {dt:.1f}s{note}"))

    def mgf_validity():
        seq = propagate_proxy(msd_bundle.err, msd_bundle.noise_spec, STEPS + 1)
        for t in (1, 10, STEPS):
            errs = msd_traj[:, t, :]
            s_t = seq.per_step[t]
            for _ in range(12):
                u = rng.normal(size=4)
                sigma_u = float(np.sqrt(u @ s_t @ u))
                c = 0.2 + 1.8 * rng.random()
                lam = c * u / sigma_u
                emp = float(np.mean(np.exp(errs @ lam)))
                assert emp <= np.exp(0.5 * c * c) * 1.08, (t, c, emp)

    def round_trip():
        for sigma in (0.5, 1.0, 2.0, 4.0):
            mat = scalar_to_matrix(ScalarProxy(sigma), 3)
            assert matrix_to_scalar(mat).sigma == sigma
        for _ in range(20):
            root = rng.normal(size=(3, 3))
            p = root @ root.T + 0.1 * np.eye(3)
            s = matrix_to_scalar(p)
            back = scalar_to_matrix(s, 3)
            assert np.linalg.eigvalsh(back - p)[0] >= -1e-12 * s.sigma**2

    def composition():
        for _ in range(20):
            root = rng.normal(size=(3, 3))
            x = SubGaussianVector(rng.normal(size=3), root @ root.T + 0.1 * np.eye(3))
            a = rng.normal(size=(2, 3))
            b = rng.normal(size=(2, 2))
            lhs = linear_transform(linear_transform(x, a), b)
            rhs = linear_transform(x, b @ a)
            assert np.allclose(lhs.mean, rhs.mean, rtol=1e-9, atol=1e-12)
            assert np.allclose(lhs.proxy, rhs.proxy, rtol=1e-9, atol=1e-12)

    def fixed_points():
        for bundle in (msd_bundle, sp_bundle):
            seq = propagate_proxy(bundle.err, bundle.noise_spec, 10)
            assert fixed_point_residual(bundle.err, bundle.noise_spec, seq.steady) <= 1e-8

    def moments():
        for n in (1, 2, 5):
            z = rng.standard_normal((200_000, n))
            norms = np.linalg.norm(z, axis=1)
            for p in (1.0, 2.0, 4.0):
                assert float(np.mean(norms**p)) <= moment_bound(p, n), (p, n)

    def qp_oracle():
        qp_rng = np.random.default_rng(31337)
        worst = 0.0
        for _ in range(200):
            qp = random_feasible_qp(qp_rng)
            want = brute_force_qp(qp)
            res = solve_qp(qp)
            assert res.status == "optimal"
            worst = max(worst, float(np.max(np.abs(res.x - want))))
        assert worst <= 1e-6, worst

    def minkowski_points():
        for _ in range(5):
            cuts = rng.normal(size=(3, 2))
            cuts /= np.linalg.norm(cuts, axis=1, keepdims=True)
            a = np.vstack([np.eye(2), -np.eye(2), cuts])
            b = np.concatenate([np.full(4, 1.5), np.full(3, 1.5)])
            poly = Polytope(a, b)
            root = rng.normal(size=(2, 2))
            shape = 0.05 * (root @ root.T + 0.5 * np.eye(2))
            ell = Ellipsoid(np.zeros(2), shape, 1.0)
            inner = minkowski_diff(poly, ell)
            q = inner.sample(1000, rng)
            e = ellipsoid_points(shape, 1.0, 200, rng, surface=True)
            for row, off in zip(poly.a, poly.b):
                assert (q @ row).max() + (e @ row).max() <= off + 1e-9

    def mpi_invariance():
        theta = 0.35
        rot = 0.9 * np.array(
            [[np.cos(theta), -np.sin(theta)], [np.sin(theta), np.cos(theta)]]
        )
        base = Polytope(
            np.vstack([np.eye(2), -np.eye(2)]), np.ones(4)
        )
        mpi = maximal_invariant_set(rot, base)
        pts = mpi.sample(10_000, np.random.default_rng(5))
        assert mpi.contains(pts @ rot.T).all()

    def campaign_bytes():
        factory = make_controller_factory(msd_env, msd_bundle, DELTA, 15)

        def blob():
            recs = run_campaign(msd_env, factory, 3, 10, rng_seed=21)
            return b"".join(
                np.ascontiguousarray(r.states).tobytes()
                + np.ascontiguousarray(r.inputs).tobytes()
                + np.ascontiguousarray(r.measurements).tobytes()
                + np.ascontiguousarray(r.violations).tobytes()
                for r in recs
            )

        assert blob() == blob()

    timed("MGF validity of the propagated proxies", mgf_validity)
    timed("scalar/matrix proxy round trip", round_trip)
    timed("linear transform composition", composition)
    timed("steady proxy fixed-point residual <= 1e-8", fixed_points)
    timed("norm moment bounds dominate Gaussian moments", moments)
    timed("200-problem QP oracle within 1e-6", qp_oracle)
    timed("Minkowski difference point decomposition", minkowski_points)
    timed("maximal invariant set is invariant", mpi_invariance)
    timed("campaign determinism, byte for byte", campaign_bytes)
    _verdict(results)
