"""Riccati solves, observer gains, and the stacked error system."""
import numpy as np
import pytest

from sgmpc.design import (
    LinearSystem,
    NoiseSpec,
    ScalarProxy,
    build_error_system,
    design_observer,
    solve_dare,
)

PHI = (1.0 + np.sqrt(5.0)) / 2.0


def _spectral_radius(m):
    return np.abs(np.linalg.eigvals(np.asarray(m, dtype=float))).max()


# ---------------------------------------------------------------------------
# DARE


def test_dare_scalar_golden_ratio():
    p, k = solve_dare([[1.0]], [[1.0]], [[1.0]], [[1.0]])
    assert p[0, 0] == pytest.approx(PHI, abs=1e-12)
    assert k[0, 0] == pytest.approx(-PHI / (1.0 + PHI), abs=1e-12)


def test_dare_zero_dynamics_gives_q():
    p, k = solve_dare([[0.0]], [[1.0]], [[3.0]], [[1.0]])
    assert p[0, 0] == pytest.approx(3.0, abs=1e-12)
    assert k[0, 0] == pytest.approx(0.0, abs=1e-12)


def test_dare_no_input_reduces_to_lyapunov():
    p, k = solve_dare([[0.5]], [[0.0]], [[1.0]], [[1.0]])
    assert p[0, 0] == pytest.approx(1.0 / (1.0 - 0.25), rel=1e-10)
    assert k[0, 0] == pytest.approx(0.0, abs=1e-12)


def test_dare_random_residual_and_gain():
    rng = np.random.default_rng(12)
    for _ in range(30):
        n = int(rng.integers(1, 5))
        m = int(rng.integers(1, 3))
        a = rng.normal(size=(n, n))
        a *= (0.5 + 0.8 * rng.random()) / max(_spectral_radius(a), 1e-9)
        b = rng.normal(size=(n, m))
        g = rng.normal(size=(n, n))
        q = g.T @ g
        hroot = rng.normal(size=(m, m))
        r = hroot.T @ hroot + 0.1 * np.eye(m)
        p, k = solve_dare(a, b, q, r)
        gain = np.linalg.solve(r + b.T @ p @ b, b.T @ p @ a)
        res = a.T @ p @ a - p - a.T @ p @ b @ gain + q
        assert np.linalg.norm(res) <= 1e-9 * max(1.0, np.linalg.norm(p))
        assert np.allclose(k, -gain, atol=1e-8)
        assert _spectral_radius(a + b @ k) < 1.0


def test_dare_input_validation():
    with pytest.raises(ValueError):
        solve_dare([[2.0]], [[0.0]], [[1.0]], [[1.0]])  # not stabilizable
    with pytest.raises(ValueError):
        solve_dare([[0.5]], [[1.0]], [[1.0]], [[0.0]])  # singular R


# ---------------------------------------------------------------------------
# observer


def _noise(sigma_w, sigma_eps, sigma0=1.0):
    return NoiseSpec(ScalarProxy(sigma0), ScalarProxy(sigma_w), ScalarProxy(sigma_eps))


def test_observer_scalar_golden_ratio():
    sys = LinearSystem([[1.0]], [[1.0]], [[1.0]])
    l = design_observer(sys, _noise(1.0, 1.0))
    assert l[0, 0] == pytest.approx(PHI / (PHI + 1.0), abs=1e-12)


def test_observer_noise_limits():
    sys = LinearSystem([[0.9]], [[1.0]], [[1.0]])
    # no process noise: the model is trusted, the gain vanishes
    assert abs(design_observer(sys, _noise(1e-6, 1.0))[0, 0]) < 1e-6
    # near-perfect measurements: the gain approaches the identity
    assert abs(design_observer(sys, _noise(1.0, 1e-6))[0, 0] - 1.0) < 1e-6


def test_observer_rejects_zero_measurement_noise():
    sys = LinearSystem([[0.9]], [[1.0]], [[1.0]])
    with pytest.raises(ValueError):
        design_observer(sys, _noise(1.0, 0.0))


def test_observer_random_estimation_loop_stable():
    rng = np.random.default_rng(13)
    for _ in range(20):
        n = int(rng.integers(1, 5))
        p_dim = int(rng.integers(1, n + 1))
        a = rng.normal(size=(n, n))
        a *= (0.5 + 0.8 * rng.random()) / max(_spectral_radius(a), 1e-9)
        b = rng.normal(size=(n, 1))
        c = rng.normal(size=(p_dim, n))
        sys = LinearSystem(a, b, c)
        l = design_observer(sys, _noise(0.5 + rng.random(), 0.5 + rng.random()))
        assert _spectral_radius((np.eye(n) - l @ c) @ a) < 1.0


# ---------------------------------------------------------------------------
# stacked error system


def test_error_system_zero_gains():
    a = np.array([[0.9, 0.1], [0.0, 0.8]])
    sys = LinearSystem(a, np.array([[0.0], [1.0]]), np.eye(2))
    err = build_error_system(sys, np.zeros((1, 2)), np.zeros((2, 2)))
    assert np.allclose(err.a_e, np.block([[a, np.zeros((2, 2))], [np.zeros((2, 2)), a]]))
    assert np.allclose(err.b1_e, np.vstack([np.eye(2), np.eye(2)]))
    assert np.allclose(err.b2_e, 0.0)
    # with k = 0 the input row of the deviation map is dead
    assert np.allclose(err.k_e, np.block([[np.zeros((2, 2)), np.eye(2)], [np.zeros((1, 4))]]))


def test_error_system_block_structure():
    a = np.array([[0.9, 0.1], [-0.05, 0.8]])
    b = np.array([[0.0], [0.5]])
    c = np.eye(2)
    sys = LinearSystem(a, b, c)
    # small fixed gains keep the stacked dynamics Schur, which the builder checks
    k = np.array([[0.1, -0.2]])
    l = np.array([[0.1, 0.05], [-0.05, 0.15]])
    err = build_error_system(sys, k, l)
    n = 2
    assert np.allclose(err.a_e[:n, :n], a - l @ c @ a, atol=1e-14)
    assert np.allclose(err.a_e[:n, n:], 0.0, atol=1e-14)
    assert np.allclose(err.a_e[n:, :n], -b @ k, atol=1e-14)
    assert np.allclose(err.a_e[n:, n:], a + b @ k, atol=1e-14)
    assert np.allclose(err.b1_e, np.vstack([np.eye(n) - l @ c, np.eye(n)]), atol=1e-14)
    assert np.allclose(err.b2_e, np.vstack([-l, np.zeros((n, 2))]), atol=1e-14)
    assert np.allclose(err.k_e[:n, :n], 0.0, atol=1e-14)
    assert np.allclose(err.k_e[:n, n:], np.eye(n), atol=1e-14)
    assert np.allclose(err.k_e[n:, :n], -k, atol=1e-14)
    assert np.allclose(err.k_e[n:, n:], k, atol=1e-14)
    assert err.n_x == n


def test_designed_error_dynamics_stable(msd_bundle):
    assert msd_bundle.err.spectral_radius < 1.0
    assert msd_bundle.k.shape == (1, 2)
    assert msd_bundle.l.shape == (2, 2)


def test_linear_system_validation():
    with pytest.raises(ValueError):
        LinearSystem([[2.0]], [[0.0]], [[1.0]])  # not stabilizable
    with pytest.raises(ValueError):
        LinearSystem([[2.0]], [[1.0]], [[0.0]])  # not detectable
    with pytest.raises(ValueError):
        LinearSystem(np.eye(2), np.array([[1.0]]), np.eye(2))  # shape mismatch
