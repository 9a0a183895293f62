import pytest

from sgmpc.envs import mass_spring_damper, surgical_planning
from sgmpc.harness import calibrate_design, simulate_error_trajectories


@pytest.fixture(scope="session")
def msd_env():
    return mass_spring_damper()


@pytest.fixture(scope="session")
def sp_env():
    return surgical_planning()


@pytest.fixture(scope="session")
def msd_bundle(msd_env):
    return calibrate_design(msd_env)


@pytest.fixture(scope="session")
def sp_bundle(sp_env):
    return calibrate_design(sp_env)


@pytest.fixture(scope="session")
def msd_small_traj(msd_env, msd_bundle):
    # shared small Monte-Carlo error cloud: (2000, 31, 4)
    return simulate_error_trajectories(msd_env, msd_bundle, 2000, 30, rng_seed=7)
