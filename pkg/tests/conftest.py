import numpy as np
import pytest

from cryoplan.environment import EnvConfig, NoiseModel, RewardShaping
from cryoplan.volume import PhantomConfig, generate_phantom

# Small, fast phantoms shared across the suite.  32^3 keeps brute-force
# oracles cheap while leaving room for multi-blob tumours.
SMALL_PHANTOM = PhantomConfig(
    dims=(32, 32, 32),
    gland_semi_axes_lo=(10.0, 9.0, 9.0),
    gland_semi_axes_hi=(13.0, 11.0, 11.0),
    blob_count=(1, 2),
    blob_radius=(3.5, 5.0),
    blob_separation_mm=2.0,
    seed=11,
)


@pytest.fixture(scope="session")
def small_cases():
    return [generate_phantom(SMALL_PHANTOM, i) for i in range(4)]


@pytest.fixture(scope="session")
def small_case(small_cases):
    return small_cases[0]


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


def quiet_env(probes_per_visit=3, visits=2, **kw) -> EnvConfig:
    """Noise off, shaping off: deterministic geometry-only environment."""
    kw.setdefault("noise", NoiseModel(enabled=False))
    kw.setdefault("shaping", RewardShaping(repeat_penalty_weight=0.0))
    return EnvConfig(probes_per_visit=probes_per_visit, visits=visits, **kw)


@pytest.fixture
def env2x3():
    return quiet_env(probes_per_visit=3, visits=2)
