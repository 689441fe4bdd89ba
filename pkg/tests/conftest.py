import numpy as np
import pytest
from hypothesis import HealthCheck, settings
from hypothesis import strategies as st
from scipy.spatial.transform import Rotation

from inekf.contacts import add_contact
from inekf.kinematics import default_leg
from inekf.liegroup import SEK3
from inekf.state import BiasVector, Convention, ErrorFrame, new_belief

settings.register_profile(
    "default", max_examples=40, deadline=None, suppress_health_check=[HealthCheck.too_slow]
)
settings.load_profile("default")

LEGS = [default_leg(1), default_leg(-1)]
STANCE_ALPHA = np.array([0.05, 0.3, -0.6])


def finite(lo=-10.0, hi=10.0):
    return st.floats(lo, hi, allow_nan=False, allow_infinity=False)


vec3 = st.lists(finite(), min_size=3, max_size=3).map(np.array)
small_vec3 = st.lists(finite(-1.0, 1.0), min_size=3, max_size=3).map(np.array)
seeds = st.integers(0, 2**32 - 1)


def random_rotation(rng) -> np.ndarray:
    return Rotation.random(random_state=rng).as_matrix()


def random_sek3(rng, K: int = 2, scale: float = 2.0) -> SEK3:
    return SEK3(random_rotation(rng), rng.normal(scale=scale, size=(K, 3)))


def random_spd(rng, n: int, scale: float = 0.1) -> np.ndarray:
    A = rng.normal(size=(n, n)) * scale
    return A @ A.T + 1e-3 * np.eye(n)


def random_belief(
    rng,
    n_contacts: int = 1,
    frame=ErrorFrame.RIGHT,
    convention=Convention.WORLD,
    bias_scale: float = 0.01,
):
    """Belief with FK-initialized contacts in the requested frame and convention."""
    from inekf.dynamics import robo_world_flip
    from inekf.state import switch_error_frame

    b = new_belief(
        random_rotation(rng),
        rng.normal(size=3),
        rng.normal(size=3),
        BiasVector(rng.normal(scale=bias_scale, size=3), rng.normal(scale=bias_scale, size=3)),
        random_spd(rng, 15),
    )
    for cid in range(n_contacts):
        b = add_contact(b, cid, STANCE_ALPHA + rng.normal(scale=0.1, size=3), LEGS[cid % 2], 1e-4)
    if convention is Convention.ROBO:
        b = robo_world_flip(b, Convention.ROBO)
    if b.error_frame is not frame:
        b = switch_error_frame(b)
    return b


@pytest.fixture
def rng():
    return np.random.default_rng(12345)

