import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from conftest import LEGS, STANCE_ALPHA, random_belief, random_rotation, random_spd, seeds
from inekf.contacts import add_contact, add_landmark
from inekf.correction import (
    InvariantObservation,
    ObservationKind,
    UpdateRejected,
    build_observation,
    fk_observation,
    fk_position_observation,
    innovation,
    stack_observations,
    update,
    update_left,
    update_right,
    update_sequential,
)
from inekf.dynamics import robo_world_flip
from inekf.kinematics import position_jacobian
from inekf.liegroup import SEK3, compose, exp_sek3, inverse, log_sek3, skew
from inekf.state import (
    BiasVector,
    Convention,
    ErrorFrame,
    FilterBelief,
    UnknownPointError,
    check_psd,
    new_belief,
    switch_error_frame,
)

ENC = np.deg2rad(1.0) ** 2
ALPHAS = [STANCE_ALPHA, STANCE_ALPHA + [0.1, -0.05, 0.1]]


def belief_with_contacts(rng, n=1, P=None, frame=ErrorFrame.RIGHT, convention=Convention.WORLD):
    b = new_belief(random_rotation(rng), rng.normal(size=3), rng.normal(size=3), None, np.eye(15) * 0.01)
    for i in range(n):
        b = add_contact(b, i, ALPHAS[i], LEGS[i], ENC)
    if P is not None:
        b = FilterBelief(b.X, b.theta, P, b.error_frame, b.convention, b.registry)
    if convention is Convention.ROBO:
        b = robo_world_flip(b, Convention.ROBO)
    if b.error_frame is not frame:
        b = switch_error_frame(b)
    return b


def fk_meas(n=1):
    return [(i, ALPHAS[i], LEGS[i]) for i in range(n)]


# -- FK observation ---------------------------------------------------------------


def test_fk_h_matrix_world(rng):
    obs = fk_position_observation(belief_with_contacts(rng), ALPHAS[0], 0, LEGS[0], ENC)
    H = np.zeros((3, 18))
    H[:, 6:9] = -np.eye(3)
    H[:, 9:12] = np.eye(3)
    assert obs.form is ErrorFrame.RIGHT
    assert np.array_equal(obs.H, H)


def test_fk_h_matrix_robocentric(rng):
    b = belief_with_contacts(rng, convention=Convention.ROBO, frame=ErrorFrame.LEFT)
    obs = fk_position_observation(b, ALPHAS[0], 0, LEGS[0], ENC)
    H = np.zeros((3, 18))
    H[:, 6:9] = np.eye(3)
    H[:, 9:12] = -np.eye(3)
    assert obs.form is ErrorFrame.LEFT
    assert np.array_equal(obs.H, H)
    _, J = position_jacobian(LEGS[0], ALPHAS[0])
    np.testing.assert_allclose(obs.N, b.R.T @ J @ J.T @ b.R * ENC, atol=1e-18)


def test_fk_zero_encoder_noise(rng):
    obs = fk_position_observation(belief_with_contacts(rng), ALPHAS[0], 0, LEGS[0], 0.0)
    assert np.array_equal(obs.N, np.zeros((3, 3)))


def test_fk_noise_rotates_with_yaw(rng):
    b = belief_with_contacts(rng)
    c, s = np.cos(0.7), np.sin(0.7)
    Rz = np.array([[c, -s, 0], [s, c, 0], [0, 0, 1]])
    b2 = FilterBelief(SEK3(Rz @ b.R, b.X.cols), b.theta, b.P, registry=b.registry)
    N1 = fk_position_observation(b, ALPHAS[0], 0, LEGS[0], ENC).N
    N2 = fk_position_observation(b2, ALPHAS[0], 0, LEGS[0], ENC).N
    np.testing.assert_allclose(N2, Rz @ N1 @ Rz.T, atol=1e-18)
    np.testing.assert_allclose(np.linalg.eigvalsh(N2), np.linalg.eigvalsh(N1), atol=1e-18)


@given(seeds)
def test_fk_h_is_state_independent(seed):
    rng = np.random.default_rng(seed)
    b1, b2 = random_belief(rng, 2), random_belief(rng, 2)
    H1 = fk_observation(b1, [(0, ALPHAS[0], LEGS[0])]).H
    H2 = fk_observation(b2, [(0, ALPHAS[1], LEGS[0])]).H
    assert np.array_equal(H1, H2)


def test_fk_unknown_contact(rng):
    with pytest.raises(UnknownPointError):
        fk_position_observation(belief_with_contacts(rng), ALPHAS[0], 3, LEGS[0])


# -- update ------------------------------------------------------------------------


@pytest.mark.parametrize("frame", list(ErrorFrame))
@pytest.mark.parametrize("convention", list(Convention))
def test_zero_innovation_leaves_mean(rng, frame, convention):
    b = belief_with_contacts(rng, 2, frame=frame, convention=convention)
    obs = fk_observation(b, fk_meas(2), ENC)
    np.testing.assert_allclose(innovation(b, obs), 0.0, atol=1e-14)
    nb = update(b, obs)
    np.testing.assert_allclose(nb.X.matrix(), b.X.matrix(), atol=1e-14)
    np.testing.assert_allclose(nb.theta.vector, b.theta.vector, atol=1e-14)
    assert np.trace(nb.P) < np.trace(b.P)


def test_uninformative_measurement(rng):
    b = belief_with_contacts(rng, P=random_spd(rng, 18))
    obs = fk_observation(b, fk_meas(), ENC)
    big = InvariantObservation(obs.Y, obs.b, np.eye(3) * 1e12, obs.form, obs.H)
    nb = update(b, big)
    assert np.abs(nb.P - b.P).max() / np.abs(b.P).max() < 1e-6


def test_matches_dense_kalman_algebra(rng):
    b = belief_with_contacts(rng, P=np.eye(18))
    obs = fk_observation(b, fk_meas(), 0.0)
    obs = InvariantObservation(obs.Y, obs.b, np.eye(3), obs.form, obs.H)
    H = obs.H
    S = H @ H.T + np.eye(3)
    K = H.T @ np.linalg.inv(S)
    expected = np.eye(18) - K @ H
    nb = update(b, obs)
    np.testing.assert_allclose(nb.P, expected, atol=1e-14)
    # the contact block drops from 1 to 1 - 1/3
    np.testing.assert_allclose(np.diag(nb.P)[9:12], 2.0 / 3.0, atol=1e-15)


def test_update_moves_mean_by_gain(rng):
    b = belief_with_contacts(rng, P=random_spd(rng, 18))
    obs = fk_observation(b, [(0, ALPHAS[0] + [0.05, -0.02, 0.03], LEGS[0])], ENC)
    z = innovation(b, obs)
    S = obs.H @ b.P @ obs.H.T + obs.N
    K = b.P @ obs.H.T @ np.linalg.inv(S)
    d = K @ z
    nb = update_right(b, obs)
    np.testing.assert_allclose(nb.X.matrix(), compose(exp_sek3(d[:12]), b.X).matrix(), atol=1e-12)
    np.testing.assert_allclose(nb.theta.vector, b.theta.vector + d[12:], atol=1e-14)


@given(seeds, st.sampled_from(list(ErrorFrame)), st.sampled_from(list(Convention)))
def test_joseph_update_keeps_psd(seed, frame, convention):
    rng = np.random.default_rng(seed)
    b = random_belief(rng, 2, frame, convention)
    meas = [(i, STANCE_ALPHA + rng.normal(scale=0.2, size=3), LEGS[i]) for i in range(2)]
    nb = update(b, fk_observation(b, meas, ENC))
    assert np.array_equal(nb.P, nb.P.T)
    check_psd(nb.P)


def test_frame_commutation(rng):
    br = belief_with_contacts(rng, 2, P=random_spd(rng, 21))
    bl = switch_error_frame(br)
    meas = [(0, ALPHAS[0] + 0.03, LEGS[0]), (1, ALPHAS[1] - 0.02, LEGS[1])]
    a = update_right(br, fk_observation(br, meas, ENC))
    c = update_right(bl, fk_observation(bl, meas, ENC))
    assert c.error_frame is ErrorFrame.LEFT
    np.testing.assert_allclose(c.X.matrix(), a.X.matrix(), atol=1e-8)
    np.testing.assert_allclose(switch_error_frame(c).P, a.P, atol=1e-8)


def test_left_update_zero_innovation(rng):
    b = belief_with_contacts(rng, convention=Convention.ROBO, frame=ErrorFrame.LEFT)
    obs = fk_observation(b, fk_meas(), ENC)
    nb = update_left(b, obs)
    np.testing.assert_allclose(nb.X.matrix(), b.X.matrix(), atol=1e-14)
    with pytest.raises(ValueError):
        update_right(b, obs)


def test_gps_pulls_position_monotonically(rng):
    R = random_rotation(rng)
    y = np.array([1.0, -2.0, 0.5])
    moves = []
    for s in (0.01, 0.1, 1.0, 10.0):
        P = np.eye(15) * 1e-6
        P[6:9, 6:9] = np.eye(3) * s
        b = new_belief(R, np.zeros(3), np.zeros(3), None, P)
        obs = build_observation(ObservationKind.GPS, {"y": y, "cov": np.eye(3) * 0.25}, b)
        assert obs.form is ErrorFrame.LEFT
        nb = update(b, obs)
        moves.append(np.linalg.norm(nb.p - y))
    assert all(a > b for a, b in zip(moves, moves[1:]))


def test_batched_equals_sequential(rng):
    b = belief_with_contacts(rng, 2, P=random_spd(rng, 21))
    # the means differ at second order in the innovation, so keep it small
    meas = [(0, ALPHAS[0] + 2e-5, LEGS[0]), (1, ALPHAS[1] - 3e-5, LEGS[1])]
    obs = fk_observation(b, meas, ENC)
    a = update(b, obs)
    s = update_sequential(b, obs)
    np.testing.assert_allclose(a.P, s.P, atol=1e-8)
    np.testing.assert_allclose(a.X.matrix(), s.X.matrix(), atol=1e-8)
    st_obs = stack_observations([fk_observation(b, meas[:1], ENC), fk_observation(b, meas[1:], ENC)])
    np.testing.assert_allclose(st_obs.H, obs.H, atol=0)
    np.testing.assert_allclose(st_obs.N, obs.N, atol=0)


def test_information_additivity(rng):
    b = belief_with_contacts(rng, P=random_spd(rng, 18))
    obs = fk_observation(b, fk_meas(), ENC)
    double = InvariantObservation(obs.Y, obs.b, 2 * obs.N, obs.form, obs.H)
    once = update(b, obs)
    twice = update(update(b, double), double)
    np.testing.assert_allclose(twice.P, once.P, atol=1e-6 * np.abs(once.P).max())


def test_first_order_error_update():
    """Posterior error matches ``(I - K H) xi`` up to second order."""
    rng = np.random.default_rng(5)
    R, v, p = random_rotation(rng), rng.normal(size=3), rng.normal(size=3)
    h = LEGS[0].position(ALPHAS[0])
    X = SEK3(R, [v, p, p + R @ h])
    xi0 = rng.normal(size=12)
    P = random_spd(rng, 18, 0.3)
    res = []
    for eps in (1e-2, 1e-3):
        X_hat = compose(exp_sek3(eps * xi0), X)
        b = FilterBelief(X_hat, BiasVector(), P, registry=belief_with_contacts(rng).registry)
        obs = fk_observation(b, fk_meas(), 0.0)
        obs = InvariantObservation(obs.Y, obs.b, np.eye(3) * 1e-2, obs.form, obs.H)
        nb = update(b, obs)
        K = P @ obs.H.T @ np.linalg.inv(obs.H @ P @ obs.H.T + obs.N)
        pred = ((np.eye(18) - K @ obs.H) @ np.r_[eps * xi0, np.zeros(6)])[:12]
        res.append(np.linalg.norm(log_sek3(compose(nb.X, inverse(X))) - pred))
    slope = np.log10(res[0] / res[1])
    assert 1.8 < slope < 2.2


def test_singular_innovation_rejected(rng):
    b = belief_with_contacts(rng, P=np.zeros((18, 18)))
    with pytest.raises(UpdateRejected):
        update(b, fk_observation(b, fk_meas(), 0.0))


def test_gate_rejects_outlier(rng):
    b = belief_with_contacts(rng)
    obs = fk_observation(b, [(0, ALPHAS[0] + 1.0, LEGS[0])], ENC)
    with pytest.raises(UpdateRejected):
        update(b, obs, gate=0.997)
    update(b, obs)  # accepted without the gate


# -- other observations ---------------------------------------------------------------


def test_magnetometer_h_world(rng):
    b = belief_with_contacts(rng, 1)
    m = np.array([0.2, 0.0, -0.4])
    obs = build_observation(ObservationKind.MAGNETOMETER, {"y": b.R.T @ m, "m": m}, b)
    H = np.zeros((3, 18))
    H[:, 0:3] = skew(m)
    assert obs.form is ErrorFrame.RIGHT
    assert np.array_equal(obs.H, H)
    np.testing.assert_allclose(innovation(b, obs), 0.0, atol=1e-15)


def test_zero_field_is_noop(rng):
    b = belief_with_contacts(rng, 1)
    obs = build_observation(ObservationKind.MAGNETOMETER, {"y": [0.3, 0.1, 0.0], "m": np.zeros(3), "cov": np.eye(3)}, b)
    assert np.array_equal(obs.H, np.zeros((3, 18)))
    nb = update(b, obs)
    np.testing.assert_allclose(nb.X.matrix(), b.X.matrix(), atol=0)
    np.testing.assert_allclose(nb.P, b.P, atol=0)


def test_robocentric_gps_is_right_invariant(rng):
    b = belief_with_contacts(rng, convention=Convention.ROBO, frame=ErrorFrame.LEFT)
    obs = build_observation(ObservationKind.GPS, {"y": [0, 0, 0], "cov": np.eye(3)}, b)
    assert obs.form is ErrorFrame.RIGHT


@pytest.mark.parametrize("convention", list(Convention))
def test_landmark_observations_consistent(rng, convention):
    b = belief_with_contacts(rng, 0)
    l_world = np.array([2.0, 1.0, 0.5])
    y = b.R.T @ (l_world - b.p)
    b = add_landmark(b, 4, y, np.eye(3) * 1e-4)
    if convention is Convention.ROBO:
        b = robo_world_flip(b, Convention.ROBO)
    rel = build_observation(ObservationKind.LANDMARK_RELATIVE, {"y": y, "id": 4}, b)
    ab = build_observation(ObservationKind.LANDMARK_ABSOLUTE, {"y": y, "l": l_world}, b)
    np.testing.assert_allclose(innovation(b, rel), 0.0, atol=1e-12)
    np.testing.assert_allclose(innovation(b, ab), 0.0, atol=1e-12)
    with pytest.raises(UnknownPointError):
        build_observation(ObservationKind.LANDMARK_RELATIVE, {"y": y, "id": 9}, b)
