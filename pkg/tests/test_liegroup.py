import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st
from scipy.linalg import expm

from conftest import random_sek3, seeds, small_vec3, vec3
from inekf.liegroup import (
    SEK3,
    SMALL_ANGLE,
    adjoint,
    compose,
    exp_sek3,
    gamma,
    gamma_series,
    gammas,
    hat,
    identity,
    inverse,
    log_sek3,
    orthonormalize,
    skew,
    so3_exp,
    so3_log,
    vee,
)

# Gamma_1 and Gamma_3 at (0.3, -0.2, 0.1), from a 60-term series in 40-digit arithmetic
GAMMA1_REF = np.array(
    [
        [0.9917248059331613, -0.05934961497411509, -0.09387364774771378],
        [0.03948914921370198, 0.9834496118663224, -0.1515682239084611],
        [0.10380388062792034, 0.14494806865499008, 0.9784844954262192],
    ]
)
GAMMA3_REF = np.array(
    [
        [0.16625138619170568, -0.004645607327749382, -0.008045373230615778],
        [0.0036489341878429937, 0.16583610571674468, -0.012607924463372961],
        [0.008543709800568972, 0.012275700083404166, 0.16558693743176808],
    ]
)


def rotvec(max_angle):
    """Rotation vectors with norm below ``max_angle``."""
    return st.tuples(small_vec3, st.floats(0.0, max_angle)).map(
        lambda t: t[0] / max(np.linalg.norm(t[0]), 1e-300) * t[1] if np.linalg.norm(t[0]) > 1e-9 else np.zeros(3)
    )


# -- skew ----------------------------------------------------------------------


def test_skew_zero():
    assert np.array_equal(skew([0, 0, 0]), np.zeros((3, 3)))


def test_skew_unit_z():
    assert np.array_equal(skew([0, 0, 1]), [[0, -1, 0], [1, 0, 0], [0, 0, 0]])


@given(vec3, vec3)
def test_skew_is_cross_product(a, b):
    cross = np.array([a[1] * b[2] - a[2] * b[1], a[2] * b[0] - a[0] * b[2], a[0] * b[1] - a[1] * b[0]])
    np.testing.assert_allclose(skew(a) @ b, cross, atol=1e-12)
    S = skew(a)
    assert np.array_equal(S, -S.T)
    np.testing.assert_allclose(vee(S), a, atol=0)


# -- gamma -------------------------------------------------------------------


def test_gamma_at_zero():
    assert np.array_equal(gamma(0, np.zeros(3)), np.eye(3))
    np.testing.assert_allclose(gamma(2, np.zeros(3)), 0.5 * np.eye(3), atol=0)


def test_gamma_frozen_reference():
    phi = (0.3, -0.2, 0.1)
    np.testing.assert_allclose(gamma(1, phi), GAMMA1_REF, atol=1e-15)
    np.testing.assert_allclose(gamma(3, phi), GAMMA3_REF, atol=1e-15)
    np.testing.assert_allclose(gamma(1, phi), gamma_series(1, phi, 31), atol=1e-12)


@pytest.mark.parametrize("m", [-1, 4, 1.5])
def test_gamma_invalid_order(m):
    with pytest.raises(ValueError):
        gamma(m, np.zeros(3))


@given(st.integers(0, 3), rotvec(3.0))
def test_gamma_matches_series(m, phi):
    np.testing.assert_allclose(gamma(m, phi), gamma_series(m, phi), atol=1e-12)


@pytest.mark.parametrize("m", range(4))
@pytest.mark.parametrize("rel", [-1e-6, -1e-12, 0.0, 1e-12, 1e-6])
def test_gamma_continuous_at_switch(m, rel):
    axis = np.array([0.48, -0.6, 0.64])
    phi = axis * SMALL_ANGLE * (1.0 + rel)
    np.testing.assert_allclose(gamma(m, phi), gamma_series(m, phi, 40), atol=1e-14)


@given(rotvec(3.0))
def test_gammas_match_gamma(phi):
    for m, G in zip((0, 1, 2, 3), gammas(phi, (0, 1, 2, 3))):
        assert np.array_equal(G, gamma(m, phi))


@given(rotvec(10.0))
def test_so3_exp_is_rotation(phi):
    R = gamma(0, phi)
    np.testing.assert_allclose(R.T @ R, np.eye(3), atol=1e-10)
    assert abs(np.linalg.det(R) - 1.0) < 1e-10
    np.testing.assert_allclose(R @ gamma(0, -phi), np.eye(3), atol=1e-10)
    np.testing.assert_allclose(R, expm(skew(phi)), atol=1e-12)


# -- exp / log -------------------------------------------------------------------


def test_exp_zero_is_identity():
    X = exp_sek3(np.zeros(9))
    assert X.K == 2
    assert np.array_equal(X.matrix(), np.eye(5))


def test_exp_pure_translation():
    X = exp_sek3([0, 0, 0, 1, 2, 3])
    assert np.array_equal(X.R, np.eye(3))
    assert np.array_equal(X.cols[0], [1, 2, 3])


@given(seeds, st.integers(0, 4))
def test_exp_matches_matrix_exponential(seed, K):
    rng = np.random.default_rng(seed)
    xi = rng.normal(size=3 + 3 * K)
    np.testing.assert_allclose(exp_sek3(xi).matrix(), expm(hat(xi)), atol=1e-11)


def test_log_identity():
    assert np.array_equal(log_sek3(identity(2)), np.zeros(9))


def test_log_round_trip_half_radian(rng):
    phi = rng.normal(size=3)
    phi *= 0.5 / np.linalg.norm(phi)
    xi = np.r_[phi, rng.normal(size=6)]
    np.testing.assert_allclose(log_sek3(exp_sek3(xi)), xi, atol=1e-10)


def test_log_pure_rotation_about_z():
    c, s = np.cos(0.1), np.sin(0.1)
    X = SEK3([[c, -s, 0], [s, c, 0], [0, 0, 1]], np.zeros((1, 3)))
    np.testing.assert_allclose(log_sek3(X), [0, 0, 0.1, 0, 0, 0], atol=1e-15)


@given(rotvec(np.pi - 1e-3), st.lists(vec3, min_size=0, max_size=3))
def test_log_inverts_exp(phi, cols):
    xi = np.concatenate([phi, *cols]) if cols else phi
    np.testing.assert_allclose(log_sek3(exp_sek3(xi)), xi, atol=1e-9)


def test_log_rejects_angle_pi():
    X = SEK3(np.diag([1.0, -1.0, -1.0]), np.zeros((1, 3)))
    with pytest.raises(ValueError):
        log_sek3(X)
    with pytest.raises(ValueError):
        so3_log(so3_exp([0, 0, np.pi - 1e-8]))


@pytest.mark.parametrize("angle", [1e-9, 1e-5, 0.3, 2.0, 2.6, 3.1, np.pi - 1e-5])
def test_so3_log_branches(angle):
    axis = np.array([2.0, -1.0, 0.5]) / np.linalg.norm([2.0, -1.0, 0.5])
    np.testing.assert_allclose(so3_log(expm(skew(axis * angle))), axis * angle, atol=1e-9)


# -- adjoint, compose, inverse -------------------------------------------------------


def test_adjoint_identity():
    assert np.array_equal(adjoint(identity(3)), np.eye(12))


def test_adjoint_pure_translation():
    p = np.array([0.3, -1.0, 2.0])
    Ad = adjoint(SEK3(np.eye(3), [p]))
    assert np.array_equal(Ad[3:6, 0:3], skew(p))
    assert np.array_equal(Ad[0:3, 3:6], np.zeros((3, 3)))


@given(seeds, st.integers(0, 3))
def test_adjoint_conjugation(seed, K):
    rng = np.random.default_rng(seed)
    X = random_sek3(rng, K)
    xi = rng.normal(size=3 + 3 * K)
    M = X.matrix()
    np.testing.assert_allclose(hat(adjoint(X) @ xi), M @ hat(xi) @ np.linalg.inv(M), atol=1e-10)


@given(seeds)
def test_adjoint_homomorphism(seed):
    rng = np.random.default_rng(seed)
    X, Y = random_sek3(rng, 3), random_sek3(rng, 3)
    np.testing.assert_allclose(adjoint(compose(X, Y)), adjoint(X) @ adjoint(Y), atol=1e-9)


@given(seeds, st.integers(0, 3))
def test_compose_and_inverse(seed, K):
    rng = np.random.default_rng(seed)
    X, Y = random_sek3(rng, K), random_sek3(rng, K)
    np.testing.assert_allclose(compose(X, Y).matrix(), X.matrix() @ Y.matrix(), atol=1e-12)
    np.testing.assert_allclose(compose(X, identity(K)).matrix(), X.matrix(), atol=0)
    np.testing.assert_allclose(compose(inverse(X), X).matrix(), np.eye(3 + K), atol=1e-10)
    np.testing.assert_allclose(inverse(inverse(X)).matrix(), X.matrix(), atol=1e-12)


def test_compose_mismatched_k():
    with pytest.raises(ValueError):
        compose(identity(1), identity(2))


def test_sek3_is_immutable():
    X = identity(2)
    with pytest.raises(ValueError):
        X.R[0, 0] = 2.0
    assert SEK3.from_matrix(X.matrix()).K == 2


def test_orthonormalize(rng):
    R = so3_exp(rng.normal(size=3))
    Q = orthonormalize(R + 1e-6 * rng.normal(size=(3, 3)))
    np.testing.assert_allclose(Q.T @ Q, np.eye(3), atol=1e-14)
    assert np.abs(Q - R).max() < 1e-5
