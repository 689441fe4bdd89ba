import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from conftest import random_belief, random_rotation, random_sek3, random_spd, seeds
from inekf.contacts import add_point
from inekf.liegroup import SEK3, adjoint, compose, exp_sek3, identity, inverse
from inekf.state import (
    BiasVector,
    Convention,
    ErrorFrame,
    FilterBelief,
    PointKind,
    UnknownPointError,
    check_psd,
    invariant_error,
    new_belief,
    switch_error_frame,
    validate,
)

TABLE1_STD = [math.radians(30)] * 3 + [1.0] * 3 + [0.1] * 3 + [0.005] * 3 + [0.05] * 3


def test_new_belief_with_initial_variances():
    b = new_belief(np.eye(3), np.zeros(3), np.zeros(3), np.zeros(6), np.diag(np.square(TABLE1_STD)))
    assert b.P.shape == (15, 15)
    assert b.K == 0 and b.registry == ()
    assert b.error_frame is ErrorFrame.RIGHT and b.convention is Convention.WORLD
    validate(b)


def test_new_belief_rejects_negative_eigenvalue():
    P = np.eye(15)
    P[4, 4] = -1e-3
    with pytest.raises(ValueError):
        new_belief(np.eye(3), np.zeros(3), np.zeros(3), None, P)


@pytest.mark.parametrize("shape", [(14, 14), (18, 18), (15, 14)])
def test_new_belief_rejects_wrong_dimension(shape):
    with pytest.raises(ValueError):
        new_belief(np.eye(3), np.zeros(3), np.zeros(3), None, np.zeros(shape))


def test_check_psd_asymmetric():
    P = np.eye(3)
    P[0, 1] = 1e-3
    with pytest.raises(ValueError):
        check_psd(P)


def test_bias_vector():
    th = BiasVector.from_vector(np.arange(6.0))
    assert np.array_equal(th.bg, [0, 1, 2]) and np.array_equal(th.ba, [3, 4, 5])
    with pytest.raises(ValueError):
        BiasVector([np.nan, 0, 0], [0, 0, 0])


def test_invariant_error_identical(rng):
    b = random_belief(rng, 1)
    xi, zeta = invariant_error(b, b.X, b.theta)
    assert np.abs(xi).max() < 1e-12 and np.array_equal(zeta, np.zeros(6))


@pytest.mark.parametrize("frame", list(ErrorFrame))
def test_invariant_error_recovers_offset(rng, frame):
    X = random_sek3(rng, 3)
    xi0 = rng.normal(scale=0.5, size=12)
    E = exp_sek3(xi0)
    X_hat = compose(E, X) if frame is ErrorFrame.RIGHT else compose(X, E)
    b = FilterBelief(X_hat, BiasVector([0.1, 0, 0], [0, 0, 0.2]), np.eye(21), frame, Convention.WORLD, ((PointKind.CONTACT, 0),))
    xi, zeta = invariant_error(b, X, BiasVector())
    np.testing.assert_allclose(xi, xi0, atol=1e-10)
    np.testing.assert_allclose(zeta, [0.1, 0, 0, 0, 0, 0.2], atol=0)


def test_invariant_error_mismatched_k(rng):
    b = random_belief(rng, 1)
    with pytest.raises(ValueError):
        invariant_error(b, identity(2), BiasVector())


def test_switch_twice_is_identity(rng):
    b = random_belief(rng, 2)
    bb = switch_error_frame(switch_error_frame(b))
    assert bb.error_frame is b.error_frame
    np.testing.assert_allclose(bb.P, b.P, atol=1e-10)


def test_switch_at_identity_leaves_p(rng):
    P = random_spd(rng, 18)
    b = FilterBelief(identity(3), BiasVector(), P, registry=((PointKind.CONTACT, 0),))
    np.testing.assert_allclose(switch_error_frame(b).P, P, atol=0)


def test_switch_matches_sample_transform():
    rng = np.random.default_rng(7)
    b = random_belief(rng, 1, frame=ErrorFrame.LEFT)
    xs = rng.multivariate_normal(np.zeros(b.dim), b.P, size=200_000)
    n = b.X.dim
    xs[:, :n] = xs[:, :n] @ adjoint(b.X).T
    emp = np.cov(xs.T)
    Pr = switch_error_frame(b).P
    scale = np.sqrt(np.outer(np.diag(Pr), np.diag(Pr)))
    assert np.abs(emp - Pr).max() / scale.max() < 1e-2


@given(seeds)
def test_switch_preserves_inertia(seed):
    rng = np.random.default_rng(seed)
    b = random_belief(rng, 1)
    A = rng.normal(size=(b.dim, 4))
    P = A @ A.T  # rank 4
    b = FilterBelief(b.X, b.theta, P, b.error_frame, b.convention, b.registry)
    lam = np.linalg.eigvalsh(switch_error_frame(b).P)
    scale = lam[-1]
    assert lam[0] > -1e-9 * scale
    assert np.sum(lam > 1e-9 * scale) == 4


@given(st.lists(st.integers(0, 1000), min_size=1, max_size=6, unique=True))
def test_registry_round_trip(ids):
    rng = np.random.default_rng(len(ids))
    b = new_belief(random_rotation(rng), np.zeros(3), np.zeros(3), None, np.eye(15))
    for i, pid in enumerate(ids):
        kind = PointKind.CONTACT if i % 2 else PointKind.LANDMARK
        b = add_point(b, pid, kind, [0.1 * i, 0, -0.5])
    assert [pid for _, pid in b.registry] == ids
    for i, pid in enumerate(ids):
        kind = PointKind.CONTACT if i % 2 else PointKind.LANDMARK
        assert b.point_index(pid, kind) == i
        np.testing.assert_allclose(b.point(pid, kind), b.p + b.R @ [0.1 * i, 0, -0.5])
    validate(b)


def test_unknown_point(rng):
    b = random_belief(rng, 1)
    with pytest.raises(UnknownPointError):
        b.point_index(5)
    with pytest.raises(UnknownPointError):
        b.point_index(0, PointKind.LANDMARK)


def test_inverse_state_convention(rng):
    b = random_belief(rng, 1, convention=Convention.ROBO)
    assert b.convention is Convention.ROBO
    Xw = inverse(b.X)
    assert isinstance(Xw, SEK3)
    validate(b)
