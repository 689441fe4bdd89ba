"""Acceptance criteria, each at its stated tolerance and time budget.

Every test prints one ``PASS``/``FAIL`` line (visible without ``-s``) before
asserting, so ``pytest tests/test_acceptance.py`` doubles as a report.
"""

import math
import time

import numpy as np
import pytest
from scipy.integrate import quad_vec
from scipy.linalg import expm

from conftest import LEGS, STANCE_ALPHA, random_belief, random_rotation
from inekf import contacts as _contacts
from inekf.analysis import fk_observability_matrix, numerical_rank
from inekf.contacts import add_contact
from inekf.correction import fk_observation, update
from inekf.dynamics import (
    GRAVITY,
    ImuSample,
    NoiseParams,
    a_left,
    phi_left,
    phi_right,
    phi_right_sandwich,
    propagate,
    propagate_mean,
    psi1,
    psi2,
)
from inekf.experiments import covariance_clouds, covsample_spec, imu_samples, lintest_spec, linearization_sweep
from inekf.filters import FilterSettings, make_filter
from inekf.liegroup import gamma, skew
from inekf.sim import TrajectorySpec, convergence_preset, generate, monte_carlo, uniform_init
from inekf.state import BiasVector, ErrorFrame, new_belief, switch_error_frame


@pytest.fixture
def report(capsys):
    def _report(label: str, ok: bool, detail: str):
        with capsys.disabled():
            print(f"\n[acceptance] {label}: {'PASS' if ok else 'FAIL'} ({detail})")
        return ok

    return _report


def _walk(seed: int = 3) -> TrajectorySpec:
    return TrajectorySpec(duration=10.0, seed=seed)


def _step_ends(records, *filters):
    """Feed ``records`` to every filter, yielding after the last record of each timestamp."""
    n = len(records)
    for i, rec in enumerate(records):
        for flt in filters:
            flt.process(rec)
        if i + 1 == n or records[i + 1].t != rec.t:
            yield rec


# -- 1 -------------------------------------------------------------------------


def test_c1_log_linear_exactness(report):
    t0 = time.perf_counter()
    log = generate(lintest_spec())
    tr = log.truth
    rows = linearization_sweep(imu_samples(log.records), tr.R[0], tr.v[0], tr.p[0])
    elapsed = time.perf_counter() - t0
    inv = np.array([r.inekf for r in rows])
    q = np.array([r.qekf for r in rows])
    ok = (
        bool(np.all(inv < 1e-8))
        and bool(np.all(np.diff(q) > 0))
        and q[-1] > 1e-3
        and elapsed < 10.0
    )
    detail = f"InEKF max {inv.max():.2e}, QEKF {', '.join(f'{x:.2e}' for x in q)}, {elapsed:.1f} s"
    assert report("C1 log-linear exactness", ok, detail)


# -- 2 -------------------------------------------------------------------------


def test_c2_observability_rank(report):
    t0 = time.perf_counter()
    worst_gap, ranks = math.inf, set()
    for seed in range(50):
        rng = np.random.default_rng(seed)
        b = new_belief(random_rotation(rng), rng.normal(size=3), rng.normal(size=3), None, np.eye(15))
        b = add_contact(b, 0, STANCE_ALPHA + rng.normal(scale=0.1, size=3), LEGS[0])
        imus = [ImuSample(rng.normal(size=3), -GRAVITY + rng.normal(size=3), 0.01) for _ in range(9)]
        M = fk_observability_matrix(b, imus)
        assert M.shape == (30, 12)
        rank, gap = numerical_rank(M)
        ranks.add(rank)
        worst_gap = min(worst_gap, gap)
    elapsed = time.perf_counter() - t0
    ok = ranks == {12 - 4} and worst_gap > 1e6 and elapsed < 1.0
    assert report("C2 observability rank", ok, f"ranks {sorted(ranks)}, min gap {worst_gap:.2e}, {elapsed:.2f} s")


# -- 3 -------------------------------------------------------------------------


def test_c3_frame_switch_exactness(report):
    t0 = time.perf_counter()
    log = generate(_walk())
    tr = log.truth
    settings = FilterSettings()
    right = make_filter("inekf-right", tr.R[0], tr.v[0], tr.p[0], settings)
    left = make_filter("inekf-left", tr.R[0], tr.v[0], tr.p[0], settings)
    worst_mean = worst_cov = 0.0
    for rec in _step_ends(log.records, right, left):
        br, bl = right.belief, left.belief
        assert br.registry == bl.registry
        worst_mean = max(
            worst_mean,
            float(np.abs(br.R - bl.R).max()),
            float(np.abs(br.X.cols - bl.X.cols).max()),
            float(np.abs(br.theta.vector - bl.theta.vector).max()),
        )
        Pl = switch_error_frame(bl).P
        worst_cov = max(worst_cov, float(np.linalg.norm(Pl - br.P) / np.linalg.norm(br.P)))
    elapsed = time.perf_counter() - t0
    ok = worst_mean < 1e-8 and worst_cov < 1e-7 and elapsed < 5.0
    detail = f"mean {worst_mean:.2e}, cov rel {worst_cov:.2e}, {elapsed:.1f} s"
    assert report("C3 frame-switch exactness", ok, detail)


# -- 4 -------------------------------------------------------------------------


def _psi_quadrature(w, a, dt):
    def f(s):
        M = skew(gamma(0, w * s) @ a) @ gamma(1, w * s) * s
        return np.stack([M, (dt - s) * M])

    out, _ = quad_vec(f, 0.0, dt, epsabs=1e-15, epsrel=1e-12)
    return out[0], out[1]


def test_c4_discretization(report):
    t0 = time.perf_counter()
    rng = np.random.default_rng(2024)
    e_left = e_psi = e_right = 0.0
    for _ in range(1000):
        dt = 10.0 ** rng.uniform(-4.0, -1.0)
        K = int(rng.integers(0, 4))
        imu = ImuSample(rng.normal(size=3), rng.normal(scale=3.0, size=3) + [0, 0, 9.81], dt)
        th = BiasVector(rng.normal(scale=0.1, size=3), rng.normal(scale=0.1, size=3))
        e_left = max(e_left, float(np.abs(phi_left(imu, th, K) - expm(a_left(imu, th, K) * dt)).max()))

        w = rng.normal(size=3)
        w *= 10.0 ** rng.uniform(-8.0, 1.0) / np.linalg.norm(w)
        a = rng.normal(scale=5.0, size=3)
        q1, q2 = _psi_quadrature(w, a, dt)
        e_psi = max(e_psi, float(np.abs(psi1(w, a, dt) - q1).max()), float(np.abs(psi2(w, a, dt) - q2).max()))

        b = random_belief(rng, K, bias_scale=0.1)
        nb = propagate_mean(b, imu)
        diff = phi_right(nb.X, b.X, imu, b.theta) - phi_right_sandwich(nb.X, b.X, imu, b.theta)
        e_right = max(e_right, float(np.abs(diff).max()))
    elapsed = time.perf_counter() - t0
    ok = e_left <= 1e-9 and e_psi <= 1e-8 and e_right <= 1e-8 and elapsed < 10.0
    detail = f"Phi_l {e_left:.2e}, Psi {e_psi:.2e}, Phi_r {e_right:.2e}, {elapsed:.1f} s"
    assert report("C4 discretization", ok, detail)


# -- 5 -------------------------------------------------------------------------


def test_c5_convergence_monte_carlo(report):
    t0 = time.perf_counter()
    log = generate(convergence_preset())
    res = {kind: monte_carlo(log, 100, uniform_init(30.0, 1.0), kind, seed=7) for kind in ("inekf-right", "qekf")}
    elapsed = time.perf_counter() - t0
    ttc = {k: np.array([r.time_to_converge for r in v]) for k, v in res.items()}
    steady = {k: max(r.steady_tilt() for r in v) for k, v in res.items()}
    n_conv = int(np.isfinite(ttc["inekf-right"]).sum())
    # runs that never converge count as infinitely slow
    med_i, med_q = float(np.median(ttc["inekf-right"])), float(np.median(ttc["qekf"]))
    ok = (
        n_conv >= 99
        and med_i < med_q
        and all(s < math.radians(2.0) for s in steady.values())
        and elapsed < 120.0
    )
    detail = (
        f"InEKF converged {n_conv}/100, median ttc {med_i:.2f} s vs QEKF {med_q:.2f} s, "
        f"worst steady tilt {math.degrees(steady['inekf-right']):.2f} / {math.degrees(steady['qekf']):.2f} deg, "
        f"{elapsed:.0f} s"
    )
    assert report("C5 convergence Monte Carlo", ok, detail)


# -- 6 -------------------------------------------------------------------------


def test_c6_covariance_geometry(report):
    t0 = time.perf_counter()
    clouds = covariance_clouds(generate(covsample_spec()), t_sample=8.0, n=10_000)
    elapsed = time.perf_counter() - t0
    # "ratio near 1" for the ellipse is read as within a factor of two
    ok = clouds.inekf_ratio < 0.15 and 0.5 <= clouds.qekf_ratio <= 2.0 and elapsed < 30.0
    detail = f"InEKF ratio {clouds.inekf_ratio:.4f}, QEKF ratio {clouds.qekf_ratio:.3f}, {elapsed:.1f} s"
    assert report("C6 covariance geometry", ok, detail)


# -- 7 -------------------------------------------------------------------------


class _Audited:
    """Wraps a filter's contact hooks to check the lifecycle invariants."""

    def __init__(self, flt):
        self.flt = flt
        self.adds = {0: 0, 1: 0}
        self.removes = {0: 0, 1: 0}
        self.bitwise = True
        add, rem = flt._add_contact, flt._remove_contact

        def _add(cid, alpha):
            before = flt.belief
            add(cid, alpha)
            back = _contacts.remove_contact(flt.belief, cid)
            self.bitwise &= np.array_equal(back.P, before.P) and np.array_equal(back.X.cols, before.X.cols)
            self.adds[cid] += 1

        def _remove(cid):
            before = flt.belief
            keep = _surviving_indices(before, cid)
            rem(cid)
            self.bitwise &= np.array_equal(flt.belief.P, before.P[np.ix_(keep, keep)])
            self.removes[cid] += 1

        flt._add_contact, flt._remove_contact = _add, _remove


def _surviving_indices(belief, cid):
    j = 9 + 3 * belief.point_index(cid)
    return [i for i in range(belief.dim) if not j <= i < j + 3]


def test_c7_contact_lifecycle(report):
    t0 = time.perf_counter()
    log = generate(_walk())
    tr = log.truth
    au = _Audited(make_filter("inekf-right", tr.R[0], tr.v[0], tr.p[0]))
    worst = math.inf
    for _ in _step_ends(log.records, au.flt):
        worst = min(worst, float(np.linalg.eigvalsh(au.flt.belief.P)[0]))
    elapsed = time.perf_counter() - t0
    cycles = [min(au.adds[c], au.removes[c]) for c in (0, 1)]
    ok = worst >= -1e-9 and au.bitwise and all(8 <= c <= 14 for c in cycles) and elapsed < 5.0
    detail = f"min eig {worst:.2e}, cycles per foot {cycles}, bitwise {au.bitwise}, {elapsed:.1f} s"
    assert report("C7 contact lifecycle", ok, detail)


# -- 8 -------------------------------------------------------------------------


def test_c8_throughput(report):
    leg = LEGS[0]
    noise = NoiseParams()
    rng = np.random.default_rng(0)
    b = new_belief(np.eye(3), np.zeros(3), [0.0, 0.0, 0.7], None, np.eye(15) * 0.01)
    b = add_contact(b, 0, STANCE_ALPHA, leg, noise.encoder**2)
    imus = [ImuSample(rng.normal(scale=0.1, size=3), -GRAVITY + rng.normal(scale=0.1, size=3), 1e-3) for _ in range(1000)]
    alphas = STANCE_ALPHA + rng.normal(scale=1e-3, size=(1000, 3))
    var = noise.encoder**2
    n_steps = 200_000
    t0 = time.perf_counter()
    for k in range(n_steps):
        b = propagate(b, imus[k % 1000], noise)
        b = update(b, fk_observation(b, [(0, alphas[k % 1000], leg)], var))
    elapsed = time.perf_counter() - t0
    assert b.error_frame is ErrorFrame.RIGHT
    ok = elapsed < 100.0 and bool(np.all(np.isfinite(b.P)))
    assert report("C8 throughput", ok, f"{n_steps} steps in {elapsed:.1f} s ({n_steps / elapsed:.0f} Hz)")
