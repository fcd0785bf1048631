import math

import numpy as np
import pytest

from plmmlab.exceptions import NewtonDivergence
from plmmlab.integrator import (
    IntegratorConfig,
    PLMMIntegrator,
    Trajectory,
    integrate,
    reference_trajectory,
    start_values,
)
from plmmlab.plmm import get_pair
from plmmlab.problems import double_pendulum, harmonic_exact, harmonic_oscillator, linear_problem, trivial_problem

SECTION_PAIRS = ["plmm2", "lmm2", "adams3", "sim_nosim"]


def test_exact_start_values():
    ho = harmonic_oscillator()
    cfg = IntegratorConfig(h=0.1, n_steps=10)
    P, Q = start_values(ho, get_pair("plmm2"), cfg)
    assert P.shape == (2, 1) and Q.shape == (3, 1)
    assert abs(P[1, 0] - math.cos(0.1)) < 1e-12
    assert abs(Q[2, 0] - math.sin(0.2)) < 1e-12
    assert P[0, 0] == 1.0 and Q[0, 0] == 0.0


def test_perturbed_start():
    ho = harmonic_oscillator()
    pair = get_pair("plmm2")
    exact = start_values(ho, pair, IntegratorConfig(h=0.1, n_steps=10))
    zero = start_values(ho, pair, IntegratorConfig(h=0.1, n_steps=10, start_mode="order_r_perturbed", epsilon=0.0))
    np.testing.assert_array_equal(exact[0], zero[0])
    np.testing.assert_array_equal(exact[1], zero[1])
    pert = start_values(ho, pair, IntegratorConfig(h=0.1, n_steps=10, start_mode="order_r_perturbed", epsilon=1.0))
    np.testing.assert_array_equal(pert[0][0], exact[0][0])
    np.testing.assert_allclose(np.abs(pert[1][1:] - exact[1][1:]), 0.01, rtol=1e-10)


def test_plmm2_first_steps_by_hand():
    ho = harmonic_oscillator()
    h = 0.1
    tr = integrate(ho, get_pair("plmm2"), IntegratorConfig(h=h, n_steps=5))
    p, q = tr.p[:, 0], tr.q[:, 0]
    assert p[2] == pytest.approx(1 - 0.2 * math.sin(0.1), abs=1e-14)
    assert p[2] == pytest.approx(0.98003331, abs=1e-8)
    assert q[3] == pytest.approx(q[2] - q[1] + q[0] + h * (p[2] + p[1]), abs=1e-15)


@pytest.mark.parametrize("name", ["plmm2", "lmm2", "adams3", "sim_nosim", "trapezoidal"])
def test_trivial_problem_is_fixed_point(name):
    prob = trivial_problem()
    tr = integrate(prob, get_pair(name), IntegratorConfig(h=0.05, n_steps=200))
    assert np.all(tr.p == prob.p0) and np.all(tr.q == prob.q0)


def test_reference_trajectory():
    ho = harmonic_oscillator()
    tr = reference_trajectory(ho, 1.0)
    assert abs(tr.p[-1, 0] - math.cos(1)) < 1e-11 and abs(tr.q[-1, 0] - math.sin(1)) < 1e-11
    tr = reference_trajectory(ho, 0.0)
    assert tr.p[0, 0] == 1.0 and tr.q[0, 0] == 0.0
    with pytest.raises(ValueError):
        reference_trajectory(ho, -1.0)


def _ho_error(name, h, t_end=10.0):
    ho = harmonic_oscillator()
    tr = integrate(ho, get_pair(name), IntegratorConfig(h=h, n_steps=int(round(t_end / h))))
    P, Q = harmonic_exact(tr.times)
    return max(np.max(np.abs(tr.p[:, 0] - P)), np.max(np.abs(tr.q[:, 0] - Q)))


@pytest.mark.parametrize("name", SECTION_PAIRS + ["trapezoidal"])
def test_convergence_order(name):
    r = get_pair(name).order
    errs = [_ho_error(name, h) for h in (0.02, 0.01, 0.005)]
    for a, b in zip(errs, errs[1:]):
        assert abs(a / b / 2**r - 1) < 0.15


def test_trapezoidal_matches_cayley_transform():
    # the trapezoidal rule on a linear system is the Cayley map of h A
    ho = harmonic_oscillator()
    h = 0.1
    tr = integrate(ho, get_pair("trapezoidal"), IntegratorConfig(h=h, n_steps=20))
    A = np.array([[0.0, -1.0], [1.0, 0.0]])
    I = np.eye(2)
    step = np.linalg.solve(I - h / 2 * A, I + h / 2 * A)
    y = np.array([1.0, 0.0])
    for n in range(21):
        np.testing.assert_allclose(tr.states[n], y, atol=1e-12)
        y = step @ y


def test_implicit_coupled_newton_on_pendulum():
    dp = double_pendulum()
    tr = integrate(dp, get_pair("trapezoidal"), IntegratorConfig(h=0.01, n_steps=200))
    ref = reference_trajectory(dp, 2.0, tr.times)
    assert np.max(np.abs(tr.states - ref.states)) < 1e-4


def test_newton_divergence():
    dp = double_pendulum()
    with pytest.raises(NewtonDivergence):
        integrate(dp, get_pair("trapezoidal"), IntegratorConfig(h=0.5, n_steps=10, newton_max_iter=0))


def test_zero_stability_with_perturbed_start():
    prob = trivial_problem()
    h = 0.01
    for name in SECTION_PAIRS:
        pair = get_pair(name)
        cfg = IntegratorConfig(h=h, n_steps=100_000, start_mode="order_r_perturbed", epsilon=1.0, stride=97)
        tr = integrate(prob, pair, cfg)
        size = h**pair.order
        dev = max(np.max(np.abs(tr.p - prob.p0)), np.max(np.abs(tr.q - prob.q0)))
        assert dev <= 10 * size


def test_overflow_is_reported_not_raised():
    prob = linear_problem([[50.0]], [[0.0]], [[0.0]], [[50.0]], [1.0], [1.0])
    tr = integrate(prob, get_pair("lmm2"), IntegratorConfig(h=0.5, n_steps=5000))
    assert tr.nonfinite
    assert tr.nonfinite_level is not None and len(tr) == tr.nonfinite_level
    assert np.all(np.isfinite(tr.states))


def test_reproducible():
    dp = double_pendulum()
    cfg = IntegratorConfig(h=0.01, n_steps=3000, start_mode="order_r_perturbed", seed=3)
    a = integrate(dp, get_pair("plmm2"), cfg)
    b = integrate(dp, get_pair("plmm2"), cfg)
    assert a.p.tobytes() == b.p.tobytes() and a.q.tobytes() == b.q.tobytes()


def test_recording_options():
    ho = harmonic_oscillator()
    full = integrate(ho, get_pair("plmm2"), IntegratorConfig(h=0.01, n_steps=100))
    strided = integrate(ho, get_pair("plmm2"), IntegratorConfig(h=0.01, n_steps=100, stride=10))
    np.testing.assert_array_equal(strided.levels, np.arange(0, 101, 10))
    np.testing.assert_array_equal(strided.p, full.p[::10])
    picked = integrate(ho, get_pair("plmm2"), IntegratorConfig(h=0.01, n_steps=100, record=(100, 3, 3, 500)))
    np.testing.assert_array_equal(picked.levels, [3, 100])
    np.testing.assert_allclose(picked.times, [0.03, 1.0])


def test_config_validation():
    with pytest.raises(ValueError):
        IntegratorConfig(h=0.0, n_steps=10)
    with pytest.raises(ValueError):
        IntegratorConfig(h=0.1, n_steps=10, start_mode="bogus")
    with pytest.raises(ValueError):
        integrate(harmonic_oscillator(), get_pair("plmm2"), IntegratorConfig(h=0.1, n_steps=2))


def test_csv_roundtrip(tmp_path):
    dp = double_pendulum()
    tr = integrate(dp, get_pair("plmm2"), IntegratorConfig(h=0.01, n_steps=50))
    path = tr.to_csv(tmp_path / "traj.csv")
    assert path.read_text().splitlines()[0] == "t,p1,p2,q1,q2"
    back = Trajectory.from_csv(path)
    np.testing.assert_array_equal(back.states, tr.states)
    np.testing.assert_array_equal(back.times, tr.times)
    npz = np.load(tr.to_npz(tmp_path / "traj.npz"))
    np.testing.assert_array_equal(npz["q"], tr.q)


def test_estimator_wrapper():
    est = PLMMIntegrator(pair="adams3", h=0.01, t_end=1.0).fit(harmonic_oscillator())
    assert est.trajectory_.times[-1] == pytest.approx(1.0)
    y = est.predict([1.0])
    np.testing.assert_allclose(y[0], [math.cos(1), math.sin(1)], atol=1e-5)
    assert est.get_params()["pair"] == "adams3"
