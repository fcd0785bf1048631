"""Acceptance suite: one test per criterion, each printing a PASS/FAIL line.

Run on its own with ``pytest tests/test_acceptance.py -v`` or
``python3 tests/test_acceptance.py``.
"""

import math
import time
from contextlib import contextmanager

import numpy as np
import pytest
import sympy as sp
from hypothesis import given, settings
from hypothesis import strategies as st

from plmmlab.drift import measured_smooth_drift, oscillatory_integral_probe, predicted_smooth_drift
from plmmlab.expansion import StartExpansion, predict_error, solve_expansion, solve_vandermonde, transition_diagnostics
from plmmlab.harness import PRESETS, run_preset
from plmmlab.integrator import IntegratorConfig, integrate, reference_trajectory
from plmmlab.lmm import analyze, get_method
from plmmlab.plmm import get_pair, growth_parameter, registered_pairs
from plmmlab.problems import double_pendulum, harmonic_exact, harmonic_oscillator


@contextmanager
def criterion(capsys, number, title, budget=None):
    """Print a PASS/FAIL line for the enclosed checks, including a runtime budget."""
    t0 = time.perf_counter()
    ok = False
    try:
        yield
        ok = True
    finally:
        dt = time.perf_counter() - t0
        over = budget is not None and dt > budget
        status = "PASS" if ok and not over else "FAIL"
        with capsys.disabled():
            print(f"\ncriterion {number} {status}: {title} ({dt:.1f} s)")
    if over:
        pytest.fail(f"criterion {number} took {dt:.1f} s, budget {budget} s")


# 1 ----------------------------------------------------------------------------------------

def _sympy_constants(name, n):
    """c_j as the z^(j+1) coefficients of (rho(e^z) - z sigma(e^z)) / sigma(e^z)."""
    m = get_method(name)
    z = sp.symbols("z")
    x = sp.exp(z)

    def exact(c):
        return sp.nsimplify(float(np.real(c)), tolerance=1e-13, rational=True)

    rho = sum(exact(c) * x**k for k, c in enumerate(m.rho.coeffs))
    sigma = sum(exact(c) * x**k for k, c in enumerate(m.sigma.coeffs))
    ser = sp.series((rho - z * sigma) / sigma, z, 0, n + 2).removeO()
    return [ser.coeff(z, j + 1) for j in range(n + 1)]


def test_criterion_1_method_analysis(capsys):
    with criterion(capsys, 1, "order and error constants against a symbolic series oracle"):
        for name, r, c in (("leapfrog", 2, sp.Rational(1, 6)), ("ab2", 2, sp.Rational(5, 12)),
                           ("adams3", 3, sp.Rational(3, 8))):
            a = analyze(get_method(name))
            oracle = _sympy_constants(name, 2 * r)
            assert a.order == r
            assert all(oracle[j] == 0 for j in range(r))
            assert oracle[r] == c
            assert abs(a.c(r) - float(c)) < 1e-12
        for name in ("leapfrog", "plmm2_q", "trapezoidal"):
            a = analyze(get_method(name))
            assert a.symmetric
            d = a.series_constants
            assert all(abs(d[j]) < 1e-10 for j in range(1, len(d), 2))


def test_criterion_1_runtime(capsys):
    # the analysis itself, without the symbolic oracle
    with criterion(capsys, "1b", "analysis runtime", budget=1.0):
        for name in ("leapfrog", "ab2", "adams3", "plmm2_q", "trapezoidal"):
            analyze(get_method(name))


# 2 ----------------------------------------------------------------------------------------

def _direct_lambda(method, x):
    return method.sigma(x) / (x * method.rho.derivative(1)(x))


def test_criterion_2_root_algebra(capsys):
    with criterion(capsys, 2, "root classification and growth parameters", budget=1.0):
        c = get_pair("plmm2").classification
        assert np.allclose(c.common, [1], atol=1e-10)
        assert np.allclose(c.p_only, [-1], atol=1e-10)
        assert np.allclose(sorted(c.q_only, key=lambda w: w.imag), [-1j, 1j], atol=1e-10)
        lf, rq = get_method("leapfrog"), get_method("plmm2_q")
        assert abs(growth_parameter(lf, -1) - _direct_lambda(lf, -1)) < 1e-10
        assert abs(growth_parameter(lf, -1) + 1) < 1e-10
        assert abs(growth_parameter(rq, 1j) - _direct_lambda(rq, 1j)) < 1e-10
        assert abs(growth_parameter(rq, 1j) + 0.5) < 1e-10
        for name in registered_pairs():
            pair = get_pair(name)
            if not pair.symmetric:
                continue
            assert all(abs(lam.imag) < 1e-10 for lam in pair.growth.all_lambdas())
            assert all(abs(x.real) < 1e-10 for x in pair.growth.all_cross())


# 3 ----------------------------------------------------------------------------------------

def _ho_error(name, h, t_end=10.0):
    tr = integrate(harmonic_oscillator(), get_pair(name), IntegratorConfig(h=h, n_steps=int(round(t_end / h))))
    P, Q = harmonic_exact(tr.times)
    return max(np.max(np.abs(tr.p[:, 0] - P)), np.max(np.abs(tr.q[:, 0] - Q)))


def test_criterion_3_convergence(capsys):
    with criterion(capsys, 3, "nominal order on the harmonic oscillator", budget=10.0):
        for name in ("plmm2", "lmm2", "adams3", "sim_nosim"):
            r = get_pair(name).order
            errs = [_ho_error(name, h) for h in (0.02, 0.01, 0.005)]
            for a, b in zip(errs, errs[1:]):
                assert abs(a / b / 2**r - 1) < 0.15, (name, errs)


# 4 ----------------------------------------------------------------------------------------

def test_criterion_4_expansion(capsys):
    with criterion(capsys, 4, "expansion residual order and exact-start annihilation", budget=60.0):
        ho, pair = harmonic_oscillator(), get_pair("plmm2")
        T = 5.0
        cs = solve_expansion(ho, pair, T, StartExpansion.exact(pair, ho))
        for c in cs.parasitic():
            assert np.max(np.abs(c.at(pair.order, None, "p"))) < 1e-12
            assert np.max(np.abs(c.at(pair.order, None, "q"))) < 1e-12
        res = []
        for h in (0.04, 0.02, 0.01):
            n = int(round(T / h))
            tr = integrate(ho, pair, IntegratorConfig(h=h, n_steps=n, record=(n,)))
            ref = reference_trajectory(ho, T, tr.times)
            ep, eq = predict_error(cs, h, tr.levels, j_max=pair.order + 2)
            res.append(max(np.max(np.abs(tr.p - ref.p - ep)), np.max(np.abs(tr.q - ref.q - eq))))
        orders = [math.log2(a / b) for a, b in zip(res, res[1:])]
        assert all(o >= pair.order + 2 - 0.3 for o in orders), orders


# 5 ----------------------------------------------------------------------------------------

@settings(max_examples=100, deadline=None, derandomize=True)
@given(st.floats(-100, 100), st.floats(-100, 100))
def _vandermonde_case(u, v):
    a = solve_vandermonde([1.0, -1.0], np.array([u, v]))
    scale = max(1.0, abs(u), abs(v))
    assert abs(a[0] - (u + v) / 2) < 1e-12 * scale
    assert abs(a[1] - (u - v) / 2) < 1e-12 * scale


def test_criterion_5_vandermonde(capsys):
    with criterion(capsys, 5, "two-root Vandermonde against the hand solution"):
        _vandermonde_case()
        rng = np.random.default_rng(5)
        for u, v in rng.uniform(-1, 1, (100, 2)):
            a = solve_vandermonde([1.0, -1.0], np.array([u, v]))
            assert abs(a[0] - (u + v) / 2) < 1e-12 and abs(a[1] - (u - v) / 2) < 1e-12


# 6 ----------------------------------------------------------------------------------------

def test_criterion_6_transition_identities(capsys):
    with criterion(capsys, 6, "transition-matrix identities on the double pendulum over [0, 500]", budget=30.0):
        diag = transition_diagnostics(double_pendulum(), get_pair("plmm2"), np.linspace(0, 500, 1001))
        assert np.max(np.abs(diag.det_M - 1)) < 1e-7
        errs = diag.direction_errors()
        gq = [k for k, v in diag.parasitic.items() if v["block"] == "gq"]
        assert gq and all(errs[k] < 1e-7 for k in gq)
        assert diag.liouville_error() < 1e-6


# 7 ----------------------------------------------------------------------------------------

def test_criterion_7_figures(capsys, tmp_path):
    with criterion(capsys, 7, "figure presets reach their growth classes", budget=600.0):
        for name in sorted(PRESETS):
            res = run_preset(name, output_dir=str(tmp_path / name))
            assert res.verdict["label"]["label"] == PRESETS[name].expected, (name, res.verdict["label"])
            if PRESETS[name].initial_expected is not None:
                assert res.verdict["initial_window"]["label"] == PRESETS[name].initial_expected


# 8 ----------------------------------------------------------------------------------------

def _drift_mismatch(h, T=100.0):
    ho, pair = harmonic_oscillator(), get_pair("plmm2")
    tr = integrate(ho, pair, IntegratorConfig(h=h, n_steps=int(round(T / h))))
    meas = measured_smooth_drift(tr, ho, pair)
    pred = predicted_smooth_drift(ho, pair, h, meas.sample_times)
    return np.max(np.abs(meas.values - pred.values)), np.max(np.abs(pred.values))


def test_criterion_8_drift_prediction(capsys):
    with criterion(capsys, 8, "smooth drift matches the leading-order prediction"):
        diff, size = _drift_mismatch(0.005)
        assert diff <= 0.25 * size
        ratios = [d / h**2 for h in (0.02, 0.01, 0.005) for d in [_drift_mismatch(h, 50.0)[0]]]
        assert ratios[0] / ratios[1] >= 1.5 and ratios[1] / ratios[2] >= 1.5, ratios


# 9 ----------------------------------------------------------------------------------------

def test_criterion_9_oscillatory_integrals(capsys):
    with criterion(capsys, 9, "oscillatory integrals over [0, 1e4]"):
        reports = {r.name: r for r in oscillatory_integral_probe(t_end=1e4)}
        assert abs(reports["sin1^2"].slope - 0.5) <= 0.02 * 0.5
        for i in (1, 2):
            for j in (1, 2):
                assert reports[f"cos{i}sin{j}"].within_bound()


if __name__ == "__main__":
    raise SystemExit(pytest.main([__file__, "-v"]))
