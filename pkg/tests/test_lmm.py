from fractions import Fraction
from math import factorial

import numpy as np
import pytest
from hypothesis import assume, given, settings
from hypothesis import strategies as st

from plmmlab.exceptions import IllConditioned, NotConsistent, SigmaVanishesAtOne
from plmmlab.lmm import MultistepMethod, analyze, get_method, is_symmetric, is_zero_stable, method_from_dict
from plmmlab.plmm import PartitionedMethod
from plmmlab.integrator import IntegratorConfig, integrate
from plmmlab.problems import linear_problem

EXACT = {
    "leapfrog": ([-1, 0, 1], [0, 2]),
    "ab2": ([0, -1, 1], [Fraction(-1, 2), Fraction(3, 2)]),
    "adams3": ([0, 0, -1, 1], [Fraction(5, 12), Fraction(-16, 12), Fraction(23, 12)]),
    "plmm2_q": ([-1, 1, -1, 1], [0, 1, 1]),
    "trapezoidal": ([-1, 1], [Fraction(1, 2), Fraction(1, 2)]),
}


def _oracle_constants(rho, sigma, n):
    """Rational c_j from rho(e^z) - z sigma(e^z) = sigma(e^z) sum_j c_j z^(j+1).

    The operator is applied to monomials, then the quotient series is formed
    by long division, all in exact arithmetic.
    """
    rho = [Fraction(x) for x in rho]
    sigma = [Fraction(x) for x in sigma]
    L = []
    S = []
    for k in range(n + 2):
        a = sum(c * Fraction(v) ** k for v, c in enumerate(rho)) / factorial(k)
        if k:
            a -= sum(c * Fraction(v) ** (k - 1) for v, c in enumerate(sigma)) / factorial(k - 1)
        L.append(a)
        S.append(sum(c * Fraction(v) ** k for v, c in enumerate(sigma)) / factorial(k))
    Q = []
    for k in range(n + 2):
        Q.append((L[k] - sum(Q[i] * S[k - i] for i in range(k))) / S[0])
    order = next(k for k, x in enumerate(Q) if x != 0) - 1
    return order, Q[1:]


@pytest.mark.parametrize("name, r, c", [("leapfrog", 2, Fraction(1, 6)), ("ab2", 2, Fraction(5, 12)),
                                        ("adams3", 3, Fraction(3, 8))])
def test_leading_constants(name, r, c):
    a = analyze(get_method(name))
    order, q = _oracle_constants(*EXACT[name], 2 * r + 2)
    assert a.order == r == order
    assert q[r] == c
    assert abs(a.c(r) - float(c)) < 1e-12


@pytest.mark.parametrize("name", sorted(EXACT))
def test_all_stored_constants_match_oracle(name):
    a = analyze(get_method(name))
    r = a.order
    _, q = _oracle_constants(*EXACT[name], 2 * r + 2)
    for j in range(r, 2 * r):
        assert abs(a.c(j) - float(q[j])) < 1e-12
    assert a.c(r - 1) == 0.0
    with pytest.raises(IndexError):
        a.c(2 * r)


def test_symmetry_flags():
    assert is_symmetric(get_method("leapfrog"))
    assert is_symmetric(get_method("plmm2_q"))
    assert not is_symmetric(get_method("ab2"))
    assert not is_symmetric(get_method("adams3"))


def test_zero_stability_examples():
    assert is_zero_stable(MultistepMethod.from_coefficients([-1, 0, 1], [0, 2]))
    assert not is_zero_stable(MultistepMethod.from_coefficients([1, -2, 1], [0, 1]))
    assert is_zero_stable(MultistepMethod.from_coefficients([-1, 1, -1, 1], [0, 1, 1]))
    assert not is_zero_stable(MultistepMethod.from_coefficients([2, -3, 1], [0, 1]))


def test_errors():
    with pytest.raises(NotConsistent):
        analyze(MultistepMethod.from_coefficients([-1, 1], [2]))
    with pytest.raises(SigmaVanishesAtOne):
        analyze(MultistepMethod.from_coefficients([1, -2, 1], [1, -1]))
    with pytest.raises(ValueError):
        MultistepMethod.from_coefficients([-1, 1], [0, 0, 1])
    with pytest.raises(ValueError):
        method_from_dict({"rho": [-1, 1]})


def test_explicit_flag():
    assert get_method("adams3").explicit
    assert not get_method("trapezoidal").explicit


@settings(max_examples=40, deadline=None)
@given(st.sampled_from(sorted(EXACT)), st.floats(0.1, 10) | st.floats(-10, -0.1))
def test_scaling_invariance(name, factor):
    m = get_method(name)
    a, b = analyze(m), analyze(m.scaled(factor))
    assert a.order == b.order
    np.testing.assert_allclose(a.error_constants, b.error_constants, rtol=1e-10, atol=1e-13)


@st.composite
def symmetric_methods(draw):
    k = draw(st.integers(2, 5))
    half = [draw(st.floats(-2, 2)) for _ in range(k // 2 + 1)]
    rho = np.zeros(k + 1)
    for v, x in enumerate(half):
        rho[v] = x
        rho[k - v] = -x
    if k % 2 == 0:
        rho[k // 2] = 0.0
    sig = np.zeros(k + 1)
    for v in range(k // 2 + 1):
        sig[v] = sig[k - v] = draw(st.floats(0, 2))
    drho1 = sum(v * c for v, c in enumerate(rho))
    s1 = sig.sum()
    assume(abs(drho1) > 0.1 and s1 > 0.1 and abs(rho[k]) > 0.1)
    return MultistepMethod.from_coefficients(rho, sig * drho1 / s1)


@settings(max_examples=60, deadline=None)
@given(symmetric_methods())
def test_symmetric_methods_have_even_order_and_vanishing_odd_constants(m):
    try:
        a = analyze(m, J=14)
    except (IllConditioned, ValueError):
        assume(False)
    assert a.symmetric
    assert a.order % 2 == 0
    d = a.series_constants
    scale = max(1.0, np.max(np.abs(d)))
    for j in range(1, len(d), 2):
        assert abs(d[j]) < 1e-10 * scale


def _scalar_growth_error(m, h):
    """Global error at t = 1 for y' = y run through both blocks of the pair."""
    pair = PartitionedMethod(m, m)
    prob = linear_problem([[1.0]], [[0.0]], [[0.0]], [[1.0]], [1.0], [1.0])
    n = int(round(1.0 / h))
    tr = integrate(prob, pair, IntegratorConfig(h=h, n_steps=n))
    return abs(tr.p[-1, 0] - np.e)


@pytest.mark.parametrize("name", ["leapfrog", "ab2", "adams3", "trapezoidal"])
def test_convergence_ratio_on_exponential(name):
    m = get_method(name)
    r = analyze(m).order
    e1, e2 = _scalar_growth_error(m, 0.01), _scalar_growth_error(m, 0.005)
    assert abs(e1 / e2 / 2**r - 1) < 0.15
