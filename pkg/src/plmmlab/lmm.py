"""Single linear multistep methods and their analytic properties."""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from fractions import Fraction
from pathlib import Path

import numpy as np

from .exceptions import NotConsistent, SigmaVanishesAtOne
from .polynomials import Polynomial, PowerSeries, roots, series_compose_exp

ORDER_TOL = 1e-12
SYMMETRY_TOL = 1e-14
TOL_MOD = 1e-9
TOL_SEP = 1e-7


@dataclass(frozen=True)
class MultistepMethod:
    """A pair ``(rho, sigma)`` acting as ``rho(E) y_n = h sigma(E) f_n``.

    Coefficients are ascending in the power of the shift operator ``E``.
    Complex coefficients are allowed so that shifted methods fit the same
    type.
    """

    rho: Polynomial
    sigma: Polynomial
    name: str = ""

    def __post_init__(self):
        if not isinstance(self.rho, Polynomial):
            object.__setattr__(self, "rho", Polynomial(self.rho))
        if not isinstance(self.sigma, Polynomial):
            object.__setattr__(self, "sigma", Polynomial(self.sigma))
        if self.rho.is_zero or self.rho.degree < 1:
            raise ValueError("rho must have degree >= 1")
        if self.sigma.degree > self.rho.degree:
            raise ValueError("deg(sigma) must not exceed deg(rho)")

    @classmethod
    def from_coefficients(cls, rho, sigma, name: str = "") -> "MultistepMethod":
        return cls(Polynomial(rho), Polynomial(sigma), name)

    @property
    def k(self) -> int:
        return self.rho.degree

    @property
    def explicit(self) -> bool:
        return bool(self.sigma.degree < self.k or self.sigma.coeffs[self.k] == 0)

    explicit_flag = explicit

    @property
    def alpha(self) -> np.ndarray:
        """Real rho coefficients padded to length ``k + 1``."""
        return self.rho.padded(self.k + 1).real.copy()

    @property
    def beta(self) -> np.ndarray:
        return self.sigma.padded(self.k + 1).real.copy()

    def scaled(self, factor: complex) -> "MultistepMethod":
        return MultistepMethod(self.rho * factor, self.sigma * factor, self.name)

    def to_dict(self) -> dict:
        return {
            "name": self.name,
            "rho": self.rho.real_coeffs.tolist(),
            "sigma": self.sigma.real_coeffs.tolist(),
        }


@dataclass(frozen=True)
class MethodAnalysis:
    """Order and error constants of a multistep method.

    ``error_constants[j - order]`` holds ``c_j`` for ``j = r, ..., 2r - 1``,
    defined through

        rho(E) y(t) - h sigma(E) y'(t) = sigma(E) sum_j c_j h^(j+1) y^(j+1)(t).
    """

    order: int
    error_constants: np.ndarray
    taylor_constants: np.ndarray
    symmetric: bool
    zero_stable: bool
    series_constants: np.ndarray = field(repr=False, default=None)

    def c(self, j: int) -> complex:
        """``c_j``; zero below the order, an error beyond ``2r - 1``."""
        if j < self.order:
            return 0.0
        if j - self.order >= len(self.error_constants):
            raise IndexError(f"error constant c_{j} is not stored (max index {2 * self.order - 1})")
        return self.error_constants[j - self.order]


def _operator_series(rho: Polynomial, sigma: Polynomial, J: int, scale: complex = 1.0) -> PowerSeries:
    """Series of ``rho(e^z) - z sigma(e^z) / scale`` through ``z**J``."""
    r = series_compose_exp(rho, J).coeffs.astype(complex)
    s = series_compose_exp(sigma, J).coeffs.astype(complex) / scale
    out = r.copy()
    out[1:] -= s[:-1]
    return PowerSeries(out)


def series_error_constants(rho: Polynomial, sigma: Polynomial, J: int, scale: complex = 1.0) -> np.ndarray:
    """Coefficients ``d_j`` with ``rho(e^z) - z sigma(e^z)/scale = sigma(e^z)/scale * sum_j d_j z^(j+1)``.

    Returned array has ``d[j]`` for ``j = 0 .. J-1``.
    """
    D = _operator_series(rho, sigma, J, scale)
    S = PowerSeries(series_compose_exp(sigma, J).coeffs.astype(complex) / scale)
    q = (D / S).coeffs
    return q[1:]


def _clean(values: np.ndarray):
    if np.all(np.abs(np.imag(values)) < 1e-15):
        return np.real(values).copy()
    return values


def analyze(method: MultistepMethod, J: int = 12) -> MethodAnalysis:
    """Order, error constants and qualitative flags of ``method``.

    Raises
    ------
    NotConsistent
        If ``C_0`` or ``C_1`` of the operator series exceed the tolerance.
    SigmaVanishesAtOne
        If ``|sigma(1)| < 1e-12``.
    """
    norm = np.max(np.abs(method.rho.coeffs))
    rho = method.rho * (1.0 / norm)
    sigma = method.sigma * (1.0 / norm)
    if abs(sigma(1.0)) < 1e-12:
        raise SigmaVanishesAtOne(f"sigma(1) = {sigma(1.0)}")
    C = _operator_series(rho, sigma, J).coeffs
    if abs(C[0]) > ORDER_TOL or abs(C[1]) > ORDER_TOL:
        raise NotConsistent(f"C_0 = {C[0]:.3e}, C_1 = {C[1]:.3e}")
    big = np.flatnonzero(np.abs(C) > ORDER_TOL)
    if big.size == 0:
        raise ValueError(f"order exceeds the series length J={J}; increase J")
    r = int(big[0]) - 1
    J_eff = max(J, 2 * r + 1)
    d = series_error_constants(rho, sigma, J_eff)
    consts = _clean(d[r: 2 * r])
    return MethodAnalysis(
        order=r,
        error_constants=consts,
        taylor_constants=_clean(C),
        symmetric=is_symmetric(method),
        zero_stable=is_zero_stable(method),
        series_constants=_clean(d),
    )


def is_symmetric(method: MultistepMethod) -> bool:
    k = method.k
    a = method.rho.padded(k + 1)
    b = method.sigma.padded(k + 1)
    tol = SYMMETRY_TOL * max(1.0, np.max(np.abs(a)), np.max(np.abs(b)))
    return bool(np.all(np.abs(a + a[::-1]) <= tol) and np.all(np.abs(b - b[::-1]) <= tol))


def is_zero_stable(method: MultistepMethod, tol_mod: float = TOL_MOD, tol_sep: float = TOL_SEP) -> bool:
    """Root condition on ``rho``."""
    z = roots(method.rho)
    mod = np.abs(z)
    if np.any(mod > 1 + tol_mod):
        return False
    for i in np.flatnonzero(mod >= 1 - tol_mod):
        others = np.delete(z, i)
        if others.size and np.min(np.abs(others - z[i])) <= tol_sep:
            return False
    return True


def exact_taylor_constants(rho, sigma, J: int) -> list[Fraction]:
    """Rational ``C_j`` of ``rho(e^z) - z sigma(e^z)`` from rational coefficients.

    Used to cross-check the floating-point pipeline.
    """
    from math import factorial

    rho = [Fraction(x) for x in rho]
    sigma = [Fraction(x) for x in sigma]
    out = []
    for k in range(J + 1):
        a = sum(c * Fraction(v) ** k for v, c in enumerate(rho)) / factorial(k)
        if k >= 1:
            a -= sum(c * Fraction(v) ** (k - 1) for v, c in enumerate(sigma)) / factorial(k - 1)
        out.append(a)
    return out


_REGISTRY = {
    "plmm2_p": ([-1, 0, 1], [0, 2]),
    "leapfrog": ([-1, 0, 1], [0, 2]),
    "plmm2_q": ([-1, 1, -1, 1], [0, 1, 1]),
    "adams3": ([0, 0, -1, 1], [5 / 12, -16 / 12, 23 / 12]),
    "ab2": ([0, -1, 1], [-1 / 2, 3 / 2]),
    "trapezoidal": ([-1, 1], [1 / 2, 1 / 2]),
}


def registered_methods() -> list[str]:
    return sorted(_REGISTRY)


def get_method(name: str) -> MultistepMethod:
    try:
        rho, sigma = _REGISTRY[name]
    except KeyError:
        raise KeyError(f"unknown method {name!r}; known: {registered_methods()}") from None
    return MultistepMethod.from_coefficients(rho, sigma, name)


def method_from_dict(spec: dict) -> MultistepMethod:
    """Build a method from ``{"name": ..., "rho": [...], "sigma": [...]}``."""
    missing = {"rho", "sigma"} - set(spec)
    if missing:
        raise ValueError(f"method definition lacks {sorted(missing)}")
    return MultistepMethod.from_coefficients(
        [float(x) for x in spec["rho"]], [float(x) for x in spec["sigma"]], spec.get("name", "")
    )


def load_method(path) -> MultistepMethod:
    return method_from_dict(json.loads(Path(path).read_text()))
