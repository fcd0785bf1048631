"""Partitioned multistep methods: root classes, growth parameters, shifts."""

from __future__ import annotations

from dataclasses import dataclass
from functools import cached_property

import numpy as np

from .exceptions import CommonRootOnCircleRepeated, DegenerateDenominator, NotConsistent
from .lmm import TOL_SEP, MethodAnalysis, MultistepMethod, analyze, get_method, series_error_constants
from .polynomials import Polynomial, roots, sort_roots

UNIT_TOL = 1e-9
MATCH_TOL = 1e-8
DENOM_TOL = 1e-12
SNAP_TOL = 1e-10


def _snap(z: complex) -> complex:
    """Snap roots that are within rounding of 0, +-1, +-i onto them."""
    for target in (0.0, 1.0, -1.0, 1j, -1j):
        if abs(z - target) < 1e-13:
            return complex(target)
    return complex(z)


@dataclass(frozen=True)
class RootClassification:
    """Roots of ``rho_p`` and ``rho_q`` split by modulus and membership."""

    common: tuple
    p_only: tuple
    q_only: tuple
    subunit_p: tuple = ()
    subunit_q: tuple = ()

    @property
    def m(self) -> int:
        return len(self.common)

    @property
    def subunit(self) -> tuple:
        return self.subunit_p + self.subunit_q

    def unit_roots(self, side: str) -> tuple:
        """Unit-modulus roots of ``rho_side``: common first, then own-only."""
        return self.common + (self.p_only if side == "p" else self.q_only)

    def to_dict(self) -> dict:
        enc = lambda zs: [[z.real, z.imag] for z in zs]  # noqa: E731
        return {
            "common": enc(self.common),
            "p_only": enc(self.p_only),
            "q_only": enc(self.q_only),
            "subunit_p": enc(self.subunit_p),
            "subunit_q": enc(self.subunit_q),
        }


@dataclass(frozen=True)
class GrowthParameters:
    """Growth parameters and cross ratios, aligned with a classification.

    ``lambda_common_p[i]`` belongs to ``classification.common[i]``,
    ``lambda_pp[i]`` and ``cross_qp[i]`` to ``p_only[i]``, ``lambda_qq[i]``
    and ``cross_pq[i]`` to ``q_only[i]``.
    """

    lambda_common_p: tuple
    lambda_common_q: tuple
    lambda_pp: tuple
    lambda_qq: tuple
    cross_pq: tuple
    cross_qp: tuple

    def all_lambdas(self) -> tuple:
        return self.lambda_common_p + self.lambda_common_q + self.lambda_pp + self.lambda_qq

    def all_cross(self) -> tuple:
        return self.cross_pq + self.cross_qp

    def to_dict(self) -> dict:
        enc = lambda zs: [[complex(z).real, complex(z).imag] for z in zs]  # noqa: E731
        return {k: enc(getattr(self, k)) for k in self.__dataclass_fields__}


@dataclass(frozen=True)
class ShiftedMethod:
    """The method ``(rho(x_i x), sigma(x_i x))`` with its growth parameter.

    ``constants[j - 1]`` is the shifted error constant ``c^(i)_j`` for
    ``j = 1 .. r-1``.
    """

    root: complex
    rho: Polynomial
    sigma: Polynomial
    lam: complex
    constants: np.ndarray

    def operator_series(self, J: int) -> np.ndarray:
        from .lmm import _operator_series

        return _operator_series(self.rho, self.sigma, J, self.lam).coeffs


def growth_parameter(method: MultistepMethod, root: complex) -> complex:
    """``sigma(x) / (x rho'(x))`` at a simple nonzero root ``x``."""
    d = method.rho.derivative(1)(root)
    if abs(d) < DENOM_TOL:
        raise DegenerateDenominator(f"rho'({root}) = {d}")
    return method.sigma(root) / (root * d)


def shifted_method(method: MultistepMethod, root: complex, order: int | None = None) -> ShiftedMethod:
    """Shift ``method`` by a simple unit root and extract its error constants."""
    if order is None:
        order = analyze(method).order
    lam = growth_parameter(method, root)
    rho_i = method.rho.shifted(root)
    sigma_i = method.sigma.shifted(root)
    J = max(2 * order + 2, 8)
    d = series_error_constants(rho_i, sigma_i, J, lam)
    consts = np.asarray(d[1:order], dtype=complex)
    return ShiftedMethod(complex(root), rho_i, sigma_i, complex(lam), consts)


def classify_roots(method_p: MultistepMethod, method_q: MultistepMethod) -> RootClassification:
    """Split the roots of ``rho_p`` and ``rho_q`` into the classes of the expansion."""
    zp = [_snap(z) for z in roots(method_p.rho)]
    zq = [_snap(z) for z in roots(method_q.rho)]
    unit_p = [z for z in zp if abs(abs(z) - 1) < UNIT_TOL]
    unit_q = [z for z in zq if abs(abs(z) - 1) < UNIT_TOL]
    sub_p = tuple(z for z in zp if abs(z) < 1 - UNIT_TOL)
    sub_q = tuple(z for z in zq if abs(z) < 1 - UNIT_TOL)
    for side, unit in (("p", unit_p), ("q", unit_q)):
        for i, z in enumerate(unit):
            if any(abs(z - w) < TOL_SEP for w in unit[i + 1:]):
                raise CommonRootOnCircleRepeated(f"repeated unit root {z} of rho_{side}")
    common, p_only = [], []
    matched_q = set()
    for z in unit_p:
        hits = [j for j, w in enumerate(unit_q) if abs(z - w) < MATCH_TOL]
        if len(hits) > 1:
            raise CommonRootOnCircleRepeated(f"root {z} matches {len(hits)} roots of rho_q")
        if hits:
            common.append(z)
            matched_q.add(hits[0])
        else:
            p_only.append(z)
    q_only = [w for j, w in enumerate(unit_q) if j not in matched_q]
    if not common or abs(common[0] - 1) > MATCH_TOL:
        raise NotConsistent("x = 1 must be a common root of rho_p and rho_q")
    common[0] = 1.0 + 0j
    as_tuple = lambda zs: tuple(complex(z) for z in sort_roots(zs))  # noqa: E731
    return RootClassification(
        as_tuple(common), as_tuple(p_only), as_tuple(q_only), as_tuple(sub_p), as_tuple(sub_q)
    )


def cross_ratio(method: MultistepMethod, x: complex, snap_zero: bool = False) -> complex:
    """``sigma(x) / rho(x)`` at a point that is not a root of ``rho``."""
    den = method.rho(x)
    if abs(den) < DENOM_TOL:
        raise DegenerateDenominator(f"rho({x}) = {den}")
    val = method.sigma(x) / den
    if snap_zero and abs(val) < SNAP_TOL:
        val = 0j
    return complex(val)


def growth_parameters(method_p: MultistepMethod, method_q: MultistepMethod,
                      classification: RootClassification) -> GrowthParameters:
    from .lmm import is_symmetric

    snap = is_symmetric(method_p) and is_symmetric(method_q)
    lam = lambda m, xs: tuple(complex(growth_parameter(m, x)) for x in xs)  # noqa: E731
    return GrowthParameters(
        lambda_common_p=lam(method_p, classification.common),
        lambda_common_q=lam(method_q, classification.common),
        lambda_pp=lam(method_p, classification.p_only),
        lambda_qq=lam(method_q, classification.q_only),
        cross_pq=tuple(cross_ratio(method_p, x, snap) for x in classification.q_only),
        cross_qp=tuple(cross_ratio(method_q, x, snap) for x in classification.p_only),
    )


@dataclass(frozen=True)
class PartitionedMethod:
    """Two multistep methods, one per block of a partitioned system."""

    p: MultistepMethod
    q: MultistepMethod
    name: str = ""

    @cached_property
    def analysis_p(self) -> MethodAnalysis:
        return analyze(self.p)

    @cached_property
    def analysis_q(self) -> MethodAnalysis:
        return analyze(self.q)

    @property
    def order(self) -> int:
        rp, rq = self.analysis_p.order, self.analysis_q.order
        if rp != rq:
            raise ValueError(f"methods have different orders ({rp} and {rq})")
        return rp

    @property
    def symmetric(self) -> bool:
        return self.analysis_p.symmetric and self.analysis_q.symmetric

    @property
    def zero_stable(self) -> bool:
        return self.analysis_p.zero_stable and self.analysis_q.zero_stable

    @property
    def explicit(self) -> bool:
        return self.p.explicit and self.q.explicit

    @cached_property
    def classification(self) -> RootClassification:
        if not self.zero_stable:
            raise ValueError("both methods must be zero-stable to classify roots")
        return classify_roots(self.p, self.q)

    @cached_property
    def growth(self) -> GrowthParameters:
        return growth_parameters(self.p, self.q, self.classification)

    def method(self, side: str) -> MultistepMethod:
        return self.p if side == "p" else self.q

    def analysis(self, side: str) -> MethodAnalysis:
        return self.analysis_p if side == "p" else self.analysis_q

    def swapped(self) -> "PartitionedMethod":
        return PartitionedMethod(self.q, self.p, self.name + "_swapped" if self.name else "")

    def shifted(self, side: str, root: complex) -> ShiftedMethod:
        return shifted_method(self.method(side), root, self.order)

    def report(self) -> dict:
        """JSON-ready summary used by the ``analyze-pair`` command."""
        cls = self.classification
        shifted = {}
        for side in ("p", "q"):
            for x in cls.unit_roots(side):
                sm = self.shifted(side, x)
                shifted.setdefault(side, []).append({
                    "root": [x.real, x.imag],
                    "lambda": [sm.lam.real, sm.lam.imag],
                    "constants": [[c.real, c.imag] for c in sm.constants],
                })
        sides = {}
        for side in ("p", "q"):
            a = self.analysis(side)
            m = self.method(side)
            sides[side] = {
                "method": m.to_dict(),
                "roots": [[z.real, z.imag] for z in roots(m.rho)],
                "order": a.order,
                "error_constants": [float(np.real(c)) for c in a.error_constants],
                "symmetric": a.symmetric,
                "zero_stable": a.zero_stable,
                "explicit": m.explicit,
            }
        return {
            "name": self.name,
            "order": self.order,
            "symmetric": self.symmetric,
            "sides": sides,
            "classification": cls.to_dict(),
            "growth": self.growth.to_dict(),
            "shifted": shifted,
        }


_PAIRS = {
    "plmm2": ("plmm2_p", "plmm2_q"),
    "lmm2": ("leapfrog", "leapfrog"),
    "adams3": ("adams3", "adams3"),
    "sim_nosim": ("leapfrog", "ab2"),
    "trapezoidal": ("trapezoidal", "trapezoidal"),
}


def registered_pairs() -> list[str]:
    return sorted(_PAIRS)


def get_pair(name: str) -> PartitionedMethod:
    try:
        p, q = _PAIRS[name]
    except KeyError:
        raise KeyError(f"unknown pair {name!r}; known: {registered_pairs()}") from None
    return PartitionedMethod(get_method(p), get_method(q), name)


def pair_from_dict(spec: dict) -> PartitionedMethod:
    """Inline pair definition: ``{"name": .., "p": {method}, "q": {method}}``."""
    from .lmm import method_from_dict

    return PartitionedMethod(method_from_dict(spec["p"]), method_from_dict(spec["q"]), spec.get("name", ""))
