"""Numerical construction of the asymptotic global-error expansion.

The error of a partitioned multistep solution is modelled as

    p_n - p(t_n) = sum_j h^j sum_x x^n e_{j,x,p}(t_n),

with one *class* of coefficient functions per root ``x`` of ``rho_p`` or
``rho_q``. Every class obeys a linear ODE along the exact solution; the
orders of one class are stacked into a single block lower-triangular
system ``Y' = M(t) Y + F(t)`` so that all orders are integrated together.
Matrix coefficients are carried as truncated Taylor series in time
(:class:`TaylorMatrix`), which yields the time derivatives of the Jacobian
products appearing in the forcing terms without finite differences.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numba
import numpy as np
from scipy.integrate import cumulative_simpson, solve_ivp
from scipy.interpolate import CubicSpline
from sklearn.base import BaseEstimator, TransformerMixin

from .exceptions import DerivativeUnavailable, RankDeficient, ReferenceFailure, SingularVandermonde
from .integrator import IntegratorConfig, Trajectory, start_perturbation
from .lmm import MultistepMethod
from .plmm import PartitionedMethod, cross_ratio, growth_parameter, shifted_method
from .problems import PartitionedProblem

ZERO_ROOT_TOL = 1e-12
MATCH_TOL = 1e-8
VANDERMONDE_COND_MAX = 1e12


# Taylor-series matrices ---------------------------------------------------

class TaylorMatrix:
    """Truncated time series of a matrix: ``coeffs[k]`` multiplies ``(t - t*)^k``.

    Shape ``(K + 1, *batch, rows, cols)``. Products are Cauchy products of
    matrix products; mixing orders truncates to the smaller one.
    """

    __slots__ = ("coeffs",)

    def __init__(self, coeffs):
        self.coeffs = np.asarray(coeffs, dtype=complex)

    @classmethod
    def from_derivatives(cls, derivs) -> "TaylorMatrix":
        d = np.asarray(derivs, dtype=complex)
        fact = np.array([math.factorial(k) for k in range(d.shape[0])], dtype=float)
        return cls(d / fact.reshape((-1,) + (1,) * (d.ndim - 1)))

    @property
    def order(self) -> int:
        return self.coeffs.shape[0] - 1

    @property
    def shape(self) -> tuple:
        return self.coeffs.shape[-2:]

    def truncate(self, order: int) -> "TaylorMatrix":
        return TaylorMatrix(self.coeffs[: order + 1])

    def _pair(self, other):
        n = min(self.order, other.order) + 1
        return self.coeffs[:n], other.coeffs[:n]

    def __add__(self, other):
        a, b = self._pair(other)
        return TaylorMatrix(a + b)

    def __sub__(self, other):
        a, b = self._pair(other)
        return TaylorMatrix(a - b)

    def __neg__(self):
        return TaylorMatrix(-self.coeffs)

    def __mul__(self, s):
        return TaylorMatrix(self.coeffs * s)

    __rmul__ = __mul__

    def __matmul__(self, other):
        a, b = self._pair(other)
        batch = np.broadcast_shapes(a.shape[1:-2], b.shape[1:-2])
        out = np.zeros((a.shape[0],) + batch + (a.shape[-2], b.shape[-1]), dtype=complex)
        for k in range(a.shape[0]):
            acc = a[0] @ b[k]
            for i in range(1, k + 1):
                acc = acc + a[i] @ b[k - i]
            out[k] = acc
        return TaylorMatrix(out)

    def d(self) -> "TaylorMatrix":
        if self.order < 1:
            raise DerivativeUnavailable("series too short to differentiate")
        k = np.arange(1, self.order + 1, dtype=float).reshape((-1,) + (1,) * (self.coeffs.ndim - 1))
        return TaylorMatrix(self.coeffs[1:] * k)

    def derivative(self, l: int) -> np.ndarray:
        """``l``-th time derivative at the expansion point."""
        if l > self.order:
            raise DerivativeUnavailable(f"derivative {l} beyond series order {self.order}")
        return self.coeffs[l] * math.factorial(l)

    @property
    def value(self) -> np.ndarray:
        return self.coeffs[0]

    def zeros(self, rows: int, cols: int) -> "TaylorMatrix":
        return TaylorMatrix(np.zeros(self.coeffs.shape[:-2] + (rows, cols), dtype=complex))

    def eye(self, n: int) -> "TaylorMatrix":
        c = np.zeros(self.coeffs.shape[:-2] + (n, n), dtype=complex)
        c[0] = np.eye(n)
        return TaylorMatrix(c)


def _block(rows) -> TaylorMatrix:
    """Assemble a block matrix from a nested list of TaylorMatrix entries."""
    n = min(m.order for row in rows for m in row) + 1
    return TaylorMatrix(np.concatenate(
        [np.concatenate([m.coeffs[:n] for m in row], axis=-1) for row in rows], axis=-2))


def _diag(*blocks) -> TaylorMatrix:
    rows = []
    for i, bi in enumerate(blocks):
        rows.append([bi if i == j else bi.zeros(bi.shape[0], bj.shape[1]) for j, bj in enumerate(blocks)])
    return _block(rows)


# reference data --------------------------------------------------------------

@dataclass
class ReferenceData:
    """Exact solution, its derivatives and Jacobian-block derivatives on a grid.

    ``sol_p[k]`` is ``p^(k)`` with shape ``(N, dim_p)``; ``blocks[name][k]``
    is the ``k``-th time derivative of the block with shape ``(N, rows, cols)``.
    """

    problem: PartitionedProblem
    times: np.ndarray
    sol_p: np.ndarray
    sol_q: np.ndarray
    blocks: dict

    @classmethod
    def build(cls, problem: PartitionedProblem, times, deriv_order: int, block_order: int = 2,
              states: np.ndarray | None = None, tol: float = 1e-13) -> "ReferenceData":
        times = np.asarray(times, dtype=float)
        if states is None:
            states = reference_states(problem, times, tol)
        p, q = states[:, : problem.dim_p].T, states[:, problem.dim_p:].T
        Pd, Qd = problem.solution_jets(p, q, deriv_order)
        jets = problem.jacobian_jets(p, q, block_order)
        names = ("fp", "fq", "gp", "gq")
        blocks = {nm: np.moveaxis(b, -1, 1) for nm, b in zip(names, jets)}
        return cls(problem, times, np.moveaxis(Pd, -1, 1), np.moveaxis(Qd, -1, 1), blocks)

    @property
    def deriv_order(self) -> int:
        return self.sol_p.shape[0] - 1

    def taylor_blocks(self, idx=slice(None)) -> dict:
        return {k: TaylorMatrix.from_derivatives(v[:, idx]) for k, v in self.blocks.items()}

    def taylor_solution(self, j: int, idx=slice(None), terms: int = 1) -> tuple[TaylorMatrix, TaylorMatrix]:
        """Series of ``p^(j)`` and ``q^(j)`` as column matrices."""
        if j + terms - 1 > self.deriv_order:
            raise DerivativeUnavailable(f"solution derivative {j + terms - 1} not available")
        P = self.sol_p[j: j + terms, idx][..., None]
        Q = self.sol_q[j: j + terms, idx][..., None]
        return TaylorMatrix.from_derivatives(P), TaylorMatrix.from_derivatives(Q)


def reference_states(problem: PartitionedProblem, times, tol: float = 1e-13) -> np.ndarray:
    from .integrator import _reference_states

    return _reference_states(problem, np.asarray(times, dtype=float), tol)


# class systems -------------------------------------------------------------

@dataclass
class ClassSpec:
    """One root's coefficient class.

    ``own`` is ``"pq"`` for the root 1 and common roots (both components are
    unknown functions), ``"p"`` or ``"q"`` for roots of only one ``rho``
    (the other component follows algebraically).
    """

    kind: str
    root: complex
    own: str
    orders: tuple
    dims: tuple  # (dim_p, dim_q)
    constants: dict = field(default_factory=dict)

    @property
    def block_size(self) -> int:
        dp, dq = self.dims
        return dp + dq if self.own == "pq" else (dp if self.own == "p" else dq)

    @property
    def size(self) -> int:
        return self.block_size * len(self.orders)

    @property
    def dropped(self) -> bool:
        """Subunit classes decay like ``|x|^n`` and are left out of predictions."""
        return self.kind.startswith("subunit")

    def block_slice(self, J: int) -> slice:
        b = self.block_size
        i = self.orders.index(J)
        return slice(i * b, (i + 1) * b)

    def side_slice(self, J: int, side: str) -> slice | None:
        """Slice of ``Y`` holding the ``side`` component at order ``J``, if unknown."""
        if J not in self.orders:
            return None
        s = self.block_slice(J)
        dp, dq = self.dims
        if self.own == "pq":
            return slice(s.start, s.start + dp) if side == "p" else slice(s.start + dp, s.stop)
        return s if side == self.own else None


def _parasitic_constants(own: MultistepMethod, other: MultistepMethod, x: complex) -> dict:
    rho, sig = own.rho, own.sigma
    R1, R2, R3 = (rho.euler_derivative(l, x) for l in (1, 2, 3))
    S1, S2 = sig.euler_derivative(1, x), sig.euler_derivative(2, x)
    lam = growth_parameter(own, x)
    kappa = cross_ratio(other, x)
    r0 = other.rho(x)
    mu = x / r0 * (other.sigma.derivative(1)(x) - other.rho.derivative(1)(x) * kappa)
    return {
        "lam": complex(lam),
        "kappa": complex(kappa),
        "mu": complex(mu),
        "beta1": complex(S1 / R1),
        "gamma": complex(R2 / (2 * R1)),
        "theta": complex(S2 / (2 * R1) - lam * R3 / (6 * R1)),
    }


def _parasitic_system(spec: ClassSpec, tb: dict):
    """``M`` and the algebraic maps of a one-sided root class.

    For a root of ``rho_p`` the own block is driven by ``A = f_p`` and the
    other component is produced by ``C = g_p``; the roles of the blocks are
    mirrored for roots of ``rho_q``.
    """
    if spec.own == "p":
        A, B, C, D = tb["fp"], tb["fq"], tb["gp"], tb["gq"]
    else:
        A, B, C, D = tb["gq"], tb["gp"], tb["fq"], tb["fp"]
    k = spec.constants
    lam, kap, mu, b1, gam, th = k["lam"], k["kappa"], k["mu"], k["beta1"], k["gamma"], k["theta"]
    Ad = A.d()
    Add = Ad.d()
    A2 = A @ A
    L1 = (lam * kap) * (B @ C) + (b1 - gam * lam) * (Ad + lam * A2)
    W2 = Add + (2 * lam) * (Ad @ A) + lam * (A @ Ad) + (lam * lam) * (A2 @ A)
    V1 = kap * C
    V1d = kap * (C.d() + lam * (C @ A))
    V2u0 = mu * (C.d() + lam * (C @ A)) + (kap * kap) * (D @ C)
    B1d = ((lam * kap) * (B.d() @ C + B @ C.d()) + (lam * lam * kap) * (B @ C @ A)
           + (b1 - gam * lam) * W2)
    L2 = (lam * (B @ V2u0) + (b1 - gam * lam) * (A @ L1) + b1 * (B.d() @ V1 + B @ V1d)
          - gam * B1d + th * W2)
    L3 = L1
    n = A.shape[0]
    m = C.shape[0]
    Z = A.zeros(n, n)
    lA = lam * A
    rows = {0: [lA], 1: [L1, lA], 2: [L2, L3, lA]}
    nb = len(spec.orders)
    M = _block([rows[i] + [Z] * (nb - 1 - i) for i in range(nb)])
    Zq = A.zeros(m, n)
    alg = {}
    r = spec.orders[0]
    alg[r] = _block([[Zq] * nb])
    if nb >= 2:
        alg[r + 1] = _block([[V1] + [Zq] * (nb - 1)])
    if nb >= 3:
        alg[r + 2] = _block([[V2u0, V1] + [Zq] * (nb - 2)])
    return M, None, alg


def _full_jacobian(tb: dict) -> TaylorMatrix:
    return _block([[tb["fp"], tb["fq"]], [tb["gp"], tb["gq"]]])


def _common_system(spec: ClassSpec, tb: dict):
    dp, dq = spec.dims
    k = spec.constants
    J = _full_jacobian(tb)
    lam = np.concatenate([np.full(dp, k["lam_p"]), np.full(dq, k["lam_q"])])
    Lam = J.eye(dp + dq)
    Lam.coeffs[0] = np.diag(lam)
    M = Lam @ J
    nb = len(spec.orders)
    Z = M.zeros(dp + dq, dp + dq)
    rows = [[M] + [Z] * (nb - 1)]
    if nb >= 2:
        Md = M.d()
        E2 = Md + M @ M
        C1 = M.eye(dp + dq)
        C1.coeffs[0] = np.diag(np.concatenate([np.full(dp, k["c_p"][0]), np.full(dq, k["c_q"][0])]))
        rows.append([-(C1 @ E2), M] + [Z] * (nb - 2))
    if nb >= 3:
        Mdd = Md.d()
        E3 = Mdd + 2 * (Md @ M) + M @ Md + M @ M @ M
        C2 = M.eye(dp + dq)
        C2.coeffs[0] = np.diag(np.concatenate([np.full(dp, k["c_p"][1]), np.full(dq, k["c_q"][1])]))
        first = (C1 @ (M @ (C1 @ E2) + C1 @ E3)) - C2 @ E3
        rows.append([first, -(C1 @ (Md + M @ M)), M])
    return _block(rows), None, {}


def _smooth_system(spec: ClassSpec, tb: dict, ref: ReferenceData, idx, terms: int):
    J = _full_jacobian(tb)
    blocks = [J] * len(spec.orders)
    M = _diag(*blocks)
    cp, cq = spec.constants["c_p"], spec.constants["c_q"]
    parts = []
    for j in spec.orders:
        P, Q = ref.taylor_solution(j + 1, idx, terms)
        parts.append(TaylorMatrix(np.concatenate([-cp[j] * P.coeffs, -cq[j] * Q.coeffs], axis=-2)))
    F = TaylorMatrix(np.concatenate([p.coeffs for p in parts], axis=-2))
    return M, F, {}


def class_system(spec: ClassSpec, tb: dict, ref: ReferenceData | None = None, idx=slice(None), terms: int = 1):
    """``(M, F, algebraic maps)`` of a class as Taylor series."""
    if spec.kind == "smooth":
        return _smooth_system(spec, tb, ref, idx, terms)
    if spec.own == "pq":
        return _common_system(spec, tb)
    return _parasitic_system(spec, tb)


def class_specs(pair: PartitionedMethod, problem: PartitionedProblem, j_max_smooth: int | None = None) -> list[ClassSpec]:
    """All coefficient classes of ``pair``, in a fixed order."""
    r = pair.order
    cls = pair.classification
    dims = (problem.dim_p, problem.dim_q)
    smooth_top = 2 * r - 1 if j_max_smooth is None else j_max_smooth
    if smooth_top > 2 * r - 1:
        raise DerivativeUnavailable(f"smooth coefficients are available up to order {2 * r - 1}")
    ap, aq = pair.analysis_p, pair.analysis_q
    cp = {j: complex(ap.c(j)) for j in range(r, smooth_top + 1)}
    cq = {j: complex(aq.c(j)) for j in range(r, smooth_top + 1)}
    specs = [ClassSpec("smooth", 1.0 + 0j, "pq", tuple(range(r, smooth_top + 1)), dims, {"c_p": cp, "c_q": cq})]
    common_top = min(r + 2, 2 * r - 1)
    sub_p = [z for z in cls.subunit_p if abs(z) > ZERO_ROOT_TOL]
    sub_q = [z for z in cls.subunit_q if abs(z) > ZERO_ROOT_TOL]
    shared = [z for z in sub_p if any(abs(z - w) < MATCH_TOL for w in sub_q)]
    commons = [(z, "common") for z in cls.common[1:]] + [(z, "subunit_common") for z in shared]
    for z, kind in commons:
        sp, sq = shifted_method(pair.p, z, r), shifted_method(pair.q, z, r)
        specs.append(ClassSpec(kind, z, "pq", tuple(range(r, common_top + 1)), dims,
                               {"lam_p": sp.lam, "lam_q": sq.lam, "c_p": sp.constants, "c_q": sq.constants}))
    own_p = [(z, "p_only") for z in cls.p_only]
    own_p += [(z, "subunit_p") for z in sub_p if not any(abs(z - w) < MATCH_TOL for w in shared)]
    own_q = [(z, "q_only") for z in cls.q_only]
    own_q += [(z, "subunit_q") for z in sub_q if not any(abs(z - w) < MATCH_TOL for w in shared)]
    orders = tuple(range(r, r + 3))
    for z, kind in own_p:
        specs.append(ClassSpec(kind, z, "p", orders, dims, _parasitic_constants(pair.p, pair.q, z)))
    for z, kind in own_q:
        specs.append(ClassSpec(kind, z, "q", orders, dims, _parasitic_constants(pair.q, pair.p, z)))
    return specs


# start values -----------------------------------------------------------------

@dataclass
class StartExpansion:
    """Starting-value errors ``p_nu - p(t_nu) = sum_J h^J s^(J)_nu``.

    ``coefficients[J] = (s_p, s_q)`` with shapes ``(k_p, dim_p)`` and
    ``(k_q, dim_q)``; missing orders are zero.
    """

    kp: int
    kq: int
    dims: tuple
    coefficients: dict = field(default_factory=dict)

    @classmethod
    def exact(cls, pair: PartitionedMethod, problem: PartitionedProblem) -> "StartExpansion":
        return cls(pair.p.k, pair.q.k, (problem.dim_p, problem.dim_q))

    @classmethod
    def from_config(cls, pair: PartitionedMethod, problem: PartitionedProblem,
                    config: IntegratorConfig) -> "StartExpansion":
        out = cls.exact(pair, problem)
        if config.start_mode == "order_r_perturbed":
            out.coefficients[pair.order] = start_perturbation(problem, pair, config)
        return out

    def get(self, J: int) -> tuple[np.ndarray, np.ndarray]:
        if J in self.coefficients:
            sp, sq = self.coefficients[J]
            return np.asarray(sp, dtype=complex), np.asarray(sq, dtype=complex)
        return np.zeros((self.kp, self.dims[0]), complex), np.zeros((self.kq, self.dims[1]), complex)

    @property
    def is_exact(self) -> bool:
        return all(not np.any(a) and not np.any(b) for a, b in self.coefficients.values())


def solve_vandermonde(roots, rhs, zero_multiplicity: int = 0) -> np.ndarray:
    """Solve ``sum_i x_i^nu a_i + sum_l delta_{nu,l} d_l = rhs_nu``.

    ``roots`` are the nonzero roots; the zero root of the given multiplicity
    contributes one Kronecker column per power. Returns the stacked
    unknowns ``(a_1, .., a_m, d_0, ..)`` with the trailing shape of ``rhs``.
    """
    roots = np.asarray(roots, dtype=complex)
    rhs = np.asarray(rhs, dtype=complex)
    k = rhs.shape[0]
    if len(roots) + zero_multiplicity != k:
        raise SingularVandermonde(f"{len(roots)} roots + {zero_multiplicity} zero roots for {k} equations")
    for i in range(len(roots)):
        if np.any(np.abs(roots[i + 1:] - roots[i]) < MATCH_TOL):
            raise SingularVandermonde(f"repeated root {roots[i]}")
    nu = np.arange(k)
    V = np.zeros((k, k), dtype=complex)
    V[:, : len(roots)] = roots[None, :] ** nu[:, None]
    for l in range(zero_multiplicity):
        V[l, len(roots) + l] = 1.0
    if np.linalg.cond(V) > VANDERMONDE_COND_MAX:
        raise SingularVandermonde("Vandermonde matrix is numerically singular")
    return np.linalg.solve(V, rhs.reshape(k, -1)).reshape(rhs.shape)


def _zero_multiplicity(pair: PartitionedMethod, side: str) -> int:
    cls = pair.classification
    roots = cls.subunit_p if side == "p" else cls.subunit_q
    return sum(1 for z in roots if abs(z) <= ZERO_ROOT_TOL)


def _class_derivatives(spec, system_t0, Y0, lmax: int):
    """``Y^(l)(t0)`` for ``l = 0..lmax`` using the Taylor series of ``M`` and ``F``."""
    M, F, _ = system_t0
    Ms = [M.derivative(l) for l in range(lmax)]
    Fs = [F.derivative(l)[..., 0] if F is not None else 0.0 for l in range(lmax)]
    Ys = [Y0]
    for l in range(1, lmax + 1):
        acc = Fs[l - 1]
        for i in range(l):
            acc = acc + math.comb(l - 1, i) * (Ms[i] @ Ys[l - 1 - i])
        Ys.append(np.asarray(acc, dtype=complex))
    return Ys


def _component(spec: ClassSpec, system_t0, Ys, J: int, side: str, l: int):
    """``l``-th derivative at ``t0`` of the ``side`` component at order ``J``."""
    if J not in spec.orders:
        if J < spec.orders[0]:
            return 0.0
        raise DerivativeUnavailable(f"order {J} of class {spec.kind} at {spec.root} is not available")
    sl = spec.side_slice(J, side)
    if sl is not None:
        return Ys[l][sl]
    Q = system_t0[2][J]
    acc = 0.0
    for i in range(l + 1):
        acc = acc + math.comb(l, i) * (Q.derivative(i) @ Ys[l - i])
    return acc


def _delta_feed(pair: PartitionedMethod, blocks0: dict, deltas: dict, roots: dict) -> dict:
    """Start-error coefficients one order up caused by zero-root deltas.

    A delta ``d_l`` at index ``l`` does not enter the ``rho`` combination but
    does enter ``h sigma(E) f`` through the Jacobian, which acts as a forcing
    at the first few steps. The forcing is propagated through the ``rho``
    recurrence and, once it has ended, the resulting sequence is re-expressed
    through the nonzero roots; the values of that expression at
    ``nu = 0 .. k - 1`` are returned per side.
    """
    out = {}
    for side in "pq":
        m = pair.method(side)
        k = m.k
        al, be = m.rho.padded(k + 1), m.sigma.padded(k + 1)
        mu_own = _zero_multiplicity(pair, side)
        dim = blocks0["fp" if side == "p" else "gq"].shape[0]
        mu_src = max((len(d) for d in deltas.values()), default=0)
        if mu_src == 0 or not roots[side]:
            out[side] = np.zeros((k, dim), complex)
            continue
        n_force = mu_src
        w = np.zeros((k + n_force, dim), dtype=complex)
        for n in range(n_force):
            force = np.zeros(dim, complex)
            for src, ds in deltas.items():
                Jb = blocks0[("f" if side == "p" else "g") + src]
                for l, d in enumerate(ds):
                    if 0 <= l - n <= k:
                        force = force + be[l - n] * (Jb @ d)
            w[n + k] = (force - al[:k] @ w[n: n + k]) / al[k]
        x = np.asarray(roots[side], dtype=complex)
        nu_fit = np.arange(mu_own + n_force, k + n_force)
        V = x[None, :] ** nu_fit[:, None]
        amp = np.linalg.lstsq(V, w[nu_fit], rcond=None)[0]
        out[side] = (x[None, :] ** np.arange(k)[:, None]) @ amp
    return out


def vandermonde_init(start: StartExpansion, pair: PartitionedMethod, specs: list[ClassSpec],
                     systems_t0: list, blocks0: dict | None = None) -> list[np.ndarray]:
    """Initial values ``Y_c(t0)`` of every class, order by order.

    At order ``J`` and index ``nu`` the start error must equal
    ``sum_x x^nu sum_l nu^l / l! e^(l)_{J-l,x}(t0)``; the ``l = 0`` terms of
    each side's own roots are the unknowns, everything else is known from
    lower orders. ``blocks0`` (the Jacobian blocks at ``t0``) enables the
    order-raising effect of zero-root deltas; without it that effect is
    ignored.
    """
    Y0 = [np.zeros(s.size, dtype=complex) for s in specs]
    r = pair.order
    top = max(max(s.orders) for s in specs)
    zeros = {side: _zero_multiplicity(pair, side) for side in "pq"}
    carry = {"p": 0.0, "q": 0.0}
    for J in range(r, top + 1):
        derivs = [_class_derivatives(s, sys, y, J - r) for s, sys, y in zip(specs, systems_t0, Y0)]
        deltas, own_roots = {}, {}
        for side, s_side in zip("pq", start.get(J)):
            s_side = s_side + carry[side]
            k = s_side.shape[0]
            nu = np.arange(k)
            known = np.zeros_like(s_side)
            columns = []
            for ci, (spec, sys, Ys) in enumerate(zip(specs, systems_t0, derivs)):
                x = spec.root
                owns = spec.own == "pq" or spec.own == side
                for l in range(1 if owns else 0, J - r + 1):
                    if J - l < spec.orders[0]:
                        continue
                    val = _component(spec, sys, Ys, J - l, side, l)
                    if np.ndim(val) == 0 and val == 0.0:
                        continue
                    w = (x ** nu) * nu.astype(float) ** l / math.factorial(l)
                    known = known + w[:, None] * np.asarray(val)[None, :]
                if owns:
                    columns.append(ci)
            roots = [specs[ci].root for ci in columns]
            sol = solve_vandermonde(roots, s_side - known, zeros[side])
            for a, ci in zip(sol, columns):
                sl = specs[ci].side_slice(J, side)
                if sl is not None:
                    Y0[ci][sl] = a
            deltas[side] = list(sol[len(columns):])
            own_roots[side] = roots
        if blocks0 is not None:
            carry = _delta_feed(pair, blocks0, deltas, own_roots)
    return Y0


# coefficient solves ------------------------------------------------------------

@numba.njit(cache=True)
def rk4_linear(Agrid, Fgrid, y0, h):
    """Classical RK4 for ``y' = A(t) y + F(t)``; ``A``, ``F`` sampled at half steps."""
    n_half = Agrid.shape[0]
    N = (n_half - 1) // 2
    n = y0.shape[0]
    Y = np.empty((N + 1, n), dtype=np.complex128)
    y = y0.copy()
    Y[0] = y
    k1 = np.empty(n, dtype=np.complex128)
    k2 = np.empty(n, dtype=np.complex128)
    k3 = np.empty(n, dtype=np.complex128)
    k4 = np.empty(n, dtype=np.complex128)
    tmp = np.empty(n, dtype=np.complex128)
    for s in range(N):
        a = 2 * s
        for i in range(n):
            acc = Fgrid[a, i]
            for j in range(n):
                acc += Agrid[a, i, j] * y[j]
            k1[i] = acc
        for i in range(n):
            tmp[i] = y[i] + 0.5 * h * k1[i]
        for i in range(n):
            acc = Fgrid[a + 1, i]
            for j in range(n):
                acc += Agrid[a + 1, i, j] * tmp[j]
            k2[i] = acc
        for i in range(n):
            tmp[i] = y[i] + 0.5 * h * k2[i]
        for i in range(n):
            acc = Fgrid[a + 1, i]
            for j in range(n):
                acc += Agrid[a + 1, i, j] * tmp[j]
            k3[i] = acc
        for i in range(n):
            tmp[i] = y[i] + h * k3[i]
        for i in range(n):
            acc = Fgrid[a + 2, i]
            for j in range(n):
                acc += Agrid[a + 2, i, j] * tmp[j]
            k4[i] = acc
        for i in range(n):
            y[i] = y[i] + h / 6.0 * (k1[i] + 2.0 * k2[i] + 2.0 * k3[i] + k4[i])
        Y[s + 1] = y
    return Y


@dataclass
class SolvedClass:
    """A class with its coefficient functions sampled on the coefficient grid."""

    spec: ClassSpec
    times: np.ndarray
    p: dict  # order -> (N, dim_p) complex
    q: dict

    def at(self, J: int, t=None, side: str = "p") -> np.ndarray:
        values = (self.p if side == "p" else self.q)[J]
        if t is None:
            return values
        t = np.asarray(t, dtype=float)
        dt = self.times[1] - self.times[0]
        pos = (t - self.times[0]) / dt
        idx = np.rint(pos).astype(int)
        if np.all(np.abs(pos - idx) < 1e-9) and np.all((idx >= 0) & (idx < len(self.times))):
            return values[idx]
        return CubicSpline(self.times, values, axis=0)(t)


def _grid_systems(spec, ref: ReferenceData):
    tb = ref.taylor_blocks()
    M, F, alg = class_system(spec, tb, ref)
    return M, F, alg


def _solve_class(spec: ClassSpec, ref: ReferenceData, y0: np.ndarray, h_ref: float) -> SolvedClass:
    M, F, alg = _grid_systems(spec, ref)
    Agrid = np.ascontiguousarray(M.value)
    if F is None:
        Fgrid = np.zeros(Agrid.shape[:2], dtype=complex)
    else:
        Fgrid = np.ascontiguousarray(F.value[..., 0])
    Y = rk4_linear(Agrid, Fgrid, np.ascontiguousarray(y0, dtype=complex), h_ref)
    full = slice(0, None, 2)
    times = ref.times[full]
    p, q = {}, {}
    for J in spec.orders:
        for side, store in (("p", p), ("q", q)):
            sl = spec.side_slice(J, side)
            if sl is not None:
                store[J] = Y[:, sl]
            else:
                Q = alg[J].value[full]
                store[J] = np.einsum("nij,nj->ni", Q, Y)
    return SolvedClass(spec, times, p, q)


@dataclass
class CoefficientSet:
    """Solved coefficient classes of one (problem, pair, start) triple."""

    pair: PartitionedMethod
    problem_name: str
    classes: list
    times: np.ndarray
    h_ref: float
    initial: list

    @property
    def order(self) -> int:
        return self.pair.order

    @property
    def t0(self) -> float:
        return float(self.times[0])

    def find(self, kind: str, root: complex | None = None) -> SolvedClass:
        for c in self.classes:
            if c.spec.kind == kind and (root is None or abs(c.spec.root - root) < MATCH_TOL):
                return c
        raise KeyError(f"no class {kind} at {root}")

    def smooth(self) -> SolvedClass:
        return self.find("smooth")

    def parasitic(self) -> list:
        return [c for c in self.classes if c.spec.kind in ("p_only", "q_only")]

    def default_j_max(self) -> int:
        return 2 * self.order - 1


def _grid(t0: float, t_end: float, h_ref: float) -> np.ndarray:
    n = int(math.ceil((t_end - t0) / h_ref - 1e-9))
    return t0 + 0.5 * h_ref * np.arange(2 * n + 1)


def build_reference(problem: PartitionedProblem, pair: PartitionedMethod, t_end: float,
                    h_ref: float = 1e-3, j_max_smooth: int | None = None) -> ReferenceData:
    """Exact solution data on the half-step grid used by the coefficient solver."""
    r = pair.order
    top = 2 * r - 1 if j_max_smooth is None else j_max_smooth
    return ReferenceData.build(problem, _grid(problem.t0, t_end, h_ref), deriv_order=top + 1, block_order=2)


def _t0_systems(specs, problem: PartitionedProblem, j_top: int):
    """Class systems as Taylor series at ``t0`` with three derivative levels."""
    ref0 = ReferenceData.build(problem, np.array([problem.t0]), deriv_order=j_top + 4, block_order=4,
                               states=np.concatenate([problem.p0, problem.q0])[None, :])
    tb = ref0.taylor_blocks(idx=0)
    return [class_system(s, tb, ref0, idx=0, terms=3) for s in specs]


def solve_expansion(problem: PartitionedProblem, pair: PartitionedMethod, t_end: float,
                    start: StartExpansion | None = None, h_ref: float = 1e-3,
                    reference: ReferenceData | None = None) -> CoefficientSet:
    """Solve every coefficient class over ``[t0, t_end]``."""
    if start is None:
        start = StartExpansion.exact(pair, problem)
    specs = class_specs(pair, problem)
    if reference is None:
        reference = build_reference(problem, pair, t_end, h_ref)
    fp, fq, gp, gq = (b[..., 0] for b in problem.jac(problem.p0[:, None], problem.q0[:, None]))
    blocks0 = {"fp": fp, "fq": fq, "gp": gp, "gq": gq}
    Y0 = vandermonde_init(start, pair, specs, _t0_systems(specs, problem, 2 * pair.order - 1), blocks0)
    solved = [_solve_class(s, reference, y, h_ref) for s, y in zip(specs, Y0)]
    return CoefficientSet(pair, problem.name, solved, reference.times[::2], h_ref, Y0)


def _subset(cs: CoefficientSet, kinds) -> list:
    return [c for c in cs.classes if c.spec.kind in kinds]


def solve_smooth(problem, pair, t_end, start=None, h_ref=1e-3) -> SolvedClass:
    return solve_expansion(problem, pair, t_end, start, h_ref).smooth()


def solve_common(problem, pair, t_end, root, start=None, h_ref=1e-3) -> SolvedClass:
    if pair.classification.m < 2:
        raise ValueError("the pair has no common unit roots besides 1")
    return solve_expansion(problem, pair, t_end, start, h_ref).find("common", root)


def solve_parasitic(problem, pair, t_end, start=None, h_ref=1e-3) -> list:
    return solve_expansion(problem, pair, t_end, start, h_ref).parasitic()


def predict_error(cs: CoefficientSet, h: float, n, j_max: int | None = None,
                  imag_tol: float = 1e-9) -> tuple[np.ndarray, np.ndarray]:
    """Assembled ``(p_n - p(t_n), q_n - q(t_n))`` for the levels ``n``."""
    n = np.atleast_1d(np.asarray(n))
    j_max = cs.default_j_max() if j_max is None else j_max
    t = cs.t0 + h * n
    dp = cs.classes[0].p[cs.order].shape[1]
    dq = cs.classes[0].q[cs.order].shape[1]
    out_p = np.zeros((len(n), dp), dtype=complex)
    out_q = np.zeros((len(n), dq), dtype=complex)
    for c in cs.classes:
        if c.spec.dropped:
            continue
        xn = (c.spec.root ** n.astype(float))[:, None]
        for J in c.spec.orders:
            if J > j_max:
                continue
            out_p += h**J * xn * c.at(J, t, "p")
            out_q += h**J * xn * c.at(J, t, "q")
    scale = max(1.0, float(np.max(np.abs(out_p), initial=0)), float(np.max(np.abs(out_q), initial=0)))
    residue = max(float(np.max(np.abs(out_p.imag), initial=0)), float(np.max(np.abs(out_q.imag), initial=0)))
    if residue > imag_tol * scale:
        raise ValueError(f"imaginary residue {residue:.3e} in conjugate-pair assembly")
    return out_p.real, out_q.real


# parasitic extraction -----------------------------------------------------------

def extract_parasitic(errors: np.ndarray, roots, window: int, levels=None, smooth_degree: int = 0,
                      step: int = 1) -> tuple[np.ndarray, np.ndarray]:
    """Least-squares split of an error sequence into ``x^nu`` components.

    ``errors`` has shape ``(N, dim)`` and is indexed by consecutive levels
    ``levels[0] + arange(N)``. For every window start ``n`` (every ``step``
    samples) the model ``sum_i a_i x_i^nu`` is fitted over
    ``nu in [n, n + window)``; the root ``1`` may carry a polynomial in
    ``nu - n`` of degree ``smooth_degree``. Returned amplitudes refer to
    absolute powers ``x_i^nu``, so ``|a_i|`` is the component's size; for
    the root 1 the fitted value at ``nu = n`` is returned.

    Returns ``(window_starts, amplitudes)`` with amplitudes of shape
    ``(n_windows, n_roots, dim)``.
    """
    errors = np.asarray(errors)
    if errors.ndim == 1:
        errors = errors[:, None]
    roots = np.asarray(roots, dtype=complex)
    N = errors.shape[0]
    base = 0 if levels is None else int(np.asarray(levels)[0])
    if levels is not None and np.any(np.diff(np.asarray(levels)) != 1):
        raise ValueError("extraction needs consecutive levels")
    k = np.arange(window)
    cols = []
    one = np.flatnonzero(np.abs(roots - 1) < MATCH_TOL)
    for i, x in enumerate(roots):
        cols.append(x**k)
        if i in one:
            cols.extend((k / window) ** d for d in range(1, smooth_degree + 1))
    V = np.stack(cols, axis=1).astype(complex)
    if window < V.shape[1] or np.linalg.matrix_rank(V) < V.shape[1]:
        raise RankDeficient(f"window {window} cannot separate {V.shape[1]} basis functions")
    if N < window:
        raise RankDeficient("series shorter than the window")
    pinv = np.linalg.pinv(V)
    starts = np.arange(0, N - window + 1, step)
    win = np.lib.stride_tricks.sliding_window_view(errors, window, axis=0)[starts]  # (W, dim, window)
    coef = np.einsum("bk,wdk->wbd", pinv, win.astype(complex))
    # keep the leading column of each root
    lead = []
    c = 0
    for i in range(len(roots)):
        lead.append(c)
        c += 1 + (smooth_degree if i in one else 0)
    amp = coef[:, lead, :]
    nu0 = (base + starts).astype(float)
    amp = amp * (roots[None, :] ** (-nu0[:, None]))[:, :, None]
    return base + starts, amp


class ParasiticComponentExtractor(TransformerMixin, BaseEstimator):
    """``transform(errors)`` returns component magnitudes per root and window."""

    def __init__(self, roots=(1.0, -1.0), window=8, smooth_degree=0, step=1):
        self.roots = roots
        self.window = window
        self.smooth_degree = smooth_degree
        self.step = step

    def fit(self, X, y=None):
        self.n_features_in_ = np.asarray(X).reshape(len(X), -1).shape[1]
        return self

    def transform(self, X):
        X = np.asarray(X, dtype=float).reshape(len(X), -1)
        _, amp = extract_parasitic(X, self.roots, self.window, smooth_degree=self.smooth_degree, step=self.step)
        return np.abs(amp)


# transition matrices -------------------------------------------------------------

@dataclass
class TransitionDiagnostics:
    """Variational and parasitic transition matrices along a reference solution."""

    times: np.ndarray
    det_M: np.ndarray
    norm_M: np.ndarray
    gamma: float
    integral_b_minus_a: np.ndarray
    parasitic: dict  # name -> dict(lam, trace_sign, Phi, det, predicted_det, norm)

    def direction_errors(self) -> dict:
        """Deviation of the double pendulum's closed-form directions.

        ``g_q`` annihilates ``(1, 1)``, so ``Phi (1, 1) = (1, 1)``; ``f_p`` maps
        ``(1, -1)`` to ``(b - a)(1, -1)``, so ``Phi (1, -1)`` is
        ``exp(lambda int (b - a)) (1, -1)``. Relative max deviations.
        """
        out = {}
        for name, v in self.parasitic.items():
            if v["block"] == "gq":
                d = np.array([1.0, 1.0])
                target = np.broadcast_to(d, v["Phi"].shape[:-1])
            else:
                d = np.array([1.0, -1.0])
                target = np.exp(v["lam"] * self.integral_b_minus_a)[:, None] * d
            got = v["Phi"] @ d
            out[name] = float(np.max(np.abs(got - target) / np.max(np.abs(target), axis=-1, keepdims=True)))
        return out

    def liouville_error(self) -> float:
        errs = [np.max(np.abs(v["det"] / v["predicted_det"] - 1)) for v in self.parasitic.values()]
        return float(max(errs, default=0.0))


def transition_diagnostics(problem: PartitionedProblem, pair: PartitionedMethod, t_grid,
                           quad_step: float = 5e-4, tol: float = 1e-12) -> TransitionDiagnostics:
    """Integrate ``M(t, t0)`` and the parasitic ``Phi(t, t0)`` on ``t_grid``.

    Parasitic systems are ``lambda f_p`` for roots of ``rho_p`` only and
    ``lambda g_q`` for roots of ``rho_q`` only. Their determinants are
    compared with ``exp(int tr)``, where the trace integral is evaluated by
    composite Simpson quadrature on a grid of spacing at most ``quad_step``.
    """
    from .problems import jac_blocks_ab

    t_grid = np.asarray(t_grid, dtype=float)
    t0 = problem.t0
    dp, dq = problem.dim_p, problem.dim_q
    d = dp + dq
    cls = pair.classification
    growth = pair.growth
    systems = {}
    for x, lam in zip(cls.p_only, growth.lambda_pp):
        systems.setdefault(("fp", round(lam.real, 12), round(lam.imag, 12)), (lam, "fp", dp, x))
    for x, lam in zip(cls.q_only, growth.lambda_qq):
        systems.setdefault(("gq", round(lam.real, 12), round(lam.imag, 12)), (lam, "gq", dq, x))
    keys = list(systems)
    real = all(abs(systems[k][0].imag) < 1e-14 for k in keys)
    dtype = float if real else complex

    def rhs(t, z):
        y = z[:d].real if dtype is complex else z[:d]
        p, q = y[:dp], y[dp:]
        F, G = problem.rhs(p, q)
        fp, fq, gp, gq = problem.jac(p, q)
        Jf = np.block([[fp, fq], [gp, gq]])
        out = [np.concatenate([F, G]).astype(dtype)]
        M = z[d: d + d * d].reshape(d, d)
        out.append((Jf @ M).ravel())
        pos = d + d * d
        for k in keys:
            lam, which, n, _ = systems[k]
            Phi = z[pos: pos + n * n].reshape(n, n)
            A = fp if which == "fp" else gq
            out.append((lam.real if dtype is float else lam) * (A @ Phi).ravel())
            pos += n * n
        return np.concatenate(out)

    z0 = [np.concatenate([problem.p0, problem.q0]), np.eye(d).ravel()]
    for k in keys:
        z0.append(np.eye(systems[k][2]).ravel())
    z0 = np.concatenate(z0).astype(dtype)
    t_end = float(t_grid.max())
    sol = solve_ivp(rhs, (t0, t_end), z0, method="DOP853", rtol=tol, atol=tol, t_eval=t_grid)
    if sol.status != 0:
        raise ReferenceFailure(sol.message)
    Z = sol.y.T
    Ms = Z[:, d: d + d * d].reshape(-1, d, d).real
    det_M = np.linalg.det(Ms)
    norm_M = np.linalg.norm(Ms, ord=2, axis=(1, 2))
    # trace integral on a fine grid
    n_fine = int(math.ceil((t_end - t0) / quad_step))
    fine = np.linspace(t0, t_end, 2 * max(n_fine, 1) + 1)
    states = reference_states(problem, fine, tol=1e-13)
    a, b = jac_blocks_ab(states[:, :dp].T, states[:, dp:].T) if problem.name == "double_pendulum" else (None, None)
    if a is None:
        fp, _, _, gq = problem.jac(states[:, :dp].T, states[:, dp:].T)
        tr_fp = np.trace(fp, axis1=0, axis2=1)
        tr_gq = np.trace(gq, axis1=0, axis2=1)
    else:
        tr_fp = b - a
        tr_gq = a - b
    I_fp = np.interp(t_grid, fine, cumulative_simpson(tr_fp, x=fine, initial=0.0))
    I_gq = np.interp(t_grid, fine, cumulative_simpson(tr_gq, x=fine, initial=0.0))
    parasitic = {}
    pos = d + d * d
    for k in keys:
        lam, which, n, x = systems[k]
        Phi = Z[:, pos: pos + n * n].reshape(-1, n, n)
        pos += n * n
        integ = I_fp if which == "fp" else I_gq
        parasitic[f"{which}@lambda={lam.real:+.6g}{lam.imag:+.6g}j"] = {
            "lam": lam,
            "block": which,
            "root": x,
            "Phi": Phi,
            "det": np.linalg.det(Phi),
            "predicted_det": np.exp(lam * integ),
            "norm": np.linalg.norm(Phi, ord=2, axis=(1, 2)),
        }
    mask = t_grid > t0 + 1.0
    gamma = float("nan")
    if mask.sum() >= 2:
        gamma = float(np.polyfit(np.log(t_grid[mask] - t0), np.log(norm_M[mask]), 1)[0])
    return TransitionDiagnostics(t_grid, det_M, norm_M, gamma, I_fp, parasitic)
