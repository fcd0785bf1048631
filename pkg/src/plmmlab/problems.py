"""Partitioned initial value problems with analytic derivatives.

Each problem stores its vector field as a *generic* function of the state
components: the same code runs on floats, numpy arrays (batched states) and
:class:`~plmmlab.polynomials.PowerSeries`, which is how Taylor jets of the
solution and of the Jacobian blocks along a trajectory are produced.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace
from typing import Callable

import numba
import numpy as np

from .polynomials import PowerSeries, cos, sin

Generic = Callable  # (p_components, q_components) -> components


@dataclass(frozen=True)
class Invariant:
    """A scalar ``I(p, q)`` with its gradient ``(I_p, I_q)``."""

    name: str
    value: Callable
    gradient: Callable


def _stack(items, like) -> np.ndarray:
    shape = np.shape(like)
    if shape == ():
        return np.array([float(x) for x in items])
    return np.stack([np.broadcast_to(np.asarray(x, dtype=float), shape) for x in items])


def _as_series_coeffs(x, order: int, batch: tuple) -> np.ndarray:
    out = np.zeros((order + 1,) + batch)
    if isinstance(x, PowerSeries):
        c = x.coeffs[: order + 1]
        c = c.reshape(c.shape + (1,) * (len(batch) + 1 - c.ndim))
        out[: c.shape[0]] = c
    else:
        out[0] = x
    return out


@dataclass(frozen=True)
class PartitionedProblem:
    """``p' = f(p, q)``, ``q' = g(p, q)`` with initial data at ``t0``.

    ``rhs_generic(p, q)`` returns the component lists ``(f, g)``;
    ``jac_generic(p, q)`` returns the nested lists ``(f_p, f_q, g_p, g_q)``.
    ``kernel(p, q, params, fout, gout)`` is an optional compiled scalar
    right-hand side used by the explicit integrator.
    """

    name: str
    dim_p: int
    dim_q: int
    rhs_generic: Generic
    jac_generic: Generic
    p0: np.ndarray
    q0: np.ndarray
    t0: float = 0.0
    invariants: tuple = ()
    kernel: Callable | None = None
    params: np.ndarray = field(default_factory=lambda: np.zeros(0))
    hamiltonian: Callable | None = None
    region: tuple = (2.0, math.pi / 2)

    def __post_init__(self):
        object.__setattr__(self, "p0", np.asarray(self.p0, dtype=float).reshape(self.dim_p))
        object.__setattr__(self, "q0", np.asarray(self.q0, dtype=float).reshape(self.dim_q))

    def with_initial(self, p0, q0, t0: float | None = None) -> "PartitionedProblem":
        return replace(self, p0=p0, q0=q0, t0=self.t0 if t0 is None else t0)

    # vector field -----------------------------------------------------
    def rhs(self, p, q) -> tuple[np.ndarray, np.ndarray]:
        p = np.asarray(p, dtype=float)
        q = np.asarray(q, dtype=float)
        F, G = self.rhs_generic(p, q)
        return _stack(F, p[0]), _stack(G, p[0])

    def f(self, p, q) -> np.ndarray:
        return self.rhs(p, q)[0]

    def g(self, p, q) -> np.ndarray:
        return self.rhs(p, q)[1]

    def vector_field(self, t, y):
        """``y' = F(y)`` for the stacked state ``y = (p, q)``; for scipy."""
        F, G = self.rhs(y[: self.dim_p], y[self.dim_p:])
        return np.concatenate([F, G])

    # Jacobians ----------------------------------------------------------
    def jac(self, p, q) -> tuple[np.ndarray, np.ndarray, np.ndarray, np.ndarray]:
        """Blocks ``(f_p, f_q, g_p, g_q)``; batch axes trail the matrix axes."""
        p = np.asarray(p, dtype=float)
        q = np.asarray(q, dtype=float)
        like = p[0]
        return tuple(np.stack([_stack(row, like) for row in blk]) for blk in self.jac_generic(p, q))

    def full_jacobian(self, p, q) -> np.ndarray:
        fp, fq, gp, gq = self.jac(p, q)
        return np.concatenate([np.concatenate([fp, fq], axis=1), np.concatenate([gp, gq], axis=1)], axis=0)

    def second_directional(self, p, q, pdot, qdot):
        """Derivatives of the four Jacobian blocks in the direction ``(pdot, qdot)``.

        Along a trajectory this is ``d/dt`` of each block.
        """
        P = [PowerSeries(np.stack([np.asarray(a, float), np.asarray(b, float)])) for a, b in zip(p, pdot)]
        Q = [PowerSeries(np.stack([np.asarray(a, float), np.asarray(b, float)])) for a, b in zip(q, qdot)]
        batch = np.shape(np.asarray(p, float)[0])
        blocks = self.jac_generic(P, Q)
        return tuple(
            np.array([[_as_series_coeffs(x, 1, batch)[1] for x in row] for row in blk]) for blk in blocks
        )

    # Taylor jets --------------------------------------------------------
    def solution_series(self, p, q, order: int) -> tuple[list, list]:
        """Taylor series in time of the solution through each state, as component lists."""
        p = np.asarray(p, dtype=float)
        q = np.asarray(q, dtype=float)
        batch = p.shape[1:]
        Pc = np.zeros((self.dim_p, order + 1) + batch)
        Qc = np.zeros((self.dim_q, order + 1) + batch)
        Pc[:, 0] = p
        Qc[:, 0] = q
        for k in range(order):
            P = [PowerSeries(Pc[i, : k + 1]) for i in range(self.dim_p)]
            Q = [PowerSeries(Qc[i, : k + 1]) for i in range(self.dim_q)]
            F, G = self.rhs_generic(P, Q)
            for i in range(self.dim_p):
                Pc[i, k + 1] = _as_series_coeffs(F[i], k, batch)[k] / (k + 1)
            for i in range(self.dim_q):
                Qc[i, k + 1] = _as_series_coeffs(G[i], k, batch)[k] / (k + 1)
        return [PowerSeries(Pc[i]) for i in range(self.dim_p)], [PowerSeries(Qc[i]) for i in range(self.dim_q)]

    def solution_jets(self, p, q, order: int) -> tuple[np.ndarray, np.ndarray]:
        """Time derivatives ``p^(k)``, ``q^(k)`` for ``k = 0..order``.

        Returns arrays of shape ``(order + 1, dim, *batch)``.
        """
        P, Q = self.solution_series(p, q, order)
        Pd = np.stack([s.derivatives() for s in P], axis=1)
        Qd = np.stack([s.derivatives() for s in Q], axis=1)
        return Pd, Qd

    def jacobian_jets(self, p, q, order: int) -> tuple[np.ndarray, ...]:
        """Time derivatives of ``(f_p, f_q, g_p, g_q)`` along the solution.

        Each block has shape ``(order + 1, rows, cols, *batch)``.
        """
        P, Q = self.solution_series(p, q, order)
        batch = np.shape(np.asarray(p, float)[0])
        fact = np.array([math.factorial(k) for k in range(order + 1)], dtype=float)
        fact = fact.reshape((-1,) + (1,) * len(batch))
        out = []
        for blk in self.jac_generic(P, Q):
            arr = np.array([[_as_series_coeffs(x, order, batch) * fact for x in row] for row in blk])
            out.append(np.moveaxis(arr, 2, 0))
        return tuple(out)

    def invariant(self, name: str | None = None) -> Invariant:
        if not self.invariants:
            raise ValueError(f"problem {self.name!r} has no invariants")
        if name is None:
            return self.invariants[0]
        for inv in self.invariants:
            if inv.name == name:
                return inv
        raise KeyError(f"problem {self.name!r} has no invariant {name!r}")


# double pendulum ---------------------------------------------------------

def _dp_pieces(p, q):
    alpha = q[1] - q[0]
    s, c = sin(alpha), cos(alpha)
    u = 1.0 + 2.0 * s * s
    return alpha, s, c, u


def double_pendulum_hamiltonian(p, q):
    _, s, c, u = _dp_pieces(p, q)
    P = 2.0 * p[0] * p[0] - 4.0 * c * p[0] * p[1] + 3.0 * p[1] * p[1]
    return P / (4.0 * u) - 3.0 * cos(q[0]) - 2.0 * cos(q[1])


def _dp_phi(p, q, with_derivative: bool = False):
    """``dT/dalpha`` of the kinetic energy ``T = P / (4u)``, optionally its alpha-derivative."""
    _, s, c, u = _dp_pieces(p, q)
    pp = p[0] * p[1]
    P = 2.0 * p[0] * p[0] - 4.0 * c * pp + 3.0 * p[1] * p[1]
    dP = 4.0 * s * pp
    du = 4.0 * s * c
    num = dP * u - P * du
    phi = num / (4.0 * u * u)
    if not with_derivative:
        return phi
    ddP = 4.0 * c * pp
    ddu = 4.0 * (c * c - s * s)
    dphi = ((ddP * u - P * ddu) * u - 2.0 * du * num) / (4.0 * u * u * u)
    return phi, dphi


def _dp_rhs(p, q):
    _, s, c, u = _dp_pieces(p, q)
    phi = _dp_phi(p, q)
    F = [phi - 3.0 * sin(q[0]), -phi - 2.0 * sin(q[1])]
    G = [(p[0] - c * p[1]) / u, (3.0 * p[1] - 2.0 * c * p[0]) / (2.0 * u)]
    return F, G


def _dp_ab(p, q):
    alpha, s, c, u = _dp_pieces(p, q)
    s2 = 2.0 * s * c
    w = s * (5.0 - 2.0 * s * s)
    uu = u * u
    a = (2.0 * s2 * p[0] - w * p[1]) / uu
    b = (3.0 * s2 * p[1] - w * p[0]) / uu
    return a, b


def _dp_jac(p, q):
    _, s, c, u = _dp_pieces(p, q)
    a, b = _dp_ab(p, q)
    _, dphi = _dp_phi(p, q, with_derivative=True)
    gp = [[1.0 / u, -c / u], [-c / u, 1.5 / u]]
    gq = [[a, -a], [b, -b]]
    fp = [[-a, -b], [a, b]]
    fq = [[-dphi - 3.0 * cos(q[0]), dphi], [dphi, -dphi - 2.0 * cos(q[1])]]
    return fp, fq, gp, gq


@numba.njit(cache=True)
def _dp_kernel(p, q, params, fout, gout):
    alpha = q[1] - q[0]
    s = math.sin(alpha)
    c = math.cos(alpha)
    u = 1.0 + 2.0 * s * s
    pp = p[0] * p[1]
    P = 2.0 * p[0] * p[0] - 4.0 * c * pp + 3.0 * p[1] * p[1]
    phi = (4.0 * s * pp * u - P * 4.0 * s * c) / (4.0 * u * u)
    fout[0] = phi - 3.0 * math.sin(q[0])
    fout[1] = -phi - 2.0 * math.sin(q[1])
    gout[0] = (p[0] - c * p[1]) / u
    gout[1] = (3.0 * p[1] - 2.0 * c * p[0]) / (2.0 * u)


def _dp_energy_gradient(p, q):
    F, G = _dp_rhs(p, q)
    return np.asarray(G), -np.asarray(F)


DOUBLE_PENDULUM_Q0 = (math.pi / 12, math.pi / 6)


def double_pendulum(p0=(0.0, 0.0), q0=DOUBLE_PENDULUM_Q0) -> PartitionedProblem:
    """Double pendulum with masses 1 and 2, unit lengths and unit gravity."""
    H = Invariant("H", double_pendulum_hamiltonian, _dp_energy_gradient)
    return PartitionedProblem(
        name="double_pendulum",
        dim_p=2,
        dim_q=2,
        rhs_generic=_dp_rhs,
        jac_generic=_dp_jac,
        p0=p0,
        q0=q0,
        invariants=(H,),
        kernel=_dp_kernel,
        hamiltonian=double_pendulum_hamiltonian,
    )


def jac_blocks_ab(p, q):
    """Scalars ``(a, b)`` with ``f_p = [[-a, -b], [a, b]]``, ``g_q = [[a, -a], [b, -b]]``.

    The angle entering the formulas is ``q2 - q1``.
    """
    p = np.asarray(p, dtype=float)
    q = np.asarray(q, dtype=float)
    return _dp_ab(p, q)


def ab_from_velocities(q, qdot):
    """Same ``(a, b)`` written through the angular velocities."""
    alpha = np.asarray(q[1]) - np.asarray(q[0])
    s = np.sin(alpha)
    u = 1.0 + 2.0 * s * s
    s2 = np.sin(2.0 * alpha)
    a = (s2 * qdot[0] - 2.0 * s * qdot[1]) / u
    b = (-3.0 * s * qdot[0] + s2 * qdot[1]) / u
    return a, b


def mass_matrix(q) -> np.ndarray:
    c = np.cos(np.asarray(q[1]) - np.asarray(q[0]))
    return np.array([[3.0 + 0 * c, 2.0 * c], [2.0 * c, 2.0 + 0 * c]])


# small oscillations ----------------------------------------------------

SQRT_2_3 = math.sqrt(2.0 / 3.0)


@dataclass(frozen=True)
class SmallOscillationReference:
    """Closed-form normal-mode approximation of the double pendulum.

    ``omega1`` and ``omega2`` keep the conventional closed-form constants;
    they are the *squared* angular frequencies of the linearized system,
    whose true angular frequencies are returned by
    :func:`linearized_frequencies`.
    """

    A: float = 0.0
    B: float = 0.0
    delta1: float = 0.0
    delta2: float = 0.0
    omega1: float = 3.0 * (1.0 + SQRT_2_3)
    omega2: float = 3.0 * (1.0 - SQRT_2_3)
    c_plus: float = -math.sqrt(6.0) / 2.0
    c_minus: float = math.sqrt(6.0) / 2.0

    @classmethod
    def from_initial(cls, p0, q0, **constants) -> "SmallOscillationReference":
        """Fit ``A, B, delta1, delta2`` to the state at ``t = 0``."""
        base = cls(**constants)
        q0 = np.asarray(q0, dtype=float)
        qdot0 = np.linalg.solve(mass_matrix(q0), np.asarray(p0, dtype=float))
        V = np.array([[1.0, 1.0], [base.c_plus, base.c_minus]])
        X = np.linalg.solve(V, q0)
        Y = np.linalg.solve(V * np.array([base.omega1, base.omega2]), qdot0)
        A, B = math.hypot(X[0], Y[0]), math.hypot(X[1], Y[1])
        d1, d2 = math.atan2(Y[0], X[0]), math.atan2(Y[1], X[1])
        return replace(base, A=A, B=B, delta1=d1, delta2=d2)

    def phases(self, t):
        t = np.asarray(t, dtype=float)
        return self.omega1 * t - self.delta1, self.omega2 * t - self.delta2

    def angles(self, t) -> np.ndarray:
        th1, th2 = self.phases(t)
        m1, m2 = self.A * np.cos(th1), self.B * np.cos(th2)
        return np.array([m1 + m2, self.c_plus * m1 + self.c_minus * m2])

    def velocities(self, t) -> np.ndarray:
        th1, th2 = self.phases(t)
        v1 = -self.A * self.omega1 * np.sin(th1)
        v2 = -self.B * self.omega2 * np.sin(th2)
        return np.array([v1 + v2, self.c_plus * v1 + self.c_minus * v2])

    def alpha(self, t):
        th1, th2 = self.phases(t)
        return self.A * (self.c_plus - 1) * np.cos(th1) + self.B * (self.c_minus - 1) * np.cos(th2)


def small_oscillation(t, ref: SmallOscillationReference) -> tuple[np.ndarray, np.ndarray]:
    """``(p, q)`` of the closed-form reference at time(s) ``t``."""
    q = ref.angles(t)
    v = ref.velocities(t)
    ca = np.cos(ref.alpha(t))
    p = np.array([3.0 * v[0] + 2.0 * v[1] * ca, 2.0 * v[1] + 2.0 * v[0] * ca])
    return p, q


def linearized_frequencies() -> np.ndarray:
    """Angular frequencies of the double pendulum linearized at rest."""
    from scipy.linalg import eigh

    w2 = eigh(np.diag([3.0, 2.0]), np.array([[3.0, 2.0], [2.0, 2.0]]), eigvals_only=True)
    return np.sqrt(np.sort(w2)[::-1])


# harmonic oscillator -----------------------------------------------------

def _ho_rhs(p, q):
    return [-q[0]], [p[0]]


def _ho_jac(p, q):
    return [[0.0]], [[-1.0]], [[1.0]], [[0.0]]


@numba.njit(cache=True)
def _ho_kernel(p, q, params, fout, gout):
    fout[0] = -q[0]
    gout[0] = p[0]


def _ho_energy(p, q):
    return 0.5 * (p[0] * p[0] + q[0] * q[0])


def harmonic_oscillator(p0=1.0, q0=0.0) -> PartitionedProblem:
    """``p' = -q``, ``q' = p``; exact solution ``p = cos t``, ``q = sin t`` from the defaults."""
    inv = Invariant("H", _ho_energy, lambda p, q: (np.asarray(p), np.asarray(q)))
    return PartitionedProblem(
        name="harmonic_oscillator",
        dim_p=1,
        dim_q=1,
        rhs_generic=_ho_rhs,
        jac_generic=_ho_jac,
        p0=p0,
        q0=q0,
        invariants=(inv,),
        kernel=_ho_kernel,
        hamiltonian=_ho_energy,
    )


def harmonic_exact(t, p0: float = 1.0, q0: float = 0.0) -> tuple[np.ndarray, np.ndarray]:
    t = np.asarray(t, dtype=float)
    return p0 * np.cos(t) - q0 * np.sin(t), p0 * np.sin(t) + q0 * np.cos(t)


# linear and trivial problems ----------------------------------------------

@numba.njit(cache=True)
def _linear_kernel(p, q, params, fout, gout):
    dp = fout.shape[0]
    dq = gout.shape[0]
    n = dp + dq
    for i in range(n):
        acc = 0.0
        for j in range(dp):
            acc += params[i * n + j] * p[j]
        for j in range(dq):
            acc += params[i * n + dp + j] * q[j]
        if i < dp:
            fout[i] = acc
        else:
            gout[i - dp] = acc


def linear_problem(A, B, C, D, p0, q0, name: str = "linear") -> PartitionedProblem:
    """Constant-coefficient system ``p' = A p + B q``, ``q' = C p + D q``."""
    A, B, C, D = (np.atleast_2d(np.asarray(x, dtype=float)) for x in (A, B, C, D))
    dp, dq = A.shape[0], D.shape[0]
    if A.shape != (dp, dp) or B.shape != (dp, dq) or C.shape != (dq, dp) or D.shape != (dq, dq):
        raise ValueError("inconsistent block shapes")
    full = np.block([[A, B], [C, D]])

    def rhs(p, q):
        F = [sum(A[i, j] * p[j] for j in range(dp)) + sum(B[i, j] * q[j] for j in range(dq)) for i in range(dp)]
        G = [sum(C[i, j] * p[j] for j in range(dp)) + sum(D[i, j] * q[j] for j in range(dq)) for i in range(dq)]
        return F, G

    def jac(p, q):
        return A.tolist(), B.tolist(), C.tolist(), D.tolist()

    return PartitionedProblem(
        name=name,
        dim_p=dp,
        dim_q=dq,
        rhs_generic=rhs,
        jac_generic=jac,
        p0=p0,
        q0=q0,
        kernel=_linear_kernel,
        params=full.ravel().copy(),
    )


def trivial_problem(p0=(1.0,), q0=(0.5,)) -> PartitionedProblem:
    """``f = g = 0``: every consistent method keeps the initial state."""
    p0 = np.atleast_1d(np.asarray(p0, dtype=float))
    q0 = np.atleast_1d(np.asarray(q0, dtype=float))
    dp, dq = p0.size, q0.size
    zero = np.zeros
    return linear_problem(zero((dp, dp)), zero((dp, dq)), zero((dq, dp)), zero((dq, dq)), p0, q0, name="trivial")


_PROBLEMS = {
    "double_pendulum": double_pendulum,
    "harmonic_oscillator": harmonic_oscillator,
    "trivial": trivial_problem,
}


def registered_problems() -> list[str]:
    return sorted(_PROBLEMS)


def get_problem(name: str, p0=None, q0=None) -> PartitionedProblem:
    try:
        factory = _PROBLEMS[name]
    except KeyError:
        raise KeyError(f"unknown problem {name!r}; known: {registered_problems()}") from None
    prob = factory()
    if p0 is not None or q0 is not None:
        prob = prob.with_initial(prob.p0 if p0 is None else p0, prob.q0 if q0 is None else q0)
    return prob
