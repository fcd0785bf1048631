"""Fixed-step time stepping of partitioned multistep methods."""

from __future__ import annotations

import csv
from dataclasses import dataclass, field
from pathlib import Path

import numba
import numpy as np
from scipy.integrate import solve_ivp
from sklearn.base import BaseEstimator

from .exceptions import NewtonDivergence, ReferenceFailure
from .plmm import PartitionedMethod, get_pair
from .problems import PartitionedProblem

START_MODES = ("exact_reference", "order_r_perturbed")
REFERENCE_TOL = 1e-13


@dataclass(frozen=True)
class IntegratorConfig:
    """Step size, number of steps and starting procedure.

    ``record`` selects which time levels are stored: ``None`` stores every
    ``stride``-th level, otherwise it is an increasing sequence of levels.
    """

    h: float
    n_steps: int
    start_mode: str = "exact_reference"
    epsilon: float = 1.0
    seed: int = 0
    newton_tol: float = 1e-12
    newton_max_iter: int = 25
    stride: int = 1
    record: tuple | None = None
    reference_tol: float = REFERENCE_TOL

    def __post_init__(self):
        if not self.h > 0:
            raise ValueError("h must be positive")
        if self.start_mode not in START_MODES:
            raise ValueError(f"start_mode must be one of {START_MODES}")
        if self.stride < 1:
            raise ValueError("stride must be >= 1")

    def levels(self) -> np.ndarray:
        if self.record is not None:
            idx = np.unique(np.asarray(self.record, dtype=np.int64))
            return idx[(idx >= 0) & (idx <= self.n_steps)]
        return np.arange(0, self.n_steps + 1, self.stride, dtype=np.int64)


@dataclass
class Trajectory:
    """Recorded time levels of a numerical or reference solution."""

    times: np.ndarray
    p: np.ndarray
    q: np.ndarray
    levels: np.ndarray = None
    method_tag: str = ""
    problem_tag: str = ""
    h: float = float("nan")
    nonfinite: bool = False
    nonfinite_level: int | None = None
    extra: dict = field(default_factory=dict)

    def __post_init__(self):
        self.times = np.asarray(self.times, dtype=float)
        self.p = np.asarray(self.p, dtype=float).reshape(len(self.times), -1)
        self.q = np.asarray(self.q, dtype=float).reshape(len(self.times), -1)
        if self.levels is None:
            self.levels = np.arange(len(self.times))

    def __len__(self) -> int:
        return len(self.times)

    @property
    def dim_p(self) -> int:
        return self.p.shape[1]

    @property
    def dim_q(self) -> int:
        return self.q.shape[1]

    @property
    def states(self) -> np.ndarray:
        return np.hstack([self.p, self.q])

    def header(self) -> list[str]:
        return ["t"] + [f"p{i + 1}" for i in range(self.dim_p)] + [f"q{i + 1}" for i in range(self.dim_q)]

    def to_csv(self, path) -> Path:
        path = Path(path)
        with path.open("w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(self.header())
            for t, row in zip(self.times, self.states):
                w.writerow([repr(float(t))] + [repr(float(x)) for x in row])
        return path

    @classmethod
    def from_csv(cls, path, dim_p: int | None = None) -> "Trajectory":
        with Path(path).open() as fh:
            header = next(csv.reader(fh))
        data = np.loadtxt(path, delimiter=",", skiprows=1, ndmin=2)
        if dim_p is None:
            dim_p = sum(1 for name in header if name.startswith("p"))
        return cls(data[:, 0], data[:, 1: 1 + dim_p], data[:, 1 + dim_p:])

    def to_npz(self, path) -> Path:
        """Binary export: arrays ``times``, ``levels``, ``p``, ``q`` in one ``.npz``."""
        path = Path(path)
        np.savez(path, times=self.times, levels=self.levels, p=self.p, q=self.q)
        return path


# starting values ----------------------------------------------------------

def _reference_states(problem: PartitionedProblem, times: np.ndarray, tol: float) -> np.ndarray:
    y0 = np.concatenate([problem.p0, problem.q0])
    times = np.asarray(times, dtype=float)
    out = np.empty((len(times), y0.size))
    at_start = times == problem.t0
    out[at_start] = y0
    later = times[~at_start]
    if later.size:
        sol = solve_ivp(problem.vector_field, (problem.t0, later.max()), y0, method="DOP853",
                        rtol=tol, atol=tol, t_eval=later)
        if sol.status != 0:
            raise ReferenceFailure(sol.message)
        out[~at_start] = sol.y.T
    return out


def start_perturbation(problem: PartitionedProblem, pair: PartitionedMethod, config: IntegratorConfig):
    """Coefficients ``s_nu`` with start error ``h^r s_nu`` for the perturbed mode.

    ``s_nu = epsilon (-1)^nu u`` for ``nu >= 1`` with a seeded unit vector
    ``u`` per block; the initial value itself is left exact.
    """
    kp, kq = pair.p.k, pair.q.k
    sp = np.zeros((kp, problem.dim_p))
    sq = np.zeros((kq, problem.dim_q))
    if config.start_mode != "order_r_perturbed":
        return sp, sq
    rng = np.random.default_rng(config.seed)
    up = rng.standard_normal(problem.dim_p)
    uq = rng.standard_normal(problem.dim_q)
    up /= np.linalg.norm(up)
    uq /= np.linalg.norm(uq)
    for nu in range(1, kp):
        sp[nu] = config.epsilon * (-1) ** nu * up
    for nu in range(1, kq):
        sq[nu] = config.epsilon * (-1) ** nu * uq
    return sp, sq


def start_values(problem: PartitionedProblem, pair: PartitionedMethod, config: IntegratorConfig):
    """``(p_0..p_{k_p-1}, q_0..q_{k_q-1})`` as arrays of shape ``(k, dim)``."""
    kp, kq = pair.p.k, pair.q.k
    K = max(kp, kq)
    times = problem.t0 + config.h * np.arange(K)
    Y = _reference_states(problem, times, config.reference_tol)
    P = Y[:kp, : problem.dim_p].copy()
    Q = Y[:kq, problem.dim_p:].copy()
    if config.start_mode == "order_r_perturbed":
        sp, sq = start_perturbation(problem, pair, config)
        scale = config.h ** pair.order
        P += scale * sp
        Q += scale * sq
    return P, Q


# explicit compiled path ---------------------------------------------------

@numba.njit(cache=True)
def _march_explicit(rhs, params, ap, bp, aq, bq, P0, Q0, h, n_steps, levels, out_p, out_q):
    kp = ap.shape[0] - 1
    kq = aq.shape[0] - 1
    K = max(kp, kq) + 1
    dp = P0.shape[1]
    dq = Q0.shape[1]
    bufp = np.zeros((K, dp))
    bufq = np.zeros((K, dq))
    buff = np.zeros((K, dp))
    bufg = np.zeros((K, dq))
    ptr = 0
    nrec = levels.shape[0]
    for m in range(n_steps + 1):
        s = m % K
        if m < kp:
            for i in range(dp):
                bufp[s, i] = P0[m, i]
        else:
            for i in range(dp):
                acc = 0.0
                for j in range(kp):
                    sl = (m - kp + j) % K
                    acc += -ap[j] * bufp[sl, i] + h * bp[j] * buff[sl, i]
                bufp[s, i] = acc / ap[kp]
        if m < kq:
            for i in range(dq):
                bufq[s, i] = Q0[m, i]
        else:
            for i in range(dq):
                acc = 0.0
                for j in range(kq):
                    sl = (m - kq + j) % K
                    acc += -aq[j] * bufq[sl, i] + h * bq[j] * bufg[sl, i]
                bufq[s, i] = acc / aq[kq]
        finite = True
        for i in range(dp):
            if not np.isfinite(bufp[s, i]):
                finite = False
        for i in range(dq):
            if not np.isfinite(bufq[s, i]):
                finite = False
        if not finite:
            return ptr, m
        rhs(bufp[s], bufq[s], params, buff[s], bufg[s])
        if ptr < nrec and levels[ptr] == m:
            for i in range(dp):
                out_p[ptr, i] = bufp[s, i]
            for i in range(dq):
                out_q[ptr, i] = bufq[s, i]
            ptr += 1
    return ptr, -1


# general path with Newton for implicit levels ------------------------------

def _newton(problem, h, ap, bp, aq, bq, known_p, known_q, solve_p, solve_q, guess_p, guess_q, config, level):
    """Solve the implicit equations at one time level for the unknown blocks."""
    dp, dq = problem.dim_p, problem.dim_q
    x_p, x_q = guess_p.copy(), guess_q.copy()
    kp, kq = len(ap) - 1, len(aq) - 1
    for _ in range(config.newton_max_iter + 1):
        F, G = problem.rhs(x_p, x_q)
        res = []
        if solve_p:
            res.append(ap[kp] * x_p - h * bp[kp] * F - known_p)
        if solve_q:
            res.append(aq[kq] * x_q - h * bq[kq] * G - known_q)
        r = np.concatenate(res)
        scale = 1.0 + np.max(np.abs(np.concatenate([x_p, x_q])))
        if np.max(np.abs(r)) <= config.newton_tol * scale:
            return x_p, x_q
        fp, fq, gp, gq = problem.jac(x_p, x_q)
        rows = []
        if solve_p:
            row = [ap[kp] * np.eye(dp) - h * bp[kp] * fp]
            if solve_q:
                row.append(-h * bp[kp] * fq)
            rows.append(np.hstack(row))
        if solve_q:
            row = [-h * bq[kq] * gp] if solve_p else []
            row.append(aq[kq] * np.eye(dq) - h * bq[kq] * gq)
            rows.append(np.hstack(row))
        delta = np.linalg.solve(np.vstack(rows), -r)
        if solve_p:
            x_p = x_p + delta[:dp]
        if solve_q:
            x_q = x_q + delta[dp if solve_p else 0:]
        if not (np.all(np.isfinite(x_p)) and np.all(np.isfinite(x_q))):
            break
    raise NewtonDivergence(f"Newton did not converge at level {level}")


def _march_general(problem, pair, config, P0, Q0, levels):
    ap, bp, aq, bq = pair.p.alpha, pair.p.beta, pair.q.alpha, pair.q.beta
    kp, kq = pair.p.k, pair.q.k
    h = config.h
    hist_p, hist_q, hist_f, hist_g = {}, {}, {}, {}
    out_p = np.zeros((len(levels), problem.dim_p))
    out_q = np.zeros((len(levels), problem.dim_q))
    ptr = 0
    K = max(kp, kq)
    for m in range(config.n_steps + 1):
        known_p = known_q = None
        if m < kp:
            x_p = P0[m].copy()
        else:
            known_p = sum(-ap[j] * hist_p[m - kp + j] + h * bp[j] * hist_f[m - kp + j] for j in range(kp))
        if m < kq:
            x_q = Q0[m].copy()
        else:
            known_q = sum(-aq[j] * hist_q[m - kq + j] + h * bq[j] * hist_g[m - kq + j] for j in range(kq))
        implicit_p = known_p is not None and bp[kp] != 0
        implicit_q = known_q is not None and bq[kq] != 0
        if known_p is not None and not implicit_p:
            x_p = known_p / ap[kp]
        if known_q is not None and not implicit_q:
            x_q = known_q / aq[kq]
        if implicit_p or implicit_q:
            guess_p = hist_p[m - 1] + h * hist_f[m - 1] if implicit_p else x_p
            guess_q = hist_q[m - 1] + h * hist_g[m - 1] if implicit_q else x_q
            x_p, x_q = _newton(problem, h, ap, bp, aq, bq, known_p, known_q, implicit_p, implicit_q,
                               guess_p, guess_q, config, m)
        if not (np.all(np.isfinite(x_p)) and np.all(np.isfinite(x_q))):
            return out_p[:ptr], out_q[:ptr], ptr, m
        F, G = problem.rhs(x_p, x_q)
        hist_p[m], hist_q[m], hist_f[m], hist_g[m] = x_p, x_q, F, G
        for d in (hist_p, hist_q, hist_f, hist_g):
            d.pop(m - K, None)
        if ptr < len(levels) and levels[ptr] == m:
            out_p[ptr], out_q[ptr] = x_p, x_q
            ptr += 1
    return out_p, out_q, ptr, -1


def integrate(problem: PartitionedProblem, pair: PartitionedMethod, config: IntegratorConfig,
              start: tuple | None = None) -> Trajectory:
    """Advance both difference equations from the starting values.

    A non-finite value ends the run early; the returned trajectory is then
    truncated and flagged through ``nonfinite`` and ``nonfinite_level``.
    """
    kp, kq = pair.p.k, pair.q.k
    if config.n_steps < max(kp, kq):
        raise ValueError("n_steps must be at least the larger step number")
    if start is None:
        start = start_values(problem, pair, config)
    P0 = np.ascontiguousarray(np.asarray(start[0], dtype=float).reshape(kp, problem.dim_p))
    Q0 = np.ascontiguousarray(np.asarray(start[1], dtype=float).reshape(kq, problem.dim_q))
    levels = config.levels()
    if pair.explicit and problem.kernel is not None:
        out_p = np.zeros((len(levels), problem.dim_p))
        out_q = np.zeros((len(levels), problem.dim_q))
        n_rec, bad = _march_explicit(problem.kernel, problem.params, pair.p.alpha, pair.p.beta,
                                     pair.q.alpha, pair.q.beta, P0, Q0, float(config.h),
                                     int(config.n_steps), levels, out_p, out_q)
    else:
        out_p, out_q, n_rec, bad = _march_general(problem, pair, config, P0, Q0, levels)
    lv = levels[:n_rec]
    return Trajectory(
        times=problem.t0 + config.h * lv,
        p=out_p[:n_rec],
        q=out_q[:n_rec],
        levels=lv,
        method_tag=pair.name,
        problem_tag=problem.name,
        h=config.h,
        nonfinite=bad >= 0,
        nonfinite_level=int(bad) if bad >= 0 else None,
    )


def reference_trajectory(problem: PartitionedProblem, t_end: float, sample_times=None,
                         tol: float = REFERENCE_TOL) -> Trajectory:
    """High-accuracy one-step solution sampled at ``sample_times``."""
    if t_end < problem.t0:
        raise ValueError("t_end must not precede t0")
    if sample_times is None:
        sample_times = np.array([problem.t0, t_end])
    ts = np.asarray(sample_times, dtype=float)
    if np.any(ts > t_end) or np.any(ts < problem.t0):
        raise ValueError("sample times must lie in [t0, t_end]")
    Y = _reference_states(problem, ts, tol)
    return Trajectory(ts, Y[:, : problem.dim_p], Y[:, problem.dim_p:], method_tag="reference",
                      problem_tag=problem.name)


class PLMMIntegrator(BaseEstimator):
    """Estimator wrapper: ``fit(problem)`` integrates and stores ``trajectory_``."""

    def __init__(self, pair="plmm2", h=0.01, t_end=10.0, start_mode="exact_reference",
                 epsilon=1.0, seed=0, stride=1):
        self.pair = pair
        self.h = h
        self.t_end = t_end
        self.start_mode = start_mode
        self.epsilon = epsilon
        self.seed = seed
        self.stride = stride

    def _pair(self) -> PartitionedMethod:
        return get_pair(self.pair) if isinstance(self.pair, str) else self.pair

    def fit(self, problem: PartitionedProblem, y=None):
        pair = self._pair()
        n = int(round((self.t_end - problem.t0) / self.h))
        cfg = IntegratorConfig(h=self.h, n_steps=max(n, max(pair.p.k, pair.q.k)), start_mode=self.start_mode,
                               epsilon=self.epsilon, seed=self.seed, stride=self.stride)
        self.config_ = cfg
        self.trajectory_ = integrate(problem, pair, cfg)
        return self

    def predict(self, times) -> np.ndarray:
        """Stacked states at the recorded levels nearest to ``times``."""
        tr = self.trajectory_
        idx = np.clip(np.searchsorted(tr.times, np.asarray(times, dtype=float)), 0, len(tr) - 1)
        return tr.states[idx]
