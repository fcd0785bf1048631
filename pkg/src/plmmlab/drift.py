"""Invariant drift: measurement, growth classification and smooth-part prediction."""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from scipy.integrate import cumulative_simpson
from scipy.stats import linregress
from sklearn.base import BaseEstimator, ClassifierMixin

from .exceptions import DerivativeUnavailable
from .expansion import extract_parasitic
from .integrator import Trajectory, reference_trajectory
from .plmm import PartitionedMethod
from .problems import Invariant, PartitionedProblem, SmallOscillationReference, small_oscillation

TWO_PI = 2.0 * math.pi
GROWTH_CLASSES = ("bounded", "linear", "exponential", "indeterminate")


@dataclass
class DriftSeries:
    """``I(p_n, q_n) - I(p_0, q_0)`` sampled at multiples of a period."""

    sample_times: np.ndarray
    values: np.ndarray
    method: str = ""
    h: float = float("nan")
    problem: str = ""
    offsets: np.ndarray | None = None

    def __len__(self) -> int:
        return len(self.values)

    def window(self, t_max: float) -> "DriftSeries":
        keep = self.sample_times <= t_max
        off = None if self.offsets is None else self.offsets[keep]
        return DriftSeries(self.sample_times[keep], self.values[keep], self.method, self.h, self.problem, off)

    def to_csv(self, path) -> None:
        data = np.column_stack([self.sample_times, self.values])
        np.savetxt(path, data, delimiter=",", header="t,drift", comments="", fmt="%.17g")


def _invariant(problem: PartitionedProblem | None, invariant) -> Invariant:
    if isinstance(invariant, Invariant):
        return invariant
    if problem is None:
        raise ValueError("an Invariant or a problem is required")
    return problem.invariant(invariant)


def drift_series(trajectory: Trajectory, invariant: Invariant, period: float = TWO_PI,
                 t_end: float | None = None) -> DriftSeries:
    """Sample the invariant error at ``t0 + n * period`` from the nearest recorded time."""
    times = trajectory.times
    t0 = times[0]
    last = times[-1] if t_end is None else min(t_end, times[-1])
    n_max = int(math.floor((last - t0) / period + 1e-9))
    targets = t0 + period * np.arange(n_max + 1)
    idx = np.clip(np.searchsorted(times, targets), 0, len(times) - 1)
    left = np.clip(idx - 1, 0, len(times) - 1)
    idx = np.where(np.abs(times[left] - targets) <= np.abs(times[idx] - targets), left, idx)
    I = np.asarray(invariant.value(trajectory.p[idx].T, trajectory.q[idx].T), dtype=float)
    I0 = float(invariant.value(trajectory.p[0], trajectory.q[0]))
    return DriftSeries(times[idx], I - I0, trajectory.method_tag, trajectory.h, trajectory.problem_tag,
                       times[idx] - targets)


# growth classification -------------------------------------------------------

@dataclass
class GrowthVerdict:
    label: str
    slope: float = float("nan")
    exponent: float = float("nan")
    r2_log: float = float("nan")
    r2_lin: float = float("nan")
    r2_abs: float = float("nan")
    windows: dict = field(default_factory=dict)

    def to_dict(self) -> dict:
        out = {k: getattr(self, k) for k in ("label", "slope", "exponent", "r2_log", "r2_lin", "r2_abs")}
        out = {k: (None if isinstance(v, float) and not math.isfinite(v) else v) for k, v in out.items()}
        out["windows"] = self.windows
        return out


def _fit(x, y) -> tuple[float, float]:
    if np.ptp(y) == 0:
        return 0.0, 0.0
    res = linregress(x, y)
    return float(res.slope), float(res.rvalue**2)


def classify_growth(series: DriftSeries | np.ndarray, times=None) -> GrowthVerdict:
    """Assign one of bounded / linear / exponential / indeterminate.

    Exponential: a line fits the log of the running maximum of ``|v|`` over
    the last half with R^2 > 0.98, positive slope, and better than a line
    fits the running maximum itself. Linear:
    ``|v|`` over the whole series has slope above three times
    (first-decile mean / total time) with R^2 > 0.9. Bounded: the last-decile
    maximum is at most twice the first-decile maximum.
    """
    if isinstance(series, DriftSeries):
        t, v = series.sample_times, series.values
    else:
        v = np.asarray(series, dtype=float)
        t = np.arange(len(v), dtype=float) if times is None else np.asarray(times, dtype=float)
    if len(v) < 50:
        raise ValueError("classification needs at least 50 samples")
    a = np.abs(v)
    n = len(a)
    dec = max(n // 10, 1)
    half = slice(n // 2, n)
    windows = {"last_half": [float(t[n // 2]), float(t[-1])], "first_decile": [float(t[0]), float(t[dec - 1])],
               "last_decile": [float(t[n - dec]), float(t[-1])]}
    if not np.any(a > 0):
        return GrowthVerdict("bounded", 0.0, 0.0, windows=windows)
    out = GrowthVerdict("indeterminate", windows=windows)
    th, ah = t[half], np.maximum.accumulate(a)[half]
    if np.all(ah > 0):
        out.exponent, out.r2_log = _fit(th, np.log(ah))
        _, out.r2_lin = _fit(th, ah)
        if out.r2_log > 0.98 and out.exponent > 0 and out.r2_log > out.r2_lin:
            out.label = "exponential"
            return out
    out.slope, out.r2_abs = _fit(t, a)
    total = t[-1] - t[0]
    if out.slope > 3.0 * a[:dec].mean() / total and out.r2_abs > 0.9:
        out.label = "linear"
        return out
    if a[n - dec:].max() <= 2.0 * a[:dec].max():
        out.label = "bounded"
    return out


class GrowthClassifier(ClassifierMixin, BaseEstimator):
    """Rule-based classifier; each row of ``X`` is one drift series."""

    def fit(self, X, y=None):
        self.classes_ = np.array(GROWTH_CLASSES)
        return self

    def predict(self, X):
        return np.array([classify_growth(np.asarray(row, dtype=float)).label for row in X])


# measured and predicted smooth drift ------------------------------------------

def measured_smooth_drift(trajectory: Trajectory, problem: PartitionedProblem, pair: PartitionedMethod,
                          invariant=None, window: int | None = None, smooth_degree: int = 1,
                          reference: Trajectory | None = None) -> DriftSeries:
    """Invariant drift of the reference plus the root-1 part of the error.

    The error on consecutive levels is split per block into components
    ``x^n`` over the unit roots of that block's ``rho``; only the smooth
    (root 1) component is kept.
    """
    inv = _invariant(problem, invariant if invariant is not None else None)
    if reference is None:
        reference = reference_trajectory(problem, trajectory.times[-1], trajectory.times)
    cls = pair.classification
    smooth = []
    for side, err in (("p", trajectory.p - reference.p), ("q", trajectory.q - reference.q)):
        roots = cls.unit_roots(side)
        w = window if window is not None else len(roots) + smooth_degree + 2
        starts, amp = extract_parasitic(err, roots, w, levels=trajectory.levels, smooth_degree=smooth_degree)
        smooth.append(amp[:, 0, :].real)
    n = min(len(smooth[0]), len(smooth[1]))
    sel = np.arange(n)
    P = reference.p[sel] + smooth[0][:n]
    Q = reference.q[sel] + smooth[1][:n]
    I = np.asarray(inv.value(P.T, Q.T), dtype=float)
    return DriftSeries(trajectory.times[sel], I - I[0], trajectory.method_tag, trajectory.h, problem.name)


def _fine_jets(problem: PartitionedProblem, t_end: float, order: int, h_ref: float):
    from .expansion import reference_states

    n = max(int(math.ceil((t_end - problem.t0) / h_ref)), 1)
    fine = np.linspace(problem.t0, t_end, 2 * n + 1)
    Y = reference_states(problem, fine)
    Pd, Qd = problem.solution_jets(Y[:, : problem.dim_p].T, Y[:, problem.dim_p:].T, order)
    return fine, Pd, Qd


def _dot(a, b):
    return np.sum(a * b, axis=0)


def predicted_smooth_drift(problem: PartitionedProblem, pair: PartitionedMethod, h: float, t_grid,
                           mode: str = "general", j_max: int | None = None, h_ref: float = 1e-3,
                           invariant=None) -> DriftSeries:
    """Leading smooth-part drift of an invariant, accumulated from ``t0``.

    ``general`` integrates ``-sum_j h^j grad I . (c_jp p^(j+1), c_jq q^(j+1))``;
    ``hamiltonian`` uses ``c_jq p' . q^(j+1) - c_jp q' . p^(j+1)`` (same value
    for the energy); ``symmetric`` evaluates the even orders by boundary
    terms plus one integral of ``p^(k+1) . q^(k+1)``.
    """
    r = pair.order
    j_max = r if j_max is None else j_max
    if j_max > 2 * r - 1:
        raise DerivativeUnavailable(f"error constants are available up to order {2 * r - 1}")
    t_grid = np.asarray(t_grid, dtype=float)
    ap, aq = pair.analysis_p, pair.analysis_q
    orders = range(r, j_max + 1)
    fine, Pd, Qd = _fine_jets(problem, float(t_grid.max()), j_max + 1, h_ref)
    total = np.zeros_like(fine)
    if mode == "general":
        inv = _invariant(problem, invariant if invariant is not None else None)
        gp, gq = inv.gradient(Pd[0], Qd[0])
        integrand = np.zeros_like(fine)
        for j in orders:
            integrand -= h**j * (np.real(ap.c(j)) * _dot(gp, Pd[j + 1]) + np.real(aq.c(j)) * _dot(gq, Qd[j + 1]))
        total = cumulative_simpson(integrand, x=fine, initial=0.0)
    elif mode == "hamiltonian":
        if problem.hamiltonian is None:
            raise ValueError(f"{problem.name} is not Hamiltonian")
        integrand = np.zeros_like(fine)
        for j in orders:
            integrand += h**j * (np.real(aq.c(j)) * _dot(Pd[1], Qd[j + 1]) - np.real(ap.c(j)) * _dot(Qd[1], Pd[j + 1]))
        total = cumulative_simpson(integrand, x=fine, initial=0.0)
    elif mode == "symmetric":
        if problem.hamiltonian is None or not pair.symmetric:
            raise ValueError("symmetric mode needs a Hamiltonian problem and a symmetric pair")
        for j in orders:
            if j % 2:
                continue
            k = j // 2
            cp, cq = float(np.real(ap.c(j))), float(np.real(aq.c(j)))
            bpq = sum((-1) ** (l + 1) * _dot(Pd[l], Qd[j + 1 - l]) for l in range(1, k + 1))
            bqp = sum((-1) ** (l + 1) * _dot(Qd[l], Pd[j + 1 - l]) for l in range(1, k + 1))
            boundary = cq * (bpq - bpq[0]) - cp * (bqp - bqp[0])
            integral = 0.0
            if cq != cp:
                integral = (-1) ** k * (cq - cp) * cumulative_simpson(_dot(Pd[k + 1], Qd[k + 1]), x=fine, initial=0.0)
            total = total + h**j * (boundary + integral)
    else:
        raise ValueError(f"unknown mode {mode!r}")
    values = np.interp(t_grid, fine, total)
    return DriftSeries(t_grid, values, pair.name, h, problem.name)


# oscillatory integrals ----------------------------------------------------------

@dataclass
class IntegralReport:
    name: str
    max_abs: float
    slope: float
    bound: float | None

    def within_bound(self, rtol: float = 1e-6) -> bool:
        """The bound is attained for equal frequencies, so quadrature error gets a small allowance."""
        return self.bound is None or self.max_abs <= self.bound * (1 + rtol)


def oscillatory_integral_probe(reference: SmallOscillationReference | None = None, t_end: float = 1e4,
                               dt: float = 0.01) -> list[IntegralReport]:
    """Running integrals of the normal-mode products along the small-oscillation reference.

    Phases are ``theta_i = omega_i s - delta_i``; the default reference is
    fitted to the double pendulum's standard initial state. For each product the
    maximum of the running integral and the slope of a line fitted to it
    are reported; products with a closed-form antiderivative also carry its
    bound.
    """
    if reference is None:
        reference = SmallOscillationReference.from_initial((0.0, 0.0), (math.pi / 12, math.pi / 6))
    n = int(math.ceil(t_end / dt))
    s = np.linspace(0.0, t_end, 2 * (n // 2) + 1)
    th = reference.phases(s)
    om = (reference.omega1, reference.omega2)
    ca = np.cos(reference.alpha(s))
    out = []

    def add(name, f, bound):
        F = cumulative_simpson(f, x=s, initial=0.0)
        slope = float(np.polyfit(s, F, 1)[0])
        out.append(IntegralReport(name, float(np.max(np.abs(F))), slope, bound))

    for i in range(2):
        for j in range(2):
            b = 1.0 / (2 * om[i]) if i == j else 1.0 / abs(om[i] - om[j]) + 1.0 / (om[i] + om[j])
            prod = np.cos(th[i]) * np.sin(th[j])
            add(f"cos{i + 1}sin{j + 1}", prod, b)
            add(f"cos{i + 1}sin{j + 1}cos_alpha", prod * ca, None)
        add(f"sin{i + 1}^2", np.sin(th[i]) ** 2, None)
    return out


def small_oscillation_trajectory(reference: SmallOscillationReference, times) -> Trajectory:
    p, q = small_oscillation(times, reference)
    return Trajectory(times, p.T, q.T, method_tag="small_oscillation")
