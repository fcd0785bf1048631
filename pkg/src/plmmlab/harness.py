"""Experiment configuration, figure presets and output bundles."""

from __future__ import annotations

import json
import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field, fields, replace
from pathlib import Path

import numpy as np

from . import __version__
from .drift import TWO_PI, classify_growth, drift_series
from .exceptions import ConfigError, PLMMError
from .expansion import StartExpansion, predict_error, solve_expansion
from .integrator import REFERENCE_TOL, IntegratorConfig, integrate, reference_trajectory
from .lmm import registered_methods
from .plmm import PartitionedMethod, get_pair, pair_from_dict, registered_pairs
from .problems import PartitionedProblem, get_problem, registered_problems


class NumericalFailure(PLMMError):
    """A run produced too little valid data to reach a verdict."""


@dataclass(frozen=True)
class ExperimentConfig:
    """Everything needed to reproduce one run, sweep or expansion check.

    ``pair`` is a registered name or an inline ``{"p": .., "q": ..}``
    definition. Times are absolute; ``period`` is the drift sampling period.
    ``initial_window`` (a time) adds a second verdict on the early part of
    the run, sampled every ``initial_period``.
    """

    problem: str = "double_pendulum"
    pair: str | dict = "plmm2"
    h: float = 0.01
    t_end: float = 100 * TWO_PI
    start_mode: str = "exact_reference"
    period: float = TWO_PI
    output_dir: str = "plmm-out"
    seed: int = 0
    epsilon: float = 1.0
    preset: str | None = None
    p0: tuple | None = None
    q0: tuple | None = None
    initial_window: float | None = None
    initial_period: float | None = None
    hs: tuple = (0.02, 0.01, 0.005)
    pairs: tuple = ()
    workers: int = 1
    h_ref: float = 1e-3
    t_check: float = 5.0

    @classmethod
    def from_dict(cls, data: dict) -> "ExperimentConfig":
        if not isinstance(data, dict):
            raise ConfigError("configuration must be a JSON object")
        names = {f.name for f in fields(cls)}
        unknown = sorted(set(data) - names)
        if unknown:
            raise ConfigError(f"unknown configuration keys: {unknown}")
        data = dict(data)
        if data.get("preset"):
            base = preset_config(data["preset"])
            data = {**{k: v for k, v in asdict(base).items()}, **data}
        for key in ("hs", "pairs", "p0", "q0"):
            if data.get(key) is not None:
                data[key] = tuple(data[key])
        try:
            cfg = cls(**data)
        except TypeError as exc:
            raise ConfigError(str(exc)) from None
        cfg.validate()
        return cfg

    @classmethod
    def from_json(cls, path) -> "ExperimentConfig":
        try:
            data = json.loads(Path(path).read_text())
        except (OSError, json.JSONDecodeError) as exc:
            raise ConfigError(f"cannot read {path}: {exc}") from None
        return cls.from_dict(data)

    def validate(self) -> None:
        for name in ("h", "t_end", "period", "h_ref", "t_check"):
            v = getattr(self, name)
            if not isinstance(v, (int, float)) or not v > 0:
                raise ConfigError(f"{name} must be a positive number, got {v!r}")
        if self.start_mode not in ("exact_reference", "order_r_perturbed"):
            raise ConfigError(f"unknown start_mode {self.start_mode!r}")
        if self.problem not in registered_problems():
            raise ConfigError(f"unknown problem {self.problem!r}; known: {registered_problems()}")
        self.resolve_pair()
        for h in self.hs:
            if not h > 0:
                raise ConfigError("hs must be positive")
        if self.workers < 1:
            raise ConfigError("workers must be >= 1")

    def resolve_pair(self, pair=None) -> PartitionedMethod:
        pair = self.pair if pair is None else pair
        try:
            if isinstance(pair, dict):
                return pair_from_dict(pair)
            return get_pair(pair)
        except (KeyError, ValueError, TypeError) as exc:
            raise ConfigError(f"cannot resolve pair {pair!r}: {exc}") from None

    def resolve_problem(self) -> PartitionedProblem:
        return get_problem(self.problem, self.p0, self.q0)

    def to_dict(self) -> dict:
        d = asdict(self)
        for key in ("hs", "pairs", "p0", "q0"):
            if d[key] is not None:
                d[key] = list(d[key])
        return d


@dataclass(frozen=True)
class FigurePreset:
    """A figure-style experiment: method pair, horizon, sampling and expected class."""

    name: str
    pair: str
    periods: int
    samples_per_period: int = 1
    expected: str = "bounded"
    initial_periods: int | None = None
    initial_samples_per_period: int = 16
    initial_expected: str | None = None
    problem: str = "double_pendulum"
    p0: tuple = (0.0, 0.0)
    q0: tuple = (math.pi / 12, math.pi / 6)
    h: float = 0.01

    def config(self, h: float | None = None, t_end: float | None = None, output_dir: str | None = None):
        t_end = self.periods * TWO_PI if t_end is None else t_end
        init = None if self.initial_periods is None else self.initial_periods * TWO_PI
        return ExperimentConfig(
            problem=self.problem,
            pair=self.pair,
            h=self.h if h is None else h,
            t_end=t_end,
            period=TWO_PI / self.samples_per_period,
            output_dir=output_dir or f"plmm-out/{self.name}",
            preset=self.name,
            p0=self.p0,
            q0=self.q0,
            initial_window=init,
            initial_period=None if init is None else TWO_PI / self.initial_samples_per_period,
        )


PRESETS = {
    "fig1": FigurePreset("fig1", "plmm2", 2000, expected="bounded"),
    "fig2": FigurePreset("fig2", "lmm2", 26, samples_per_period=16, expected="exponential"),
    "fig3": FigurePreset("fig3", "adams3", 2000, expected="linear"),
    "fig4": FigurePreset("fig4", "sim_nosim", 5000, expected="linear", initial_periods=5,
                         initial_expected="bounded"),
}


def preset_config(name: str, h: float | None = None, t_end: float | None = None,
                  output_dir: str | None = None) -> ExperimentConfig:
    try:
        preset = PRESETS[name]
    except KeyError:
        raise ConfigError(f"unknown preset {name!r}; known: {sorted(PRESETS)}") from None
    return preset.config(h, t_end, output_dir)


# runs --------------------------------------------------------------------------

def _sample_levels(t0: float, h: float, n_steps: int, period: float, t_max: float) -> np.ndarray:
    n = int(math.floor((t_max - t0) / period + 1e-9))
    return np.rint(np.arange(n + 1) * period / h).astype(np.int64).clip(0, n_steps)


def _manifest(config: ExperimentConfig, pair: PartitionedMethod, extra: dict | None = None) -> dict:
    out = {
        "package_version": __version__,
        "config": config.to_dict(),
        "pair": {"name": pair.name, "p": pair.p.to_dict(), "q": pair.q.to_dict()},
        "registries": {"pairs": registered_pairs(), "methods": registered_methods(),
                       "problems": registered_problems()},
        "tolerances": {"reference_rtol": REFERENCE_TOL, "reference_atol": REFERENCE_TOL,
                       "newton_tol": 1e-12},
        "artifact_choices": "step size and horizons of figure presets are desk-scale choices",
    }
    if extra:
        out.update(extra)
    return out


def _write_json(path: Path, data) -> None:
    path.write_text(json.dumps(data, indent=2, sort_keys=True, default=_json_default) + "\n")


def _json_default(o):
    if isinstance(o, (np.floating, np.integer)):
        return o.item()
    if isinstance(o, np.ndarray):
        return o.tolist()
    if isinstance(o, complex):
        return [o.real, o.imag]
    raise TypeError(f"not serializable: {type(o)}")


GNUPLOT = """set terminal pngcairo size 900,600
set output '{name}.png'
set xlabel 't'
set ylabel 'H(p_n, q_n) - H(p_0, q_0)'
set title '{title}'
set format y '%.1e'
set datafile separator ','
plot 'drift.csv' using 1:2 every ::1 with lines title '{pair}, h = {h}'
"""


@dataclass
class RunResult:
    directory: Path
    verdict: dict
    files: list = field(default_factory=list)


def run(config: ExperimentConfig) -> RunResult:
    """Integrate, sample the invariant drift, classify it and write the bundle.

    Files: ``trajectory.csv`` (sampled states), ``drift.csv``,
    ``verdict.json``, ``plot.gp`` and ``manifest.json``.
    """
    config.validate()
    problem = config.resolve_problem()
    pair = config.resolve_pair()
    out = Path(config.output_dir)
    out.mkdir(parents=True, exist_ok=True)
    n_steps = int(round((config.t_end - problem.t0) / config.h))
    levels = _sample_levels(problem.t0, config.h, n_steps, config.period, config.t_end)
    if config.initial_window is not None:
        early = _sample_levels(problem.t0, config.h, n_steps, config.initial_period or config.period,
                               min(config.initial_window, config.t_end))
        levels = np.union1d(levels, early)
    icfg = IntegratorConfig(h=config.h, n_steps=n_steps, start_mode=config.start_mode, epsilon=config.epsilon,
                            seed=config.seed, record=tuple(int(x) for x in levels))
    traj = integrate(problem, pair, icfg)
    inv = problem.invariant()
    coarse = np.isin(traj.levels, _sample_levels(problem.t0, config.h, n_steps, config.period, config.t_end))
    main = _subset(traj, coarse)
    series = drift_series(main, inv, config.period)
    if len(series) < 50:
        raise NumericalFailure(f"only {len(series)} valid drift samples (non-finite at level "
                               f"{traj.nonfinite_level})" if traj.nonfinite else
                               f"only {len(series)} drift samples; lengthen t_end or shorten period")
    verdict = {"label": classify_growth(series).to_dict(), "nonfinite": traj.nonfinite,
               "nonfinite_level": traj.nonfinite_level, "samples": len(series)}
    files = []
    if config.initial_window is not None:
        per = config.initial_period or config.period
        early_series = drift_series(traj, inv, per, t_end=config.initial_window)
        if len(early_series) < 50:
            raise NumericalFailure(f"initial window holds only {len(early_series)} drift samples")
        verdict["initial_window"] = {"t_max": config.initial_window, "period": per,
                                     **classify_growth(early_series).to_dict()}
        early_series.to_csv(out / "drift_initial.csv")
        files.append("drift_initial.csv")
    if config.preset in PRESETS:
        p = PRESETS[config.preset]
        verdict["expected"] = p.expected
        if p.initial_expected:
            verdict["initial_expected"] = p.initial_expected
    main.to_csv(out / "trajectory.csv")
    series.to_csv(out / "drift.csv")
    _write_json(out / "verdict.json", verdict)
    (out / "plot.gp").write_text(GNUPLOT.format(name=config.preset or "drift", pair=pair.name or "pair",
                                                h=config.h, title=f"{problem.name} invariant error"))
    _write_json(out / "manifest.json", _manifest(config, pair))
    files += ["trajectory.csv", "drift.csv", "verdict.json", "plot.gp", "manifest.json"]
    return RunResult(out, verdict, files)


def _subset(traj, mask):
    from .integrator import Trajectory

    return Trajectory(traj.times[mask], traj.p[mask], traj.q[mask], traj.levels[mask], traj.method_tag,
                      traj.problem_tag, traj.h, traj.nonfinite, traj.nonfinite_level)


# sweeps ----------------------------------------------------------------------------

def _sweep_job(args):
    config, pair_spec, h, subdir = args
    problem = config.resolve_problem()
    pair = config.resolve_pair(pair_spec)
    n_steps = int(round((config.t_end - problem.t0) / h))
    icfg = IntegratorConfig(h=h, n_steps=n_steps, start_mode=config.start_mode, epsilon=config.epsilon,
                            seed=config.seed, record=(n_steps,))
    traj = integrate(problem, pair, icfg)
    if traj.nonfinite or len(traj) == 0:
        raise NumericalFailure(f"{pair.name} at h={h} produced non-finite values")
    ref = reference_trajectory(problem, traj.times[-1], traj.times)
    err = float(np.max(np.abs(traj.states[-1] - ref.states[-1])))
    row = {"pair": pair.name, "h": h, "t": float(traj.times[-1]), "error": err}
    subdir.mkdir(parents=True, exist_ok=True)
    _write_json(subdir / "result.json", row)
    return row


def observed_orders(hs, errors) -> list:
    """``log(e_i / e_{i+1}) / log(h_i / h_{i+1})``; ``"exact"`` when both errors vanish."""
    out = []
    for (h1, e1), (h2, e2) in zip(zip(hs, errors), zip(hs[1:], errors[1:])):
        if e1 == 0 and e2 == 0:
            out.append("exact")
        elif e1 == 0 or e2 == 0:
            out.append(None)
        else:
            out.append(math.log(e1 / e2) / math.log(h1 / h2))
    return out


def sweep(config: ExperimentConfig) -> dict:
    """Global error at ``t_end`` for each (pair, h) and the observed orders."""
    config.validate()
    if len(config.hs) < 2:
        raise ConfigError("a sweep needs at least two step sizes")
    pairs = list(config.pairs) or [config.pair]
    out = Path(config.output_dir)
    names = [config.resolve_pair(ps).name or f"inline{i}" for i, ps in enumerate(pairs)]
    jobs = [(config, ps, h, out / f"{name}_h{h:g}") for ps, name in zip(pairs, names) for h in config.hs]
    if config.workers > 1:
        with ProcessPoolExecutor(max_workers=config.workers) as pool:
            rows = list(pool.map(_sweep_job, jobs))
    else:
        rows = [_sweep_job(j) for j in jobs]
    table = []
    for i, (ps, name) in enumerate(zip(pairs, names)):
        sel = rows[i * len(config.hs): (i + 1) * len(config.hs)]
        hs = [r["h"] for r in sel]
        errs = [r["error"] for r in sel]
        table.append({"pair": name, "hs": hs, "errors": errs, "orders": observed_orders(hs, errs),
                      "nominal_order": config.resolve_pair(ps).order})
    result = {"problem": config.problem, "t_end": config.t_end, "table": table}
    out.mkdir(parents=True, exist_ok=True)
    with (out / "convergence.csv").open("w") as fh:
        fh.write("pair,h,error,observed_order\n")
        for row in table:
            for i, (h, e) in enumerate(zip(row["hs"], row["errors"])):
                o = "" if i == 0 else row["orders"][i - 1]
                fh.write(f"{row['pair']},{h!r},{e!r},{o if isinstance(o, str) or o is None else repr(o)}\n")
    _write_json(out / "convergence.json", result)
    _write_json(out / "manifest.json", _manifest(config, config.resolve_pair()))
    return result


# expansion check ---------------------------------------------------------------------

def expansion_check(config: ExperimentConfig, n_levels: int = 8) -> dict:
    """Compare actual errors near ``t_check`` with the assembled expansion."""
    config.validate()
    problem = config.resolve_problem()
    pair = config.resolve_pair()
    rows = []
    cs = None
    out = Path(config.output_dir)
    out.mkdir(parents=True, exist_ok=True)
    for h in config.hs:
        n_steps = int(round((config.t_check - problem.t0) / h))
        icfg = IntegratorConfig(h=h, n_steps=n_steps, start_mode=config.start_mode, epsilon=config.epsilon,
                                seed=config.seed, stride=1)
        start = StartExpansion.from_config(pair, problem, icfg)
        if cs is None or not start.is_exact:
            cs = solve_expansion(problem, pair, config.t_check, start, config.h_ref)
        traj = integrate(problem, pair, icfg)
        if traj.nonfinite:
            raise NumericalFailure(f"non-finite values at h={h}")
        sel = slice(len(traj) - n_levels, len(traj))
        ref = reference_trajectory(problem, traj.times[-1], traj.times[sel])
        ep, eq = predict_error(cs, h, traj.levels[sel])
        actual = np.hstack([traj.p[sel] - ref.p, traj.q[sel] - ref.q])
        predicted = np.hstack([ep, eq])
        resid = actual - predicted
        header = ["t"] + [f"actual_{c}" for c in traj.header()[1:]] + [f"predicted_{c}" for c in traj.header()[1:]]
        np.savetxt(out / f"errors_h{h:g}.csv", np.column_stack([traj.times[sel], actual, predicted]),
                   delimiter=",", header=",".join(header), comments="", fmt="%.17g")
        rows.append({"h": h, "max_error": float(np.max(np.abs(actual))),
                     "max_residual": float(np.max(np.abs(resid)))})
    orders = observed_orders([r["h"] for r in rows], [r["max_residual"] for r in rows])
    r = pair.order
    annihilation = {}
    for c in cs.parasitic():
        annihilation[f"{c.spec.kind}@{c.spec.root:.6g}"] = float(
            max(np.max(np.abs(c.p[r])), np.max(np.abs(c.q[r]))))
    result = {"pair": pair.name, "problem": problem.name, "t_check": config.t_check,
              "start_mode": config.start_mode, "rows": rows, "residual_orders": orders,
              "expected_residual_order": min(2 * r, r + 2), "order_r_parasitic_max": annihilation}
    _write_coefficients(out / "coefficients.csv", cs)
    _write_json(out / "expansion.json", result)
    _write_json(out / "manifest.json", _manifest(config, pair))
    return result


def _write_coefficients(path: Path, cs, stride: int = 10) -> None:
    """Coefficient functions on every ``stride``-th grid point, real and imaginary parts."""
    cols, names = [cs.times[::stride]], ["t"]
    for c in cs.classes:
        tag = f"{c.spec.kind}[{c.spec.root.real:+.6g}{c.spec.root.imag:+.6g}j]"
        for J in c.spec.orders:
            for side, store in (("p", c.p), ("q", c.q)):
                vals = store[J][::stride]
                for i in range(vals.shape[1]):
                    cols += [vals[:, i].real, vals[:, i].imag]
                    names += [f"{tag}.e{J}.{side}{i + 1}.re", f"{tag}.e{J}.{side}{i + 1}.im"]
    np.savetxt(path, np.column_stack(cols), delimiter=",", header=",".join(names), comments="", fmt="%.17g")


def run_preset(name: str, h: float | None = None, t_end: float | None = None,
               output_dir: str | None = None) -> RunResult:
    return run(preset_config(name, h, t_end, output_dir))


def with_output(config: ExperimentConfig, output_dir) -> ExperimentConfig:
    return replace(config, output_dir=str(output_dir))
