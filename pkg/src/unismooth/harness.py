"""Simulation, noise, error metrics, sensor layouts and tuning sweeps for
the eight-storey shear-frame experiments.

Sample convention used throughout: row ``k-1`` of any time series holds
step ``k`` (1-based) at time ``t_k = k * dt``; the input sample ``p_k``
acts over ``(t_{k-1}, t_k]`` and is what enters the state update for ``x_k``.
"""

from __future__ import annotations

import csv
import json
import math
from dataclasses import asdict, dataclass, field
from itertools import product
from pathlib import Path
from typing import Callable, Iterable, Mapping, Sequence

import numpy as np
import scipy.linalg as la
from scipy import signal

from .akf import akf_run, augment
from .discretization import (DiscreteStateSpace, SensorConfig, build_discrete_system,
                             physical_output_matrix)
from .smoother import EstimateTrace, SmootherConfig, SmootherError
from .smoother import run as smoother_run
from .structural import (ReducedModel, SecondOrderModel, build_shear_frame,
                         ground_motion_model, modal_reduce)

# eight-storey frame used by every bundled experiment
FRAME_FLOORS = 8
FRAME_MASS = 625e3      # kg per floor
FRAME_STIFFNESS = 1e9   # N/m per storey
FRAME_RAYLEIGH = (0.01, 0.01)
SAMPLE_DT = 0.01

_SENSOR_TABLE = {
    "1.1": [("disp", 1), ("disp", 3), ("disp", 5), ("disp", 7), ("vel", 1)],
    "1.2": [("disp", 1), ("disp", 3), ("disp", 5), ("disp", 7), ("acc", 1)],
    "2.1": [("disp", 3), ("disp", 5), ("disp", 7), ("vel", 1)],
    "2.2": [("disp", 1), ("disp", 3), ("disp", 5), ("disp", 7)],
    "2.3": [("disp", 3), ("disp", 5), ("disp", 7), ("acc", 1)],
    "2.4": [("vel", 4), ("acc", 1)],
    # two inputs (floors 2 and 5) observed through a single accelerometer
    "rank-deficient-demo": [("disp", 1), ("disp", 3), ("disp", 5), ("disp", 7), ("acc", 1)],
}
RANK_DEFICIENT_INPUT_FLOORS = (2, 5)
RANK_DEFICIENT_MODES = 3


class HarnessError(RuntimeError):
    pass


def sensor_configuration(name: str) -> SensorConfig:
    """Named sensor layout of the shear-frame experiments."""
    try:
        return SensorConfig(_SENSOR_TABLE[str(name)])
    except KeyError:
        raise ValueError(f"unknown sensor configuration {name!r}; "
                         f"known: {', '.join(_SENSOR_TABLE)}") from None


def sensor_configuration_names() -> list[str]:
    return list(_SENSOR_TABLE)


def shear_frame(input_floors: Sequence[int] = (2,), ground_motion: bool = False
                ) -> SecondOrderModel:
    alpha, beta = FRAME_RAYLEIGH
    model = build_shear_frame(FRAME_FLOORS, FRAME_MASS, FRAME_STIFFNESS, alpha, beta,
                              input_floors=input_floors)
    return ground_motion_model(model) if ground_motion else model


# ---------------------------------------------------------------- excitation

@dataclass(frozen=True)
class ExcitationSignal:
    kind: str            # sinusoid | synthetic-ground-motion | sampled-series
    samples: np.ndarray  # T x m; N for forces, m/s^2 for ground acceleration
    dt: float

    def __post_init__(self):
        s = np.asarray(self.samples, dtype=float)
        if s.ndim == 1:
            s = s[:, None]
        if s.ndim != 2 or s.shape[0] == 0:
            raise ValueError("excitation samples must be a non-empty T x m array")
        if not np.all(np.isfinite(s)):
            raise ValueError("excitation contains non-finite samples")
        if not self.dt > 0:
            raise ValueError("dt must be positive")
        object.__setattr__(self, "samples", s)

    @property
    def length(self) -> int:
        return self.samples.shape[0]

    @property
    def times(self) -> np.ndarray:
        return self.dt * np.arange(1, self.length + 1)


def sinusoid(amplitude, omega, duration: float, dt: float = SAMPLE_DT,
             phase=0.0) -> ExcitationSignal:
    """``amplitude * sin(omega t + phase)`` sampled at ``t_k = k dt``.

    Vector arguments give one column per input.
    """
    amp, om, ph = np.broadcast_arrays(np.atleast_1d(amplitude).astype(float),
                                      np.atleast_1d(omega).astype(float),
                                      np.atleast_1d(phase).astype(float))
    T = int(round(duration / dt))
    if T < 1:
        raise ValueError("duration shorter than one sample")
    t = dt * np.arange(1, T + 1)
    return ExcitationSignal("sinusoid", amp * np.sin(np.outer(t, om) + ph), dt)


def synthetic_ground_motion(duration: float = 45.0, dt: float = SAMPLE_DT, seed: int = 1999,
                            peak: float = 3.0, band: tuple[float, float] = (0.2, 8.0),
                            envelope: tuple[float, float, float] = (3.0, 15.0, 35.0)
                            ) -> ExcitationSignal:
    """Band-limited Gaussian noise under a trapezoidal envelope.

    ``band`` is the pass band in Hz (4th-order zero-phase Butterworth);
    ``envelope`` gives the end of the rise, the end of the plateau and the
    end of the decay in seconds. The record is scaled to ``peak`` m/s^2.
    """
    T = int(round(duration / dt))
    rng = np.random.default_rng(seed)
    white = rng.standard_normal(T + 400)
    sos = signal.butter(4, band, btype="bandpass", fs=1.0 / dt, output="sos")
    acc = signal.sosfiltfilt(sos, white)[200:200 + T]
    t = dt * np.arange(1, T + 1)
    rise, hold, stop = envelope
    env = np.interp(t, [0.0, rise, hold, stop, max(stop, t[-1]) + dt], [0.0, 1.0, 1.0, 0.0, 0.0])
    acc = acc * env
    acc *= peak / np.abs(acc).max()
    return ExcitationSignal("synthetic-ground-motion", acc[:, None], dt)


def read_excitation(path, dt_tol: float = 1e-6) -> ExcitationSignal:
    """Plain text columns: time, then one value column per input."""
    data = np.loadtxt(path, ndmin=2, delimiter=None if not str(path).endswith(".csv") else ",")
    if data.shape[1] < 2:
        raise ValueError(f"{path}: expected a time column plus at least one value column")
    t = data[:, 0]
    steps = np.diff(t)
    if steps.size == 0 or np.any(steps <= 0):
        raise ValueError(f"{path}: time column must be strictly increasing")
    dt = float(np.median(steps))
    if np.abs(steps - dt).max() > dt_tol * max(1.0, dt) + 1e-9 * dt:
        raise ValueError(f"{path}: time column is not uniformly sampled")
    return ExcitationSignal("sampled-series", data[:, 1:], dt)


def write_excitation(path, excitation: ExcitationSignal) -> None:
    data = np.column_stack([excitation.times, excitation.samples])
    np.savetxt(path, data, fmt="%.12g")


# ---------------------------------------------------------------- simulation

@dataclass(frozen=True)
class TruthTrace:
    steps: np.ndarray    # 1..T
    states: np.ndarray   # T x n
    outputs: np.ndarray  # T x d, noise free
    inputs: np.ndarray   # T x m
    dt: float

    @property
    def times(self):
        return self.steps * self.dt


def simulate_response(system: DiscreteStateSpace, excitation: ExcitationSignal,
                      x0=None) -> TruthTrace:
    """Noise-free ``x_k = A x_{k-1} + G p_k``, ``y_k = C x_k + H p_k``."""
    if abs(excitation.dt - system.dt) > 1e-12 * system.dt:
        raise ValueError(f"excitation dt={excitation.dt} differs from model dt={system.dt}")
    P = excitation.samples
    if P.shape[1] != system.m:
        raise ValueError(f"excitation has {P.shape[1]} inputs, model has {system.m}")
    T = P.shape[0]
    x = np.zeros(system.n) if x0 is None else np.asarray(x0, float).reshape(-1)
    X = np.empty((T, system.n))
    GP = P @ system.G.T
    for i in range(T):
        x = system.A @ x + GP[i]
        X[i] = x
    if not np.all(np.isfinite(X)):
        bad = int(np.argmax(~np.all(np.isfinite(X), axis=1))) + 1
        raise HarnessError(f"simulated response became non-finite at step k={bad}")
    Y = X @ system.C.T + P @ system.H.T
    return TruthTrace(np.arange(1, T + 1), X, Y, P.copy(), system.dt)


@dataclass(frozen=True)
class NoiseSpec:
    level: float  # fraction of each channel's RMS
    seed: int = 0

    def __post_init__(self):
        if not self.level >= 0:
            raise ValueError("noise level must be non-negative")


def noise_std(outputs, level: float) -> np.ndarray:
    return level * np.sqrt(np.mean(np.asarray(outputs, float) ** 2, axis=0))


def add_noise(outputs, spec: NoiseSpec) -> np.ndarray:
    """Per-channel white Gaussian noise with std ``level * RMS(channel)``."""
    Y = np.asarray(outputs, dtype=float)
    std = noise_std(Y, spec.level)
    if spec.level == 0:
        return Y.copy()
    rng = np.random.default_rng(spec.seed)
    return Y + rng.standard_normal(Y.shape) * std


# ------------------------------------------------------------------- metrics

@dataclass(frozen=True)
class ResponseHistory:
    """Physical displacement/velocity of every DOF and the inputs."""

    steps: np.ndarray
    displacement: np.ndarray  # T x f
    velocity: np.ndarray      # T x f
    inputs: np.ndarray        # T x m


def physical_history(steps, states, inputs, reduced: ReducedModel) -> ResponseHistory:
    D = physical_output_matrix(reduced, "displacement")
    V = physical_output_matrix(reduced, "velocity")
    states = np.asarray(states, float)
    return ResponseHistory(np.asarray(steps), states @ D.T, states @ V.T,
                           np.asarray(inputs, float))


@dataclass(frozen=True)
class MetricsReport:
    displacement: float
    velocity: float
    input: float
    overall: float
    per_channel: dict = field(default_factory=dict)
    steps: tuple[int, int] | None = None

    def to_dict(self) -> dict:
        return asdict(self)


def _channel_error(est, true, label):
    peak = np.abs(true).max(axis=0)
    if np.any(peak == 0):
        j = int(np.argmax(peak == 0))
        raise ValueError(f"channel {label}{j + 1} has zero peak true value")
    rms = np.sqrt(np.mean((est - true) ** 2, axis=0))
    return rms / peak


def dimensionless_error(estimate: ResponseHistory, truth: ResponseHistory,
                        last_step: int | None = None) -> MetricsReport:
    """Sum over channels of ``RMS(est - true) / max|true|`` on shared steps."""
    common, ie, it = np.intersect1d(estimate.steps, truth.steps, return_indices=True)
    if last_step is not None:
        keep = common <= last_step
        common, ie, it = common[keep], ie[keep], it[keep]
    if common.size == 0:
        raise ValueError("estimate and truth share no steps")
    du = _channel_error(estimate.displacement[ie], truth.displacement[it], "disp_F")
    dv = _channel_error(estimate.velocity[ie], truth.velocity[it], "vel_F")
    dp = _channel_error(estimate.inputs[ie], truth.inputs[it], "input_")
    per = {f"disp_F{i + 1}": float(x) for i, x in enumerate(du)}
    per.update({f"vel_F{i + 1}": float(x) for i, x in enumerate(dv)})
    per.update({f"input_{i + 1}": float(x) for i, x in enumerate(dp)})
    su, sv, sp = float(du.sum()), float(dv.sum()), float(dp.sum())
    return MetricsReport(su, sv, sp, su + sv + sp, per, (int(common[0]), int(common[-1])))


# ----------------------------------------------------------------- scenarios

@dataclass
class Scenario:
    """Truth simulation plus noisy observations for one experiment.

    ``truth_model`` generates the data; ``estimator_model`` (possibly a
    reduced basis) is what the estimators see. ``R`` is always the
    covariance of the added noise.
    """

    name: str
    sensors: SensorConfig
    excitation: ExcitationSignal
    noise: NoiseSpec
    truth_model: ReducedModel
    estimator_model: ReducedModel
    truth: TruthTrace | None  # None when rebuilt from stored data
    observations: np.ndarray
    noise_std: np.ndarray
    truth_history: ResponseHistory

    @property
    def dt(self):
        return self.excitation.dt

    @property
    def length(self):
        return self.observations.shape[0]

    def estimator_system(self, Qx: float = 0.0) -> DiscreteStateSpace:
        n = 2 * self.estimator_model.mode_count
        return build_discrete_system(self.estimator_model, self.sensors, self.dt,
                                     Q=Qx * np.eye(n), R=np.diag(self.noise_std ** 2))

    def run_us(self, window: int, Qx: float = 0.0, pinv_tolerance: float | None = None,
               gain_truncation_tolerance: float = 1e-12) -> EstimateTrace:
        cfg = SmootherConfig(window=window, pinv_enabled=pinv_tolerance is not None,
                             pinv_tolerance=pinv_tolerance if pinv_tolerance is not None else 1e-10,
                             gain_truncation_tolerance=gain_truncation_tolerance)
        return smoother_run(self.estimator_system(Qx), self.observations, cfg)

    def run_akf(self, Qx: float, Qp: float, input_coupling: bool = True) -> EstimateTrace:
        aug = augment(self.estimator_system(Qx), Qx, Qp, input_coupling)
        return akf_run(aug, self.observations)

    def history(self, trace: EstimateTrace) -> ResponseHistory:
        return physical_history(trace.steps, trace.x_hat, trace.p_hat, self.estimator_model)

    def evaluate(self, trace: EstimateTrace, last_step: int | None = None) -> MetricsReport:
        return dimensionless_error(self.history(trace), self.truth_history, last_step)


def build_scenario(name: str, model: SecondOrderModel, sensors: SensorConfig,
                   excitation: ExcitationSignal, noise: NoiseSpec,
                   truth_modes: int | None = None, estimator_modes: int | None = None,
                   observations=None) -> Scenario:
    """Simulate the truth with ``truth_modes`` (default: all) and add noise."""
    f = model.dof_count
    truth_model = modal_reduce(model, truth_modes or f)
    est_model = truth_model if (estimator_modes or f) == (truth_modes or f) \
        else modal_reduce(model, estimator_modes or f)
    truth_sys = build_discrete_system(truth_model, sensors, excitation.dt)
    truth = simulate_response(truth_sys, excitation)
    std = noise_std(truth.outputs, noise.level)
    Y = add_noise(truth.outputs, noise) if observations is None else np.asarray(observations, float)
    if Y.shape != truth.outputs.shape:
        raise ValueError(f"observations have shape {Y.shape}, expected {truth.outputs.shape}")
    hist = physical_history(truth.steps, truth.states, truth.inputs, truth_model)
    return Scenario(name, sensors, excitation, noise, truth_model, est_model, truth, Y, std, hist)


def sinusoid_scenario(config: str = "1.1", noise_level: float = 0.01, seed: int = 0,
                      duration: float = 25.0) -> Scenario:
    """5 kN sin(8t) on floor 2, full-order truth and estimator."""
    exc = sinusoid(5e3, 8.0, duration)
    return build_scenario(f"sinusoid-{config}", shear_frame((2,)), sensor_configuration(config),
                          exc, NoiseSpec(noise_level, seed))


def ground_motion_scenario(config: str = "2.3", noise_level: float = 0.05, seed: int = 0,
                           estimator_modes: int = 3, record_seed: int = 1999,
                           duration: float = 45.0) -> Scenario:
    """Synthetic ground motion, full-order truth, reduced estimator."""
    exc = synthetic_ground_motion(duration, seed=record_seed)
    return build_scenario(f"ground-motion-{config}", shear_frame((1,), ground_motion=True),
                          sensor_configuration(config), exc, NoiseSpec(noise_level, seed),
                          estimator_modes=estimator_modes)


def rank_deficient_scenario(noise_level: float = 0.01, seed: int = 0,
                            duration: float = 25.0, modes: int = RANK_DEFICIENT_MODES) -> Scenario:
    """Two sinusoidal loads (floors 2 and 5) seen by one accelerometer.

    Truth and estimator share an r-mode basis. With lumped masses the
    full-order F1 acceleration has no instantaneous path from loads on
    floors 2 and 5 (H = 0); the truncated basis gives ``rank(H) = 1 < 2``.
    """
    exc = sinusoid([5e3, 3e3], [8.0, 13.0], duration, phase=[0.0, 0.5])
    return build_scenario("rank-deficient-demo", shear_frame(RANK_DEFICIENT_INPUT_FLOORS),
                          sensor_configuration("rank-deficient-demo"), exc,
                          NoiseSpec(noise_level, seed), truth_modes=modes, estimator_modes=modes)


# -------------------------------------------------------------------- tuning

@dataclass(frozen=True)
class GridSearchSpec:
    name: str
    lo: float          # log10 bounds
    hi: float
    step: float = 0.1

    def __post_init__(self):
        if not self.lo < self.hi:
            raise ValueError(f"grid for {self.name}: lo={self.lo} must be below hi={self.hi}")
        if not self.step > 0:
            raise ValueError(f"grid for {self.name}: step must be positive")

    def exponents(self) -> np.ndarray:
        count = int(math.floor((self.hi - self.lo) / self.step + 1e-9)) + 1
        return np.round(self.lo + self.step * np.arange(count), 10)


@dataclass
class GridSearchResult:
    names: list[str]
    exponents: list[np.ndarray]   # log10 axis per parameter
    surface: np.ndarray           # objective; NaN where the run failed
    best: dict                    # parameter -> value (not log10)
    best_value: float
    failures: int

    def rows(self):
        """(log10 params..., value) per grid point in grid order."""
        for idx in product(*(range(len(e)) for e in self.exponents)):
            yield tuple(float(self.exponents[a][i]) for a, i in enumerate(idx)) + \
                (float(self.surface[idx]),)


_EXPECTED_FAILURES = (SmootherError, la.LinAlgError, np.linalg.LinAlgError, ValueError,
                      FloatingPointError, OverflowError)


def _evaluate_point(runner, names, exps):
    params = {n: 10.0 ** e for n, e in zip(names, exps)}
    try:
        with np.errstate(over="raise", invalid="raise"):
            value = float(runner(**params))
    except _EXPECTED_FAILURES:
        return math.nan
    return value if math.isfinite(value) else math.nan


class _PointEval:
    def __init__(self, runner, names):
        self.runner, self.names = runner, names

    def __call__(self, exps):
        return _evaluate_point(self.runner, self.names, exps)


def grid_search(runner: Callable[..., float], specs: Sequence[GridSearchSpec],
                executor=None) -> GridSearchResult:
    """Exhaustive log-grid search minimizing ``runner(**params)``.

    Failed or non-finite points are recorded as NaN. Ties go to the point
    with smaller parameters (grid order is ascending). ``executor`` is any
    object with an order-preserving ``map`` (e.g. a process pool).
    """
    specs = list(specs)
    if not 1 <= len(specs) <= 2:
        raise ValueError("grid_search supports one or two joint parameters")
    names = [s.name for s in specs]
    if len(set(names)) != len(names):
        raise ValueError("duplicate parameter names")
    axes = [s.exponents() for s in specs]
    points = list(product(*axes))
    fn = _PointEval(runner, names)
    values = list(executor.map(fn, points)) if executor is not None else [fn(p) for p in points]
    surface = np.array(values, dtype=float).reshape([len(a) for a in axes])
    finite = np.isfinite(surface)
    if not finite.any():
        raise HarnessError("every grid point failed")
    flat = np.where(finite.ravel(), surface.ravel(), np.inf)
    best_idx = int(np.argmin(flat))  # first minimum in ascending grid order
    best = {n: 10.0 ** float(e) for n, e in zip(names, points[best_idx])}
    return GridSearchResult(names, axes, surface, best, float(flat[best_idx]),
                            int((~finite).sum()))


@dataclass(frozen=True)
class SweepRow:
    window: int
    value: float
    tuned: bool
    params: dict = field(default_factory=dict)


def window_sweep(runner: Callable[[int], float | tuple], windows: Iterable[int],
                 total_steps: int | None = None, tuned: bool = False) -> list[SweepRow]:
    """Evaluate ``runner(N)`` per window; it may return ``(value, params)``."""
    rows = []
    for N in windows:
        N = int(N)
        if N < 0 or (total_steps is not None and N > total_steps - 1):
            raise ValueError(f"window N={N} outside 0..{'T-1' if total_steps is None else total_steps - 1}")
        out = runner(N)
        value, params = (out if isinstance(out, tuple) else (out, {}))
        rows.append(SweepRow(N, float(value), tuned, dict(params)))
    return rows


class ScenarioObjective:
    """Picklable ``params -> overall error`` for one scenario and method.

    ``us`` accepts ``qx`` and ``pinv_tolerance``; ``akf`` accepts ``qx`` and
    ``qp``. ``last_step`` restricts the metric to a shared comparison range.
    """

    def __init__(self, scenario: Scenario, method: str, window: int = 0,
                 fixed: Mapping | None = None, last_step: int | None = None):
        if method not in ("us", "akf"):
            raise ValueError(f"unknown method {method!r}")
        self.scenario, self.method, self.window = scenario, method, window
        self.fixed = dict(fixed or {})
        self.last_step = last_step

    def trace(self, **params) -> EstimateTrace:
        p = {**self.fixed, **params}
        unknown = set(p) - ({"qx", "pinv_tolerance"} if self.method == "us" else {"qx", "qp"})
        if unknown:
            raise ValueError(f"unknown {self.method} parameters {sorted(unknown)}")
        if self.method == "us":
            return self.scenario.run_us(self.window, p.get("qx", 0.0), p.get("pinv_tolerance"))
        return self.scenario.run_akf(p.get("qx", 0.0), p.get("qp", 0.0))

    def __call__(self, **params) -> float:
        return self.scenario.evaluate(self.trace(**params), self.last_step).overall


# ----------------------------------------------------------------------- I/O

def write_table_csv(path, columns: Mapping[str, np.ndarray], digits: int = 12) -> None:
    names = list(columns)
    data = np.column_stack([np.asarray(columns[n], float).reshape(len(columns[names[0]]), -1)
                            for n in names])
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(names)
        for row in data:
            w.writerow([f"{v:.{digits}g}" for v in row])


def read_table_csv(path) -> dict[str, np.ndarray]:
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader)
        rows = [[float(v) for v in r] for r in reader if r]
    data = np.array(rows, dtype=float).reshape(-1, len(header))
    return {h: data[:, i] for i, h in enumerate(header)}


def history_columns(history: ResponseHistory, dt: float) -> dict[str, np.ndarray]:
    f = history.displacement.shape[1]
    cols = {"step": history.steps.astype(float), "time": history.steps * dt}
    for i in range(f):
        cols[f"disp_F{i + 1}"] = history.displacement[:, i]
    for i in range(f):
        cols[f"vel_F{i + 1}"] = history.velocity[:, i]
    for j in range(history.inputs.shape[1]):
        cols[f"input_{j + 1}"] = history.inputs[:, j]
    return cols


def history_from_columns(cols: Mapping[str, np.ndarray]) -> ResponseHistory:
    def block(prefix):
        keys = sorted((k for k in cols if k.startswith(prefix)),
                      key=lambda k: int(k[len(prefix):]))
        return np.column_stack([cols[k] for k in keys])
    return ResponseHistory(cols["step"].astype(int), block("disp_F"), block("vel_F"),
                           block("input_"))


def write_json(path, payload) -> None:
    def default(o):
        if isinstance(o, np.ndarray):
            return o.tolist()
        if isinstance(o, (np.floating, np.integer)):
            return o.item()
        raise TypeError(f"not JSON serializable: {type(o).__name__}")
    with open(path, "w") as fh:
        json.dump(payload, fh, indent=2, default=default, allow_nan=True)
        fh.write("\n")


def round_significant(x, digits: int = 12) -> np.ndarray:
    """Values exactly as they come back from a ``digits``-significant CSV."""
    x = np.asarray(x, float)
    return np.vectorize(lambda v: float(f"{v:.{digits}g}"), otypes=[float])(x)


def ensure_dir(path) -> Path:
    p = Path(path)
    p.mkdir(parents=True, exist_ok=True)
    return p
