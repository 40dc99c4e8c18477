"""Command-line front end.

    unismooth simulate       CONFIG   truth + noisy observations
    unismooth estimate       CONFIG --from DIR   estimators on saved data
    unismooth compare        CONFIG   US vs AKF on shared observations
    unismooth tune           CONFIG   grid search from the ``tuning`` block
    unismooth sweep          CONFIG   window sweep from the ``sweep`` block
    unismooth run-experiment CONFIG   simulate + every configured estimator

Exit codes: 0 success, 2 invalid configuration or arguments, 3 estimator
failure, 4 file I/O failure.
"""

from __future__ import annotations

import argparse
import json
import sys
from concurrent.futures import ProcessPoolExecutor
from pathlib import Path

import numpy as np

from . import harness as hz
from .config import ConfigError, ExperimentConfig, load_config
from .discretization import SensorConfig
from .smoother import SmootherError
from .structural import ModelError, build_shear_frame, ground_motion_model, modal_reduce

EXIT_CONFIG, EXIT_ESTIMATOR, EXIT_IO = 2, 3, 4


class CliError(Exception):
    def __init__(self, message, code):
        super().__init__(message)
        self.code = code


# ------------------------------------------------------------ config -> objects

def _model(cfg: ExperimentConfig):
    m = cfg.model
    model = build_shear_frame(m.floors, m.mass, m.stiffness, m.rayleigh_alpha,
                              m.rayleigh_beta, input_floors=m.input_floors)
    return ground_motion_model(model) if m.ground_motion else model


def _sensors(cfg: ExperimentConfig) -> SensorConfig:
    if isinstance(cfg.sensors, str):
        return hz.sensor_configuration(cfg.sensors)
    return SensorConfig([(s.quantity, s.floor) for s in cfg.sensors])


def _excitation(cfg: ExperimentConfig, input_count: int) -> hz.ExcitationSignal:
    e = cfg.excitation
    if e.kind == "sinusoid":
        exc = hz.sinusoid(e.amplitude, e.frequency, e.duration, e.dt, e.phase)
    elif e.kind == "synthetic-ground-motion":
        exc = hz.synthetic_ground_motion(e.duration, e.dt, e.record_seed, e.peak, tuple(e.band))
    else:
        exc = hz.read_excitation(e.path)
        if e.duration is not None:
            T = int(round(e.duration / exc.dt))
            exc = hz.ExcitationSignal(exc.kind, exc.samples[:T], exc.dt)
    if exc.samples.shape[1] == 1 and input_count > 1 and e.kind == "sinusoid":
        exc = hz.ExcitationSignal(exc.kind, np.repeat(exc.samples, input_count, axis=1), exc.dt)
    if exc.samples.shape[1] != input_count:
        raise ValueError(f"excitation has {exc.samples.shape[1]} input columns, "
                         f"model has {input_count} inputs")
    return exc


def build_from_config(cfg: ExperimentConfig, seed: int | None = None) -> hz.Scenario:
    """Simulate the configured experiment; observations are rounded to the
    precision they are stored with so in-memory and file-based runs agree."""
    model = _model(cfg)
    exc = _excitation(cfg, model.input_count)
    noise = hz.NoiseSpec(cfg.noise.level, cfg.noise.seed if seed is None else seed)
    sc = hz.build_scenario(cfg.name, model, _sensors(cfg), exc, noise,
                           cfg.reduction.truth_modes, cfg.reduction.estimator_modes)
    sc.observations = hz.round_significant(sc.observations)
    sc.truth_history = _rounded_history(sc.truth_history)
    return sc


def _rounded_history(h: hz.ResponseHistory) -> hz.ResponseHistory:
    r = hz.round_significant
    return hz.ResponseHistory(h.steps, r(h.displacement), r(h.velocity), r(h.inputs))


def scenario_from_files(cfg: ExperimentConfig, data_dir: Path) -> hz.Scenario:
    """Rebuild the estimation side of a scenario from ``simulate`` output."""
    meta = json.loads((data_dir / "simulation.json").read_text())
    obs = _read_table(data_dir, "observations")
    truth = hz.history_from_columns(_read_table(data_dir, "truth"))
    sensors = _sensors(cfg)
    labels = sensors.labels()
    if labels != meta["sensors"]:
        raise ValueError(f"config sensors {labels} differ from simulated {meta['sensors']}")
    Y = np.column_stack([obs[k] for k in labels])
    model = _model(cfg)
    f = model.dof_count
    truth_modes = cfg.reduction.truth_modes or f
    est_modes = cfg.reduction.estimator_modes or f
    est_model = modal_reduce(model, est_modes)
    dt = float(meta["dt"])
    exc = hz.ExcitationSignal("sampled-series", truth.inputs, dt)
    return hz.Scenario(cfg.name, sensors, exc, hz.NoiseSpec(meta["noise_level"], meta["seed"]),
                       modal_reduce(model, truth_modes), est_model, None, Y,
                       np.asarray(meta["noise_std"], float), truth)


# ------------------------------------------------------------------- output

def _write_table(out: Path, stem: str, columns: dict, fmt: str) -> Path:
    if fmt == "json":
        path = out / f"{stem}.json"
        hz.write_json(path, {k: np.asarray(v).tolist() for k, v in columns.items()})
    else:
        path = out / f"{stem}.csv"
        hz.write_table_csv(path, columns)
    return path


def _read_table(data_dir: Path, stem: str) -> dict:
    csv_path, json_path = data_dir / f"{stem}.csv", data_dir / f"{stem}.json"
    if csv_path.exists():
        return hz.read_table_csv(csv_path)
    if json_path.exists():
        return {k: np.asarray(v, float) for k, v in json.loads(json_path.read_text()).items()}
    raise FileNotFoundError(f"no {stem}.csv or {stem}.json in {data_dir}")


def _estimate_columns(sc: hz.Scenario, trace) -> dict:
    cols = hz.history_columns(sc.history(trace), sc.dt)
    for j in range(trace.p_var.shape[1]):
        cols[f"input_var_{j + 1}"] = trace.p_var[:, j]
    return cols


def _write_simulation(sc: hz.Scenario, out: Path, fmt: str) -> list[Path]:
    obs = {"step": sc.truth_history.steps.astype(float),
           "time": sc.truth_history.steps * sc.dt}
    for j, label in enumerate(sc.sensors.labels()):
        obs[label] = sc.observations[:, j]
    paths = [_write_table(out, "truth", hz.history_columns(sc.truth_history, sc.dt), fmt),
             _write_table(out, "observations", obs, fmt)]
    meta = {"name": sc.name, "dt": sc.dt, "steps": sc.length, "sensors": sc.sensors.labels(),
            "noise_level": sc.noise.level, "seed": sc.noise.seed,
            "noise_std": sc.noise_std.tolist()}
    hz.write_json(out / "simulation.json", meta)
    return paths + [out / "simulation.json"]


# --------------------------------------------------------------- estimation

def _run_estimator(sc: hz.Scenario, est):
    if est.method == "us":
        tol = est.pinv.tolerance if est.pinv.enabled else None
        return sc.run_us(est.window, est.qx, tol)
    return sc.run_akf(est.qx, est.qp)


def _estimate_all(cfg: ExperimentConfig, sc: hz.Scenario, estimators, out: Path, fmt: str):
    # every method is scored on the steps the longest window can estimate
    last_step = sc.length - max((e.window for e in estimators if e.method == "us"), default=0)
    traces = {}
    for est in estimators:
        try:
            traces[est.name] = _run_estimator(sc, est)
        except SmootherError as exc:
            raise CliError(f"estimator {est.name} failed at {exc}", EXIT_ESTIMATOR) from exc
    metrics = {}
    for est in estimators:
        tr = traces[est.name]
        report = sc.evaluate(tr, last_step)
        metrics[est.name] = {"method": est.method, "window": est.window, "qx": est.qx,
                             "qp": est.qp if est.method == "akf" else None,
                             "pinv_tolerance": est.pinv.tolerance if est.pinv.enabled else None,
                             **report.to_dict()}
        _write_table(out, f"estimate_{est.name}", _estimate_columns(sc, tr), fmt)
    hz.write_json(out / "metrics.json", {"name": cfg.name, "seed": sc.noise.seed,
                                         "steps": [1, last_step], "methods": metrics})
    for name, m in metrics.items():
        print(f"{cfg.name} {name}: overall={m['overall']:.6g} displacement={m['displacement']:.6g} "
              f"velocity={m['velocity']:.6g} input={m['input']:.6g}")
    return metrics


# ----------------------------------------------------------------- commands

def cmd_simulate(cfg, args, out):
    sc = build_from_config(cfg, args.seed)
    for p in _write_simulation(sc, out, args.format):
        print(f"wrote {p}")


def cmd_estimate(cfg, args, out):
    if args.data_dir is None:
        raise CliError("estimate needs --from DIR holding simulate output", EXIT_CONFIG)
    sc = scenario_from_files(cfg, Path(args.data_dir))
    ests = [e for e in cfg.estimators if args.method is None or e.name == args.method]
    if not ests:
        raise CliError(f"no estimator labelled {args.method!r}", EXIT_CONFIG)
    _estimate_all(cfg, sc, ests, out, args.format)


def cmd_run_experiment(cfg, args, out):
    sc = build_from_config(cfg, args.seed)
    _write_simulation(sc, out, args.format)
    _estimate_all(cfg, sc, cfg.estimators, out, args.format)


def cmd_compare(cfg, args, out):
    us = next((e for e in cfg.estimators if e.method == "us"), None)
    akf = next((e for e in cfg.estimators if e.method == "akf"), None)
    if us is None or akf is None:
        raise CliError("compare needs one 'us' and one 'akf' estimator in the config", EXIT_CONFIG)
    sc = build_from_config(cfg, args.seed)
    _write_simulation(sc, out, args.format)
    m = _estimate_all(cfg, sc, [us, akf], out, args.format)
    ratio = m[akf.name]["overall"] / m[us.name]["overall"]
    hz.write_json(out / "comparison.json", {"us": us.name, "akf": akf.name,
                                            "akf_over_us": ratio})
    print(f"{cfg.name} akf/us overall error ratio: {ratio:.4g}")


def _executor(workers):
    return ProcessPoolExecutor(max_workers=workers) if workers and workers > 1 else None


def cmd_tune(cfg, args, out):
    t = cfg.tuning
    if t is None:
        raise CliError("config has no 'tuning' block", EXIT_CONFIG)
    sc = build_from_config(cfg, args.seed)
    last_step = sc.length - t.window
    obj = hz.ScenarioObjective(sc, t.method, t.window, t.fixed, last_step)
    specs = [hz.GridSearchSpec(p.name, p.lo, p.hi, p.step) for p in t.params]
    pool = _executor(args.workers)
    try:
        res = hz.grid_search(obj, specs, executor=pool)
    finally:
        if pool is not None:
            pool.shutdown()
    rows = list(res.rows())
    cols = {f"log10_{n}": np.array([r[i] for r in rows]) for i, n in enumerate(res.names)}
    cols["overall"] = np.array([r[-1] for r in rows])
    _write_table(out, "tuning_surface", cols, args.format)
    hz.write_json(out / "tuning.json", {"method": t.method, "window": t.window, "best": res.best,
                                        "best_value": res.best_value, "failures": res.failures,
                                        "fixed": t.fixed})
    best = ", ".join(f"{k}={v:.4g}" for k, v in res.best.items())
    print(f"{cfg.name} tune {t.method}: best {best} overall={res.best_value:.6g} "
          f"({res.failures} failed points)")


class _SweepPoint:
    def __init__(self, sc, qx, tol, last_step):
        self.sc, self.qx, self.tol, self.last_step = sc, qx, tol, last_step

    def __call__(self, N):
        return self.sc.evaluate(self.sc.run_us(N, self.qx, self.tol), self.last_step).overall


def cmd_sweep(cfg, args, out):
    s = cfg.sweep
    if s is None:
        raise CliError("config has no 'sweep' block", EXIT_CONFIG)
    sc = build_from_config(cfg, args.seed)
    windows = list(s.windows)
    point = _SweepPoint(sc, s.qx, s.pinv_tolerance, sc.length - max(windows))
    pool = _executor(args.workers)
    try:
        if pool is not None:
            values = dict(zip(windows, pool.map(point, windows)))
            rows = hz.window_sweep(lambda N: values[N], windows, sc.length)
        else:
            rows = hz.window_sweep(point, windows, sc.length)
    except SmootherError as exc:
        raise CliError(f"sweep failed: {exc}", EXIT_ESTIMATOR) from exc
    finally:
        if pool is not None:
            pool.shutdown()
    _write_table(out, "window_sweep", {"window": np.array([r.window for r in rows], float),
                                       "overall": np.array([r.value for r in rows]),
                                       "tuned": np.array([float(r.tuned) for r in rows])},
                 args.format)
    for r in rows:
        print(f"{cfg.name} N={r.window}: overall={r.value:.6g}")


COMMANDS = {
    "simulate": cmd_simulate,
    "estimate": cmd_estimate,
    "compare": cmd_compare,
    "tune": cmd_tune,
    "sweep": cmd_sweep,
    "run-experiment": cmd_run_experiment,
}


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("config", help="experiment config (YAML)")
    common.add_argument("--seed", type=int, default=None, help="override the noise seed")
    common.add_argument("--out-dir", default=None, help="output directory (default: config output.dir)")
    common.add_argument("--format", choices=("csv", "json"), default=None,
                        help="format of tabular outputs (metrics are always JSON)")
    parser = argparse.ArgumentParser(prog="unismooth", description=__doc__.split("\n")[0])
    sub = parser.add_subparsers(dest="command", required=True)
    for name in COMMANDS:
        p = sub.add_parser(name, parents=[common])
        if name == "estimate":
            p.add_argument("--from", dest="data_dir", default=None,
                           help="directory written by 'simulate'")
            p.add_argument("--method", default=None, help="run only the estimator with this label")
        if name in ("tune", "sweep"):
            p.add_argument("--workers", type=int, default=1, help="parallel worker processes")
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        cfg = load_config(args.config)
    except ConfigError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    args.format = args.format or cfg.output.format
    out = Path(args.out_dir or cfg.output.dir)
    try:
        # validate everything that can be checked before touching the disk
        _sensors(cfg)
        _model(cfg)
        out.mkdir(parents=True, exist_ok=True)
        COMMANDS[args.command](cfg, args, out)
    except CliError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return exc.code
    except SmootherError as exc:
        print(f"error: estimator failed at {exc}", file=sys.stderr)
        return EXIT_ESTIMATOR
    except (ModelError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except OSError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_IO
    return 0


if __name__ == "__main__":
    sys.exit(main())
