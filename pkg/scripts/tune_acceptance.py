"""Regenerate the frozen hyperparameters used by tests/test_acceptance.py.

Every grid is evaluated on the tuning seed only; the acceptance tests then
score the tuned settings on separate evaluation seeds. Runtime is roughly
an hour on one core.

    python scripts/tune_acceptance.py [--only KEY ...] [--out tests/data/tuned.json]
"""

from __future__ import annotations

import argparse
import json
import math
import time
from pathlib import Path

from unismooth import harness as hz

TUNING_SEED = 0


def _grid(scenario, method, window, specs, last_step=None):
    obj = hz.ScenarioObjective(scenario, method, window,
                               last_step=scenario.length - window if last_step is None else last_step)
    res = hz.grid_search(obj, [hz.GridSearchSpec(*s) for s in specs])
    return {"best": res.best, "best_value": res.best_value, "failures": res.failures,
            "grid": [list(s) for s in specs]}


def _refined_tolerance(sc, window):
    """Half-decade grid, then the default 10^0.1 step around its optimum."""
    coarse = _grid(sc, "us", window, [("pinv_tolerance", -12.0, -1.0, 0.5)])
    centre = round(math.log10(coarse["best"]["pinv_tolerance"]), 1)
    lo, hi = max(centre - 0.5, -12.0), min(centre + 0.5, -0.1)
    fine = _grid(sc, "us", window, [("pinv_tolerance", lo, hi, 0.1)])
    best = fine if fine["best_value"] < coarse["best_value"] else coarse
    return {**best, "grid": coarse["grid"] + fine["grid"], "coarse_best": coarse["best"]}


def tune_pinv_sinusoid(config):
    sc = hz.sinusoid_scenario(config, noise_level=0.05, seed=TUNING_SEED)
    return _refined_tolerance(sc, 25)


def tune_rank_deficient():
    sc = hz.rank_deficient_scenario(noise_level=0.01, seed=TUNING_SEED)
    return _refined_tolerance(sc, 25)


def tune_ground_motion(config, method):
    sc = hz.ground_motion_scenario(config, seed=TUNING_SEED)
    # both methods are scored on the steps the N=20 smoother can estimate
    last = sc.length - 20
    if method == "us":
        return _grid(sc, "us", 20, [("qx", -8.0, 2.0, 1.0), ("pinv_tolerance", -10.0, -1.0, 1.0)],
                     last_step=last)
    return _grid(sc, "akf", 0, [("qx", -20.0, 2.0, 1.0), ("qp", -8.0, 3.0, 0.5)], last_step=last)


JOBS = {
    "pinv_1.1": lambda: tune_pinv_sinusoid("1.1"),
    "pinv_1.2": lambda: tune_pinv_sinusoid("1.2"),
    "rank_deficient": tune_rank_deficient,
    "gm_2.3_akf": lambda: tune_ground_motion("2.3", "akf"),
    "gm_2.3_us": lambda: tune_ground_motion("2.3", "us"),
    "gm_2.4_akf": lambda: tune_ground_motion("2.4", "akf"),
    "gm_2.4_us": lambda: tune_ground_motion("2.4", "us"),
}


def main():
    ap = argparse.ArgumentParser()
    ap.add_argument("--only", nargs="*", choices=sorted(JOBS))
    ap.add_argument("--out", default=str(Path(__file__).resolve().parents[1] / "tests/data/tuned.json"))
    args = ap.parse_args()
    out = Path(args.out)
    data = json.loads(out.read_text()) if out.exists() else {}
    data["tuning_seed"] = TUNING_SEED
    for key in args.only or JOBS:
        t0 = time.time()
        data[key] = JOBS[key]()
        print(f"{key}: {data[key]['best']} -> {data[key]['best_value']:.4g} "
              f"({time.time() - t0:.0f} s)", flush=True)
        out.write_text(json.dumps(data, indent=2) + "\n")


if __name__ == "__main__":
    main()
