#!/usr/bin/env python3
"""Model-free learning study on the scalar benchmark.

Runs the online loop for a range of convergence thresholds and reports how
the threshold trades learning time against closeness to the offline optimum.
"""

import sys
import time
from pathlib import Path

import numpy as np

ROOT = Path(__file__).resolve().parent.parent
sys.path.insert(0, str(ROOT / "src"))

from polypi.online import Schedule, run_online            # noqa: E402
from polypi.pi import run_pi                              # noqa: E402
from polypi.problems import load_problem                  # noqa: E402
from polypi.sim import OnlinePlant, StepControl           # noqa: E402

if __name__ == "__main__":
    prob = load_problem(ROOT / "problems" / "scalar_a.toml")
    offline = run_pi(prob.plant(), prob.cost, prob.v0, prob.u1, prob.r,
                     prob.omega, prob.eps, prob.max_iter)
    p_star = offline.records[-1].p
    print(f"offline optimum: p = {np.round(p_star, 6)} "
          f"({len(offline.records)} sweeps)")

    lc = prob.learning
    print(f"{'eps':>8} {'updates':>8} {'sim time [s]':>13} "
          f"{'rel err':>10} {'wall [s]':>9}")
    for eps in (1e-1, 1e-2, 1e-3, 1e-4):
        plant = OnlinePlant(prob.plant(), prob.cost, lc.x0,
                            StepControl(h=lc.h))
        schedule = Schedule(window=lc.window, delta_t=lc.delta_t,
                            noise=lc.noise, max_iter=lc.max_iter)
        t0 = time.perf_counter()
        trace = run_online(plant, prob.cost, prob.v0, prob.u1, prob.r,
                           prob.d, prob.omega, eps, schedule)
        wall = time.perf_counter() - t0
        rel = np.linalg.norm(trace.records[-1].p - p_star) \
            / np.linalg.norm(p_star)
        print(f"{eps:8.0e} {len(trace.records):8d} {plant.time:13.1f} "
              f"{rel:10.2e} {wall:9.2f}")
