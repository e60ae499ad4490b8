"""Grid refinement study: slice differences and equation residuals at t = T/2.

    python scripts/self_convergence.py [--T 50] [--h 0.05 0.025 0.0125]
"""

import argparse
import time

from modwave.analysis import convergence_ratios, refinement_difference
from modwave.eikonal import EikonalConfig
from modwave.model import Metric, ScatteringData, make_profile
from modwave.profile import ProfileEvaluator
from modwave.reduced import AsymptoticState
from modwave.solver import SolveConfig, backward_solve, residual_check


def main():
    p = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    p.add_argument("--T", type=float, default=50.0)
    p.add_argument("--h", type=float, nargs="+", default=[0.05, 0.025, 0.0125])
    args = p.parse_args()
    state = AsymptoticState.from_metric(Metric.sound_speed(1.0), ScatteringData(make_profile("bump")))
    ev = ProfileEvaluator(EikonalConfig(0.05, 0.1), state)
    t = args.T / 2
    slices = []
    for h in sorted(args.h, reverse=True):
        cfg = SolveConfig(args.T, ev, h=h, t_min=min(t, ev.T_R), record_times=(t,))
        t0 = time.perf_counter()
        sl = backward_solve(cfg).at(t)
        print(f"h = {h:g}: {time.perf_counter() - t0:.0f}s, residual check {residual_check(cfg, sl):.3e}")
        slices.append(sl)
    for a, b in zip(slices, slices[1:]):
        print(f"||v_h - v_h/2|| at h = {a.grid.h:g}: {refinement_difference(a, b):.3e}")
    for r in convergence_ratios(slices):
        print(f"ratio {r:.3f} (second order gives 4)")


if __name__ == "__main__":
    main()
