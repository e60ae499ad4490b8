"""Backward solves for several cutoff times and the decay measurements on v^T.

    python scripts/decay_slopes.py [--T 50 100 200 400] [--h 0.025] [--out runs]

Existing runs under --out are reused.
"""

import argparse
import time
from pathlib import Path

from modwave.analysis import (companion_energy_check, compare_vT, energy_history, fit_decay,
                              monotone_nonincreasing, scattering_check)
from modwave.eikonal import EikonalConfig
from modwave.errors import InputDomainError
from modwave.model import Metric, ScatteringData, make_profile
from modwave.profile import ProfileEvaluator
from modwave.reduced import AsymptoticState
from modwave.solver import SolveConfig, backward_solve, read_slices, support_leak, write_slices


def main():
    p = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    p.add_argument("--T", type=float, nargs="+", default=[50.0, 100.0, 200.0, 400.0])
    p.add_argument("--h", type=float, default=0.025)
    p.add_argument("--epsilon", type=float, default=0.05)
    p.add_argument("--amplitude", type=float, default=1.0)
    p.add_argument("--out", default="runs")
    args = p.parse_args()
    data = ScatteringData(make_profile("bump"), amplitude=args.amplitude)
    ev = ProfileEvaluator(EikonalConfig(args.epsilon, 0.1), AsymptoticState.from_metric(Metric.sound_speed(1.0), data))

    runs = {}
    for T in sorted(args.T):
        cfg = SolveConfig(T, ev, h=args.h)
        d = Path(args.out) / f"T_{T:g}_h_{args.h:g}"
        if not (d / "manifest.json").exists():
            t0 = time.perf_counter()
            write_slices(backward_solve(cfg), d)
            print(f"T = {T:g}: solved in {time.perf_counter() - t0:.0f}s")
        runs[T] = (cfg, read_slices(d)[1])
        leak = max(support_leak(cfg, s) for s in runs[T][1])
        print(f"T = {T:g}: worst relative support leak {leak:.2e}")

    T = max(runs)
    cfg, slices = runs[T]
    print(f"energy of v^T, T = {T:g}:   slope {fit_decay(energy_history(slices, cfg.t_min, T)).slope:+.3f}")
    for lo in (cfg.t_min, 2.0 * cfg.t_min):
        try:
            scat = scattering_check(slices, ev, lo, T / 2)
            comp = companion_energy_check(slices, ev, lo, T / 2)
        except InputDomainError as e:
            print(f"t in [{lo:g}, {T / 2:g}]: skipped ({e})")
            continue
        print(f"t in [{lo:g}, {T / 2:g}]: scattering slope {scat.slope:+.3f}, companion slope {comp.slope:+.3f}")
    pairs = {T1: (runs[T1][1], runs[2 * T1][1]) for T1 in runs if 2 * T1 in runs}
    if len(pairs) >= 2:
        fit = compare_vT(pairs, min_samples=2)
        vals = [v for _, v in fit.samples]
        print(f"Cauchy differences {', '.join(f'{v:.3e}' for v in vals)}: slope {fit.slope:+.3f}, "
              f"monotone {monotone_nonincreasing(vals)}")


if __name__ == "__main__":
    main()
