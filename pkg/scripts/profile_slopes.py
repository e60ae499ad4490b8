"""Decay slopes of the optical function and of the approximate solution's residuals.

    python scripts/profile_slopes.py [--epsilon 0.05] [--points 12]
"""

import argparse

import numpy as np

from modwave.analysis import fit_decay
from modwave.eikonal import EikonalConfig, invert_q, refined_nu_residual, solve_nu
from modwave.model import Metric, ScatteringData, make_profile
from modwave.profile import ProfileEvaluator, eikonal_residual, pde_residual
from modwave.reduced import AsymptoticState


def evaluator(epsilon, delta, profile):
    state = AsymptoticState.from_metric(Metric.sound_speed(1.0), ScatteringData(make_profile(profile)))
    return ProfileEvaluator(EikonalConfig(epsilon, delta), state)


def main():
    p = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    p.add_argument("--epsilon", type=float, default=0.05)
    p.add_argument("--delta", type=float, default=0.1)
    p.add_argument("--profile", default="bump")
    p.add_argument("--points", type=int, default=12)
    args = p.parse_args()
    ev = evaluator(args.epsilon, args.delta, args.profile)
    cfg, st = ev.cfg, ev.state

    ts = np.geomspace(50.0, 5000.0, args.points)
    nu = [np.max(np.abs(solve_nu(cfg, st, t, t + np.linspace(-st.R, 6.0, 700)))) for t in ts]
    ref = [np.max(np.abs(refined_nu_residual(cfg, st, t, t + np.linspace(-st.R, 6.0, 700)))) for t in ts]
    print(f"sup|nu|                  slope {fit_decay(list(zip(ts, nu))).slope:+.3f}  (bound -1)")
    print(f"refined nu residual      slope {fit_decay(list(zip(ts, ref))).slope:+.3f}  (bound -2)")

    ts = np.geomspace(100.0, 1e4, args.points)
    eik = [abs(float(eikonal_residual(ev, t, invert_q(cfg, st, t, 0.0)))) for t in ts]
    print(f"eikonal residual (q = 0) slope {fit_decay(list(zip(ts, eik))).slope:+.3f}  (bound -2)")
    pde = [np.max(np.abs(pde_residual(ev, t, np.concatenate([t + np.linspace(-0.999, 2.0, 300),
                                                             np.linspace(t + 2.0, 1.5 * t, 600)]))))
           for t in ts]
    print(f"PDE residual of u_app    slope {fit_decay(list(zip(ts, pde))).slope:+.3f}  (bound -3 + C eps)")


if __name__ == "__main__":
    main()
