"""Scenario-driven command line front end.

    modwave validate --scenario run.toml
    modwave profile  --scenario run.toml [--out DIR]
    modwave solve    --scenario run.toml [--T 100] [--out DIR] [--threads N]
    modwave verify   --scenario run.toml [--out DIR]

Exit codes: 0 success, 1 check failure, 2 configuration error, 3 numerical abort.
"""

from __future__ import annotations

import argparse
import copy
import json
import math
import sys
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional

import numpy as np
import tomli

from . import analysis
from .eikonal import EikonalConfig
from .errors import ModwaveError, NumericalError
from .model import AngularFactor, Metric, MetricKind, PROFILES, ScatteringData, make_profile
from .profile import ProfileEvaluator, eikonal_residual, profile_jet
from .reduced import AsymptoticState
from .solver import (RECORD_RATIO, SolveConfig, _atomic_write, _fmt, backward_solve, read_slices,
                     record_times_for, support_leak, write_slices)

EXIT_OK, EXIT_CHECK, EXIT_CONFIG, EXIT_NUMERIC = 0, 1, 2, 3

PROFILE_HEADER = "t,r,q,u_app,eik_res,pde_res,scat_res"

# check name -> (target slope or bound, tolerance)
CHECK_DEFAULTS = {
    "support": {"enabled": True, "tol": 1e-8},
    "energy_decay": {"enabled": True, "target": -0.5, "tol": 0.25},
    "cauchy": {"enabled": True, "target": -0.5, "tol": 0.25},
    "scattering": {"enabled": True, "target": -1.5, "tol": 0.3},
    "companion_energy": {"enabled": True, "target": -0.5, "tol": 0.25},
}

DEFAULTS = {
    "epsilon": 0.05,
    "delta": 0.1,
    "R": 1.0,
    "seed": 0,
    "output": "modwave_out",
    "metric": {"kind": "SoundSpeed", "c_prime0": 1.0},
    "data": {"profile": "bump", "amplitude": 1.0, "angular_beta": 0.0},
    "energy": {"c0": 20.0},
    "grid": {"cfl": 0.4},
    "run": {"T": [100.0], "record_ratio": RECORD_RATIO},
    "profile": {"t": [100.0, 1000.0], "r_samples": 16, "q_span": 2.0},
    "checks": CHECK_DEFAULTS,
}


class ConfigError(ModwaveError):
    def __init__(self, problems):
        super().__init__("; ".join(problems))
        self.problems = list(problems)


@dataclass
class Scenario:
    raw: dict
    applied: list  # dotted keys filled from defaults
    metric: Metric
    data: ScatteringData
    ev: ProfileEvaluator
    energy: analysis.EnergyConfig
    T_list: list
    h: float
    r_max: Optional[float]
    cfl: float
    t_min: float
    record_ratio: float
    checks: dict
    output: Path
    seed: int
    profile_t: list
    r_samples: int
    q_span: float
    solve_configs: dict = field(default_factory=dict)

    def solve_config(self, T: float) -> SolveConfig:
        T = float(T)
        if T not in self.solve_configs:
            self.solve_configs[T] = self._make_solve_config(T)
        return self.solve_configs[T]

    def _make_solve_config(self, T: float) -> SolveConfig:
        rec = record_times_for(T, self.t_min, self.record_ratio)
        return SolveConfig(T, self.ev, t_min=self.t_min, cfl=self.cfl, h=self.h, r_max=self.r_max,
                           record_times=tuple(rec))

    def run_dir(self, T: float, out: Optional[Path] = None) -> Path:
        return Path(out or self.output) / f"T_{_fmt(T)}"

    def effective(self) -> dict:
        eff = copy.deepcopy(self.raw)
        eff["derived"] = {
            "G": self.ev.state.G,
            "T_R": self.ev.T_R,
            "t_min": self.t_min,
            "h": self.h,
            "r_max": {_fmt(T): self.solve_config(T).r_max for T in self.T_list},
        }
        return eff


def _merge(base: dict, over: dict, prefix: str, applied: list) -> dict:
    out = {}
    for k, v in base.items():
        key = f"{prefix}{k}"
        if k not in over:
            out[k] = copy.deepcopy(v)
            applied.append(key)
        elif isinstance(v, dict) and isinstance(over[k], dict):
            out[k] = _merge(v, over[k], key + ".", applied)
        else:
            out[k] = over[k]
    for k, v in over.items():
        if k not in base:
            out[k] = v
    return out


def _num(problems, where, value, cond, msg):
    try:
        x = float(value)
    except (TypeError, ValueError):
        problems.append(f"{where}: expected a number, got {value!r}")
        return None
    if not math.isfinite(x) or not cond(x):
        problems.append(f"{where}: {msg} (got {value!r})")
        return None
    return x


def build_scenario(doc: dict) -> Scenario:
    """Apply defaults and check every module precondition; raises ConfigError listing each problem."""
    applied: list = []
    raw = _merge(DEFAULTS, doc, "", applied)
    P: list = []
    known = set(DEFAULTS) | {"T_R"}
    for k in raw:
        if k not in known:
            P.append(f"{k}: unknown key")

    eps = _num(P, "epsilon", raw["epsilon"], lambda x: 0 < x < 1, "must lie in (0, 1)")
    delta = _num(P, "delta", raw["delta"], lambda x: 0 < x < 1, "must lie in (0, 1)")
    R = _num(P, "R", raw["R"], lambda x: x >= 1.0, "support radius must satisfy R >= 1")
    seed = raw["seed"]
    if not isinstance(seed, int) or isinstance(seed, bool) or seed < 0:
        P.append(f"seed: must be a nonnegative integer (got {seed!r})")

    m = raw["metric"]
    metric = None
    kind = m.get("kind")
    try:
        if kind == "SoundSpeed":
            cp = _num(P, "metric.c_prime0", m.get("c_prime0"), lambda x: True, "")
            metric = Metric.sound_speed(cp) if cp is not None else None
        elif kind == "GeneralLinearized":
            g = np.asarray(m.get("g_lin"), dtype=float)
            metric = Metric.general(g)
        else:
            P.append(f"metric.kind: must be SoundSpeed or GeneralLinearized (got {kind!r})")
    except (ModwaveError, TypeError, ValueError) as e:
        P.append(f"metric: {e}")

    d = raw["data"]
    data = None
    if d.get("profile") not in PROFILES:
        P.append(f"data.profile: unknown profile {d.get('profile')!r}; choose from {sorted(PROFILES)}")
    amp = _num(P, "data.amplitude", d.get("amplitude"), lambda x: True, "")
    beta = _num(P, "data.angular_beta", d.get("angular_beta"), lambda x: abs(x) < 1, "needs |beta| < 1")
    if R is not None and amp is not None and beta is not None and d.get("profile") in PROFILES:
        data = ScatteringData(make_profile(d["profile"]), R=R, amplitude=amp, angular=AngularFactor(beta))

    c0 = _num(P, "energy.c0", raw["energy"].get("c0"), lambda x: x > 0, "must be positive")

    g = raw["grid"]
    cfl = _num(P, "grid.cfl", g.get("cfl"), lambda x: 0 < x < 1, "must lie in (0, 1)")
    h = None
    if R is not None:
        h = _num(P, "grid.h", g.get("h", R / 40.0), lambda x: 0 < x <= R / 20.0 * (1 + 1e-12),
                 f"must satisfy 0 < h <= R/20 = {R / 20.0}")
        if "h" not in g:
            applied.append("grid.h")
    r_max = g.get("r_max")
    if r_max is not None:
        r_max = _num(P, "grid.r_max", r_max, lambda x: x > 0, "must be positive")

    run = raw["run"]
    T_list = run.get("T")
    if isinstance(T_list, (int, float)):
        T_list = [T_list]
    if not isinstance(T_list, list):
        P.append("run.T: must be a number or a list of numbers")
        T_list = []
    T_list = [t for i, t in enumerate(T_list)
              if _num(P, f"run.T[{i}]", t, lambda x: x > 0, "must be positive") is not None]
    T_list = sorted(float(t) for t in T_list)
    ratio = _num(P, "run.record_ratio", run.get("record_ratio"), lambda x: x > 1, "must exceed 1")

    pr = raw["profile"]
    pt = pr.get("t")
    pt = [pt] if isinstance(pt, (int, float)) else pt
    if not isinstance(pt, list) or not pt:
        P.append("profile.t: must be a nonempty list of times")
        pt = []
    pt = [float(x) for i, x in enumerate(pt) if _num(P, f"profile.t[{i}]", x, lambda y: y > 0, "must be positive") is not None]
    n_r = pr.get("r_samples")
    if not isinstance(n_r, int) or isinstance(n_r, bool) or n_r < 1:
        P.append(f"profile.r_samples: must be a positive integer (got {n_r!r})")
    q_span = _num(P, "profile.q_span", pr.get("q_span"), lambda x: x > 0, "must be positive")

    checks = {}
    for name, opts in raw["checks"].items():
        if name not in CHECK_DEFAULTS:
            P.append(f"checks.{name}: unknown check; choose from {sorted(CHECK_DEFAULTS)}")
            continue
        if not isinstance(opts.get("enabled"), bool):
            P.append(f"checks.{name}.enabled: must be true or false")
        _num(P, f"checks.{name}.tol", opts.get("tol"), lambda x: x >= 0, "must be nonnegative")
        if "target" in CHECK_DEFAULTS[name]:
            _num(P, f"checks.{name}.target", opts.get("target"), lambda x: True, "")
        checks[name] = opts

    ev = energy = None
    if not P:
        try:
            cfg = EikonalConfig(eps, delta)
            st = AsymptoticState.from_metric(metric, data)
            T_R = pr.get("T_R", raw.get("T_R"))
            ev = ProfileEvaluator(cfg, st, T_R=T_R, metric=metric)
            energy = analysis.EnergyConfig(c0, eps, delta, R)
        except ModwaveError as e:
            P.append(f"model: {e}")
    t_min = None
    if ev is not None:
        t_min = float(run.get("t_min", ev.T_R))
        if "t_min" not in run:
            applied.append("run.t_min")
        if not t_min >= 1.0:
            P.append(f"run.t_min: must be at least 1 (got {t_min!r})")
        if T_list and metric.kind is not MetricKind.SOUND_SPEED:
            P.append("metric.kind: the solver needs a SoundSpeed metric when run.T is given")
        for T in T_list:
            if not T > t_min:
                P.append(f"run.T: T={T!r} must exceed t_min={t_min!r}")
        if r_max is not None and T_list and r_max < 6.0 * max(T_list):
            P.append(f"grid.r_max: must be at least 6 * max(T) = {6.0 * max(T_list)} (got {r_max!r})")
    if P:
        raise ConfigError(P)

    sc = Scenario(raw, applied, metric, data, ev, energy, T_list, h, r_max, cfl, t_min, ratio, checks,
                  Path(raw["output"]), seed, pt, n_r, q_span)
    try:
        for T in T_list:
            sc.solve_config(T)
    except ModwaveError as e:
        raise ConfigError([f"run.T: {e}"]) from None
    return sc


def load_scenario(path) -> Scenario:
    p = Path(path)
    try:
        doc = tomli.loads(p.read_text())
    except FileNotFoundError:
        raise ConfigError([f"scenario: file not found: {p}"]) from None
    except tomli.TOMLDecodeError as e:
        raise ConfigError([f"scenario: TOML parse error: {e}"]) from None
    return build_scenario(doc)


# ---------------------------------------------------------------------------
# commands


def cmd_validate(sc: Scenario) -> dict:
    return {"effective": sc.effective(), "defaults_applied": sorted(sc.applied)}


def profile_rows(sc: Scenario) -> list:
    """Residual scan rows; r samples are drawn once from the scenario seed."""
    rng = np.random.default_rng(sc.seed)
    R = sc.data.R
    q = np.sort(rng.uniform(-sc.q_span * R, sc.q_span * R, sc.r_samples))
    rows = []
    for t in sc.profile_t:
        r = np.maximum(t + q, 1e-3)
        jet = profile_jet(sc.ev, t, r)
        eik = np.atleast_1d(eikonal_residual(sc.ev, t, r))
        if sc.metric.kind is MetricKind.SOUND_SPEED:
            pde = jet.residual
        else:
            pde = np.full(r.shape, np.nan)
        for i in range(r.size):
            rows.append((t, r[i], jet.opt.q[i], jet.u[i], eik[i], pde[i], jet.scattering[i]))
    return rows


def cmd_profile(sc: Scenario, out: Optional[Path] = None) -> Path:
    path = Path(out or sc.output) / "profile.csv"
    lines = [PROFILE_HEADER] + [",".join(_fmt(x) for x in row) for row in profile_rows(sc)]
    _atomic_write(path, "\n".join(lines) + "\n")
    return path


def _solve_one(sc: Scenario, T: float, out: Optional[Path]) -> Path:
    result = backward_solve(sc.solve_config(T))
    return write_slices(result, sc.run_dir(T, out))


def _solve_worker(args):
    doc, T, out = args
    return str(_solve_one(build_scenario(doc), T, out))


def cmd_solve(sc: Scenario, T: Optional[float] = None, out: Optional[Path] = None,
              threads: int = 1, doc: Optional[dict] = None) -> list:
    Ts = [float(T)] if T is not None else list(sc.T_list)
    if T is not None:
        sc.solve_config(T)
    if threads > 1 and len(Ts) > 1 and doc is not None:
        with ProcessPoolExecutor(max_workers=threads) as pool:
            return [Path(p) for p in pool.map(_solve_worker, [(doc, t, out) for t in Ts])]
    return [_solve_one(sc, t, out) for t in Ts]


def _load_run(sc: Scenario, T: float, out: Optional[Path]):
    d = sc.run_dir(T, out)
    manifest, slices = read_slices(d)
    return manifest, slices


def cmd_verify(sc: Scenario, out: Optional[Path] = None) -> tuple:
    """Run the enabled checks on stored solver output; returns (results, warnings)."""
    enabled = {k: v for k, v in sc.checks.items() if v.get("enabled")}
    warnings = []
    if not enabled:
        warnings.append("no checks enabled")
        return [], warnings
    if not sc.T_list:
        raise ConfigError(["run.T: verification needs at least one solver run"])
    runs = {T: _load_run(sc, T, out)[1] for T in sc.T_list}
    T_max = max(sc.T_list)
    ev = sc.ev
    results = []

    if "support" in enabled:
        opts = enabled["support"]
        worst, samples = 0.0, []
        for T in sc.T_list:
            cfg = sc.solve_config(T)
            for s in runs[T]:
                leak = support_leak(cfg, s)
                samples.append([T, s.t, leak])
                worst = max(worst, leak)
        results.append(analysis.CheckResult("support", worst, 0.0, opts["tol"], worst <= opts["tol"], samples))

    if "energy_decay" in enabled:
        opts = enabled["energy_decay"]
        fit = analysis.fit_decay(analysis.energy_history(runs[T_max], sc.t_min, T_max))
        results.append(analysis.CheckResult.slope("energy_decay", fit, opts["target"], opts["tol"]))

    if "cauchy" in enabled:
        opts = enabled["cauchy"]
        pairs = {T: (runs[T], runs[2.0 * T]) for T in sc.T_list if 2.0 * T in runs}
        if len(pairs) < 2:
            warnings.append("cauchy: needs runs at T and 2T for at least two T; skipped")
        else:
            fit = analysis.compare_vT(pairs, min_samples=2)
            res = analysis.CheckResult.slope("cauchy", fit, opts["target"], opts["tol"])
            mono = analysis.monotone_nonincreasing([v for _, v in fit.samples])
            res.passed = res.passed and mono
            res.note = "monotone" if mono else "not monotone in T1"
            results.append(res)

    lo, hi = ev.T_R, 0.5 * T_max
    if "scattering" in enabled:
        opts = enabled["scattering"]
        fit = analysis.scattering_check(runs[T_max], ev, lo, hi)
        results.append(analysis.CheckResult.slope("scattering", fit, opts["target"], opts["tol"]))
    if "companion_energy" in enabled:
        opts = enabled["companion_energy"]
        fit = analysis.companion_energy_check(runs[T_max], ev, lo, hi)
        results.append(analysis.CheckResult.slope("companion_energy", fit, opts["target"], opts["tol"]))
    return results, warnings


# ---------------------------------------------------------------------------
# entry point


def _parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="modwave", description=__doc__.splitlines()[0])
    sub = p.add_subparsers(dest="command", required=True)
    for name in ("validate", "profile", "solve", "verify"):
        s = sub.add_parser(name)
        s.add_argument("--scenario", required=True, help="scenario TOML file")
        s.add_argument("--out", default=None, help="output directory (overrides the scenario)")
        s.add_argument("--threads", type=int, default=1, help="worker processes for independent runs")
        if name == "solve":
            s.add_argument("--T", type=float, default=None, help="cutoff time; default: every T in the scenario")
    return p


def _emit(obj, stream=None):
    (stream or sys.stdout).write(json.dumps(obj, indent=2, default=str) + "\n")


def main(argv=None) -> int:
    args = _parser().parse_args(argv)
    if args.threads < 1:
        _emit({"error": "config", "problems": ["--threads: must be at least 1"]}, sys.stderr)
        return EXIT_CONFIG
    out = Path(args.out) if args.out else None
    try:
        sc = load_scenario(args.scenario)
        if args.command == "validate":
            _emit(cmd_validate(sc))
            return EXIT_OK
        if args.command == "profile":
            print(cmd_profile(sc, out))
            return EXIT_OK
        if args.command == "solve":
            doc = tomli.loads(Path(args.scenario).read_text())
            for path in cmd_solve(sc, args.T, out, args.threads, doc):
                print(path)
            return EXIT_OK
        results, warnings = cmd_verify(sc, out)
    except ConfigError as e:
        _emit({"error": "config", "problems": e.problems}, sys.stderr)
        return EXIT_CONFIG
    except FileNotFoundError as e:
        _emit({"error": "missing_artifacts", "message": str(e)}, sys.stderr)
        return EXIT_CONFIG
    except NumericalError as e:
        _emit({"error": "numerical", "message": str(e), "payload": e.payload}, sys.stderr)
        return EXIT_NUMERIC
    except ModwaveError as e:
        _emit({"error": type(e).__name__, "message": str(e)}, sys.stderr)
        return EXIT_CONFIG

    for w in warnings:
        print(f"warning: {w}", file=sys.stderr)
    path = Path(out or sc.output) / "report.json"
    _atomic_write(path, analysis.report_json(results))
    failed = [r.name for r in results if not r.passed]
    for r in results:
        print(f"{'PASS' if r.passed else 'FAIL'} {r.name}: {r.value:.6g} (target {r.target:g} +/- {r.tolerance:g})")
    if failed:
        print("failing checks: " + ", ".join(failed), file=sys.stderr)
        return EXIT_CHECK
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
