"""Command line entry point, run configuration and CSV output.

Commands::

    matching-pendulum run    [--preset fig7] [--config run.ini] [--out fig7.csv] ...
    matching-pendulum verify [--config run.ini]
    matching-pendulum sweep  [--preset fig7] --tau-min 0.005 --tau-max 0.05 --steps 8

Config files are INI style: ``[plant]``, ``[design]``, ``[discrete]``,
``[scenario]`` and ``[output]`` sections of ``key = value`` lines.  Matrices
and vectors are bracketed row-major literals such as
``G_d = [[0.168, 0], [-0.0001, 0.165], [0.509, 0], [-0.0039, 0.473]]``.

Exit status: 0 on success (diverged runs included), 1 on configuration
errors, 2 when the matching geometry fails along a run, 3 when ``verify``
finds a residual outside its tolerance.
"""
from __future__ import annotations

import argparse
import ast
import configparser
import csv
import logging
import math
import os
import re
import sys
import tempfile
from dataclasses import dataclass, field, fields
from pathlib import Path
from typing import Optional

import numpy as np

from . import digital_loop, matching_law
from .digital_loop import DEFAULT_DISCRETE, DiscreteGains, discretize, gains_for_tau
from .matching_law import DEFAULT_DESIGN, DesignParams, MatchingLaw, SwitchingBandError
from .pendulum_model import State, linearize
from .sim_engine import Scenario, classify, linear_gains, lyapunov_increase, simulate, tau_sweep

logger = logging.getLogger(__name__)

OUT_DIR_ENV = "MATCHING_PENDULUM_OUT_DIR"
CSV_FIELDS = (
    "t", "theta", "x", "theta_dot", "x_dot",
    "theta_hat", "x_hat", "theta_dot_hat", "x_dot_hat",
    "u", "H_hat",
)
SMALL = State(0.4, 0.0, 0.0, 0.0)
LARGE = State(1.1, 0.0, 0.0, 0.0)

SCENARIO_PRESETS = {
    "fig2": dict(controller="linear", mode="continuous", initial=SMALL),
    "fig3": dict(controller="matching", mode="continuous", initial=SMALL),
    "fig4": dict(controller="linear", mode="continuous", initial=LARGE),
    "fig5": dict(controller="matching", mode="continuous", initial=LARGE),
    "fig6": dict(controller="linear", mode="sampled", initial=SMALL),
    "fig7": dict(controller="matching", mode="sampled", initial=SMALL),
    # sampled runs from the large initial condition
    "fig6-large": dict(controller="linear", mode="sampled", initial=LARGE),
    "fig7-large": dict(controller="matching", mode="sampled", initial=LARGE),
}

TOLERANCES = {
    "lambda_residual": 1e-12,
    "g_hat_pde_residual": 1e-4,
    "v_hat_pde_residual": 1e-4,
    "g11_quadrature_gap": 1e-8,
    "A_d_reproduction": 5e-4,
    "B_d_reproduction": 5e-4,
    "observer_spectral_radius": 1.0,
    "sigma_jump_error": 1e-2,
}


class ConfigError(ValueError):
    pass


@dataclass
class RunConfig:
    design: DesignParams = DEFAULT_DESIGN
    discrete: DiscreteGains = DEFAULT_DISCRETE
    scenario: Scenario = field(default_factory=Scenario)
    out: Optional[Path] = None
    preset: Optional[str] = None

    def resolved_scenario(self):
        sc = self.scenario.replace(design=self.design)
        if sc.mode != "sampled":
            return sc
        if math.isclose(sc.tau, self.discrete.tau, rel_tol=1e-12):
            return sc.replace(discrete=self.discrete)
        return sc.replace(discrete=gains_for_tau(sc.tau, self.design.plant, reference=self.discrete))


# -- config parsing --------------------------------------------------------


def _line_of(text, section, key):
    current = None
    for n, line in enumerate(text.splitlines(), 1):
        stripped = line.strip()
        m = re.match(r"\[(.+)\]$", stripped)
        if m:
            current = m.group(1).strip()
        elif current == section and re.match(rf"{re.escape(key)}\s*[=:]", stripped, re.IGNORECASE):
            return n
    return 0


def parse_matrix(text, shape=None):
    """Parse a bracketed row-major literal into a float array."""
    try:
        value = ast.literal_eval(text.strip())
        arr = np.array(value, dtype=float)
    except (ValueError, SyntaxError, TypeError) as exc:
        raise ValueError(f"malformed matrix literal {text.strip()!r}") from exc
    if arr.dtype == object or (arr.ndim == 0):
        raise ValueError(f"malformed matrix literal {text.strip()!r}")
    if shape is not None and arr.shape != shape:
        raise ValueError(f"expected shape {shape}, got {arr.shape}")
    if not np.all(np.isfinite(arr)):
        raise ValueError("matrix entries must be finite")
    return arr


def load_config(path, base=None):
    """Read a config file on top of ``base`` (defaults when omitted)."""
    path = Path(path)
    try:
        text = path.read_text()
    except OSError as exc:
        raise ConfigError(f"{path}: cannot read config: {exc}") from exc
    parser = configparser.ConfigParser(inline_comment_prefixes=("#", ";"))
    parser.optionxform = str
    try:
        parser.read_string(text, source=str(path))
    except configparser.Error as exc:
        raise ConfigError(f"{path}: {exc}") from exc

    cfg = base or RunConfig()

    def fail(section, key, msg):
        raise ConfigError(f"{path}:{_line_of(text, section, key)}: [{section}] {key}: {msg}")

    known = {"plant", "design", "discrete", "scenario", "output"}
    for section in parser.sections():
        if section not in known:
            raise ConfigError(f"{path}:{_line_of(text, section, '')}: unknown section [{section}]")

    design_fields = {f.name for f in fields(DesignParams)}
    design_changes = {}
    if parser.has_section("design"):
        sec = parser["design"]
        if "preset" in sec:
            if sec["preset"] not in matching_law.PRESETS:
                fail("design", "preset", f"unknown preset {sec['preset']!r}")
            cfg.design = matching_law.PRESETS[sec["preset"]]
        for key, value in sec.items():
            if key == "preset":
                continue
            if key not in design_fields:
                fail("design", key, "unknown design parameter")
            if key in ("switch_regions", "g11_form", "dissipation_form"):
                design_changes[key] = value.strip()
            else:
                try:
                    design_changes[key] = float(value)
                except ValueError:
                    fail("design", key, f"not a number: {value!r}")
    if parser.has_section("plant"):
        for key, value in parser["plant"].items():
            if key != "b":
                fail("plant", key, "unknown plant parameter")
            try:
                design_changes["b"] = float(value)
            except ValueError:
                fail("plant", key, f"not a number: {value!r}")
    if design_changes:
        try:
            cfg.design = cfg.design.replace(**design_changes)
        except ValueError as exc:
            raise ConfigError(f"{path}: [design] {exc}") from exc

    if parser.has_section("discrete"):
        sec = parser["discrete"]
        ref = cfg.discrete
        if "preset" in sec:
            if sec["preset"] not in digital_loop.PRESETS:
                fail("discrete", "preset", f"unknown preset {sec['preset']!r}")
            ref = digital_loop.PRESETS[sec["preset"]]
        parts = {"tau": ref.tau, "A_d": ref.A_d, "B_d": ref.B_d, "C": ref.C, "G_d": ref.G_d}
        shapes = {"A_d": (4, 4), "B_d": (4, 1), "C": (2, 4), "G_d": (4, 2)}
        for key, value in sec.items():
            if key == "preset":
                continue
            if key == "tau":
                try:
                    parts["tau"] = float(value)
                except ValueError:
                    fail("discrete", key, f"not a number: {value!r}")
            elif key in shapes:
                try:
                    arr = parse_matrix(value)
                    if key == "B_d" and arr.shape == (4,):
                        arr = arr.reshape(4, 1)
                    if arr.shape != shapes[key]:
                        raise ValueError(f"expected shape {shapes[key]}, got {arr.shape}")
                except ValueError as exc:
                    fail("discrete", key, str(exc))
                parts[key] = arr
            else:
                fail("discrete", key, "unknown discrete-gain entry")
        try:
            cfg.discrete = DiscreteGains(**parts)
        except ValueError as exc:
            raise ConfigError(f"{path}: [discrete] {exc}") from exc

    if parser.has_section("scenario"):
        sec = parser["scenario"]
        changes = {}
        if "preset" in sec:
            if sec["preset"] not in SCENARIO_PRESETS:
                fail("scenario", "preset", f"unknown preset {sec['preset']!r}")
            cfg.preset = sec["preset"]
            changes.update(SCENARIO_PRESETS[sec["preset"]])
        for key, value in sec.items():
            if key == "preset":
                continue
            if key in ("controller", "mode"):
                changes[key] = value.strip()
            elif key in ("initial", "x_hat_initial"):
                try:
                    changes[key] = State(*parse_matrix(value, shape=(4,)))
                except ValueError as exc:
                    fail("scenario", key, str(exc))
            elif key in ("theta0", "x0"):
                init = changes.get("initial", cfg.scenario.initial)
                try:
                    changes["initial"] = init._replace(**{"theta" if key == "theta0" else "x": float(value)})
                except ValueError:
                    fail("scenario", key, f"not a number: {value!r}")
            elif key in ("horizon", "dt", "tau", "divergence_bound", "threshold"):
                try:
                    changes[key] = float(value)
                except ValueError:
                    fail("scenario", key, f"not a number: {value!r}")
            else:
                fail("scenario", key, "unknown scenario field")
        try:
            cfg.scenario = cfg.scenario.replace(**changes)
        except ValueError as exc:
            raise ConfigError(f"{path}: [scenario] {exc}") from exc

    if parser.has_section("output"):
        for key, value in parser["output"].items():
            if key != "path":
                fail("output", key, "unknown output field")
            cfg.out = Path(value.strip())
    return cfg


# -- CSV -------------------------------------------------------------------


def _atomic_write(path, write):
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(prefix=f".{path.name}.", dir=path.parent)
    try:
        with os.fdopen(fd, "w", newline="") as fh:
            write(fh)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def _fmt(v):
    return "" if v is None or (isinstance(v, float) and math.isnan(v)) else repr(float(v))


def write_trajectory_csv(tr, path, comments=()):
    """Write a trajectory; ``comments`` become leading ``#`` lines."""

    def write(fh):
        for line in comments:
            fh.write(f"# {line}\n")
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(CSV_FIELDS)
        for i in range(len(tr)):
            est = tr.x_hat[i] if tr.x_hat is not None else (None,) * 4
            H = tr.H[i] if tr.H is not None else None
            w.writerow([_fmt(tr.t[i]), *map(_fmt, tr.states[i]), *map(_fmt, est), _fmt(tr.u[i]), _fmt(H)])

    _atomic_write(path, write)


def read_trajectory_csv(path):
    """Columns of a trajectory CSV as float arrays (NaN for empty cells)."""
    with open(path, newline="") as fh:
        rows = [line for line in fh if not line.startswith("#")]
    reader = csv.reader(rows)
    header = next(reader)
    if tuple(header) != CSV_FIELDS:
        raise ValueError(f"unexpected CSV header {header}")
    data = [[float(v) if v != "" else math.nan for v in row] for row in reader]
    arr = np.array(data, dtype=float).reshape(-1, len(CSV_FIELDS))
    return {name: arr[:, i] for i, name in enumerate(CSV_FIELDS)}


def write_sweep_csv(result, path):
    def write(fh):
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(("tau", "status", "settling_time", "peak_norm"))
        for tau, v in result.rows:
            w.writerow((repr(float(tau)), v.status, _fmt(v.settling_time), _fmt(v.peak_norm)))

    _atomic_write(path, write)


# -- verification ----------------------------------------------------------


@dataclass(frozen=True)
class Check:
    name: str
    value: float
    tolerance: float

    @property
    def ok(self):
        return bool(np.isfinite(self.value)) and self.value < self.tolerance


def identity_grid(law, n_theta=49, n_x=21, theta_max=1.2, x_max=20.0):
    """Grid points ``(theta, x)`` off the switching exclusion bands."""
    pts = []
    for th in np.linspace(-theta_max, theta_max, n_theta):
        for x in np.linspace(-x_max, x_max, n_x):
            if not law.in_band(th, x):
                pts.append((float(th), float(x)))
    return pts


def verify(design=DEFAULT_DESIGN, discrete=DEFAULT_DISCRETE, n_theta=49, n_x=21):
    """Run the residual and reproduction checks; returns a list of :class:`Check`."""
    checks = []

    def guarded(name, fn):
        try:
            value = float(fn())
        except Exception as exc:
            logger.warning("check %s raised %s", name, exc)
            value = math.inf
        checks.append(Check(name, value, TOLERANCES[name]))

    law = MatchingLaw(design)
    pts = identity_grid(law, n_theta, n_x)
    thetas = sorted({th for th, _ in pts})

    def lam():
        out = 0.0
        for th in thetas:
            try:
                out = max(out, *map(abs, law.lambda_residual(th)))
            except SwitchingBandError:
                continue
        return out

    guarded("lambda_residual", lam)
    guarded("g_hat_pde_residual", lambda: max(abs(law.g_hat_pde_residual(th, x)) for th, x in pts))
    guarded("v_hat_pde_residual", lambda: max(abs(law.v_hat_pde_residual(th, x)) for th, x in pts))
    quad_pts = pts[:: max(1, len(pts) // 200)]
    guarded(
        "g11_quadrature_gap",
        lambda: max(abs(law.g_hat(th, x)[0, 0] - law.g11_quadrature(th, x)) for th, x in quad_pts),
    )
    lp = linearize(design.plant)
    guarded("A_d_reproduction", lambda: np.max(np.abs(discretize(lp, discrete.tau)[0] - discrete.A_d)))
    guarded("B_d_reproduction", lambda: np.max(np.abs(discretize(lp, discrete.tau)[1] - discrete.B_d)))
    guarded("observer_spectral_radius", discrete.spectral_radius)
    guarded("sigma_jump_error", design.jump_relation_error)
    return checks


# -- reporting -------------------------------------------------------------


def run_report(tr, verdict, gains=None):
    lines = [
        f"status: {verdict.status}",
        f"settling_time: {'n/a' if verdict.settling_time is None else f'{verdict.settling_time:.6g}'}",
        f"peak_norm: {verdict.peak_norm:.6g}",
    ]
    if tr.H is not None and tr.scenario is not None and tr.scenario.controller == "matching":
        law = matching_law_for(tr.scenario.design)
        worst = -math.inf
        stride = max(1, len(tr) // 5000)
        for s in tr.states[::stride]:
            try:
                worst = max(worst, law.lyapunov_rate(s))
            except matching_law.GeometryError:
                continue
        lines.append(f"max_H_rate: {worst:.6g}")
        if tr.scenario.mode == "continuous":
            inc, crossings = lyapunov_increase(tr, law)
            lines.append(f"max_H_step_increase: {inc:.6g} (switching crossings excluded: {crossings})")
    if tr.discrete is not None:
        lines.append(f"observer_spectral_radius: {tr.discrete.spectral_radius():.6g}")
    if gains is not None:
        lines.append(f"linear_gains: p1={gains.p1:.10g} p2={gains.p2:.10g} d1={gains.d1:.10g} d2={gains.d2:.10g}")
    lines.extend(f"event: {e}" for e in tr.events)
    return "\n".join(lines)


def matching_law_for(design):
    from .sim_engine import matching_law as cached

    return cached(design)


# -- argument handling -----------------------------------------------------


def _build_parser():
    parser = argparse.ArgumentParser(prog="matching-pendulum", description=__doc__.split("\n")[0])
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    def scenario_flags(p):
        p.add_argument("--preset", choices=sorted(SCENARIO_PRESETS))
        p.add_argument("--config", type=Path)
        p.add_argument("--out", type=Path)
        p.add_argument("--tau", type=float)
        p.add_argument("--horizon", type=float)
        p.add_argument("--dt", type=float)
        p.add_argument("--controller", choices=("matching", "linear", "none"))
        p.add_argument("--mode", choices=("continuous", "sampled"))
        p.add_argument("--theta0", type=float)
        p.add_argument("--x0", type=float)

    scenario_flags(sub.add_parser("run", help="simulate one scenario and write its trajectory CSV"))
    v = sub.add_parser("verify", help="check the matching identities and the discrete gains")
    v.add_argument("--config", type=Path)
    v.add_argument("--grid", type=int, nargs=2, default=(49, 21), metavar=("N_THETA", "N_X"))
    sw = sub.add_parser("sweep", help="stability over a logarithmic grid of sample times")
    scenario_flags(sw)
    sw.add_argument("--tau-min", type=float, required=True)
    sw.add_argument("--tau-max", type=float, required=True)
    sw.add_argument("--steps", type=int, default=8)
    sw.add_argument("--include", type=float, action="append", default=[], help="extra tau values")
    sw.add_argument("--workers", type=int, default=None)
    return parser


def _config_from_args(args):
    cfg = RunConfig()
    if getattr(args, "preset", None):
        cfg.preset = args.preset
        cfg.scenario = cfg.scenario.replace(**SCENARIO_PRESETS[args.preset])
    if args.config is not None:
        cfg = load_config(args.config, base=cfg)
    changes = {}
    for key in ("tau", "horizon", "dt", "controller", "mode"):
        value = getattr(args, key, None)
        if value is not None:
            changes[key] = value
    init = cfg.scenario.initial
    if getattr(args, "theta0", None) is not None:
        init = init._replace(theta=args.theta0)
    if getattr(args, "x0", None) is not None:
        init = init._replace(x=args.x0)
    if init != cfg.scenario.initial:
        changes["initial"] = init
    if changes:
        try:
            cfg.scenario = cfg.scenario.replace(**changes)
        except ValueError as exc:
            raise ConfigError(str(exc)) from exc
    if getattr(args, "out", None) is not None:
        cfg.out = args.out
    return cfg


def _default_out(cfg, stem):
    if cfg.out is not None:
        return cfg.out
    return Path(os.environ.get(OUT_DIR_ENV, ".")) / f"{stem}.csv"


def _cmd_run(args):
    cfg = _config_from_args(args)
    sc = cfg.resolved_scenario()
    tr = simulate(sc)
    verdict = classify(tr, sc.threshold)
    gains = linear_gains(sc.design) if sc.controller != "none" else None
    comments = [
        f"controller={sc.controller} mode={sc.mode} initial={tuple(sc.initial)} horizon={sc.horizon} dt={sc.dt}"
        + (f" tau={sc.tau}" if sc.mode == "sampled" else ""),
        f"status={verdict.status}",
    ]
    if gains is not None:
        comments.append(f"linear_gains p1={gains.p1!r} p2={gains.p2!r} d1={gains.d1!r} d2={gains.d2!r}")
    out = _default_out(cfg, cfg.preset or "run")
    write_trajectory_csv(tr, out, comments)
    print(run_report(tr, verdict, gains))
    print(f"csv: {out}")
    return 2 if tr.geometry_failed else 0


def _cmd_verify(args):
    cfg = RunConfig()
    if args.config is not None:
        cfg = load_config(args.config, base=cfg)
    checks = verify(cfg.design, cfg.discrete, *args.grid)
    for c in checks:
        print(f"{'PASS' if c.ok else 'FAIL'} {c.name}: {c.value:.3e} (tolerance {c.tolerance:.0e})")
    return 0 if all(c.ok for c in checks) else 3


def _cmd_sweep(args):
    if not args.tau_min > 0.0 or args.tau_max < args.tau_min or args.steps < 1:
        raise ConfigError("need 0 < tau-min <= tau-max and steps >= 1")
    cfg = _config_from_args(args)
    base = cfg.resolved_scenario().replace(mode="sampled", discrete=None)
    if args.steps == 1:
        grid = [args.tau_min]
    else:
        grid = list(np.geomspace(args.tau_min, args.tau_max, args.steps))
    grid = sorted(set(grid) | set(args.include))
    result = tau_sweep(base, grid, workers=args.workers)
    out = _default_out(cfg, "sweep")
    write_sweep_csv(result, out)
    for tau, v in result.rows:
        st = "" if v.settling_time is None else f"{v.settling_time:.4g}"
        print(f"{tau:.6g},{v.status},{st},{v.peak_norm:.4g}")
    print(f"largest converged tau: {result.largest_converged}")
    if result.non_monotone:
        print("note: converged/diverged pattern is not monotone in tau")
    print(f"csv: {out}")
    return 0


def main(argv=None):
    parser = _build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(name)s: %(message)s")
    try:
        return {"run": _cmd_run, "verify": _cmd_verify, "sweep": _cmd_sweep}[args.command](args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 1
    except matching_law.GeometryError as exc:
        print(f"geometry error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
