"""Fixed-step RK4 simulation of the closed loops and stability classification."""
from __future__ import annotations

import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field, replace
from functools import lru_cache
from typing import Optional

import numpy as np

from .digital_loop import DiscreteGains
from .linear_control import derive_gains, linear_u
from .matching_law import DEFAULT_DESIGN, DesignParams, GeometryError, MatchingLaw
from .pendulum_model import State, vector_field

CONTROLLERS = ("matching", "linear", "none")
MODES = ("continuous", "sampled")


@dataclass(frozen=True)
class Scenario:
    """One closed-loop run.

    ``mode`` is ``"continuous"`` (full-state feedback evaluated at every RK4
    stage) or ``"sampled"`` (zero-order hold on the estimate from the discrete
    observer).  ``x_hat_initial`` defaults to ``initial``.  ``discrete`` is
    only used in sampled mode; ``None`` selects the gains for ``tau`` through
    :func:`digital_loop.gains_for_tau`.
    """

    controller: str = "matching"
    mode: str = "continuous"
    initial: State = State(0.4, 0.0, 0.0, 0.0)
    x_hat_initial: Optional[State] = None
    horizon: float = 60.0
    dt: float = 1e-3
    tau: float = 0.0143
    divergence_bound: float = 50.0
    threshold: float = 0.02
    design: DesignParams = DEFAULT_DESIGN
    discrete: Optional[DiscreteGains] = None

    def __post_init__(self):
        if self.controller not in CONTROLLERS:
            raise ValueError(f"controller must be one of {CONTROLLERS}, got {self.controller!r}")
        if self.mode not in MODES:
            raise ValueError(f"mode must be one of {MODES}, got {self.mode!r}")
        if not self.dt > 0.0 or not self.horizon > 0.0:
            raise ValueError("dt and horizon must be positive")
        if self.mode == "sampled" and self.tau < self.dt * (1.0 - 1e-9):
            raise ValueError(f"tau={self.tau} must be at least dt={self.dt} in sampled mode")
        object.__setattr__(self, "initial", State(*map(float, self.initial)))
        if self.x_hat_initial is not None:
            object.__setattr__(self, "x_hat_initial", State(*map(float, self.x_hat_initial)))

    def replace(self, **changes):
        return replace(self, **changes)


@dataclass
class Trajectory:
    """Time-ordered record of a run.

    ``x_hat`` and ``H`` are ``None`` when not applicable; ``H`` holds NaN at
    samples where the matching geometry is undefined.
    """

    t: np.ndarray
    states: np.ndarray
    u: np.ndarray
    x_hat: Optional[np.ndarray] = None
    H: Optional[np.ndarray] = None
    status: str = "horizon-reached"
    terminated: bool = False
    events: list = field(default_factory=list)
    scenario: Optional[Scenario] = None
    discrete: Optional[DiscreteGains] = None

    def __len__(self):
        return len(self.t)

    @property
    def geometry_failed(self):
        return any(e.startswith("geometry") for e in self.events)


@dataclass(frozen=True)
class StabilityVerdict:
    status: str
    settling_time: Optional[float]
    peak_norm: float


def rk4_step(f, state, dt):
    """One classical Runge-Kutta step of ``dy/dt = f(y)``."""
    k1 = f(state)
    k2 = f(state + 0.5 * dt * k1)
    k3 = f(state + 0.5 * dt * k2)
    k4 = f(state + dt * k3)
    return state + (dt / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4)


@lru_cache(maxsize=32)
def matching_law(design):
    return MatchingLaw(design)


@lru_cache(maxsize=32)
def linear_gains(design):
    return derive_gains(matching_law(design))


def make_controller(controller, design=DEFAULT_DESIGN):
    """Feedback ``u(state)`` for a controller name."""
    if controller == "matching":
        return matching_law(design).control_force
    if controller == "linear":
        gains = linear_gains(design)
        return lambda s: linear_u(gains, s)
    if controller == "none":
        return lambda s: 0.0
    raise ValueError(f"unknown controller {controller!r}")


def lyapunov_or_nan(law, s):
    try:
        return law.lyapunov(s)
    except GeometryError:
        return math.nan


class _Recorder:
    def __init__(self, capacity, with_estimate, with_lyapunov):
        self.t = np.empty(capacity)
        self.states = np.empty((capacity, 4))
        self.u = np.empty(capacity)
        self.x_hat = np.empty((capacity, 4)) if with_estimate else None
        self.H = np.empty(capacity) if with_lyapunov else None
        self.n = 0

    def add(self, t, s, u, x_hat=None, H=None):
        i = self.n
        self.t[i] = t
        self.states[i] = s
        self.u[i] = u
        if self.x_hat is not None:
            self.x_hat[i] = x_hat
        if self.H is not None:
            self.H[i] = H
        self.n += 1

    def trajectory(self, **kw):
        n = self.n
        return Trajectory(
            t=self.t[:n].copy(),
            states=self.states[:n].copy(),
            u=self.u[:n].copy(),
            x_hat=None if self.x_hat is None else self.x_hat[:n].copy(),
            H=None if self.H is None else self.H[:n].copy(),
            **kw,
        )


def _out_of_bounds(s, bound):
    return not np.all(np.isfinite(s)) or np.max(np.abs(s)) > bound


def _continuous_run(sc):
    u_of = make_controller(sc.controller, sc.design)
    law = matching_law(sc.design) if sc.controller != "none" else None
    plant = sc.design.plant
    steps = int(round(sc.horizon / sc.dt))
    rec = _Recorder(steps + 1, with_estimate=False, with_lyapunov=law is not None)

    def field(z):
        return vector_field(z, u_of(z), plant)

    s = np.array(sc.initial, dtype=float)
    events = []
    terminated = False
    for k in range(steps + 1):
        try:
            u = u_of(s)
        except GeometryError as exc:
            events.append(f"geometry: {exc}")
            terminated = True
            break
        rec.add(k * sc.dt, s, u, H=None if law is None else lyapunov_or_nan(law, s))
        if _out_of_bounds(s, sc.divergence_bound):
            events.append(f"diverged: |state| exceeded {sc.divergence_bound} at t={k * sc.dt:.6g}")
            terminated = True
            break
        if k == steps:
            break
        try:
            s = rk4_step(field, s, sc.dt)
        except GeometryError as exc:
            events.append(f"geometry: {exc}")
            terminated = True
            break
    return rec.trajectory(events=events, terminated=terminated, scenario=sc)


def simulate(sc):
    """Run a scenario and classify the result."""
    if sc.mode == "sampled":
        from .digital_loop import sampled_run

        tr = sampled_run(sc)
    else:
        tr = _continuous_run(sc)
    tr.status = classify(tr, sc.threshold).status
    return tr


def lyapunov_increase(tr, law):
    """Largest one-step increase of ``tr.H`` between samples in the same smooth region.

    Steps that cross a switching surface are excluded and counted.  Returns
    ``(max_increase, crossings)``; ``max_increase`` is ``-inf`` when no step
    qualifies.
    """
    if tr.H is None:
        raise ValueError("trajectory carries no H_hat record")
    regions = [law.region(th, x) for th, x in tr.states[:, :2].tolist()]
    worst = -math.inf
    crossings = 0
    for k in range(len(tr) - 1):
        if regions[k] != regions[k + 1]:
            crossings += 1
            continue
        step = tr.H[k + 1] - tr.H[k]
        if np.isfinite(step):
            worst = max(worst, float(step))
    return worst, crossings


def classify(tr, threshold=0.02):
    """Stability verdict of a trajectory.

    Converged when ``|state|_inf < threshold`` over the final 10% of the
    scenario horizon; diverged when the run was terminated early.
    """
    norms = np.max(np.abs(tr.states), axis=1) if len(tr) else np.array([np.inf])
    peak = float(np.max(norms))
    above = np.nonzero(~(norms < threshold))[0]
    if len(above) == 0:
        settling = float(tr.t[0])
    elif above[-1] + 1 < len(tr):
        settling = float(tr.t[above[-1] + 1])
    else:
        settling = None

    if tr.terminated:
        return StabilityVerdict("diverged", None, peak)
    horizon = tr.scenario.horizon if tr.scenario is not None else float(tr.t[-1] - tr.t[0])
    tail_start = float(tr.t[-1]) - 0.1 * horizon
    tail = norms[tr.t >= tail_start - 1e-12]
    if settling is not None and np.all(tail < threshold):
        return StabilityVerdict("converged", settling, peak)
    return StabilityVerdict("horizon-reached", settling, peak)


@dataclass(frozen=True)
class SweepResult:
    rows: tuple
    largest_converged: Optional[float]
    non_monotone: bool


def _sweep_one(sc):
    tr = simulate(sc)
    return sc.tau, classify(tr, sc.threshold)


def tau_sweep(base, tau_grid, workers=None):
    """Sampled runs of ``base`` over ``tau_grid``.

    ``non_monotone`` flags grids where a diverged or undecided tau lies
    below a converged one; it is reported, not enforced.
    """
    if base.mode != "sampled":
        raise ValueError("tau_sweep needs a sampled-mode scenario")
    scenarios = []
    for tau in sorted(float(t) for t in tau_grid):
        dt = min(base.dt, tau)
        scenarios.append(base.replace(tau=tau, dt=dt, discrete=None))
    if workers and workers > 1:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            results = list(pool.map(_sweep_one, scenarios))
    else:
        results = [_sweep_one(sc) for sc in scenarios]
    results.sort(key=lambda r: r[0])
    ok = [r[1].status == "converged" for r in results]
    converged = [tau for tau, v in results if v.status == "converged"]
    non_monotone = any(not ok[i] and any(ok[i + 1:]) for i in range(len(ok)))
    return SweepResult(tuple(results), max(converged) if converged else None, non_monotone)
