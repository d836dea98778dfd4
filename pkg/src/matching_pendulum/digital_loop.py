"""Sampled-data loop: zero-order-hold discretization and the discrete observer.

Per sample ``k`` the loop reads ``y_k = C x(tau k)`` from the nonlinear plant,
applies ``u_k = u(x_hat_k)`` over ``[tau k, tau (k+1))`` and advances the
estimate with

    x_hat_{k+1} = A_d x_hat_k + B_d u_k + G_d (y_k - C x_hat_k).
"""
from __future__ import annotations

import math
import warnings
from dataclasses import dataclass

import numpy as np
from scipy.linalg import expm
from scipy.signal import place_poles

from .pendulum_model import PlantParams, linearize, vector_field

OUTPUT_MAP = np.array([[1.0, 0.0, 0.0, 0.0], [0.0, 1.0, 0.0, 0.0]])


@dataclass(frozen=True)
class DiscreteGains:
    tau: float
    A_d: np.ndarray
    B_d: np.ndarray
    C: np.ndarray
    G_d: np.ndarray

    def __post_init__(self):
        shapes = {"A_d": (4, 4), "B_d": (4, 1), "C": (2, 4), "G_d": (4, 2)}
        for name, shape in shapes.items():
            arr = np.array(getattr(self, name), dtype=float)
            if arr.shape != shape and name == "B_d" and arr.shape == (4,):
                arr = arr.reshape(4, 1)
            if arr.shape != shape:
                raise ValueError(f"{name} must have shape {shape}, got {arr.shape}")
            arr.setflags(write=False)
            object.__setattr__(self, name, arr)
        if not self.tau > 0.0:
            raise ValueError(f"tau must be positive, got {self.tau}")

    @property
    def error_matrix(self):
        return self.A_d - self.G_d @ self.C

    def spectral_radius(self):
        return float(np.max(np.abs(np.linalg.eigvals(self.error_matrix))))

    def __eq__(self, other):
        if not isinstance(other, DiscreteGains):
            return NotImplemented
        return self.tau == other.tau and all(
            np.array_equal(getattr(self, n), getattr(other, n)) for n in ("A_d", "B_d", "C", "G_d")
        )

    def __hash__(self):
        return hash((self.tau, self.A_d.tobytes(), self.G_d.tobytes()))


DEFAULT_DISCRETE = DiscreteGains(
    tau=0.0143,
    A_d=[
        [1.0, 0.0, 0.0143, 0.0],
        [0.0, 1.0, 0.0, 0.0143],
        [0.0151, 0.0, 1.0, 0.0],
        [-0.0036, 0.0, 0.0, 1.0],
    ],
    B_d=[[0.0], [0.0], [-0.0036], [0.0151]],
    C=OUTPUT_MAP,
    G_d=[
        [0.168, 0.0],
        [-0.0001, 0.165],
        [0.509, 0.0],
        [-0.0039, 0.473],
    ],
)
PRESETS = {"default": DEFAULT_DISCRETE}


def discretize(lp, tau):
    """Zero-order-hold discretization ``(A_d, B_d)`` of a linear plant.

    ``A_d = exp(tau A)`` and ``B_d = int_0^tau exp(s A) ds B``, both read off
    the exponential of the augmented matrix ``[[A, B], [0, 0]]``.
    """
    if not tau > 0.0:
        raise ValueError(f"tau must be positive, got {tau}")
    n, m = lp.B.shape
    aug = np.zeros((n + m, n + m))
    aug[:n, :n] = lp.A
    aug[:n, n:] = lp.B
    phi = expm(tau * aug)
    return phi[:n, :n], phi[:n, n:]


def continuous_observer_poles(dg):
    """Continuous-time poles ``p`` with ``spec(A_d - G_d C) = exp(tau p)``."""
    return np.log(np.linalg.eigvals(dg.error_matrix).astype(complex)) / dg.tau


def place_observer(A_d, C, poles):
    """Observer gain ``G_d`` with ``spec(A_d - G_d C) = poles``."""
    with warnings.catch_warnings():
        # the warning concerns the robustness refinement, not the placement
        warnings.filterwarnings("ignore", message="Convergence was not reached")
        G_d = place_poles(A_d.T, C.T, poles, maxiter=100).gain_matrix.T
    placed = np.sort_complex(np.linalg.eigvals(A_d - G_d @ C))
    if np.max(np.abs(placed - np.sort_complex(np.asarray(poles, dtype=complex)))) > 1e-6:
        raise ValueError("observer pole placement failed to reach the requested spectrum")
    return G_d


def gains_for_tau(tau, plant=PlantParams(), reference=DEFAULT_DISCRETE, continuous_poles=None):
    """Discrete gains at sample time ``tau``.

    Returns ``reference`` when ``tau`` equals its sample time.  Otherwise
    ``A_d, B_d`` are recomputed for ``tau`` and ``G_d`` is placed so that
    ``spec(A_d - G_d C)`` equals ``exp(tau p)`` for the supplied
    ``continuous_poles``.  Without them the reference's per-sample spectrum
    is kept, so the estimate contracts by the same factor each sample and
    the observer tightens as ``tau`` shrinks.
    """
    if continuous_poles is None and math.isclose(tau, reference.tau, rel_tol=1e-12):
        return reference
    A_d, B_d = discretize(linearize(plant), tau)
    if continuous_poles is None:
        poles = np.linalg.eigvals(reference.error_matrix)
    else:
        poles = np.exp(tau * np.asarray(continuous_poles, dtype=complex))
    return DiscreteGains(tau, A_d, B_d, reference.C, place_observer(A_d, reference.C, poles))


def observer_step(dg, x_hat, y, u):
    """One step of the discrete Luenberger observer."""
    x_hat = np.asarray(x_hat, dtype=float)
    innovation = np.asarray(y, dtype=float) - dg.C @ x_hat
    return dg.A_d @ x_hat + dg.B_d[:, 0] * u + dg.G_d @ innovation


def sampled_run(sc):
    """Sampled-data closed loop with the discrete observer (see module docstring).

    The plant is integrated with ``ceil(tau / dt)`` RK4 substeps per sample,
    so sample instants fall exactly on the integration grid.
    """
    from .matching_law import GeometryError
    from .sim_engine import _out_of_bounds, _Recorder, lyapunov_or_nan, make_controller, matching_law, rk4_step

    dg = sc.discrete if sc.discrete is not None else gains_for_tau(sc.tau, sc.design.plant)
    if not math.isclose(dg.tau, sc.tau, rel_tol=1e-12):
        raise ValueError(f"discrete gains were built for tau={dg.tau}, scenario has tau={sc.tau}")
    u_of = make_controller(sc.controller, sc.design)
    law = matching_law(sc.design) if sc.controller != "none" else None
    plant = sc.design.plant

    substeps = max(1, math.ceil(sc.tau / sc.dt - 1e-9))
    h = sc.tau / substeps
    samples = int(round(sc.horizon / sc.tau))
    rec = _Recorder(samples * substeps + 1, with_estimate=True, with_lyapunov=law is not None)

    s = np.array(sc.initial, dtype=float)
    x_hat = np.array(sc.x_hat_initial if sc.x_hat_initial is not None else sc.initial, dtype=float)
    events = []
    terminated = False
    u = 0.0
    for k in range(samples):
        y = dg.C @ s
        try:
            u = u_of(x_hat)
        except GeometryError as exc:
            events.append(f"geometry: {exc}")
            terminated = True
            break

        def field(z, u=u):
            return vector_field(z, u, plant)

        for j in range(substeps):
            rec.add((k * substeps + j) * h, s, u, x_hat, None if law is None else lyapunov_or_nan(law, s))
            if _out_of_bounds(s, sc.divergence_bound):
                terminated = True
                break
            s = rk4_step(field, s, h)
        if terminated:
            events.append(f"diverged: |state| exceeded {sc.divergence_bound}")
            break
        x_hat = observer_step(dg, x_hat, y, u)
        if not np.all(np.isfinite(x_hat)):
            events.append("diverged: estimate not finite")
            terminated = True
            break
    if not terminated:
        rec.add(samples * substeps * h, s, u, x_hat, None if law is None else lyapunov_or_nan(law, s))
        if _out_of_bounds(s, sc.divergence_bound):
            events.append(f"diverged: |state| exceeded {sc.divergence_bound}")
            terminated = True
    return rec.trajectory(events=events, terminated=terminated, scenario=sc, discrete=dg)
