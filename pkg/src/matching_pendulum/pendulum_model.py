"""Scaled inverted pendulum on a cart.

Configuration coordinates are ``q = (theta, x)`` with ``theta = 0`` upright.
The kinetic energy metric is ``g = dtheta^2 + 2 b cos(theta) dx dtheta + dx^2``
and the potential is ``V = cos(theta)``.  Only the cart coordinate is actuated.
State vectors are ordered ``(theta, x, theta_dot, x_dot)`` everywhere.
"""
from __future__ import annotations

import math
from dataclasses import dataclass
from typing import NamedTuple

import numpy as np


class State(NamedTuple):
    theta: float = 0.0
    x: float = 0.0
    theta_dot: float = 0.0
    x_dot: float = 0.0


@dataclass(frozen=True)
class PlantParams:
    b: float = 0.238

    def __post_init__(self):
        if not 0.0 < self.b < 1.0:
            raise ValueError(f"coupling parameter b must lie in (0, 1), got {self.b}")


DEFAULT_PLANT = PlantParams()


@dataclass(frozen=True)
class LinearPlant:
    A: np.ndarray
    B: np.ndarray


def mass_matrix(theta, params=DEFAULT_PLANT):
    """Metric ``g`` at angle ``theta`` as a 2x2 array."""
    bc = params.b * math.cos(theta)
    return np.array([[1.0, bc], [bc, 1.0]])


def mass_matrix_derivative(theta, params=DEFAULT_PLANT):
    """``dg[l] = d g / d q_l``; the metric does not depend on ``x``."""
    dg = np.zeros((2, 2, 2))
    dbc = -params.b * math.sin(theta)
    dg[0, 0, 1] = dg[0, 1, 0] = dbc
    return dg


def levi_civita(g, dg):
    """Christoffel symbols ``Gamma[k, i, j]`` of a metric.

    Parameters
    ----------
    g : (n, n) array
        Metric at the point.
    dg : (n, n, n) array
        ``dg[l, i, j] = d g_ij / d q_l``.
    """
    g_inv = np.linalg.inv(g)
    # first kind: Gamma_{l,ij} = (d_i g_lj + d_j g_li - d_l g_ij) / 2
    first = 0.5 * (
        np.einsum("ilj->lij", dg) + np.einsum("jli->lij", dg) - dg
    )
    return np.einsum("kl,lij->kij", g_inv, first)


def christoffel(theta, params=DEFAULT_PLANT):
    return levi_civita(mass_matrix(theta, params), mass_matrix_derivative(theta, params))


def plant_accel(s, u, params=DEFAULT_PLANT):
    """Accelerations ``(theta_ddot, x_ddot)`` of the cart-pendulum under cart force ``u``.

    Solves ``M(theta) q_ddot = (sin theta, u + b sin(theta) theta_dot^2)``.
    """
    if isinstance(s, np.ndarray):
        s = s.tolist()
    theta, _, theta_dot, _ = s
    b = params.b
    c = math.cos(theta)
    sn = math.sin(theta)
    det = 1.0 - b * b * c * c
    r1 = sn
    r2 = u + b * sn * theta_dot * theta_dot
    return (r1 - b * c * r2) / det, (r2 - b * c * r1) / det


def vector_field(s, u, params=DEFAULT_PLANT):
    """First-order form ``d/dt (theta, x, theta_dot, x_dot)`` under held force ``u``."""
    if isinstance(s, np.ndarray):
        s = s.tolist()
    a1, a2 = plant_accel(s, u, params)
    return np.array([s[2], s[3], a1, a2])


def energy(s, params=DEFAULT_PLANT):
    theta, _, td, xd = s
    bc = params.b * math.cos(theta)
    return 0.5 * (td * td + 2.0 * bc * td * xd + xd * xd) + math.cos(theta)


def linearize(params=DEFAULT_PLANT):
    """Linearization of the plant about the upright equilibrium."""
    b = params.b
    d = 1.0 - b * b
    A = np.zeros((4, 4))
    A[0, 2] = A[1, 3] = 1.0
    A[2, 0] = 1.0 / d
    A[3, 0] = -b / d
    B = np.array([[0.0], [0.0], [-b / d], [1.0 / d]])
    return LinearPlant(A=A, B=B)
