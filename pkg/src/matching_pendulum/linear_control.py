"""Linear comparison law: the exact linearization of the matching law at the origin."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .pendulum_model import linearize


class NotHurwitzError(ValueError):
    pass


@dataclass(frozen=True)
class LinearGains:
    p1: float
    p2: float
    d1: float
    d2: float

    def as_array(self):
        return np.array([self.p1, self.p2, self.d1, self.d2])


def linear_u(gains, s):
    return gains.p1 * s[0] + gains.p2 * s[1] + gains.d1 * s[2] + gains.d2 * s[3]


def closed_loop_matrix(gains, plant):
    return plant.A + plant.B @ gains.as_array()[None, :]


def derive_gains(law, step=1e-6, ratio_tol=1e-3):
    """Gains ``(p1, p2, d1, d2)`` of the matching law linearized at the origin.

    Central differences of :meth:`MatchingLaw.control_force` along each state
    axis.  Raises :class:`NotHurwitzError` when the linear closed loop is not
    stable and ``ValueError`` when ``d1 sigma_0 + d2 mu_0`` does not vanish.
    """
    grads = []
    for i in range(4):
        e = np.zeros(4)
        e[i] = step
        grads.append((law.control_force(e) - law.control_force(-e)) / (2 * step))
    gains = LinearGains(*grads)

    p = law.params
    tangency = gains.d1 * p.sigma_0 + gains.d2 * p.mu_0
    if abs(tangency) > ratio_tol * abs(gains.d1 * p.sigma_0):
        raise ValueError(f"d1*sigma_0 + d2*mu_0 = {tangency:.3e} does not vanish")

    eig = np.linalg.eigvals(closed_loop_matrix(gains, linearize(p.plant)))
    if np.any(eig.real >= 0.0):
        raise NotHurwitzError(f"linear closed loop not Hurwitz, eigenvalues {eig}")
    return gains
