"""Matching control law for the cart-pendulum.

The closed loop is shaped into a mechanical system with metric ``g_hat``,
potential ``V_hat`` and dissipation ``c_hat``.  Every design function is a
step function in ``theta`` (switch at ``|theta| = theta_L``) or in the
characteristic coordinate ``y`` (switch at ``y_L``), so each quantity below is
piecewise smooth.  Inside one smooth region ``g_hat`` depends on ``theta`` only.

The hot path (:meth:`MatchingLaw.control_force`) evaluates everything from
region-locked closed forms with exact ``theta`` derivatives.  The finite
difference routes (:meth:`MatchingLaw.christoffel_hat` with ``method="fd"``,
the PDE residuals) are kept as independent checks on those closed forms.
"""
from __future__ import annotations

import logging
import math
from dataclasses import dataclass, fields, replace
from typing import NamedTuple

import numpy as np
from scipy import integrate

from .pendulum_model import PlantParams, levi_civita, mass_matrix, mass_matrix_derivative

logger = logging.getLogger(__name__)

FD_STEP = 1e-6
BAND = 1e-3
MATCHING_TOL = 1e-3


class GeometryError(ValueError):
    """The synthesized geometry is undefined at the requested point."""


class DomainError(GeometryError):
    pass


class IndefiniteMetricError(GeometryError):
    pass


class MatchingConstraintError(GeometryError):
    pass


class SwitchingBandError(ValueError):
    """Point lies too close to a switching surface for a finite-difference check."""


@dataclass(frozen=True)
class DesignParams:
    """Constants of the matching law.

    ``sigma_inf`` is the rounded outer plateau listed with the design; the
    law itself uses :attr:`sigma_outer`, which follows from ``sigma_0`` and the
    mu plateaus through the jump relation.

    ``switch_regions`` selects ``"symmetric"`` (``|y| <= y_L``) or
    ``"one_sided"`` (``y <= y_L``) for the inner region of ``h`` and ``w``.
    ``g11_form`` selects ``"integrated"`` or ``"sigma0_scaled"`` (the fourth term
    of the simplified ``g_hat_11`` divided by ``sigma_0**2`` instead of
    ``sigma**2``).  ``dissipation_form`` selects ``"region_local"`` or
    ``"inner_constants"`` (inner constants ``mu_0, sigma_0`` used everywhere in
    ``c_hat``).
    """

    b: float = 0.238
    theta_L: float = 0.3
    y_L: float = 15.0
    sigma_0: float = -1.59
    sigma_inf: float = -0.05
    mu_0: float = 17.0
    mu_inf: float = 9.9
    w_0: float = 0.00296
    w_inf: float = 1.5
    phi_0: float = 1.48
    phi_inf: float = 0.75
    h_0: float = 0.0081
    h_inf: float = 0.03
    switch_regions: str = "symmetric"
    g11_form: str = "integrated"
    dissipation_form: str = "region_local"

    def __post_init__(self):
        PlantParams(self.b)
        choices = {
            "switch_regions": ("symmetric", "one_sided"),
            "g11_form": ("integrated", "sigma0_scaled"),
            "dissipation_form": ("region_local", "inner_constants"),
        }
        for name, allowed in choices.items():
            if getattr(self, name) not in allowed:
                raise ValueError(f"{name} must be one of {allowed}, got {getattr(self, name)!r}")
        if self.sigma_0 == 0.0 or self.mu_0 == 0.0 or self.mu_inf == 0.0:
            raise ValueError("sigma_0, mu_0 and mu_inf must be nonzero")
        if self.sigma_outer == 0.0:
            raise ValueError("outer sigma plateau vanishes")

    @property
    def sigma_outer(self):
        return self.sigma_0 + self.b * (self.mu_0 - self.mu_inf) * math.cos(self.theta_L) ** 2

    def jump_relation_error(self):
        """Distance between the derived outer sigma plateau and the listed ``sigma_inf``."""
        return abs(self.sigma_outer - self.sigma_inf)

    @property
    def plant(self):
        return PlantParams(self.b)

    def as_dict(self):
        return {f.name: getattr(self, f.name) for f in fields(self)}

    def replace(self, **changes):
        return replace(self, **changes)


DEFAULT_DESIGN = DesignParams()
PRESETS = {"default": DEFAULT_DESIGN}


def _floats(s):
    # scalar math on Python floats is several times faster than on numpy scalars
    return s.tolist() if isinstance(s, np.ndarray) else s


class Region(NamedTuple):
    inner_theta: bool
    inner_y: bool


class MatchingLaw:
    """Matching control law built from a set of :class:`DesignParams`."""

    def __init__(self, params=DEFAULT_DESIGN):
        self.params = params
        p = params
        self._cL = math.cos(p.theta_L)
        self._sL = math.sin(p.theta_L)
        self._sig_out = p.sigma_outer
        self.dissipation_sign = 1.0
        self.dissipation_sign = self._resolve_dissipation_sign()

    def __repr__(self):
        return f"MatchingLaw({self.params!r})"

    # -- design functions -------------------------------------------------

    def _plateaus(self, inner_theta):
        p = self.params
        if inner_theta:
            return p.sigma_0, p.mu_0
        return self._sig_out, p.mu_inf

    def mu(self, theta):
        m = self.params.mu_0 if abs(theta) <= self.params.theta_L else self.params.mu_inf
        return m * math.cos(theta)

    def dmu(self, theta):
        m = self.params.mu_0 if abs(theta) <= self.params.theta_L else self.params.mu_inf
        return -m * math.sin(theta)

    def sigma(self, theta):
        return self.params.sigma_0 if abs(theta) <= self.params.theta_L else self._sig_out

    def dsigma(self, theta):
        # sigma + b cos(theta) mu is conserved up to -2b sin(theta) mu, which
        # makes sigma constant inside each region
        return 0.0

    def phi(self, theta):
        p = self.params
        return p.phi_0 if abs(theta) <= p.theta_L else p.phi_inf

    def _inner_y(self, y):
        if self.params.switch_regions == "symmetric":
            return abs(y) <= self.params.y_L
        return y <= self.params.y_L

    def h(self, y):
        return self.params.h_0 if self._inner_y(y) else self.params.h_inf

    def w(self, y):
        weight = self.params.w_0 if self._inner_y(y) else self.params.w_inf
        return 0.5 * weight * y * y

    def lambda_residual(self, theta):
        """Residuals of the two lambda-equations at ``theta`` (exact derivatives)."""
        if abs(abs(theta) - self.params.theta_L) < 1e-6:
            raise SwitchingBandError(f"theta={theta} lies on the switching surface")
        b = self.params.b
        c, s = math.cos(theta), math.sin(theta)
        mu, dmu = self.mu(theta), self.dmu(theta)
        # d/dtheta (sigma + b cos(theta) mu) + 2 b sin(theta) mu
        r1 = self.dsigma(theta) - b * s * mu + b * c * dmu + 2.0 * b * s * mu
        # sigma and mu carry no x dependence
        r2 = 0.0
        return r1, r2

    # -- characteristic coordinate and regions ----------------------------

    def _y_locked(self, theta, x, inner_theta):
        p = self.params
        if inner_theta:
            return x - (p.mu_0 / p.sigma_0) * math.sin(theta)
        sg = 1.0 if theta >= 0.0 else -1.0
        return (
            x
            - (p.mu_0 / p.sigma_0) * self._sL * sg
            - (p.mu_inf / self._sig_out) * (math.sin(theta) - self._sL * sg)
        )

    def y_coord(self, theta, x):
        """Characteristic coordinate ``y = x - int_0^theta mu/sigma``."""
        return self._y_locked(theta, x, abs(theta) <= self.params.theta_L)

    def region(self, theta, x):
        inner_theta = abs(theta) <= self.params.theta_L
        return Region(inner_theta, self._inner_y(self._y_locked(theta, x, inner_theta)))

    def in_band(self, theta, x, width=BAND):
        """True when ``(theta, x)`` is within ``width`` of a switching surface."""
        p = self.params
        if abs(abs(theta) - p.theta_L) < width:
            return True
        y = self.y_coord(theta, x)
        if p.switch_regions == "symmetric":
            return abs(abs(y) - p.y_L) < width
        return abs(y - p.y_L) < width

    # -- synthesized metric -----------------------------------------------

    def _check_domain(self, theta):
        if abs(theta) >= 0.5 * math.pi:
            raise DomainError(f"g_hat undefined for |theta| >= pi/2 (theta={theta})")

    def _g_locked(self, theta, region):
        """Components of ``g_hat`` and their theta derivatives in a fixed region.

        Returns ``(g11, g12, g22, dg11, dg12, dg22)``.
        """
        p = self.params
        b = p.b
        sig, m = self._plateaus(region.inner_theta)
        hv = p.h_0 if region.inner_y else p.h_inf
        c, s = math.cos(theta), math.sin(theta)
        mu = m * c
        dmu = -m * s
        if p.g11_form == "integrated":
            k = (-p.sigma_0 / p.mu_0**2 + b / p.mu_0 + hv) / sig**2
        else:
            k = (-p.sigma_0 / p.mu_0**2 + hv) / sig**2 + b / (p.mu_0 * p.sigma_0**2)
        # g11 = 1/sig - b c mu / sig^2 + k mu^2 = 1/sig + c^2 kappa
        kappa = m * m * k - b * m / sig**2
        g11 = 1.0 / sig + c * c * kappa
        dg11 = -2.0 * c * s * kappa
        n12 = 1.0 - sig * g11
        g12 = n12 / mu
        dg12 = (-sig * dg11 * mu - n12 * dmu) / (mu * mu)
        n22 = b * c - sig * g12
        g22 = n22 / mu
        dg22 = ((-b * s - sig * dg12) * mu - n22 * dmu) / (mu * mu)
        return g11, g12, g22, dg11, dg12, dg22

    def _g_matrix_locked(self, theta, region):
        g11, g12, g22 = self._g_locked(theta, region)[:3]
        return np.array([[g11, g12], [g12, g22]])

    def g_hat(self, theta, x):
        """Synthesized metric ``g_hat`` at ``(theta, x)``."""
        self._check_domain(theta)
        return self._g_matrix_locked(theta, self.region(theta, x))

    def g11_quadrature(self, theta, x):
        """``g_hat_11`` from its integral representation, by numerical quadrature.

        The integrand ``sigma mu' / mu^3`` is integrated over the smooth parts
        with :func:`scipy.integrate.quad`.  At ``|theta| = theta_L``, where
        ``mu`` jumps, the contribution is taken along the path on which
        ``sigma + b cos(theta_L) mu`` stays constant.
        """
        self._check_domain(theta)
        p = self.params
        b = p.b

        def integrand(t):
            return self.sigma(t) * self.dmu(t) / self.mu(t) ** 3

        sg = 1.0 if theta >= 0.0 else -1.0
        if abs(theta) <= p.theta_L:
            total = integrate.quad(integrand, 0.0, theta, epsabs=1e-14, epsrel=1e-13)[0]
        else:
            tL = sg * p.theta_L
            inner = integrate.quad(
                lambda t: p.sigma_0 * (-p.mu_0 * math.sin(t)) / (p.mu_0 * math.cos(t)) ** 3,
                0.0, tL, epsabs=1e-14, epsrel=1e-13,
            )[0]
            outer = integrate.quad(integrand, tL, theta, epsabs=1e-14, epsrel=1e-13)[0]
            conserved = p.sigma_0 + b * self._cL * p.mu_0 * self._cL
            jump = integrate.quad(
                lambda m: (conserved - b * self._cL * m) / m**3,
                p.mu_0 * self._cL, p.mu_inf * self._cL, epsabs=1e-14, epsrel=1e-13,
            )[0]
            total = inner + jump + outer
        mu, sig = self.mu(theta), self.sigma(theta)
        return (mu * mu) / (sig * sig) * (-2.0 * total + self.h(self.y_coord(theta, x)))

    def _check_band(self, theta, x):
        if self.in_band(theta, x):
            raise SwitchingBandError(f"({theta}, {x}) lies inside a switching exclusion band")

    def g_hat_pde_residual(self, theta, x, step=FD_STEP):
        """Residual of the transport equation satisfied by ``g_hat_11``.

        ``sigma d_theta G + mu d_x G + 2 (sigma' - sigma mu'/mu) G + 2 mu'/mu``,
        with ``G = g_hat_11`` differentiated by central differences.
        """
        self._check_band(theta, x)
        self._check_domain(theta)
        G = self.g_hat(theta, x)[0, 0]
        dth = (self.g_hat(theta + step, x)[0, 0] - self.g_hat(theta - step, x)[0, 0]) / (2 * step)
        dx = (self.g_hat(theta, x + step)[0, 0] - self.g_hat(theta, x - step)[0, 0]) / (2 * step)
        sig, mu = self.sigma(theta), self.mu(theta)
        dsig, dmu = self.dsigma(theta), self.dmu(theta)
        return sig * dth + mu * dx + 2.0 * (dsig - sig * dmu / mu) * G + 2.0 * dmu / mu

    # -- synthesized potential --------------------------------------------

    def _v_locked(self, theta, x, region):
        """``V_hat`` and its gradient in a fixed region."""
        p = self.params
        sig, m = self._plateaus(region.inner_theta)
        weight = p.w_0 if region.inner_y else p.w_inf
        y = self._y_locked(theta, x, region.inner_theta)
        c, s = math.cos(theta), math.sin(theta)
        if region.inner_theta:
            integral = (1.0 - c) / p.sigma_0
        else:
            integral = (1.0 - self._cL) / p.sigma_0 + (self._cL - c) / sig
        v = 0.5 * weight * y * y - integral
        dv_dx = weight * y
        dv_dth = weight * y * (-m * c / sig) - s / sig
        return v, dv_dth, dv_dx

    def v_hat(self, theta, x):
        """Synthesized potential ``V_hat = w(y) - int_0^theta sin(t)/sigma(t) dt``."""
        return self._v_locked(theta, x, self.region(theta, x))[0]

    def v_hat_pde_residual(self, theta, x, step=FD_STEP):
        """``sigma d_theta V_hat + mu d_x V_hat + sin(theta)`` by central differences."""
        self._check_band(theta, x)
        dth = (self.v_hat(theta + step, x) - self.v_hat(theta - step, x)) / (2 * step)
        dx = (self.v_hat(theta, x + step) - self.v_hat(theta, x - step)) / (2 * step)
        return self.sigma(theta) * dth + self.mu(theta) * dx + math.sin(theta)

    # -- dissipation ------------------------------------------------------

    def _c2(self, theta, td, xd, inner_theta):
        p = self.params
        c = math.cos(theta)
        if p.dissipation_form == "region_local":
            sig, m = self._plateaus(inner_theta)
        else:
            sig, m = p.sigma_0, p.mu_0
        gain = p.phi_0 if inner_theta else p.phi_inf
        return self.dissipation_sign * gain * (m * c * td - sig * xd)

    def c_hat(self, s):
        """Closed-loop dissipation ``(c_hat^1, c_hat^2)``; odd in the velocities."""
        theta, _, td, xd = _floats(s)
        c2 = self._c2(theta, td, xd, abs(theta) <= self.params.theta_L)
        return np.array([-self.params.b * math.cos(theta) * c2, c2])

    def _resolve_dissipation_sign(self):
        # the overall sign of c_hat^2 is fixed so that H_hat decreases
        probe = (0.1, 0.0, 1.0, 0.5)
        rate = self.lyapunov_rate(probe)
        if rate > 0.0:
            logger.info("dissipation rate positive with +Phi at probe state; using c_hat^2 -> -c_hat^2")
            return -1.0
        return 1.0

    # -- connection and control -------------------------------------------

    def christoffel_hat(self, theta, x, method="fd", step=FD_STEP):
        """Christoffel symbols of ``g_hat``, ``Gamma_hat[k, i, j]``.

        ``method="fd"`` differentiates :meth:`g_hat` by central differences,
        holding the smooth region of the base point fixed.  ``method="exact"``
        uses the closed-form theta derivatives.
        """
        self._check_domain(theta)
        region = self.region(theta, x)
        g = self._g_matrix_locked(theta, region)
        if np.any(np.linalg.eigvalsh(g) <= 0.0):
            raise IndefiniteMetricError(f"g_hat not positive definite at ({theta}, {x})")
        dg = np.zeros((2, 2, 2))
        if method == "fd":
            # inside a fixed region h(y) is constant, so dg[1] stays zero
            dg[0] = (self._g_matrix_locked(theta + step, region)
                     - self._g_matrix_locked(theta - step, region)) / (2 * step)
        elif method == "exact":
            _, _, _, d11, d12, d22 = self._g_locked(theta, region)
            dg[0] = [[d11, d12], [d12, d22]]
        else:
            raise ValueError(f"unknown method {method!r}")
        return levi_civita(g, dg)

    def _forces(self, s):
        """Covector ``g(f, .)`` of the matching force, as ``(P-component, u)``."""
        theta, x, v1, v2 = _floats(s)
        self._check_domain(theta)
        b = self.params.b
        region = self.region(theta, x)
        c, sn = math.cos(theta), math.sin(theta)

        g11, g12, g22, d11, d12, d22 = self._g_locked(theta, region)
        det_h = g11 * g22 - g12 * g12
        if g11 <= 0.0 or det_h <= 0.0:
            raise IndefiniteMetricError(f"g_hat not positive definite at ({theta}, {x})")
        _, dv1, dv2 = self._v_locked(theta, x, region)
        # first-kind Christoffel contraction for a metric depending on theta only
        q1 = 0.5 * d11 * v1 * v1 - 0.5 * d22 * v2 * v2
        q2 = (d12 * v1 + d22 * v2) * v1
        r1 = -(q1 + dv1)
        r2 = -(q2 + dv2)
        a1 = (g22 * r1 - g12 * r2) / det_h
        a2 = (g11 * r2 - g12 * r1) / det_h
        c2 = self._c2(theta, v1, v2, region.inner_theta)
        a1 -= -b * c * c2
        a2 -= c2

        # plant: g(q_ddot) = (sin theta, b sin(theta) v1^2) + (0, u)
        bc = b * c
        gt1 = a1 + bc * a2
        gt2 = bc * a1 + a2
        return gt1 - sn, gt2 - b * sn * v1 * v1

    def matching_residual(self, s):
        """Unactuated component ``g(f, d/dtheta)`` of the matching force; zero when matched."""
        return self._forces(s)[0]

    def control_force(self, s, check=True):
        """Cart force ``u = g(f, d/dx)`` realising the matched closed loop at state ``s``."""
        residual, u = self._forces(s)
        if check and abs(residual) > MATCHING_TOL:
            raise MatchingConstraintError(
                f"matching residual {residual:.3e} exceeds {MATCHING_TOL} at state {tuple(s)}"
            )
        return u

    def control_force_generic(self, s):
        """Reference evaluation of the matching force through the tensor route.

        Uses :func:`levi_civita` on both metrics, finite-difference
        Christoffels for ``g_hat`` and a finite-difference gradient of
        ``V_hat``.  Returns ``(P-component, u)``; much slower than
        :meth:`control_force`.
        """
        theta, x, v1, v2 = _floats(s)
        plant = self.params.plant
        v = np.array([v1, v2])
        region = self.region(theta, x)
        G = levi_civita(mass_matrix(theta, plant), mass_matrix_derivative(theta, plant))
        G_hat = self.christoffel_hat(theta, x, method="fd")
        g = mass_matrix(theta, plant)
        g_hat = self._g_matrix_locked(theta, region)
        h = FD_STEP
        dV_hat = np.array([
            (self._v_locked(theta + h, x, region)[0] - self._v_locked(theta - h, x, region)[0]) / (2 * h),
            (self._v_locked(theta, x + h, region)[0] - self._v_locked(theta, x - h, region)[0]) / (2 * h),
        ])
        dV = np.array([-math.sin(theta), 0.0])
        a_free = -np.einsum("kij,i,j->k", G, v, v) - np.linalg.solve(g, dV)
        a_target = (-np.einsum("kij,i,j->k", G_hat, v, v)
                    - np.linalg.solve(g_hat, dV_hat) - self.c_hat(s))
        gf = g @ (a_target - a_free)
        return gf[0], gf[1]

    # -- Lyapunov function ------------------------------------------------

    def lyapunov(self, s):
        """``H_hat = 1/2 g_hat(v, v) + V_hat``."""
        theta, x, v1, v2 = _floats(s)
        self._check_domain(theta)
        region = self.region(theta, x)
        g11, g12, g22 = self._g_locked(theta, region)[:3]
        v = self._v_locked(theta, x, region)[0]
        return 0.5 * (g11 * v1 * v1 + 2.0 * g12 * v1 * v2 + g22 * v2 * v2) + v

    def lyapunov_rate(self, s):
        """Time derivative ``-g_hat(c_hat(v), v)`` of ``H_hat`` along the closed loop."""
        theta, x, v1, v2 = _floats(s)
        self._check_domain(theta)
        region = self.region(theta, x)
        g11, g12, g22 = self._g_locked(theta, region)[:3]
        c1, c2 = self.c_hat(s)
        return -(v1 * (g11 * c1 + g12 * c2) + v2 * (g12 * c1 + g22 * c2))
