"""Matching control of the inverted pendulum cart, with sampled-data and observer simulation."""
from .digital_loop import DEFAULT_DISCRETE, DiscreteGains, discretize, gains_for_tau, observer_step, sampled_run
from .linear_control import LinearGains, derive_gains, linear_u
from .matching_law import DEFAULT_DESIGN, DesignParams, GeometryError, MatchingLaw
from .pendulum_model import PlantParams, State, linearize, mass_matrix, plant_accel
from .sim_engine import Scenario, Trajectory, classify, rk4_step, simulate, tau_sweep

__version__ = "0.1.0"
