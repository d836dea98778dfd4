"""The cart-pendulum plant on its own.

Builds the mass matrix, drops the pendulum from 0.4 rad with no control and
watches energy stay put while the pendulum swings through the bottom.
Finally prints the linearization the observer is designed around.
"""
import numpy as np

from matching_pendulum import PlantParams, State, Scenario, linearize, mass_matrix, simulate
from matching_pendulum.pendulum_model import energy

plant = PlantParams()
print("mass matrix at the upright position:\n", mass_matrix(0.0, plant))

tr = simulate(Scenario(controller="none", initial=State(0.4), horizon=10.0))
e = np.array([energy(s, plant) for s in tr.states])
print(f"uncontrolled run: theta ranges over [{tr.states[:, 0].min():.3f}, {tr.states[:, 0].max():.3f}]")
print(f"energy drift over 10 s: {np.max(np.abs(e - e[0])):.2e}")

lp = linearize(plant)
print("A =\n", lp.A.round(5))
print("B =", lp.B.ravel().round(5))
print("open-loop eigenvalues:", np.linalg.eigvals(lp.A).round(4))
