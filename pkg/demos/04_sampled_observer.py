"""Sampled data with a discrete observer.

Only theta and x are measured every 0.0143 s.  The observer fills in the
velocities, the control is held between samples, and the small initial
condition still converges while the large one does not.
"""
import numpy as np

from matching_pendulum import DEFAULT_DISCRETE, Scenario, State, discretize, linearize, simulate

A_d, B_d = discretize(linearize(), DEFAULT_DISCRETE.tau)
print("computed A_d:\n", A_d.round(4))
print("computed B_d:", B_d.ravel().round(4))
print("largest deviation from the reference matrices:",
      f"{max(np.abs(A_d - DEFAULT_DISCRETE.A_d).max(), np.abs(B_d - DEFAULT_DISCRETE.B_d).max()):.1e}")
print("observer error moduli:", np.sort(np.abs(np.linalg.eigvals(DEFAULT_DISCRETE.error_matrix))).round(4))

for controller in ("linear", "matching"):
    for theta0 in (0.4, 1.1):
        tr = simulate(Scenario(controller=controller, mode="sampled", initial=State(theta0), discrete=DEFAULT_DISCRETE))
        est_err = np.max(np.abs(tr.states - tr.x_hat))
        print(f"{controller:8s} theta0={theta0}: {tr.status:9s} max estimate error {est_err:.3f}"
              + (f" ({tr.events[0]})" if tr.events else ""))
