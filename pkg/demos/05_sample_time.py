"""How the sample time matters.

Sweeps tau for the small initial condition, then shrinks tau towards zero and
measures how close the sampled loop gets to full-state feedback.
"""
import numpy as np

from matching_pendulum import Scenario, State, simulate, tau_sweep

base = Scenario(mode="sampled", initial=State(0.4), horizon=30.0)
result = tau_sweep(base, np.geomspace(0.0143, 0.2, 6))
for tau, verdict in result.rows:
    print(f"tau={tau:.4f}: {verdict.status}")
print("largest converged tau:", result.largest_converged)

ref = simulate(Scenario(initial=State(0.4), horizon=10.0, dt=0.0143 / 20))
grid = np.arange(700) * 0.0143
for tau in (0.0143, 0.00143):
    tr = simulate(Scenario(mode="sampled", initial=State(0.4), horizon=10.0, tau=tau, dt=min(1e-3, tau)))
    a = ref.states[np.rint(grid / (ref.t[1] - ref.t[0])).astype(int)]
    b = tr.states[np.rint(grid / (tr.t[1] - tr.t[0])).astype(int)]
    print(f"tau={tau}: largest gap to full-state feedback over 10 s: {np.max(np.abs(a - b)):.2e}")
