"""The closed-loop geometry: synthesized metric, potential and dissipation.

Evaluates the metric and potential near the origin, checks the defining
identities on a grid and maps out where the metric stays positive definite.
"""
import numpy as np

from matching_pendulum import DEFAULT_DESIGN, MatchingLaw
from matching_pendulum.cli_io import verify

law = MatchingLaw(DEFAULT_DESIGN)
p = DEFAULT_DESIGN
print(f"outer sigma plateau from the jump relation: {p.sigma_outer:.5f} (listed {p.sigma_inf})")
print("g_hat(0, 0) =\n", law.g_hat(0.0, 0.0).round(5))
print(f"V_hat(0.2, 0) = {law.v_hat(0.2, 0.0):.6f}")
print("c_hat at unit pendulum velocity:", law.c_hat([0.0, 0.0, 1.0, 0.0]).round(4))

for check in verify():
    print(f"  {'ok ' if check.ok else 'BAD'} {check.name:26s} {check.value:.2e}")

# where is g_hat positive definite inside |y| <= y_L?
for theta in (1.0, 1.1, 1.15, 1.16, 1.17, 1.2):
    eig = min(np.linalg.eigvalsh(law.g_hat(theta, y - law.y_coord(theta, 0.0))).min() for y in np.linspace(-15, 15, 61))
    print(f"  theta={theta:4.2f}: smallest eigenvalue {eig:+.4f}")
