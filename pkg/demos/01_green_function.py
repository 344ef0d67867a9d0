"""
Periodic Green function and Biot-Savart kernel
==============================================

Evaluates G and K on a few points, checks the logarithmic singularity and
the half-period zeros, and compares the regularized kernel with the exact one.
"""
import numpy as np

from pvsplit.kernel import biot_savart, default_evaluator, green, regularized_kernel

# G behaves like -log|x| / (2 pi) plus a constant near the origin
for r in (1e-1, 1e-2, 1e-3, 1e-4):
    print(f"r={r:7.0e}  G={green((r, 0.0)):+.6f}  G + log(r)/2pi={green((r, 0.0)) + np.log(r) / (2 * np.pi):+.6f}")
print("regular part at 0:", default_evaluator().regular_part_at_origin())

# by symmetry the velocity field of one vortex vanishes at the half periods
for p in [(0.5, 0.0), (0.0, 0.5), (0.5, 0.5)]:
    print(p, biot_savart(p))

# the mollified kernel is bounded and agrees with K outside the delta disc
delta = 0.05
r = np.linspace(0.001, 0.1, 12)
for x in r:
    k_exact = np.hypot(*biot_savart((x, 0.0)))
    k_reg = np.hypot(*regularized_kernel((x, 0.0), delta))
    print(f"r={x:.4f}  |K|={k_exact:9.4f}  |K_delta|={k_reg:9.4f}")
