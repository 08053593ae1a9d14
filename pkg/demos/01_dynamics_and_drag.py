"""Rigid-body model and the ground-truth drag profiles.

Runs a few open-loop checks: hover is an equilibrium, free fall follows
g t^2 / 2, and a hovering glide slows down under each drag profile.
"""

import numpy as np

from quadrgp.drag import DragParams, drag_accel_body
from quadrgp.dynamics import QuadParams, QuadState, f_phys, physics_field, rk4_step
from quadrgp.sim import SimConfig, plant_step

quad = QuadParams()
print(f"hover input per rotor: {quad.hover_input[0]:.4f}")
print("hover derivative norm:", np.linalg.norm(f_phys(QuadState(), quad.hover_input, quad)))

# %% free fall for one second
x = QuadState(p=np.array([0.0, 0.0, 10.0]))
f = physics_field(quad)
for _ in range(100):
    x = rk4_step(f, x, np.zeros(4), 0.01)
print(f"free fall after 1 s: z = {x.p[2]:.6f} m (expected {10 - 0.5 * 9.81:.6f})")

# %% body-frame drag at 5 m/s along each axis
drag = DragParams(C_D=0.01, C_rD=1e-4)
u = quad.hover_input
print("\nprofile       a(v=[5,0,0])        a(v=[0,0,5])")
for profile in ("none", "standard", "simplified", "rotor-only"):
    ax = drag_accel_body([5.0, 0, 0], u, drag, quad.m, profile)
    az = drag_accel_body([0, 0, 5.0], u, drag, quad.m, profile)
    print(f"{profile:<12}  {np.array2string(ax, precision=4):<18}  {np.array2string(az, precision=4)}")

# %% glide at hover thrust: speed decays under the simplified profile
cfg = SimConfig(drag_profile="simplified", drag=DragParams(C_D=0.01, C_rD=0.0))
x = QuadState(p=np.array([0.0, 0.0, 10.0]), v=np.array([10.0, 0.0, 0.0]))
for k in range(1, 3001):
    x = plant_step(x, quad.hover_input, cfg)
    if k % 1000 == 0:
        print(f"t = {k * cfg.delta_t_sim:.0f} s  speed = {np.linalg.norm(x.v):.4f} m/s")
