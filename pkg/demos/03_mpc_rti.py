"""Real-time iteration on a stationary problem.

Repeating the single Gauss-Newton SQP step with a fixed initial state and
reference drives the KKT residual down; the result is compared with a
fully converged single-shooting solve by L-BFGS-B.
"""

import numpy as np
from scipy import optimize

from quadrgp.augmented import RgpParamVector
from quadrgp.dynamics import QuadParams, QuadState, quat_normalize
from quadrgp.mpc import OcpConfig, OcpSolution, ReferenceWindow, discretize, sqp_rti_step, tracking_cost

quad, cfg = QuadParams(), OcpConfig()
ref_state = QuadState(p=np.array([0.0, 0.0, 5.0])).as_vector()
x0 = ref_state.copy()
x0[0:3] += [0.08, -0.05, 0.03]
x0[3:7] = quat_normalize([1.0, 0.01, -0.015, 0.005])
ref = ReferenceWindow.constant(ref_state, quad.hover_input, cfg.n_h)
rp = RgpParamVector.zeros()

warm = OcpSolution.hover(x0, quad, cfg)
print("iter  kkt residual   qp iters  cost")
for it in range(1, 16):
    warm = sqp_rti_step(cfg, x0, ref, warm, rp, quad)
    print(f"{it:4d}  {warm.kkt_residual:12.3e}  {warm.qp_iterations:8d}  "
          f"{tracking_cost(warm.x_traj, warm.u_traj, ref, cfg):.6e}")


def shooting_cost(u_flat):
    U = u_flat.reshape(cfg.n_h, 4)
    xs = [x0]
    for u in U:
        xs.append(discretize(xs[-1], u, cfg.T_h, quad, rp, cfg.n_substeps)[0])
    return tracking_cost(np.array(xs), U, ref, cfg)


res = optimize.minimize(shooting_cost, warm.u_traj.ravel(), method="L-BFGS-B", bounds=[(0, 1)] * 20,
                        options={"ftol": 1e-15, "gtol": 1e-10})
print(f"\nmax |u_rti - u_lbfgsb| = {np.max(np.abs(res.x - warm.u_traj.ravel())):.2e}")
print("first input of the horizon:", np.round(warm.u_traj[0], 5))
