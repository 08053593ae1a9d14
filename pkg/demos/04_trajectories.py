"""Reference trajectories: the speed-ramped circle and random waypoints.

Writes both references as CSV to the directory given on the command line
(default ``demo_output``).
"""

import sys
from pathlib import Path

import numpy as np

from quadrgp.trajectory import circle_trajectory, random_trajectory, random_waypoints

out = Path(sys.argv[1] if len(sys.argv) > 1 else "demo_output")
out.mkdir(parents=True, exist_ok=True)

print("random waypoints (seed 0):")
print(np.round(random_waypoints(10.0, 6, 0), 3))

for traj in (circle_trajectory(r=10.0, v_max=6.0), random_trajectory(v_max=6.0, seed=0)):
    traj.validate()
    speed = np.linalg.norm(traj.x_ref[:, 7:10], axis=1)
    tilt = np.degrees(2 * np.arccos(np.clip(np.sqrt(traj.x_ref[:, 3] ** 2 + traj.x_ref[:, 6] ** 2), 0, 1)))
    path = traj.to_csv(out / f"{traj.name}_6.csv")
    print(f"\n{traj.name}: {len(traj)} samples, {traj.duration:.2f} s, peak speed {speed.max():.3f} m/s, "
          f"max tilt {tilt.max():.1f} deg, thrust range [{traj.u_ref.min():.3f}, {traj.u_ref.max():.3f}]")
    print(f"written to {path}")
