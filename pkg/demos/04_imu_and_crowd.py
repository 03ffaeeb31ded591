"""Two ways to help the filter: an IMU and a shared map.

First the corridor with two anchors, with and without the IMU. Then three
UEs writing letters into the same map, against track-u on its own.
"""
import numpy as np

from nrslam.cli import bundled
from nrslam.harness import run, run_multiuser
from nrslam.scenario import load_scenario

scn = load_scenario(bundled("scenario2"), ["bp.n_particles=5000"])
for use_imu in (False, True):
    b = run(scn, use_imu=use_imu)
    maes = ", ".join(f"{n} {m.mae:.2f}" for n, m in zip(b.va_names, b.va_mae))
    print(f"imu={use_imu!s:5s}  pos {np.mean(b.pos_err):.2f} m  VA MAE: {maes}")

scn = load_scenario(bundled("scenario1"), ["bp.n_particles=5000"])
shared = run_multiuser(scn, ["track-s", "track-e", "track-u"])[2]
solo = run(scn, track="track-u")
for label, b in (("shared", shared), ("solo", solo)):
    print(f"track-u {label:6s}  pos {np.mean(b.pos_err):.2f} m  ospa {np.mean(b.ospa_err):.2f} m")
