"""A single beam sweep in the empty hall.

Prints the codebook, the SSB timing of one sweep and the strongest cells of
the resulting 24 x 24 RSRP matrix next to the true path angles.
"""
import math

import numpy as np

from nrslam.beamsim import CodebookConfig, FrameConfig, beam_peak_angles, ssb_schedule, sweep, sweep_duration_ms
from nrslam.cli import bundled
from nrslam.geometry import Point2, Pose, ground_truth_paths
from nrslam.scenario import load_scenario

cb = CodebookConfig()
print("beam peaks (deg):", np.round(np.degrees(beam_peak_angles(cb)), 1))

frame = FrameConfig()
sched = ssb_schedule(frame)
print(f"{len(sched)} SSBs, one sweep takes {sweep_duration_ms(frame, sched):g} ms")

scn = load_scenario(bundled("scenario1"))
ue = Pose(Point2(4.4, -0.4))
paths = ground_truth_paths(scn.scene(), ue)
for p in paths:
    print(f"  {p.kind.value:6s} wall={p.wall}  aod {math.degrees(p.aod_global):7.1f}  aoa {math.degrees(p.aoa_global):7.1f}")

third = 2 * math.pi / 3
R = sweep(scn.scene(), ue, [k * third for k in range(3)], [k * third for k in range(3)], seed=1)
dbm = 10 * np.log10(R.values)
top = np.argsort(dbm, axis=None)[::-1][:5]
print("strongest cells (row, col, dBm):")
for i in top:
    r, c = divmod(int(i), dbm.shape[1])
    print(f"  {r:2d} {c:2d}  {dbm[r, c]:.1f}")
