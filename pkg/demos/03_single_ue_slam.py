"""Single UE, angle measurements only.

Runs BP-SLAM on one lawn-mower track at a desk-friendly particle count and
prints the error curve and the final map.
"""
import sys

from nrslam.cli import bundled
from nrslam.harness import run, truth_features
from nrslam.scenario import load_scenario

particles = int(sys.argv[1]) if len(sys.argv) > 1 else 10000
scn = load_scenario(bundled("scenario1"), [f"bp.n_particles={particles}", "mode=angles"])
b = run(scn, track="track-a")

for t in range(0, len(b.pos_err), 5):
    print(f"step {t + 1:2d}  pos {b.pos_err[t]:.2f} m  ospa {b.ospa_err[t]:.2f} m")
pos, osp = b.mean_after(10)
print(f"mean after step 10: pos {pos:.2f} m, ospa {osp:.2f} m")

truth = truth_features(scn)
print("final map:")
for fid, p, r in b.estimates[-1].features:
    name = min(truth, key=lambda n: (truth[n].x - p.x) ** 2 + (truth[n].y - p.y) ** 2)
    print(f"  {b.estimates[-1].kinds[fid]:2s} ({p.x:6.2f}, {p.y:6.2f})  r={r:.2f}  near {name}")
