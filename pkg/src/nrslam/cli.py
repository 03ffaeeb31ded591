"""Command line entry point: ``python -m nrslam <verb> ...``."""

from __future__ import annotations

import argparse
import csv
import json
import math
import sys
from importlib import resources
from pathlib import Path

import numpy as np

from .angle_extract import ExtractConfig, extract_angles, write_measurements_csv
from .beamsim import FrameConfig, RsrpMatrix, ssb_schedule, sweep_duration_ms
from .harness import (ResultsBundle, RunError, _observed_names, _seed_streams, make_track_data, run,
                      run_multiuser, truth_features, write_multi)
from .metrics import OspaConfig, mae_per_feature, ospa, position_error, write_feature_csv, write_metrics_csv
from .scenario import ScenarioError, load_scenario

MODE_ALIASES = {"full": "full", "full_pipeline": "full", "angles": "angles", "angles_with_noise": "angles",
                "replay": "replay"}


def bundled(name: str) -> Path:
    """Path of a scenario shipped with the package (``scenario1``...)."""
    return Path(str(resources.files("nrslam") / "data" / f"{name}.yaml"))


def _scenario_path(text: str) -> Path:
    p = Path(text)
    if not p.exists() and not p.suffix:
        p = bundled(text)
    return p


def _load(args):
    over = list(args.override or [])
    if getattr(args, "seed", None) is not None:
        over.append(f"seed={args.seed}")
    if getattr(args, "particles", None) is not None:
        over.append(f"bp.n_particles={args.particles}")
    if getattr(args, "mode", None):
        over.append(f"mode={MODE_ALIASES[args.mode]}")
    if getattr(args, "replay", None):
        over.append(f"replay_csv={args.replay}")
    return load_scenario(_scenario_path(args.scenario), over)


def _summary(b: ResultsBundle) -> str:
    pe, oe = b.mean_after(min(10, max(len(b.pos_err) - 1, 0)))
    return f"{b.track}: steps={len(b.pos_err)} mean_pos_err_after10={pe:.3f} m mean_ospa_after10={oe:.3f} m"


def cmd_run(args) -> int:
    scn = _load(args)
    b = run(scn, track=args.track, use_imu=args.imu)
    b.write(args.out)
    print(_summary(b))
    return 0


def cmd_run_multi(args) -> int:
    scn = _load(args)
    names = args.tracks.split(",") if args.tracks else None
    bundles = run_multiuser(scn, names, shared=not args.solo, use_imu=args.imu)
    write_multi(bundles, args.out)
    for b in bundles:
        print(_summary(b))
    return 0


def cmd_sweep_dump(args) -> int:
    """Full-pipeline sweeps along a track: one RSRP CSV per step plus the
    extracted measurements."""
    scn = _load(args)
    name = args.track or scn.track
    i = [t.name for t in scn.tracks].index(name)
    meas_ss, imu_ss, _ = _seed_streams(scn.seed, len(scn.tracks))
    d = make_track_data(scn, name, "full", meas_ss[i], imu_ss[i])
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    index = {}
    for t, (vals, ue_or, pa_or) in sorted(d.rsrp.items()):
        f = f"rsrp_{t:03d}.csv"
        RsrpMatrix(vals, ue_or, pa_or).to_csv(out / f)
        index[t] = {"file": f, "ue_orientations_rad": list(ue_or), "pa_orientations_rad": list(pa_or)}
    (out / "sweeps.json").write_text(json.dumps(index, indent=1, sort_keys=True) + "\n")
    write_measurements_csv(out / "measurements.csv", d.rows)
    print(f"wrote {len(index)} sweeps to {out}")
    return 0


def cmd_extract(args) -> int:
    """Angle extraction over sweep-dump output."""
    src = Path(args.input)
    index = json.loads((src / "sweeps.json").read_text())
    cfg = ExtractConfig(eps_support=args.eps_support, max_paths=args.max_paths,
                        eps_residual=10 ** (args.eps_residual_dbm / 10))
    rows = []
    for t in sorted(index, key=int):
        e = index[t]
        R = RsrpMatrix.from_csv(src / e["file"], e["ue_orientations_rad"], e["pa_orientations_rad"])
        for k, m in enumerate(extract_angles(R, cfg)):
            rows.append((int(t), k, math.degrees(m.aod), math.degrees(m.aoa), 10 * math.log10(m.peak_power),
                         m.support_halfwidth))
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    write_measurements_csv(out / "measurements.csv", rows)
    print(f"extracted {len(rows)} paths over {len(index)} steps")
    return 0


def cmd_score(args) -> int:
    """Recompute metrics for a run directory from its estimates CSV."""
    scn = _load(args)
    src = Path(args.input)
    man = json.loads((src / "manifest.json").read_text())
    name = man.get("track", scn.track)
    ue, feats = {}, {}
    with open(src / "estimates.csv", newline="") as fh:
        for r in csv.DictReader(fh):
            t = int(r["step"])
            p = (float(r["x"]), float(r["y"]))
            if r["kind"] == "UE":
                ue[t] = p
            elif r["kind"] in ("PA", "VA"):
                feats.setdefault(t, []).append((r["kind"], p))
    i = [t.name for t in scn.tracks].index(name)
    meas_ss, imu_ss, _ = _seed_streams(scn.seed, len(scn.tracks))
    d = make_track_data(scn, name, "angles", meas_ss[i], imu_ss[i])
    steps = sorted(ue)
    pe, _ = position_error([ue[t] for t in steps], d.positions[:len(steps)])
    truth = truth_features(scn)
    oe = [ospa([p for _, p in feats.get(t, [])], [truth[n] for n in _observed_names(scn, [d], t)],
               OspaConfig(args.cutoff, args.order)) for t in steps]
    va_names = [n for n in _observed_names(scn, [d], 10 ** 9) if n.startswith("VA")]
    mae = mae_per_feature([[p for k, p in feats.get(t, []) if k == "VA"] for t in steps],
                          [truth[n] for n in va_names])
    out = Path(args.out or src)
    out.mkdir(parents=True, exist_ok=True)
    write_metrics_csv(out / "metrics.csv", pe, oe)
    write_feature_csv(out / "va_metrics.csv", mae)
    k = min(10, len(steps) - 1)
    print(f"{name}: mean_pos_err_after10={np.mean(pe[k:]):.3f} m mean_ospa_after10={np.mean(oe[k:]):.3f} m")
    for n, m in zip(va_names, mae):
        print(f"  {n}: mae={m.mae:.3f} m detect_rate={m.detect_rate:.2f}")
    return 0


def cmd_schedule(args) -> int:
    frame = FrameConfig()
    slots = ssb_schedule(frame, args.tx_beams, args.rx_beams)
    w = csv.writer(sys.stdout, lineterminator="\n")
    w.writerow(("ssb_index", "subframe", "slot", "start_symbol", "tx_beam", "rx_beam"))
    for s in slots:
        w.writerow((s.ssb_index, s.subframe, s.slot, s.start_symbol, s.tx_beam, s.rx_beam))
    print(f"# {len(slots)} SSBs, full sweep spans {sweep_duration_ms(frame, slots, args.tx_beams, args.rx_beams):g} ms",
          file=sys.stderr)
    return 0


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="nrslam", description=__doc__)
    sub = ap.add_subparsers(dest="verb", required=True)

    def common(p, out_default="results"):
        p.add_argument("--scenario", default="scenario1", help="YAML path or bundled name")
        p.add_argument("--seed", type=int)
        p.add_argument("--mode", choices=sorted(MODE_ALIASES))
        p.add_argument("--particles", type=int)
        p.add_argument("--out", default=out_default)
        p.add_argument("--override", action="append", metavar="KEY=VALUE")
        p.add_argument("--track")

    p = sub.add_parser("run", help="single-UE run")
    common(p)
    p.add_argument("--imu", action=argparse.BooleanOptionalAction, default=None)
    p.add_argument("--replay", help="measurement CSV for --mode replay")
    p.set_defaults(func=cmd_run)

    p = sub.add_parser("run-multi", help="several UEs on one shared map")
    common(p)
    p.add_argument("--tracks", help="comma-separated track names (default: scenario crowd)")
    p.add_argument("--solo", action="store_true", help="private map per UE")
    p.add_argument("--imu", action=argparse.BooleanOptionalAction, default=None)
    p.add_argument("--replay", help="directory of measurements_<track>.csv")
    p.set_defaults(func=cmd_run_multi)

    p = sub.add_parser("sweep-dump", help="write per-step RSRP matrices")
    common(p, "sweeps")
    p.set_defaults(func=cmd_sweep_dump)

    p = sub.add_parser("extract", help="extract angles from sweep-dump output")
    p.add_argument("input")
    p.add_argument("--out", default="extracted")
    p.add_argument("--eps-support", type=float, default=0.1)
    p.add_argument("--eps-residual-dbm", type=float, default=-55.0)
    p.add_argument("--max-paths", type=int, default=4)
    p.set_defaults(func=cmd_extract)

    p = sub.add_parser("score", help="recompute metrics of a run directory")
    common(p, None)
    p.add_argument("input")
    p.add_argument("--cutoff", type=float, default=10.0)
    p.add_argument("--order", type=float, default=1.0)
    p.set_defaults(func=cmd_score)

    p = sub.add_parser("schedule", help="print the SSB beam schedule")
    p.add_argument("--tx-beams", type=int, default=8)
    p.add_argument("--rx-beams", type=int, default=8)
    p.set_defaults(func=cmd_schedule)
    return ap


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except (ScenarioError, RunError, FileNotFoundError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
