"""End-to-end runs: move UEs along their tracks, produce angle measurements
(simulated sweep, noisy truth or a replayed CSV), filter, score, export."""

from __future__ import annotations

import csv
import json
import math
import platform
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import scipy
from scipy.optimize import linear_sum_assignment

from . import __version__
from .angle_extract import extract_angles, read_measurement_rows, write_measurements_csv
from .beamsim import sector_offset, sweep
from .bp_slam import CrowdTrack, Estimate, ImuSample, UeState, run_crowdsourced
from .geometry import PathKind, Point2, Pose, ground_truth_paths, mirror_anchor, wrap_angle
from .metrics import OspaConfig, mae_per_feature, ospa, position_error, write_feature_csv, write_metrics_csv
from .scenario import Scenario, ScenarioError


class RunError(RuntimeError):
    """A module failure, tagged with the step it happened at."""


# ------------------------------------------------------------ measurements

@dataclass
class TrackData:
    name: str
    entry_step: int
    positions: np.ndarray  # (T, 2) true positions, one per local step
    measurements: dict  # global step -> (M, 2) radians
    rows: list  # CSV rows (t, i, aod_deg, aoa_deg, peak_dbm, halfwidth)
    paths: dict  # global step -> list[PathTruth] from the serving anchor
    imu: dict = field(default_factory=dict)
    rsrp: dict = field(default_factory=dict)  # global step -> (values, ue_or, pa_or)

    def step_of(self, k: int) -> int:
        return self.entry_step + k

    def start(self, dt: float) -> UeState:
        p = self.positions
        v = (p[1] - p[0]) / dt if len(p) > 1 else np.zeros(2)
        return UeState(Point2(*p[0]), (float(v[0]), float(v[1])))


def _orientations(scn: Scenario, t: int, paths) -> tuple[list[float], list[float]]:
    if scn.orientations == "table":
        e = scn.orientation_at(t)
        return [math.radians(a) for a in e.ue_deg], [math.radians(a) for a in e.pa_deg]
    a0 = sector_offset([p.aod_global for p in paths]) if paths else 0.0
    b0 = sector_offset([p.aoa_global for p in paths]) if paths else 0.0
    third = 2 * math.pi / 3
    return [b0 + k * third for k in range(3)], [a0 + k * third for k in range(3)]


def _step_seed(ss: np.random.SeedSequence, t: int) -> int:
    return int(np.random.SeedSequence(ss.entropy, spawn_key=(*ss.spawn_key, t)).generate_state(1)[0])


def _seed_streams(seed: int, n_tracks: int):
    """Independent measurement, IMU and filter streams."""
    meas, imu, slam = np.random.SeedSequence(seed).spawn(3)
    return meas.spawn(n_tracks), imu.spawn(n_tracks), int(slam.generate_state(1)[0])


def synth_imu(positions: np.ndarray, dt: float, bias_std: float, rng: np.random.Generator,
              entry_step: int = 1) -> dict:
    """Accelerations that reproduce the track exactly under the
    constant-velocity model, plus Gaussian bias noise."""
    p = np.asarray(positions, dtype=float)
    out = {}
    if len(p) < 2:
        return out
    v = (p[1] - p[0]) / dt
    for k in range(1, len(p)):
        a = 2.0 * (p[k] - p[k - 1] - v * dt) / dt ** 2
        v = v + a * dt
        noisy = a + bias_std * rng.standard_normal(2)
        out[entry_step + k] = ImuSample((float(noisy[0]), float(noisy[1])), bias_std)
    return out


def make_track_data(scn: Scenario, name: str, mode: str, meas_ss, imu_ss, replay=None) -> TrackData:
    tr = scn.get_track(name)
    pos = tr.points(scn.step_length)
    rng = np.random.default_rng(meas_ss)
    sigma = math.radians(scn.angle_noise_deg)
    meas, rows, paths_by_t, rsrp = {}, [], {}, {}
    for k, p in enumerate(pos):
        t = tr.entry_step + k
        try:
            anchor = scn.anchor_at(t)
            paths = ground_truth_paths(scn.scene(anchor), Pose(Point2(*p), 0.0))
            paths_by_t[t] = paths
            if mode == "angles":
                z = np.array([[q.aod_global, q.aoa_global] for q in paths]).reshape(-1, 2)
                z = wrap_angle(z + sigma * rng.standard_normal(z.shape)).reshape(-1, 2)
                peaks = [float("nan")] * len(z)
                halfw = [0] * len(z)
            elif mode == "full":
                ue_or, pa_or = _orientations(scn, t, paths)
                R = sweep(scn.scene(anchor), Pose(Point2(*p), 0.0), ue_or, pa_or, noise=scn.noise,
                          seed=_step_seed(meas_ss, t), paths=paths)
                rsrp[t] = (R.values, tuple(ue_or), tuple(pa_or))
                ms = extract_angles(R, scn.extract)
                z = np.array([[m.aod, m.aoa] for m in ms]).reshape(-1, 2)
                peaks = [10 * math.log10(m.peak_power) for m in ms]
                halfw = [m.support_halfwidth for m in ms]
            elif mode == "replay":
                got = replay.get(t, [])
                z = np.radians(np.array([(r[2], r[3]) for r in got], dtype=float).reshape(-1, 2))
                peaks = [r[4] for r in got]
                halfw = [r[5] for r in got]
            else:
                raise ScenarioError("mode", f"unknown mode {mode!r}")
        except (ScenarioError, RunError):
            raise
        except Exception as exc:  # noqa: BLE001 - re-raised with step context
            raise RunError(f"track {name}, step {t}: {type(exc).__name__}: {exc}") from exc
        # the filter sees radians(deg) with deg exactly as written to CSV, so a replay matches bit for bit
        deg = np.degrees(z) if mode != "replay" else np.array([(r[2], r[3]) for r in replay.get(t, [])]).reshape(-1, 2)
        z = np.radians(deg).reshape(-1, 2)
        meas[t] = z
        for i in range(len(z)):
            rows.append((t, i, deg[i, 0], deg[i, 1], peaks[i], halfw[i]))
    imu = synth_imu(pos, scn.bp.dt, scn.imu.bias_noise_std, np.random.default_rng(imu_ss), tr.entry_step)
    return TrackData(name, tr.entry_step, pos, meas, rows, paths_by_t, imu, rsrp)


# ------------------------------------------------------------------ truth

def truth_features(scn: Scenario) -> dict[str, Point2]:
    """Every physical and virtual anchor, keyed PA<i> / VA<i>-<wall>."""
    out = {}
    for i, a in enumerate(scn.anchors):
        out[f"PA{i + 1}"] = a.position
        for j, w in enumerate(scn.walls):
            out[f"VA{i + 1}-{j + 1}"] = mirror_anchor(a.position, w)
    return out


def _observed_names(scn: Scenario, datas: list[TrackData], t: int) -> list[str]:
    """Anchors served and VAs that produced a path at any step <= t."""
    names = set()
    for d in datas:
        for s, paths in d.paths.items():
            if s > t:
                continue
            a = scn.anchor_at(s)
            names.add(f"PA{a + 1}")
            for p in paths:
                if p.kind == PathKind.BOUNCE:
                    names.add(f"VA{a + 1}-{p.wall + 1}")
    return sorted(names)


# ---------------------------------------------------------------- results

@dataclass
class ResultsBundle:
    scenario: str
    track: str
    mode: str
    seed: int
    truth_track: np.ndarray
    estimates: list[Estimate]
    rows: list
    pos_err: np.ndarray
    ospa_err: np.ndarray
    va_names: list[str]
    va_mae: list
    manifest: dict
    rsrp: dict = field(default_factory=dict)

    def mean_after(self, k: int = 10) -> tuple[float, float]:
        """Mean position and OSPA error over steps after the first ``k``."""
        return float(np.mean(self.pos_err[k:])), float(np.mean(self.ospa_err[k:]))

    def mae(self, name: str) -> float:
        return self.va_mae[self.va_names.index(name)].mae

    def write(self, out_dir) -> Path:
        out = Path(out_dir)
        out.mkdir(parents=True, exist_ok=True)
        write_measurements_csv(out / "measurements.csv", self.rows)
        with open(out / "estimates.csv", "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(("step", "kind", "id", "anchor", "x", "y", "existence"))
            for e in self.estimates:
                w.writerow((e.step, "UE", -1, -1, repr(e.ue.position.x), repr(e.ue.position.y), repr(1.0)))
                for fid, p, r in e.features:
                    w.writerow((e.step, e.kinds[fid], fid, e.anchors[fid], repr(p.x), repr(p.y), repr(float(r))))
                for fid, p in e.rsps:
                    w.writerow((e.step, "RSP", fid, e.anchors[fid], repr(p.x), repr(p.y), ""))
        write_metrics_csv(out / "metrics.csv", self.pos_err, self.ospa_err)
        rows = [type(m)(i, m.mae, m.detect_rate) for i, m in enumerate(self.va_mae)]
        write_feature_csv(out / "va_metrics.csv", rows)
        with open(out / "va_names.csv", "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(("va_id", "name"))
            for i, n in enumerate(self.va_names):
                w.writerow((i, n))
        (out / "manifest.json").write_text(json.dumps(self.manifest, indent=2, sort_keys=True) + "\n")
        (out / "plot.json").write_text(json.dumps(self.plot_data(), sort_keys=True) + "\n")
        return out

    def plot_data(self) -> dict:
        heat = None
        if self.rsrp:
            t = max(self.rsrp)
            vals = 10 * np.log10(np.maximum(self.rsrp[t][0], 1e-30))
            heat = {"step": t, "rsrp_dbm": np.round(vals, 3).tolist()}
        return {
            "track": self.track,
            "truth_xy": np.round(self.truth_track, 6).tolist(),
            "estimate_xy": [[round(e.ue.position.x, 6), round(e.ue.position.y, 6)] for e in self.estimates],
            "features": [[[fid, round(p.x, 6), round(p.y, 6)] for fid, p, _ in e.features] for e in self.estimates],
            "rsps": [[round(p.x, 6), round(p.y, 6)] for e in self.estimates for _, p in e.rsps],
            "pos_err": np.round(self.pos_err, 6).tolist(),
            "ospa": np.round(self.ospa_err, 6).tolist(),
            "rsrp_heatmap": heat,
        }


def _manifest(scn: Scenario, mode: str, tracks: list[str], extra=None) -> dict:
    cfg = scn.effective_config()
    m = {
        "scenario": scn.name,
        "mode": mode,
        "seed": scn.seed,
        "tracks": tracks,
        "config_hash": scn.config_hash(),
        "config": {k: {"value": v, "source": scn.provenance.get(k, "default")} for k, v in cfg.items()},
        "versions": {"nrslam": __version__, "numpy": np.__version__, "scipy": scipy.__version__,
                     "python": platform.python_version()},
    }
    m.update(extra or {})
    return json.loads(json.dumps(m, default=repr))


def _score(scn: Scenario, data: TrackData, ests: list[Estimate], all_data: list[TrackData],
           ospa_cfg: OspaConfig) -> tuple:
    truth = truth_features(scn)
    T = len(ests)
    est_xy = [(e.ue.position.x, e.ue.position.y) for e in ests]
    pe, _ = position_error(est_xy, data.positions[:T])
    oe = np.array([ospa([p for _, p, _ in e.features], [truth[n] for n in _observed_names(scn, all_data, e.step)],
                        ospa_cfg) for e in ests])
    va_names = [n for n in _observed_names(scn, all_data, 10 ** 9) if n.startswith("VA")]
    series = [[p for fid, p, _ in e.features if e.kinds[fid] == "VA"] for e in ests]
    mae = mae_per_feature(series, [truth[n] for n in va_names])
    return pe, oe, va_names, mae


def _load_replay(scn: Scenario, name: str, multi: bool):
    if not scn.replay_csv:
        raise ScenarioError("replay_csv", "replay mode needs a measurement CSV")
    p = Path(scn.replay_csv)
    if p.is_dir():
        p = p / (f"measurements_{name}.csv" if multi else "measurements.csv")
    by_t: dict = {}
    for r in read_measurement_rows(p):
        by_t.setdefault(r[0], []).append(r)
    return by_t


def run(scn: Scenario, mode: str | None = None, track: str | None = None, use_imu: bool | None = None,
        ospa_cfg: OspaConfig = OspaConfig()) -> ResultsBundle:
    """Single-UE run of one track."""
    out = run_multiuser(scn, [track or scn.track or scn.tracks[0].name], mode=mode, use_imu=use_imu,
                        ospa_cfg=ospa_cfg, _single=True)
    return out[0]


def run_multiuser(scn: Scenario, names=None, mode: str | None = None, shared: bool = True,
                  use_imu: bool | None = None, ospa_cfg: OspaConfig = OspaConfig(),
                  _single: bool = False) -> list[ResultsBundle]:
    """Several UEs on one shared map (or private maps with ``shared=False``)."""
    mode = mode or scn.mode
    names = list(names or scn.crowd or [scn.track])
    use_imu = scn.imu.enabled if use_imu is None else use_imu
    cfg = scn.effective_bp(use_imu)
    all_names = [t.name for t in scn.tracks]
    meas_ss, imu_ss, slam_seed = _seed_streams(scn.seed, len(all_names))
    datas = []
    for n in names:
        i = all_names.index(n)
        replay = _load_replay(scn, n, not _single) if mode == "replay" else None
        datas.append(make_track_data(scn, n, mode, meas_ss[i], imu_ss[i], replay))
    order = sorted(range(len(datas)), key=lambda i: datas[i].entry_step)
    if order != list(range(len(datas))):
        raise ScenarioError("crowd", "entry steps must be nondecreasing")
    crowd = [CrowdTrack(d.start(cfg.dt), d.entry_step, d.measurements, d.imu, d.name,
                        d.entry_step + len(d.positions) - 1) for d in datas]
    n_steps = max(d.entry_step + len(d.positions) - 1 for d in datas)
    pa_positions = [a.position for a in scn.anchors]
    done = [0]

    def _progress(i, t, st, est):
        done[0] = t

    try:
        results = run_crowdsourced(crowd, cfg, pa_positions, n_steps, seed=slam_seed, active_pa=scn.anchor_at,
                                   bounds=scn.bounds, use_imu=use_imu, shared=shared, on_step=_progress)
    except (ScenarioError, RunError):
        raise
    except Exception as exc:  # noqa: BLE001
        raise RunError(f"filter failed near step {done[0] + 1}: {type(exc).__name__}: {exc}") from exc
    bundles = []
    for d, ests in zip(datas, results):
        pe, oe, va_names, mae = _score(scn, d, ests, datas if shared else [d], ospa_cfg)
        man = _manifest(scn, mode, names, {"track": d.name, "shared_map": shared, "use_imu": use_imu,
                                           "entry_step": d.entry_step})
        bundles.append(ResultsBundle(scn.name, d.name, mode, scn.seed, d.positions, ests, d.rows, pe, oe,
                                     va_names, mae, man, d.rsrp))
    return bundles


def write_multi(bundles: list[ResultsBundle], out_dir) -> Path:
    out = Path(out_dir)
    for b in bundles:
        b.write(out / b.track)
        write_measurements_csv(out / f"measurements_{b.track}.csv", b.rows)
    last = {}
    for b in bundles:
        for e in b.estimates:
            last[e.step] = e
    with open(out / "shared_map.csv", "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(("step", "kind", "id", "anchor", "x", "y", "existence"))
        for t in sorted(last):
            e = last[t]
            for fid, p, r in e.features:
                w.writerow((t, e.kinds[fid], fid, e.anchors[fid], repr(p.x), repr(p.y), repr(float(r))))
    return out


# -------------------------------------------------------- extraction study

@dataclass
class ExtractionReport:
    n_steps: int
    n_paths: np.ndarray  # extracted per step
    los_first: np.ndarray  # bool per step
    gap_db: np.ndarray  # strongest minus second peak, per step (nan if < 2)
    path_err_deg: np.ndarray  # per true specular path, inf when unmatched
    path_levels: list  # MatchLevel per true path
    path_is_los: np.ndarray  # bool per true path

    def specular_within(self, deg: float) -> float:
        """Share of reflected paths whose angle error is at most ``deg``."""
        return float(np.mean(self.path_err_deg[~self.path_is_los] <= deg))

    def share_with(self, k: int) -> float:
        return float(np.mean(self.n_paths == k))


def match_paths(z: np.ndarray, truth: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """One-to-one truth/measurement matching on the larger of the two angle
    errors. Returns per-truth error in degrees (inf when unmatched) and the
    matched measurement index (-1 when unmatched)."""
    err = np.full(len(truth), np.inf)
    idx = np.full(len(truth), -1)
    if len(z) == 0 or len(truth) == 0:
        return err, idx
    d = np.maximum(np.abs(wrap_angle(truth[:, None, 0] - z[None, :, 0])),
                   np.abs(wrap_angle(truth[:, None, 1] - z[None, :, 1])))
    r, c = linear_sum_assignment(d)
    err[r] = np.degrees(d[r, c])
    idx[r] = c
    return err, idx


def extraction_report(scn: Scenario, track: str | None = None) -> ExtractionReport:
    """Full-pipeline measurements along a track, compared with the truth."""
    from .metrics import specular_match

    name = track or scn.track
    i = [t.name for t in scn.tracks].index(name)
    meas_ss, imu_ss, _ = _seed_streams(scn.seed, len(scn.tracks))
    d = make_track_data(scn, name, "full", meas_ss[i], imu_ss[i])
    n_paths, los, gaps, errs, levels, is_los = [], [], [], [], [], []
    by_t: dict = {}
    for t, k, aod, aoa, pk, s in d.rows:
        by_t.setdefault(t, []).append((k, aod, aoa, pk))
    for t in sorted(d.paths):
        rows = sorted(by_t.get(t, []))
        z = np.radians(np.array([(a, b) for _, a, b, _ in rows]).reshape(-1, 2))
        tru = np.array([[p.aod_global, p.aoa_global] for p in d.paths[t]]).reshape(-1, 2)
        e, idx = match_paths(z, tru)
        n_paths.append(len(z))
        # LOS strongest: the first extracted path is the one matched to the LOS truth
        los_ok = False
        if len(z) and len(tru) and d.paths[t][0].kind == PathKind.LOS:
            dl = np.maximum(np.abs(wrap_angle(z[:, 0] - tru[0, 0])), np.abs(wrap_angle(z[:, 1] - tru[0, 1])))
            los_ok = int(np.argmin(dl)) == 0
        los.append(los_ok)
        gaps.append(rows[0][3] - rows[1][3] if len(rows) > 1 else float("nan"))
        for j, p in enumerate(d.paths[t]):
            errs.append(e[j])
            is_los.append(p.kind == PathKind.LOS)
            levels.append(specular_match(z[idx[j]], tru[j]) if idx[j] >= 0 else None)
    return ExtractionReport(len(n_paths), np.array(n_paths), np.array(los), np.array(gaps),
                            np.array(errs), levels, np.array(is_los, dtype=bool))
