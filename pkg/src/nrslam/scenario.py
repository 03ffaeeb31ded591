"""Scenario files: scene, tracks, orientation schedule and tunables, loaded
from YAML with validation and per-field provenance."""

from __future__ import annotations

import dataclasses
import hashlib
import json
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import yaml

from .angle_extract import ExtractConfig
from .beamsim import NoiseConfig
from .bp_slam import BpConfig
from .geometry import Bounds, Point2, Pose, Scene, Wall

MODES = ("full", "angles", "replay")


class ScenarioError(ValueError):
    """Invalid scenario; the message starts with the offending field."""

    def __init__(self, fld: str, msg: str):
        super().__init__(f"{fld}: {msg}")
        self.field = fld


@dataclass(frozen=True)
class Track:
    name: str
    waypoints: tuple[tuple[float, float], ...]
    entry_step: int = 1

    def points(self, step_length: float) -> np.ndarray:
        """Positions along the polyline every ``step_length`` meters, last
        waypoint included."""
        wp = np.asarray(self.waypoints, dtype=float)
        out = [wp[0]]
        carry = 0.0  # distance already walked since the last emitted point
        for a, b in zip(wp[:-1], wp[1:]):
            seg = float(np.hypot(*(b - a)))
            s = step_length - carry
            while s <= seg + 1e-9:
                out.append(a + (b - a) * min(s / seg, 1.0))
                s += step_length
            carry = seg - (s - step_length)
        if carry > 1e-6:
            out.append(wp[-1])
        return np.array(out)


@dataclass(frozen=True)
class ScheduleEntry:
    first: int
    last: int
    ue_deg: tuple[float, ...]
    pa_deg: tuple[float, ...]


@dataclass(frozen=True)
class ActivePa:
    first: int
    last: int
    anchor: int


@dataclass(frozen=True)
class ImuConfig:
    enabled: bool = False
    bias_noise_std: float = 0.0
    driving_variance: float | None = None  # replaces bp.driving_variance when enabled


@dataclass
class Scenario:
    name: str
    anchors: list[Pose]
    walls: tuple[Wall, ...]
    bounds: Bounds
    tracks: list[Track]
    schedule: list[ScheduleEntry]
    active_pa: list[ActivePa]
    noise: NoiseConfig
    extract: ExtractConfig
    bp: BpConfig
    seed: int = 0
    mode: str = "angles"
    angle_noise_deg: float = 6.0
    step_length: float = 0.8
    orientations: str = "auto"  # "auto" per-step sector calibration, or "table"
    imu: ImuConfig = ImuConfig()
    track: str = ""  # track used by single runs
    crowd: tuple[str, ...] = ()  # tracks used by multi-UE runs, in entry order
    replay_csv: str | None = None
    provenance: dict = field(default_factory=dict)

    def scene(self, anchor: int = 0) -> Scene:
        return Scene(self.anchors[anchor], self.walls, self.bounds)

    def get_track(self, name: str | None = None) -> Track:
        name = name or self.track or self.tracks[0].name
        for t in self.tracks:
            if t.name == name:
                return t
        raise ScenarioError("track", f"no track named {name!r}")

    def n_steps(self, names=None) -> int:
        names = names or [t.name for t in self.tracks]
        return max(self.get_track(n).entry_step + len(self.get_track(n).points(self.step_length)) - 1
                   for n in names)

    def anchor_at(self, t: int) -> int:
        for a in self.active_pa:
            if a.first <= t <= a.last:
                return a.anchor
        raise ScenarioError("active_pa", f"step {t} not covered")

    def orientation_at(self, t: int) -> ScheduleEntry:
        for e in self.schedule:
            if e.first <= t <= e.last:
                return e
        raise ScenarioError("orientation_schedule", f"step {t} not covered")

    def effective_bp(self, use_imu: bool | None = None) -> BpConfig:
        use_imu = self.imu.enabled if use_imu is None else use_imu
        if use_imu and self.imu.driving_variance is not None:
            return dataclasses.replace(self.bp, driving_variance=self.imu.driving_variance)
        return self.bp

    def effective_config(self) -> dict:
        """Flat, JSON-ready view of every tunable."""
        return _flatten({
            "name": self.name, "seed": self.seed, "mode": self.mode, "angle_noise_deg": self.angle_noise_deg,
            "step_length": self.step_length, "orientations": self.orientations, "track": self.track,
            "crowd": list(self.crowd), "replay_csv": self.replay_csv,
            "bp": _asdict(self.bp), "extract": _asdict(self.extract), "noise": _asdict(self.noise),
            "imu": _asdict(self.imu),
            "scene": {
                "anchors": [[a.position.x, a.position.y, math.degrees(a.orientation)] for a in self.anchors],
                "walls": [[w.endpoint_a.x, w.endpoint_a.y, w.endpoint_b.x, w.endpoint_b.y, w.reflectivity_db] for w in self.walls],
                "bounds": [self.bounds.xmin, self.bounds.ymin, self.bounds.xmax, self.bounds.ymax],
            },
            "tracks": {t.name: {"entry_step": t.entry_step, "waypoints": [list(p) for p in t.waypoints]}
                       for t in self.tracks},
            "orientation_schedule": [[e.first, e.last, list(e.ue_deg), list(e.pa_deg)] for e in self.schedule],
            "active_pa": [[a.first, a.last, a.anchor] for a in self.active_pa],
        })

    def config_hash(self) -> str:
        blob = json.dumps(self.effective_config(), sort_keys=True, default=repr).encode()
        return hashlib.sha256(blob).hexdigest()


def _asdict(obj) -> dict:
    d = dataclasses.asdict(obj)
    if isinstance(obj, BpConfig):
        d["angle_sigma_deg"] = math.degrees(d.pop("angle_sigma"))
    return d


def _flatten(d: dict, prefix: str = "") -> dict:
    out = {}
    for k, v in d.items():
        key = f"{prefix}{k}"
        if isinstance(v, dict) and k not in ("tracks", "angle_jitter_deg"):
            out.update(_flatten(v, key + "."))
        else:
            out[key] = v
    return out


# ------------------------------------------------------------------ loading

def _pair(v, fld) -> tuple[float, float]:
    try:
        x, y = (float(c) for c in v)
    except (TypeError, ValueError):
        raise ScenarioError(fld, f"expected [x, y], got {v!r}") from None
    if not (math.isfinite(x) and math.isfinite(y)):
        raise ScenarioError(fld, "non-finite coordinate")
    return x, y


def _steps(v, fld) -> tuple[int, int]:
    try:
        a, b = (int(c) for c in v)
    except (TypeError, ValueError):
        raise ScenarioError(fld, f"expected [first, last], got {v!r}") from None
    if a < 1 or b < a:
        raise ScenarioError(fld, f"bad step range [{a}, {b}]")
    return a, b


def _check_cover(ranges, n: int, fld: str):
    cover = np.zeros(n + 1, dtype=int)
    for a, b in ranges:
        cover[a:min(b, n) + 1] += 1
    missing = [t for t in range(1, n + 1) if cover[t] == 0]
    if missing:
        raise ScenarioError(fld, f"steps {missing[0]}-{missing[-1]} not covered" if len(missing) > 1
                            else f"step {missing[0]} not covered")
    if np.any(cover > 1):
        raise ScenarioError(fld, f"step {int(np.argmax(cover > 1))} covered twice")


def _build(cls, raw: dict, fld: str, convert=None):
    raw = dict(raw or {})
    if convert:
        raw = convert(raw)
    unknown = set(raw) - {f.name for f in dataclasses.fields(cls)}
    if unknown:
        raise ScenarioError(f"{fld}.{sorted(unknown)[0]}", "unknown field")
    try:
        return cls(**raw)
    except (TypeError, ValueError) as exc:
        raise ScenarioError(fld, str(exc)) from None


def _bp_convert(raw):
    if "angle_sigma_deg" in raw:
        raw["angle_sigma"] = math.radians(float(raw.pop("angle_sigma_deg")))
    if "birth_angle_sigma_deg" in raw:
        raw["birth_angle_sigma"] = math.radians(float(raw.pop("birth_angle_sigma_deg")))
    if "n_particles" in raw:
        raw["n_particles"] = int(float(raw["n_particles"]))
    return raw


def _extract_convert(raw):
    if "eps_residual_dbm" in raw:
        raw["eps_residual"] = 10 ** (float(raw.pop("eps_residual_dbm")) / 10)
    return raw


def _set_dotted(d: dict, key: str, value):
    parts = key.split(".")
    cur = d
    for p in parts[:-1]:
        nxt = cur.setdefault(p, {})
        if not isinstance(nxt, dict):
            raise ScenarioError(key, "cannot override inside a non-mapping")
        cur = nxt
    cur[parts[-1]] = value


def parse_override(text: str) -> tuple[str, object]:
    """``key=value`` with a YAML-typed value."""
    if "=" not in text:
        raise ScenarioError("override", f"expected key=value, got {text!r}")
    k, v = text.split("=", 1)
    val = yaml.safe_load(v)
    if isinstance(val, str):
        # YAML 1.1 reads "1e-3" as a string
        try:
            val = float(val)
        except ValueError:
            pass
    return k.strip(), val


def load_scenario(path, overrides=()) -> Scenario:
    text = Path(path).read_text()
    try:
        raw = yaml.safe_load(text)
    except yaml.YAMLError as exc:
        raise ScenarioError("file", f"parse error: {exc}") from None
    if not isinstance(raw, dict):
        raise ScenarioError("file", "top level must be a mapping")
    over = [parse_override(o) if isinstance(o, str) else o for o in overrides]
    for k, v in over:
        _set_dotted(raw, k, v)
    scn = scenario_from_dict(raw)
    scn.provenance = _provenance(raw, scn, {k for k, _ in over})
    return scn


_ALIASES = {"bp.angle_sigma": "bp.angle_sigma_deg", "bp.birth_angle_sigma": "bp.birth_angle_sigma_deg",
            "extract.eps_residual": "extract.eps_residual_dbm"}


def _provenance(raw: dict, scn: Scenario, overridden: set) -> dict:
    paper = set(raw.get("paper_values", []) or [])
    given = set(_flatten({k: v for k, v in raw.items() if k != "paper_values"}))
    out = {}
    for key in scn.effective_config():
        src = _ALIASES.get(key, key)
        if src in overridden or key in overridden:
            out[key] = "override"
        elif src in paper or key in paper:
            out[key] = "paper"
        elif src in given or key in given or any(g.startswith(key + ".") for g in given):
            out[key] = "scenario"
        else:
            out[key] = "default"
    return out


def scenario_from_dict(raw: dict) -> Scenario:
    known = {"name", "seed", "mode", "angle_noise_deg", "step_length", "orientations", "scene", "tracks",
             "orientation_schedule", "active_pa", "noise", "extract", "bp", "imu", "track", "crowd",
             "replay_csv", "paper_values"}
    unknown = set(raw) - known
    if unknown:
        raise ScenarioError(sorted(unknown)[0], "unknown field")

    sc = raw.get("scene")
    if not isinstance(sc, dict):
        raise ScenarioError("scene", "missing")
    try:
        bounds = Bounds(*(float(v) for v in sc["bounds"]))
    except (KeyError, TypeError, ValueError) as exc:
        raise ScenarioError("scene.bounds", f"expected [xmin, ymin, xmax, ymax] ({exc})") from None
    anchors = []
    for i, a in enumerate(sc.get("anchors") or []):
        fld = f"scene.anchors[{i}]"
        pos = Point2(*_pair(a.get("position"), fld + ".position"))
        if not bounds.contains(pos):
            raise ScenarioError(fld + ".position", "outside scene bounds")
        anchors.append(Pose(pos, math.radians(float(a.get("orientation_deg", 0.0)))))
    if not anchors:
        raise ScenarioError("scene.anchors", "at least one anchor required")
    walls = []
    for i, w in enumerate(sc.get("walls") or []):
        fld = f"scene.walls[{i}]"
        try:
            walls.append(Wall(Point2(*_pair(w.get("a"), fld + ".a")), Point2(*_pair(w.get("b"), fld + ".b")),
                              float(w.get("reflectivity_db", 5.0)), str(w.get("name", f"wall{i + 1}"))))
        except ValueError as exc:
            if isinstance(exc, ScenarioError):
                raise
            raise ScenarioError(fld, str(exc)) from None
    for i, a in enumerate(anchors):
        try:
            Scene(a, tuple(walls), bounds)
        except ValueError as exc:
            raise ScenarioError(f"scene.anchors[{i}]", str(exc)) from None

    step_length = float(raw.get("step_length", 0.8))
    if not step_length > 0:
        raise ScenarioError("step_length", "must be positive")
    tracks = []
    for i, t in enumerate(raw.get("tracks") or []):
        fld = f"tracks[{i}]"
        wps = tuple(_pair(p, f"{fld}.waypoints[{j}]") for j, p in enumerate(t.get("waypoints") or []))
        if len(wps) < 2:
            raise ScenarioError(fld + ".waypoints", "need at least two waypoints")
        entry = int(t.get("entry_step", 1))
        if entry < 1:
            raise ScenarioError(fld + ".entry_step", "must be >= 1")
        tracks.append(Track(str(t.get("name", f"track{i}")), wps, entry))
    if not tracks:
        raise ScenarioError("tracks", "at least one track required")
    names = [t.name for t in tracks]
    if len(set(names)) != len(names):
        raise ScenarioError("tracks", "duplicate track names")

    mode = str(raw.get("mode", "angles"))
    if mode not in MODES:
        raise ScenarioError("mode", f"must be one of {MODES}")
    orientations = str(raw.get("orientations", "auto"))
    if orientations not in ("auto", "table"):
        raise ScenarioError("orientations", "must be 'auto' or 'table'")

    sched = []
    for i, e in enumerate(raw.get("orientation_schedule") or []):
        fld = f"orientation_schedule[{i}]"
        a, b = _steps(e.get("steps"), fld + ".steps")
        ue = tuple(float(v) for v in e.get("ue_deg") or ())
        pa = tuple(float(v) for v in e.get("pa_deg") or ())
        if not ue or not pa:
            raise ScenarioError(fld, "ue_deg and pa_deg must be non-empty")
        sched.append(ScheduleEntry(a, b, ue, pa))
    active = []
    for i, e in enumerate(raw.get("active_pa") or [{"steps": [1, 10 ** 9], "anchor": 0}]):
        fld = f"active_pa[{i}]"
        a, b = _steps(e.get("steps"), fld + ".steps")
        k = int(e.get("anchor", 0))
        if not 0 <= k < len(anchors):
            raise ScenarioError(fld + ".anchor", f"no anchor {k}")
        active.append(ActivePa(a, b, k))

    noise = _build(NoiseConfig, raw.get("noise"), "noise")
    extract = _build(ExtractConfig, raw.get("extract"), "extract", _extract_convert)
    bp_raw = dict(raw.get("bp") or {})
    bp = _build(BpConfig, bp_raw, "bp", _bp_convert)
    imu = _build(ImuConfig, raw.get("imu"), "imu")
    if imu.bias_noise_std < 0:
        raise ScenarioError("imu.bias_noise_std", "must be non-negative")

    seed = raw.get("seed", 0)
    if not isinstance(seed, int) or seed < 0:
        raise ScenarioError("seed", "must be a non-negative integer")
    angle_noise = float(raw.get("angle_noise_deg", 6.0))
    if angle_noise < 0:
        raise ScenarioError("angle_noise_deg", "must be non-negative")

    scn = Scenario(str(raw.get("name", "scenario")), anchors, tuple(walls), bounds, tracks, sched, active,
                   noise, extract, bp, seed, mode, angle_noise, step_length, orientations, imu,
                   str(raw.get("track", tracks[0].name)), tuple(raw.get("crowd") or ()),
                   raw.get("replay_csv"))
    scn.get_track()
    for n in scn.crowd:
        scn.get_track(n)
    if scn.crowd:
        entries = [scn.get_track(n).entry_step for n in scn.crowd]
        if entries != sorted(entries):
            raise ScenarioError("crowd", "entry steps must be nondecreasing")
    n = scn.n_steps()
    if not sched:
        raise ScenarioError("orientation_schedule", "missing")
    _check_cover([(e.first, e.last) for e in sched], n, "orientation_schedule")
    _check_cover([(a.first, a.last) for a in active], n, "active_pa")
    return scn
