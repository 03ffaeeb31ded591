"""Scoring for tracks and maps: position error, OSPA, per-VA MAE and the
specular match classifier."""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass
from enum import Enum

import numpy as np
from scipy.optimize import linear_sum_assignment

from .geometry import wrap_angle


@dataclass(frozen=True)
class OspaConfig:
    cutoff: float = 10.0
    order: float = 1.0

    def __post_init__(self):
        if not self.cutoff > 0:
            raise ValueError("cutoff must be positive")
        if not self.order >= 1:
            raise ValueError("order must be >= 1")


class MatchLevel(str, Enum):
    HIGH = "high"
    MEDIUM = "medium"
    LOW = "low"


def _xy(points) -> np.ndarray:
    return np.array([[float(c) for c in p] for p in points], dtype=float).reshape(-1, 2)


def position_error(est_track, true_track) -> tuple[np.ndarray, float]:
    """Per-step Euclidean error and its mean."""
    est, tru = _xy(est_track), _xy(true_track)
    if est.shape != tru.shape:
        raise ValueError(f"track lengths differ: {len(est)} vs {len(tru)}")
    err = np.hypot(*(est - tru).T)
    return err, float(err.mean()) if len(err) else float("nan")


def ospa(est, truth, cfg: OspaConfig = OspaConfig()) -> float:
    """OSPA distance between two finite point sets."""
    X, Y = _xy(est), _xy(truth)
    m, n = len(X), len(Y)
    if m == 0 and n == 0:
        return 0.0
    if m == 0 or n == 0:
        return cfg.cutoff
    c, p = cfg.cutoff, cfg.order
    D = np.minimum(np.hypot(X[:, None, 0] - Y[None, :, 0], X[:, None, 1] - Y[None, :, 1]), c) ** p
    r, k = linear_sum_assignment(D)
    total = D[r, k].sum() + c ** p * abs(m - n)
    return float((total / max(m, n)) ** (1.0 / p))


@dataclass(frozen=True)
class FeatureMae:
    va_id: int
    mae: float  # nan when never detected
    detect_rate: float

    @property
    def detected(self) -> bool:
        return self.detect_rate > 0


def mae_per_feature(est_series, truth, gate: float = 3.0) -> list[FeatureMae]:
    """Mean error of each truth VA over the steps where some estimate lies
    within ``gate`` of it. ``est_series`` holds one point list per step."""
    T = _xy(truth)
    errs: list[list[float]] = [[] for _ in range(len(T))]
    steps = 0
    for pts in est_series:
        steps += 1
        P = _xy(pts)
        if len(P) == 0 or len(T) == 0:
            continue
        D = np.hypot(P[:, None, 0] - T[None, :, 0], P[:, None, 1] - T[None, :, 1])
        # each estimate votes for its nearest VA; a VA keeps its closest voter
        best = np.full(len(T), np.inf)
        for i, j in enumerate(np.argmin(D, axis=1)):
            if D[i, j] <= gate:
                best[j] = min(best[j], D[i, j])
        for j in np.flatnonzero(np.isfinite(best)):
            errs[j].append(float(best[j]))
    return [FeatureMae(j, float(np.mean(e)) if e else float("nan"), len(e) / steps if steps else 0.0)
            for j, e in enumerate(errs)]


def nearest_estimate_error(est_series, target) -> float:
    """Mean distance from ``target`` to the closest estimate, over the steps
    that have any estimate. Unlike the MAE it needs no gate, so it still
    scores a VA whose measurements were absorbed by a neighbouring feature."""
    target = np.array([float(c) for c in target])
    d = [float(np.hypot(*(_xy(pts) - target).T).min()) for pts in est_series if len(pts)]
    return float(np.mean(d)) if d else float("nan")


def specular_match(measured, theory, high_deg: float = 6.0, medium_deg: float = 9.0) -> MatchLevel:
    """Grade a measured (AOD, AOA) pair against the specular prediction."""
    d = max(abs(wrap_angle(measured[0] - theory[0])), abs(wrap_angle(measured[1] - theory[1])))
    d = math.degrees(d)
    if d < high_deg:
        return MatchLevel.HIGH
    if d <= medium_deg:
        return MatchLevel.MEDIUM
    return MatchLevel.LOW


def _fmt(x: float) -> str:
    return repr(float(x))


def write_metrics_csv(path, pos_err, ospa_err):
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(("step", "pos_err_m", "ospa_m"))
        for t, (a, b) in enumerate(zip(pos_err, ospa_err), start=1):
            w.writerow((t, _fmt(a), _fmt(b)))


def write_feature_csv(path, rows: list[FeatureMae]):
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(("va_id", "mae_m", "detect_rate"))
        for r in rows:
            w.writerow((r.va_id, _fmt(r.mae), _fmt(r.detect_rate)))
