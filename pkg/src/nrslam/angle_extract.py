"""Successive-cancellation extraction of (AOD, AOA) pairs from a grouped
RSRP matrix."""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass

import numpy as np

from .beamsim import THETA_DEG, FrameConfig, NoiseConfig, RsrpMatrix, dbm_to_mw, noise_floor_rsrp
from .geometry import wrap_angle

_DEFAULT_FLOOR = noise_floor_rsrp(float(dbm_to_mw(NoiseConfig().noise_power_dbm)),
                                  FrameConfig().n_active_subcarriers)


@dataclass(frozen=True)
class ExtractConfig:
    eps_support: float = 0.05
    eps_residual: float = 3 * 24 * 24 * _DEFAULT_FLOOR
    max_paths: int = 6

    def __post_init__(self):
        if self.eps_support <= 0 or self.eps_residual <= 0:
            raise ValueError("thresholds must be positive")
        if self.max_paths < 1:
            raise ValueError("max_paths must be >= 1")

    @classmethod
    def for_noise(cls, noise_power_dbm: float, n_subcarriers: int = 240, factor: float = 3.0, **kw):
        floor = noise_floor_rsrp(float(dbm_to_mw(noise_power_dbm)), n_subcarriers)
        return cls(eps_residual=factor * 24 * 24 * floor, **kw)


@dataclass(frozen=True)
class AngleMeasurement:
    aod: float  # orientation-compensated, radians
    aoa: float
    peak_power: float
    support_halfwidth: int
    row: int = -1
    col: int = -1


def default_dictionary() -> np.ndarray:
    return np.radians(THETA_DEG)


def compensate_orientation(cell, ue_orientations, pa_orientations, dictionary=None):
    """Global (AOD, AOA) of a cell: dictionary angle plus the owning sector's
    orientation. Columns carry the TX (PA) beam, rows the RX (UE) beam."""
    theta = default_dictionary() if dictionary is None else np.asarray(dictionary)
    nb = len(theta)
    row, col = cell
    n_rows = nb * len(ue_orientations)
    n_cols = nb * len(pa_orientations)
    if not (0 <= row < n_rows and 0 <= col < n_cols):
        raise IndexError(f"cell {cell} outside {n_rows}x{n_cols} matrix")
    aod = wrap_angle(theta[col % nb] + pa_orientations[col // nb])
    aoa = wrap_angle(theta[row % nb] + ue_orientations[row // nb])
    return aod, aoa


def _box_sum(R, r, c, s):
    return R[max(r - s, 0): r + s + 1, max(c - s, 0): c + s + 1].sum()


def support_halfwidth(R: np.ndarray, r: int, c: int, eps_support: float) -> int:
    """Grow a square box around (r, c) while the ring adds more than
    ``eps_support`` of the box energy. Boxes are clipped at the borders."""
    s = 1
    limit = max(R.shape)
    while s < limit:
        inner = _box_sum(R, r, c, s)
        outer = _box_sum(R, r, c, s + 1)
        if inner <= 0 or (outer - inner) / inner <= eps_support:
            break
        s += 1
    return s


def extract_cells(R: np.ndarray, cfg: ExtractConfig):
    """Core loop; returns [(row, col, peak, halfwidth)] in detection order."""
    res = np.array(R, dtype=float, copy=True)
    if np.any(res < 0):
        raise ValueError("RSRP matrix must be non-negative")
    out = []
    while res.sum() > cfg.eps_residual and len(out) < cfg.max_paths:
        # argmax on the flattened array breaks ties lexicographically
        r, c = np.unravel_index(int(np.argmax(res)), res.shape)
        peak = float(res[r, c])
        if peak <= 0:
            break
        s = support_halfwidth(res, r, c, cfg.eps_support)
        res[max(r - s, 0): r + s + 1, max(c - s, 0): c + s + 1] = 0.0
        out.append((int(r), int(c), peak, s))
    return out


def extract_angles(R: RsrpMatrix, cfg: ExtractConfig = ExtractConfig(), dictionary=None) -> list[AngleMeasurement]:
    """Successive cancellation over the grouped matrix; strongest path first."""
    out = []
    for r, c, peak, s in extract_cells(R.values, cfg):
        aod, aoa = compensate_orientation((r, c), R.ue_orientations, R.pa_orientations, dictionary)
        out.append(AngleMeasurement(aod, aoa, peak, s, r, c))
    return out


MEASUREMENT_COLUMNS = ("t", "path_index", "aod_deg", "aoa_deg", "peak_dbm", "support_halfwidth")


def _fmt(x: float) -> str:
    # repr round-trips binary64 exactly
    return repr(float(x))


def write_measurements_csv(path, rows):
    """``rows``: iterable of (t, path_index, aod_deg, aoa_deg, peak_dbm, halfwidth)."""
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(MEASUREMENT_COLUMNS)
        for t, i, aod, aoa, pk, s in rows:
            w.writerow([int(t), int(i), _fmt(aod), _fmt(aoa), _fmt(pk) if pk is not None and math.isfinite(pk) else "nan", int(s)])


def read_measurement_rows(path) -> list[tuple]:
    """Rows as written: (t, path_index, aod_deg, aoa_deg, peak_dbm, halfwidth), sorted by step and index."""
    rows = []
    with open(path, newline="") as fh:
        rd = csv.DictReader(fh)
        if tuple(rd.fieldnames or ()) != MEASUREMENT_COLUMNS:
            raise ValueError(f"unexpected columns {rd.fieldnames}")
        for r in rd:
            rows.append((int(r["t"]), int(r["path_index"]), float(r["aod_deg"]), float(r["aoa_deg"]),
                         float(r["peak_dbm"]), int(r["support_halfwidth"])))
    return sorted(rows, key=lambda r: (r[0], r[1]))


def read_measurements_csv(path) -> dict[int, np.ndarray]:
    """Per-step arrays of (aod_deg, aoa_deg) in stored order."""
    out: dict[int, list] = {}
    for t, _, aod, aoa, _, _ in read_measurement_rows(path):
        out.setdefault(t, []).append((aod, aoa))
    return {t: np.array(v, dtype=float).reshape(-1, 2) for t, v in out.items()}