"""Beam-sweep measurement simulator: codebook, SSB schedule, per-subcarrier
channel synthesis, RSRP and the grouped 24x24 RSRP matrix."""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field

import numpy as np

from .geometry import PathKind, PathTruth, Pose, Scene, ground_truth_paths, wrap_angle

SPEED_OF_LIGHT = 299_792_458.0

# Row/column beam order of one 8x8 block; sorted by pointing angle.
BEAM_ORDER = (5, 6, 7, 0, 1, 2, 3, 4)


@dataclass(frozen=True)
class CodebookConfig:
    n_elements_total: int = 8
    n_active: int = 4
    spacing_wavelengths: float = 0.588
    phase_step: float = 2 * math.pi / 64
    n_beams: int = 8
    beam_phase_multiplier: int = 8
    # local angular window seen by the panel (element/housing pattern)
    fov: tuple[float, float] = (math.radians(42.0), math.radians(162.0))

    def __post_init__(self):
        if self.n_active > self.n_elements_total:
            raise ValueError("n_active exceeds n_elements_total")
        span = self.n_beams * self.beam_phase_multiplier * self.phase_step
        if not math.isclose(span, 2 * math.pi, rel_tol=1e-9):
            raise ValueError("beams must span one full phase cycle")


@dataclass(frozen=True)
class FrameConfig:
    scs_khz: float = 120.0
    fft_len: int = 1024
    n_active_subcarriers: int = 240
    n_data_subcarriers: int = 792
    cp_long: int = 136
    cp_short: int = 72
    sample_rate_msps: float = 122.88
    ssb_symbols: tuple[int, ...] = (2, 8)
    ssb_subframes: tuple[int, ...] = (0, 1, 2, 3)
    slots_per_subframe: int = 8
    symbols_per_slot: int = 14
    long_cp_slots: tuple[int, ...] = (0, 4)
    frame_ms: float = 10.0

    @property
    def ssbs_per_frame(self) -> int:
        return len(self.ssb_subframes) * self.slots_per_subframe * len(self.ssb_symbols)

    def symbol_start_samples(self, subframe: int, slot: int, symbol: int) -> int:
        """Sample offset of an OFDM symbol (CP included) from frame start."""
        per_symbol = self.fft_len + self.cp_short
        extra = self.cp_long - self.cp_short
        offset = 0
        for sf in range(subframe + 1):
            last_slot = slot if sf == subframe else self.slots_per_subframe
            for sl in range(last_slot):
                offset += self.symbols_per_slot * per_symbol + (extra if sl in self.long_cp_slots else 0)
        if symbol > 0 and slot in self.long_cp_slots:
            offset += extra
        return offset + symbol * per_symbol

    def samples_per_subframe(self) -> int:
        return self.symbol_start_samples(1, 0, 0)


@dataclass(frozen=True)
class NoiseConfig:
    noise_power_dbm: float = -100.0
    tx_power_dbm: float = 20.0
    pathloss_exponent: float = 2.0
    carrier_hz: float = 28e9
    angle_jitter_deg: dict = field(default_factory=dict)  # wall index -> std (deg)


@dataclass(frozen=True)
class SsbSlot:
    ssb_index: int
    subframe: int
    slot: int
    start_symbol: int
    tx_beam: int
    rx_beam: int


@dataclass
class RsrpMatrix:
    values: np.ndarray
    ue_orientations: tuple
    pa_orientations: tuple
    beam_order: tuple = BEAM_ORDER

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=float)
        if np.any(self.values < 0):
            raise ValueError("RSRP values must be non-negative")

    @property
    def orientation_pairs(self):
        return [[(u, p) for p in self.pa_orientations] for u in self.ue_orientations]

    def dbm(self, floor: float = 1e-30) -> np.ndarray:
        return 10 * np.log10(np.maximum(self.values, floor))

    def to_csv(self, path, dbm: bool = False):
        data = self.dbm() if dbm else self.values
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            for row in data:
                w.writerow([repr(float(v)) for v in row])

    @classmethod
    def from_csv(cls, path, ue_orientations, pa_orientations, dbm: bool = False) -> "RsrpMatrix":
        with open(path, newline="") as fh:
            rows = [[float(v) for v in row] for row in csv.reader(fh) if row]
        vals = np.array(rows)
        if dbm:
            vals = 10 ** (vals / 10)
        return cls(vals, tuple(ue_orientations), tuple(pa_orientations))


def dbm_to_mw(x):
    return 10.0 ** (np.asarray(x, dtype=float) / 10.0)


def beam_weights(cfg: CodebookConfig, beam: int) -> np.ndarray:
    """Unit-norm phase-shifter weights; element m carries phase m * psi_b."""
    if not 0 <= beam < cfg.n_beams:
        raise ValueError(f"beam {beam} out of range [0, {cfg.n_beams})")
    psi = cfg.beam_phase_multiplier * beam * cfg.phase_step
    m = np.arange(cfg.n_active)
    return np.exp(1j * m * psi) / math.sqrt(cfg.n_active)


def steering_vector(cfg: CodebookConfig, angle_local) -> np.ndarray:
    # phase +2*pi*d*cos(angle) per element; combined with the weights above
    # this places beam 1 at 102.3 deg and beam 5 at 50.4 deg
    angle_local = np.asarray(angle_local, dtype=float)
    m = np.arange(cfg.n_active)
    return np.exp(1j * 2 * math.pi * cfg.spacing_wavelengths * np.multiply.outer(np.cos(angle_local), m))


def array_gain(cfg: CodebookConfig, weights: np.ndarray, angle_local):
    """Array factor of ``weights`` toward a local angle (90 deg = broadside)."""
    return steering_vector(cfg, angle_local) @ np.asarray(weights)


def element_pattern(cfg: CodebookConfig, angle_local):
    """Amplitude pattern of the panel: unity inside the field of view."""
    a = np.mod(np.asarray(angle_local, dtype=float), 2 * math.pi)
    lo, hi = cfg.fov
    return ((a >= lo) & (a < hi)).astype(float)


def beam_peak_angles(cfg: CodebookConfig, resolution_deg: float = 0.01) -> np.ndarray:
    """Local angle maximising |gain| inside the field of view, per beam index."""
    lo, hi = cfg.fov
    grid = np.radians(np.arange(math.degrees(lo), math.degrees(hi), resolution_deg))
    peaks = []
    for b in range(cfg.n_beams):
        g = np.abs(array_gain(cfg, beam_weights(cfg, b), grid))
        peaks.append(grid[int(np.argmax(g))])
    return np.array(peaks)


def dictionary(cfg: CodebookConfig) -> np.ndarray:
    """Pointing angles in :data:`BEAM_ORDER`, i.e. sorted ascending."""
    peaks = beam_peak_angles(cfg)
    return peaks[list(BEAM_ORDER)]


# Published dictionary (degrees) in BEAM_ORDER.
THETA_DEG = (50.4, 64.8, 77.7, 90.0, 102.3, 115.2, 129.6, 148.3)


def ssb_schedule(cfg: FrameConfig, b_tx: int = 8, b_rx: int = 8) -> list[SsbSlot]:
    """One frame of SSBs; the UE holds an RX beam while the PA polls TX beams."""
    n = cfg.ssbs_per_frame
    if b_tx * b_rx > n:
        raise ValueError(f"{b_tx}x{b_rx} beam pairs exceed {n} SSBs per frame")
    per_subframe = cfg.slots_per_subframe * len(cfg.ssb_symbols)
    out = []
    for k in range(n):
        sf = cfg.ssb_subframes[k // per_subframe]
        slot = (k % per_subframe) // len(cfg.ssb_symbols)
        sym = cfg.ssb_symbols[k % len(cfg.ssb_symbols)]
        out.append(SsbSlot(k, sf, slot, sym, k % b_tx, (k // b_tx) % b_rx))
    return out


def sweep_duration_ms(cfg: FrameConfig, schedule: list[SsbSlot], b_tx: int = 8, b_rx: int = 8) -> float:
    """Time from frame start to the end of the last SSB of a full sweep."""
    used = schedule[: b_tx * b_rx]
    last = used[-1]
    # SSB spans 4 symbols; sweep is charged to whole subframes it occupies
    end = cfg.symbol_start_samples(last.subframe, last.slot, last.start_symbol + 4)
    sf_samples = cfg.samples_per_subframe()
    n_sub = math.ceil(end / sf_samples)
    return n_sub * cfg.frame_ms / 10.0


def path_amplitude(path: PathTruth, noise: NoiseConfig) -> complex:
    """Complex baseband gain of one path at the first subcarrier (sqrt mW)."""
    lam = SPEED_OF_LIGHT / noise.carrier_hz
    pl_db = 20 * math.log10(4 * math.pi / lam) + 10 * noise.pathloss_exponent * math.log10(path.length)
    p_db = noise.tx_power_dbm - pl_db - path.reflectivity_db
    tau = path.length / SPEED_OF_LIGHT
    phase = -2 * math.pi * noise.carrier_hz * tau
    return math.sqrt(10 ** (p_db / 10)) * complex(math.cos(phase), math.sin(phase))


def make_pilots(n_s: int, rng: np.random.Generator) -> np.ndarray:
    """Unit-modulus QPSK-like pilot symbols."""
    return np.exp(1j * (np.pi / 4 + np.pi / 2 * rng.integers(0, 4, size=n_s)))


def synth_received(paths, codebook: CodebookConfig, noise: NoiseConfig, tx_beam: int, rx_beam: int,
                   pilots: np.ndarray, rng: np.random.Generator | None = None,
                   pa_orientation: float = 0.0, ue_orientation: float = 0.0,
                   scs_hz: float = 120e3) -> np.ndarray:
    """Received samples on the pilot subcarriers for one beam pair."""
    pilots = np.asarray(pilots, dtype=complex)
    if not np.allclose(np.abs(pilots), 1.0):
        raise ValueError("pilots must be unit modulus")
    n = np.arange(pilots.size)
    wt = beam_weights(codebook, tx_beam)
    wr = beam_weights(codebook, rx_beam)
    h = np.zeros(pilots.size, dtype=complex)
    for p in paths:
        th = p.aod_global - pa_orientation
        ph = p.aoa_global - ue_orientation
        gt = array_gain(codebook, wt, th) * element_pattern(codebook, th)
        gr = np.conj(array_gain(codebook, wr, ph)) * element_pattern(codebook, ph)
        g = path_amplitude(p, noise) * gt * gr
        tau = p.length / SPEED_OF_LIGHT
        h += g * np.exp(-2j * math.pi * scs_hz * n * tau)
    y = h * pilots
    if rng is not None:
        sigma2 = float(dbm_to_mw(noise.noise_power_dbm))
        y = y + math.sqrt(sigma2 / 2) * (rng.standard_normal(pilots.size) + 1j * rng.standard_normal(pilots.size))
    return y


def rsrp(y: np.ndarray, pilots: np.ndarray) -> float:
    """Adjacent-subcarrier correlation power; insensitive to a linear phase ramp."""
    y = np.asarray(y)
    s = np.asarray(pilots)
    if y.shape != s.shape:
        raise ValueError("y and pilots differ in length")
    if y.size < 2:
        raise ValueError("need at least two subcarriers")
    acc = np.sum(y[:-1] * np.conj(y[1:]) / (s[:-1] * np.conj(s[1:])))
    return float(abs(acc) / (y.size - 1))


def noise_floor_rsrp(noise_power_mw: float, n_s: int) -> float:
    """Mean RSRP of a noise-only cell (Rayleigh mean of the correlation sum)."""
    return noise_power_mw * math.sqrt(math.pi) / (2 * math.sqrt(n_s - 1))


def _jittered(paths, noise: NoiseConfig, rng):
    if not noise.angle_jitter_deg:
        return paths
    out = []
    for p in paths:
        std = noise.angle_jitter_deg.get(p.wall) if p.kind == PathKind.BOUNCE else None
        if std:
            d1, d2 = np.radians(std) * rng.standard_normal(2)
            p = PathTruth(p.kind, wrap_angle(p.aod_global + d1), wrap_angle(p.aoa_global + d2),
                          p.length, p.rsp, p.wall, p.reflectivity_db)
        out.append(p)
    return out


def sweep(scene: Scene, ue: Pose, ue_orientations, pa_orientations,
          codebook: CodebookConfig = CodebookConfig(), noise: NoiseConfig = NoiseConfig(),
          frame: FrameConfig = FrameConfig(), seed=0, paths=None) -> RsrpMatrix:
    """Exhaustive beam sweep over every (UE, PA) orientation pair.

    Block (p, q) of the result holds UE orientation p and PA orientation q;
    inside a block rows index the RX beam and columns the TX beam, both in
    :data:`BEAM_ORDER`.
    """
    ue_orientations = tuple(float(o) for o in ue_orientations)
    pa_orientations = tuple(float(o) for o in pa_orientations)
    nb = codebook.n_beams
    ss = np.random.SeedSequence(seed)
    path_rng, *pair_seeds = ss.spawn(1 + len(ue_orientations) * len(pa_orientations))
    if paths is None:
        paths = ground_truth_paths(scene, ue)
    paths = _jittered(paths, noise, np.random.default_rng(path_rng))
    schedule = ssb_schedule(frame, nb, nb)
    order = {b: i for i, b in enumerate(BEAM_ORDER)}
    R = np.zeros((nb * len(ue_orientations), nb * len(pa_orientations)))
    k = 0
    for p, a_u in enumerate(ue_orientations):
        for q, a_pa in enumerate(pa_orientations):
            rng = np.random.default_rng(pair_seeds[k])
            k += 1
            pilots = make_pilots(frame.n_active_subcarriers, rng)
            for slot in schedule:
                y = synth_received(paths, codebook, noise, slot.tx_beam, slot.rx_beam, pilots, rng,
                                   pa_orientation=a_pa, ue_orientation=a_u, scs_hz=frame.scs_khz * 1e3)
                R[p * nb + order[slot.rx_beam], q * nb + order[slot.tx_beam]] = rsrp(y, pilots)
    return RsrpMatrix(R, ue_orientations, pa_orientations)


def unambiguous_window(cfg: CodebookConfig, level_db: float = -8.0, resolution_deg: float = 0.5):
    """Local angle interval where no beam outside the best beam's block
    neighbours comes within ``level_db`` of it. Outside it the phase wrap
    between beam 4 and beam 5 puts a near-copy of a path at the far end of a
    block."""
    order = [beam_weights(cfg, b) for b in BEAM_ORDER]
    lo_fov, hi_fov = cfg.fov
    grid = np.radians(np.arange(math.degrees(lo_fov), math.degrees(hi_fov), resolution_deg))
    ok = []
    for phi in grid:
        g = np.array([abs(array_gain(cfg, w, phi)) ** 2 for w in order])
        i = int(np.argmax(g))
        far = [g[j] for j in range(len(g)) if abs(j - i) > 1]
        ok.append(10 * math.log10(max(far) / g[i]) <= level_db)
    ok = np.array(ok)
    idx = np.flatnonzero(ok)
    if idx.size == 0:
        raise ValueError("no unambiguous region at this level")
    # longest contiguous run
    runs = np.split(idx, np.flatnonzero(np.diff(idx) > 1) + 1)
    best = max(runs, key=len)
    return float(grid[best[0]]), float(grid[best[-1]])


def sector_offset(angles_global, cfg: CodebookConfig = CodebookConfig(), window=None,
                  n_sectors: int = 3, step_deg: float = 1.0) -> float:
    """Base orientation for ``n_sectors`` equally spaced sectors that keeps
    every angle inside some sector's unambiguous window with the largest
    worst-case margin. Ties go to the smallest offset."""
    lo, hi = unambiguous_window(cfg) if window is None else window
    period = 2 * math.pi / n_sectors
    a = np.asarray(angles_global, dtype=float).ravel()
    best, best_score = 0.0, -np.inf
    for off in np.radians(np.arange(0.0, math.degrees(period), step_deg)):
        score = np.inf
        for ang in a:
            m = -np.inf
            for k in range(n_sectors):
                loc = np.mod(ang - off - k * period, 2 * math.pi)
                m = max(m, min(loc - lo, hi - loc))
            score = min(score, m)
        if score > best_score + 1e-12:
            best, best_score = float(off), score
    return best
