"""Particle-based belief-propagation SLAM on (AOD, AOA) measurements.

UE particles and feature particles are paired by index: particle j of every
feature is evaluated against UE particle j. UE particles are resampled and
shuffled every step so the pairing stays independent.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace

import numpy as np

from .association import AssociationBelief, run_messages
from .geometry import Bounds, Point2, predicted_angles_many, reflection_point_many, rsp_from_angles_many, va_from_rsp_many, wrap_angle

F_FALSE = 1.0 / (4.0 * math.pi ** 2)  # uniform over (AOD, AOA)


class ResampleCollapse(RuntimeError):
    """Every UE particle received zero weight."""


@dataclass(frozen=True)
class BpConfig:
    p_detect: float = 0.95
    p_survive: float = 0.999
    mu_false: float = 0.1
    mu_new: float = 1e-6
    angle_sigma: float = math.radians(6.0)
    n_particles: int = 10_000
    detect_threshold: float = 0.5
    prune_threshold: float = 1e-4
    driving_variance: float = 0.0711  # acceleration variance per axis
    dt: float = 0.02
    bp_max_iters: int = 20
    bp_tol: float = 1e-6
    bp_damping: float = 0.5
    birth_threshold: float = 0.5
    regularization_std: float = 0.01
    kernel_bandwidth: float | None = None  # None: Silverman factor N**(-1/6); 0 disables
    birth_angle_sigma: float | None = None  # defaults to angle_sigma
    pairings: int = 1  # UE/feature particle pairings averaged per message
    maneuver_prob: float = 0.0  # share of UE particles drawn from the wide mode
    maneuver_variance: float = 1.0

    def __post_init__(self):
        for name in ("p_detect", "p_survive", "detect_threshold", "birth_threshold"):
            v = getattr(self, name)
            if not (0.0 < v <= 1.0):
                raise ValueError(f"{name} must lie in (0, 1], got {v}")
        if not (0.0 <= self.prune_threshold < 1.0):
            raise ValueError("prune_threshold must lie in [0, 1)")
        for name in ("n_particles", "bp_max_iters", "pairings"):
            if getattr(self, name) < 1:
                raise ValueError(f"{name} must be >= 1")
        for name in ("mu_false", "mu_new", "angle_sigma", "dt", "bp_tol"):
            if not getattr(self, name) > 0:
                raise ValueError(f"{name} must be positive")
        if not (0.0 <= self.maneuver_prob < 1.0):
            raise ValueError("maneuver_prob must lie in [0, 1)")
        if self.driving_variance < 0 or self.regularization_std < 0 or self.maneuver_variance < 0:
            raise ValueError("noise levels must be non-negative")
        if not (0.0 <= self.bp_damping < 1.0):
            raise ValueError("bp_damping must lie in [0, 1)")


@dataclass(frozen=True)
class UeState:
    position: Point2
    velocity: tuple[float, float]

    def __post_init__(self):
        if not all(math.isfinite(v) for v in self.velocity):
            raise ValueError("velocity must be finite")

    def array(self) -> np.ndarray:
        return np.array([self.position.x, self.position.y, *self.velocity], dtype=float)

    @classmethod
    def from_array(cls, u) -> "UeState":
        u = np.asarray(u, dtype=float)
        return cls(Point2(float(u[0]), float(u[1])), (float(u[2]), float(u[3])))


@dataclass(frozen=True)
class ImuSample:
    accel: tuple[float, float]
    bias_noise_std: float = 0.0

    def __post_init__(self):
        if not all(math.isfinite(v) for v in self.accel) or not math.isfinite(self.bias_noise_std):
            raise ValueError("imu sample must be finite")


@dataclass
class Feature:
    kind: str  # "PA" or "VA"
    particles: np.ndarray  # (N, 2)
    weights: np.ndarray  # (N,)
    existence: float
    id: int
    birth_time: int
    anchor: int = 0  # index of the physical anchor this feature belongs to

    def __post_init__(self):
        if self.kind not in ("PA", "VA"):
            raise ValueError(f"unknown feature kind {self.kind!r}")
        if not (0.0 <= self.existence <= 1.0):
            raise ValueError("existence outside [0, 1]")

    def mean(self) -> np.ndarray:
        return self.weights @ self.particles

    def copy(self) -> "Feature":
        return replace(self, particles=self.particles.copy(), weights=self.weights.copy())


@dataclass
class SlamState:
    ue_particles: np.ndarray  # (N, 4): x, y, vx, vy
    ue_weights: np.ndarray
    features: list[Feature]
    step: int = 0
    next_id: int = 0


@dataclass
class Estimate:
    step: int
    ue: UeState
    features: list[tuple[int, Point2, float]]
    rsps: list[tuple[int, Point2]] = field(default_factory=list)
    kinds: dict = field(default_factory=dict)
    anchors: dict = field(default_factory=dict)


# ---------------------------------------------------------------- motion

def transition_matrices(dt: float):
    if dt <= 0:
        raise ValueError("dt must be positive")
    A = np.eye(4)
    A[0, 2] = A[1, 3] = dt
    B = np.array([[0.5 * dt * dt, 0.0], [0.0, 0.5 * dt * dt], [dt, 0.0], [0.0, dt]])
    return A, B


def _as_particles(u):
    if isinstance(u, UeState):
        return u.array()[None, :], True
    return np.asarray(u, dtype=float), False


def propagate_ncv(u, dt: float, noise_std=0.0, rng: np.random.Generator | None = None):
    """Near-constant-velocity step; noise enters as a random acceleration
    with per-axis std ``noise_std``. Accepts a UeState or an (N, 4) array."""
    x, single = _as_particles(u)
    A, B = transition_matrices(dt)
    out = x @ A.T
    std = np.broadcast_to(np.asarray(noise_std, dtype=float), (2,))
    if rng is not None and np.any(std > 0):
        out = out + (rng.standard_normal((x.shape[0], 2)) * std) @ B.T
    return UeState.from_array(out[0]) if single else out


def propagate_imu(u, imu: ImuSample, dt: float, noise_std=0.0, rng: np.random.Generator | None = None):
    """NCV step driven by a measured acceleration."""
    x, single = _as_particles(u)
    _, B = transition_matrices(dt)
    out = propagate_ncv(x, dt, noise_std, rng) + B @ np.asarray(imu.accel, dtype=float)
    return UeState.from_array(out[0]) if single else out


# --------------------------------------------------------------- features

def survival_predict(f: Feature, cfg: BpConfig, rng: np.random.Generator | None = None) -> Feature:
    out = replace(f, existence=cfg.p_survive * f.existence)
    if rng is not None and f.kind == "VA" and cfg.regularization_std > 0:
        out.particles = f.particles + cfg.regularization_std * rng.standard_normal(f.particles.shape)
    return out


def angle_density(residual, sigma: float):
    """Wrapped normal density of an angle residual (three-term sum)."""
    r = wrap_angle(np.asarray(residual, dtype=float))
    c = 1.0 / (math.sqrt(2 * math.pi) * sigma)
    return c * sum(np.exp(-0.5 * ((r + 2 * math.pi * k) / sigma) ** 2) for k in (-1, 0, 1))


def likelihood_matrix(z: np.ndarray, kind: str, feature_pos, pa_pos, ue_pos, sigma: float) -> np.ndarray:
    """Densities f(z_m | ue_j, p_j) for paired particles; shape (M, N).

    ``z`` holds global (AOD, AOA) pairs in radians."""
    z = np.asarray(z, dtype=float).reshape(-1, 2)
    aod, aoa, valid = predicted_angles_many(kind, feature_pos, pa_pos, ue_pos)
    aod = np.atleast_1d(aod)
    aoa = np.atleast_1d(aoa)
    valid = np.atleast_1d(valid)
    dens = angle_density(z[:, :1] - aod[None, :], sigma) * angle_density(z[:, 1:] - aoa[None, :], sigma)
    return np.where(valid[None, :], dens, 0.0)


def measurement_likelihood(z, ue: UeState, kind: str, feature_pos, pa_pos, sigma: float) -> float:
    """Scalar density of one (AOD, AOA) measurement, global radians."""
    L = likelihood_matrix(np.asarray(z, dtype=float)[None, :], kind,
                          np.asarray(tuple(Point2.of(feature_pos)), dtype=float)[None, :],
                          np.asarray(tuple(Point2.of(pa_pos)), dtype=float),
                          ue.array()[None, :2], sigma)
    return float(L[0, 0])


def _systematic(weights: np.ndarray, n: int, rng: np.random.Generator) -> np.ndarray:
    c = np.cumsum(weights)
    c[-1] = 1.0
    u = (rng.random() + np.arange(n)) / n
    return np.minimum(np.searchsorted(c, u, side="right"), len(weights) - 1)


def ess(weights: np.ndarray) -> float:
    return 1.0 / float(np.sum(weights ** 2))


# ------------------------------------------------------------ association

@dataclass
class _StepCache:
    likelihoods: list  # per active feature, (M, N)
    factors: list  # per active feature, (N,)


def associate(features: list[Feature], z: np.ndarray, ue_particles: np.ndarray, cfg: BpConfig,
              pa_positions, cache: _StepCache | None = None, perms=None) -> AssociationBelief:
    """Build likelihood ratios from paired particles and run message passing.

    ``perms`` lists index permutations of the UE particles; feature particle
    j is paired with UE particle ``perm[j]`` under each of them."""
    z = np.asarray(z, dtype=float).reshape(-1, 2)
    M, K = z.shape[0], len(features)
    ue_pos = np.asarray(ue_particles, dtype=float)[:, :2]
    if perms is None:
        perms = [np.arange(ue_pos.shape[0])]
    beta = np.zeros((K, M))
    scale = cfg.p_detect / (cfg.mu_false * F_FALSE)
    for k, f in enumerate(features):
        Ls = [likelihood_matrix(z, f.kind, f.particles, pa_positions[f.anchor], ue_pos[pm], cfg.angle_sigma)
              if M else np.zeros((0, len(f.weights))) for pm in perms]
        if cache is not None:
            cache.likelihoods.append(Ls)
        # b0 vanishes only for a certain feature that is always detected
        b0 = max(f.existence * (1 - cfg.p_detect) + (1 - f.existence), 1e-300)
        beta[k] = f.existence * scale * np.mean([L @ f.weights for L in Ls], axis=0) / b0
    xi = np.full(M, 1.0 + cfg.mu_new / cfg.mu_false)
    return run_messages(beta, xi, cfg.bp_max_iters, cfg.bp_tol, cfg.bp_damping)


def detection_factors(L, nu_k: np.ndarray, cfg: BpConfig) -> np.ndarray:
    """Missed-detection term plus message-weighted likelihood ratios.

    ``L`` is an (M, N) likelihood block, or a list of them (one per pairing),
    giving an (N,) or (S, N) result."""
    scale = cfg.p_detect / (cfg.mu_false * F_FALSE)
    L = np.asarray(L, dtype=float)
    if L.shape[-2] == 0:
        return np.full(L.shape[:-2] + L.shape[-1:], 1 - cfg.p_detect)
    return (1 - cfg.p_detect) + scale * np.einsum("m,...mn->...n", nu_k, L)


def update_legacy(f: Feature, L, nu_k: np.ndarray, cfg: BpConfig,
                  rng: np.random.Generator | None = None):
    """Posterior of one legacy feature; returns (feature, per-particle factor).

    ``L`` is the (M, N) likelihood block of the feature (or a list of blocks,
    one per pairing) and ``nu_k`` the incoming measurement messages."""
    fac = detection_factors(L, nu_k, cfg)
    factor = fac.mean(axis=0) if fac.ndim == 2 else fac
    S = float(f.weights @ factor)
    r = f.existence
    r_new = r * S / (r * S + (1 - r)) if r < 1 else 1.0
    w = f.weights * factor
    tot = w.sum()
    w = f.weights.copy() if tot <= 0 or not np.isfinite(tot) else w / tot
    out = replace(f, weights=w, existence=float(min(max(r_new, 0.0), 1.0)))
    if rng is not None and ess(w) < 0.5 * len(w):
        out.particles = resample_regularized(f.particles, w, rng, cfg.kernel_bandwidth if f.kind == "VA" else 0.0)
        out.weights = np.full(len(w), 1.0 / len(w))
    return out, factor


def resample_regularized(particles: np.ndarray, weights: np.ndarray, rng: np.random.Generator,
                         bandwidth: float | None = None) -> np.ndarray:
    """Systematic resampling followed by a Gaussian kernel shaped like the
    weighted particle covariance."""
    n = len(weights)
    idx = _systematic(weights, n, rng)
    out = particles[idx]
    h = n ** (-1.0 / 6.0) if bandwidth is None else bandwidth
    if h > 0:
        m = weights @ particles
        d = particles - m
        cov = (weights[:, None] * d).T @ d
        try:
            chol = np.linalg.cholesky(cov + 1e-12 * np.eye(particles.shape[1]))
        except np.linalg.LinAlgError:
            return out
        out = out + h * rng.standard_normal(out.shape) @ chol.T
    return out


def birth_features(z: np.ndarray, belief: AssociationBelief, ue_particles: np.ndarray, pa_pos, cfg: BpConfig,
                   rng: np.random.Generator, step: int, next_id: int, bounds: Bounds | None = None,
                   anchor: int = 0) -> list[Feature]:
    """New VA features for measurements that legacy features do not explain."""
    z = np.asarray(z, dtype=float).reshape(-1, 2)
    out = []
    if z.shape[0] == 0:
        return out
    p_unassoc = belief.meas_to_feature[:, 0]
    phi_sum = belief.phi.sum(axis=0) if belief.phi.size else np.zeros(z.shape[0])
    ratio = cfg.mu_new / cfg.mu_false
    sig = cfg.angle_sigma if cfg.birth_angle_sigma is None else cfg.birth_angle_sigma
    n = ue_particles.shape[0]
    pa = np.asarray(tuple(Point2.of(pa_pos)), dtype=float)
    for m in range(z.shape[0]):
        if p_unassoc[m] <= cfg.birth_threshold:
            continue
        aod = z[m, 0] + sig * rng.standard_normal(n)
        aoa = z[m, 1] + sig * rng.standard_normal(n)
        rsp, ok = rsp_from_angles_many(pa, ue_particles[:, :2], aod, aoa)
        va = va_from_rsp_many(pa, np.where(ok[:, None], rsp, 0.0), aoa)
        if bounds is not None:
            ok &= bounds.contains_many(va)
        if not ok.any():
            continue
        keep = np.flatnonzero(ok)
        # particles were drawn in angle space; a uniform prior over VA
        # position needs the Jacobian of the VA -> angle map as weight
        jac = np.zeros(n)
        jac[keep] = angle_jacobian_det(va[keep], pa, ue_particles[keep, :2])
        if not np.any(jac > 0):
            continue
        pick = _systematic(jac / jac.sum(), n, rng)
        r0 = ratio / (ratio + 1.0 + float(phi_sum[m]))
        out.append(Feature("VA", va[pick], np.full(n, 1.0 / n), r0, next_id + len(out), step, anchor))
    return out


def angle_jacobian_det(va: np.ndarray, pa, ue: np.ndarray, h: float = 1e-5) -> np.ndarray:
    """|det d(AOD, AOA)/d(VA)| by central differences; 0 where undefined."""
    cols = []
    for e in (np.array([h, 0.0]), np.array([0.0, h])):
        d1, a1, v1 = predicted_angles_many("VA", va + e, pa, ue)
        d0, a0, v0 = predicted_angles_many("VA", va - e, pa, ue)
        cols.append((wrap_angle(d1 - d0) / (2 * h), wrap_angle(a1 - a0) / (2 * h), v1 & v0))
    det = np.abs(cols[0][0] * cols[1][1] - cols[1][0] * cols[0][1])
    ok = cols[0][2] & cols[1][2] & np.isfinite(det)
    return np.where(ok, det, 0.0)


# -------------------------------------------------------------- estimates

def prune(state: SlamState, cfg: BpConfig, keep_ids=()) -> SlamState:
    keep_ids = set(keep_ids)
    feats = [f for f in state.features if f.existence >= cfg.prune_threshold or f.id in keep_ids]
    return replace(state, features=feats)


def estimate(state: SlamState, cfg: BpConfig, pa_positions) -> Estimate:
    u = state.ue_weights @ state.ue_particles
    ue = UeState.from_array(u)
    feats, rsps, kinds, anchors = [], [], {}, {}
    for f in state.features:
        if f.existence > cfg.detect_threshold:
            p = f.mean()
            feats.append((f.id, Point2(float(p[0]), float(p[1])), f.existence))
            kinds[f.id] = f.kind
            anchors[f.id] = f.anchor
            if f.kind == "VA":
                rsp, ok = reflection_point_many(pa_positions[f.anchor], p, u[:2])
                if ok:
                    rsps.append((f.id, Point2(float(rsp[0]), float(rsp[1]))))
    return Estimate(state.step, ue, feats, rsps, kinds, anchors)


def init_state(ue: UeState, pa_positions, cfg: BpConfig, ue_std: float = 0.0,
               rng: np.random.Generator | None = None) -> SlamState:
    """Known UE start and known physical anchors (one PA feature each)."""
    n = cfg.n_particles
    parts = np.tile(ue.array(), (n, 1))
    if ue_std > 0 and rng is not None:
        parts[:, :2] += ue_std * rng.standard_normal((n, 2))
    feats = []
    for i, p in enumerate(pa_positions):
        xy = np.asarray(tuple(Point2.of(p)), dtype=float)
        feats.append(Feature("PA", np.tile(xy, (n, 1)), np.full(n, 1.0 / n), 1.0, i, 0, i))
    return SlamState(parts, np.full(n, 1.0 / n), feats, 0, len(feats))


def step(state: SlamState, z, imu: ImuSample | None, cfg: BpConfig, rng: np.random.Generator,
         pa_positions, active_pa: int = 0, bounds: Bounds | None = None,
         predict_ue: bool = True, predict_features: bool = True) -> SlamState:
    """One filtering step. ``z`` holds global (AOD, AOA) in radians.

    Only features anchored to ``active_pa`` take part; the rest are carried
    over untouched.
    """
    z = np.asarray(z, dtype=float).reshape(-1, 2)
    t = state.step + 1
    x = state.ue_particles
    std = math.sqrt(cfg.driving_variance)
    if predict_ue:
        if imu is not None:
            x = propagate_imu(x, imu, cfg.dt, std, rng)
        else:
            x = propagate_ncv(x, cfg.dt, std, rng)
        if cfg.maneuver_prob > 0:
            # two-mode driving noise: a few particles follow sharp turns
            wide = rng.random(x.shape[0]) < cfg.maneuver_prob
            extra = math.sqrt(max(cfg.maneuver_variance - cfg.driving_variance, 0.0))
            _, B = transition_matrices(cfg.dt)
            x = x.copy()
            x[wide] += (rng.standard_normal((int(wide.sum()), 2)) * extra) @ B.T

    active_idx = [i for i, f in enumerate(state.features) if f.anchor == active_pa]
    active = [survival_predict(state.features[i], cfg, rng) if predict_features else state.features[i]
              for i in active_idx]

    n = x.shape[0]
    perms = [np.arange(n)] + [rng.permutation(n) for _ in range(cfg.pairings - 1)]
    cache = _StepCache([], [])
    belief = associate(active, z, x, cfg, pa_positions, cache, perms)

    log_w = np.log(state.ue_weights)
    updated = []
    for k, f in enumerate(active):
        nu_k = belief.nu[:, k] if z.shape[0] else np.zeros(0)
        fac = detection_factors(cache.likelihoods[k], nu_k, cfg)
        g, _ = update_legacy(f, cache.likelihoods[k], nu_k, cfg, rng)
        # message to each UE particle, averaged over its paired feature
        # particles; N*w is the importance weight of a feature particle
        msg = np.zeros(n)
        for pm, fs in zip(perms, fac):
            msg[pm] += len(f.weights) * f.weights * fs
        gamma = f.existence * msg / len(perms) + (1 - f.existence)
        with np.errstate(divide="ignore"):
            log_w = log_w + np.log(gamma)
        updated.append(g)

    babies = birth_features(z, belief, x, pa_positions[active_pa], cfg, rng, t, state.next_id, bounds, active_pa)

    log_w = log_w - np.max(log_w) if np.isfinite(np.max(log_w)) else log_w
    w = np.exp(log_w)
    tot = w.sum()
    if not np.isfinite(tot) or tot <= 0:
        raise ResampleCollapse(f"all UE particle weights vanished at step {t}")
    w /= tot
    idx = _systematic(w, n, rng)
    x = x[idx][rng.permutation(n)]

    feats = list(state.features)
    for i, g in zip(active_idx, updated):
        feats[i] = g
    feats.extend(babies)
    out = SlamState(x, np.full(n, 1.0 / n), feats, t, state.next_id + len(babies))
    return prune(out, cfg, keep_ids=[b.id for b in babies])


# ----------------------------------------------------------- snapshotting

def snapshot(state: SlamState, cfg: BpConfig, pa_positions, include_particles: bool = False) -> dict:
    """JSON-compatible summary (optionally with the full particle sets)."""
    est = estimate(state, cfg, pa_positions)
    out = {
        "step": state.step,
        "next_id": state.next_id,
        "ue": {"position": [est.ue.position.x, est.ue.position.y], "velocity": list(est.ue.velocity)},
        "features": [],
    }
    for f in state.features:
        m = f.mean()
        d = f.particles - m
        cov = (f.weights[:, None] * d).T @ d
        rec = {"id": f.id, "kind": f.kind, "anchor": f.anchor, "birth_time": f.birth_time,
               "existence": f.existence, "mean": m.tolist(), "cov": cov.tolist()}
        if include_particles:
            rec["particles"] = f.particles.tolist()
            rec["weights"] = f.weights.tolist()
        out["features"].append(rec)
    if include_particles:
        out["ue_particles"] = state.ue_particles.tolist()
        out["ue_weights"] = state.ue_weights.tolist()
    return out


def restore(snap: dict, cfg: BpConfig, rng: np.random.Generator | None = None) -> SlamState:
    """Inverse of :func:`snapshot`. Summary-only snapshots are re-sampled
    from the stored Gaussian moments."""
    n = cfg.n_particles
    rng = rng or np.random.default_rng(0)
    feats = []
    for rec in snap["features"]:
        if "particles" in rec:
            parts = np.asarray(rec["particles"], dtype=float)
            w = np.asarray(rec["weights"], dtype=float)
        else:
            cov = np.asarray(rec["cov"], dtype=float)
            parts = rng.multivariate_normal(rec["mean"], cov + 1e-12 * np.eye(2), size=n) if rec["kind"] == "VA" \
                else np.tile(rec["mean"], (n, 1))
            w = np.full(n, 1.0 / n)
        feats.append(Feature(rec["kind"], parts, w, float(rec["existence"]), int(rec["id"]),
                             int(rec["birth_time"]), int(rec["anchor"])))
    if "ue_particles" in snap:
        x = np.asarray(snap["ue_particles"], dtype=float)
        w = np.asarray(snap["ue_weights"], dtype=float)
    else:
        x = np.tile([*snap["ue"]["position"], *snap["ue"]["velocity"]], (n, 1))
        w = np.full(n, 1.0 / n)
    return SlamState(x, w, feats, int(snap["step"]), int(snap["next_id"]))


# ----------------------------------------------------------- crowdsourcing

@dataclass
class CrowdTrack:
    """One UE: its start state, entry step and per-step inputs (1-based)."""
    start: UeState
    entry_step: int
    measurements: dict  # step -> (M, 2) global radians
    imu: dict = field(default_factory=dict)  # step -> ImuSample
    name: str = ""
    last_step: int | None = None  # leaves the scene after this step


def track_rngs(seed: int, n_tracks: int) -> list[np.random.Generator]:
    return [np.random.default_rng(s) for s in np.random.SeedSequence(seed).spawn(n_tracks)]


def run_crowdsourced(tracks: list[CrowdTrack], cfg: BpConfig, pa_positions, n_steps: int, seed: int = 0,
                     active_pa=None, bounds: Bounds | None = None, use_imu: bool = False,
                     shared: bool = True, on_step=None) -> list[list[Estimate]]:
    """Several UEs sharing one feature map, processed in entry order within
    each time step. With ``shared=False`` every UE keeps a private map.

    ``active_pa`` maps a step to the serving anchor index (default 0).
    """
    if any(tracks[i].entry_step > tracks[i + 1].entry_step for i in range(len(tracks) - 1)):
        raise ValueError("tracks must be sorted by entry step")
    rngs = track_rngs(seed, len(tracks))
    pa_positions = [np.asarray(tuple(Point2.of(p)), dtype=float) for p in pa_positions]
    base = init_state(tracks[0].start, pa_positions, cfg)
    shared_feats, shared_next = base.features, base.next_id
    states: list[SlamState | None] = [None] * len(tracks)
    results: list[list[Estimate]] = [[] for _ in tracks]
    for t in range(1, n_steps + 1):
        pa_idx = 0 if active_pa is None else int(active_pa(t) if callable(active_pa) else active_pa[t - 1])
        first = True
        for i, tr in enumerate(tracks):
            if t < tr.entry_step or (tr.last_step is not None and t > tr.last_step):
                continue
            rng = rngs[i]
            if states[i] is None:
                s0 = init_state(tr.start, pa_positions, cfg)
                if shared:
                    s0 = SlamState(s0.ue_particles, s0.ue_weights, [f.copy() for f in shared_feats], t - 1, shared_next)
                else:
                    s0.step = t - 1
                states[i] = s0
                fresh = True
            else:
                fresh = False
            st = states[i]
            if shared:
                st = SlamState(st.ue_particles, st.ue_weights, shared_feats, st.step, shared_next)
            z = tr.measurements.get(t, np.zeros((0, 2)))
            imu = tr.imu.get(t) if use_imu else None
            st = step(st, z, imu, cfg, rng, pa_positions, pa_idx, bounds,
                      predict_ue=not fresh, predict_features=(first or not shared))
            first = False
            states[i] = st
            if shared:
                shared_feats, shared_next = st.features, st.next_id
            est = estimate(st, cfg, pa_positions)
            results[i].append(est)
            if on_step is not None:
                on_step(i, t, st, est)
    return results
