"""Planar specular geometry linking UE, physical anchor (PA), virtual anchors
(VA) and reflection surface points (RSP).

Angles are global unless stated otherwise: counterclockwise from +x, wrapped
to (-pi, pi]. A local angle is the global angle minus the array orientation.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from enum import Enum

import numpy as np


class GeometryError(ValueError):
    pass


class NoIntersection(GeometryError):
    pass


class SameSideViolation(GeometryError):
    pass


def wrap_angle(a):
    """Wrap angle(s) to (-pi, pi]."""
    w = np.mod(-np.asarray(a, dtype=float) + np.pi, 2 * np.pi)
    w = np.pi - w
    if np.ndim(w) == 0:
        return float(w)
    return w


@dataclass(frozen=True)
class Point2:
    x: float
    y: float

    def __post_init__(self):
        if not (math.isfinite(self.x) and math.isfinite(self.y)):
            raise ValueError(f"non-finite point ({self.x}, {self.y})")

    @classmethod
    def of(cls, p) -> "Point2":
        if isinstance(p, Point2):
            return p
        return cls(float(p[0]), float(p[1]))

    def array(self) -> np.ndarray:
        return np.array([self.x, self.y])

    def __iter__(self):
        yield self.x
        yield self.y


@dataclass(frozen=True)
class Wall:
    endpoint_a: Point2
    endpoint_b: Point2
    reflectivity_db: float = 5.0
    name: str = ""

    def __post_init__(self):
        object.__setattr__(self, "endpoint_a", Point2.of(self.endpoint_a))
        object.__setattr__(self, "endpoint_b", Point2.of(self.endpoint_b))
        if self.endpoint_a == self.endpoint_b:
            raise ValueError("wall endpoints must differ")
        if self.reflectivity_db < 0:
            raise ValueError("reflectivity_db must be >= 0")

    def unit_normal(self) -> np.ndarray:
        d = self.endpoint_b.array() - self.endpoint_a.array()
        n = np.array([-d[1], d[0]])
        return n / np.linalg.norm(n)


@dataclass(frozen=True)
class Pose:
    position: Point2
    orientation: float = 0.0

    def __post_init__(self):
        object.__setattr__(self, "position", Point2.of(self.position))
        object.__setattr__(self, "orientation", wrap_angle(self.orientation))


@dataclass(frozen=True)
class Bounds:
    xmin: float
    ymin: float
    xmax: float
    ymax: float

    def contains(self, p, tol: float = 1e-9) -> bool:
        x, y = p
        return (self.xmin - tol <= x <= self.xmax + tol) and (self.ymin - tol <= y <= self.ymax + tol)

    def contains_many(self, pts: np.ndarray) -> np.ndarray:
        pts = np.asarray(pts, dtype=float)
        return ((pts[..., 0] >= self.xmin) & (pts[..., 0] <= self.xmax)
                & (pts[..., 1] >= self.ymin) & (pts[..., 1] <= self.ymax))


@dataclass(frozen=True)
class Scene:
    pa: Pose
    walls: tuple = ()
    bounds: Bounds = field(default_factory=lambda: Bounds(-50.0, -50.0, 50.0, 50.0))

    def __post_init__(self):
        object.__setattr__(self, "walls", tuple(self.walls))
        if not self.bounds.contains(self.pa.position):
            raise ValueError("scene bounds must contain the PA")
        vas = [mirror_anchor(self.pa.position, w) for w in self.walls]
        for i in range(len(vas)):
            for j in range(i):
                if abs(vas[i].x - vas[j].x) < 1e-12 and abs(vas[i].y - vas[j].y) < 1e-12:
                    raise ValueError(f"walls {j} and {i} share a line; their VAs coincide")

    def virtual_anchors(self) -> list[Point2]:
        return [mirror_anchor(self.pa.position, w) for w in self.walls]


class PathKind(str, Enum):
    LOS = "LOS"
    BOUNCE = "single_bounce"


@dataclass(frozen=True)
class PathTruth:
    kind: PathKind
    aod_global: float
    aoa_global: float
    length: float
    rsp: Point2 | None = None
    wall: int | None = None
    reflectivity_db: float = 0.0
    # local angles are global minus the respective array orientation
    aod: float = 0.0
    aoa: float = 0.0


def _direction(frm, to) -> float:
    return math.atan2(to[1] - frm[1], to[0] - frm[0])


def mirror_anchor(pa, wall: Wall) -> Point2:
    """Reflect ``pa`` across the infinite line through ``wall``."""
    p = np.asarray(tuple(Point2.of(pa)), dtype=float)
    a = wall.endpoint_a.array()
    n = wall.unit_normal()
    return Point2.of(p - 2.0 * np.dot(p - a, n) * n)


def rsp_from_angles(pa: Pose, ue: Pose, aod_global: float, aoa_global: float) -> Point2:
    """Intersect the departure ray from the PA with the arrival ray at the UE."""
    p = pa.position.array()
    u = ue.position.array()
    d1 = np.array([math.cos(aod_global), math.sin(aod_global)])
    d2 = np.array([math.cos(aoa_global), math.sin(aoa_global)])
    den = d1[0] * (-d2[1]) - d1[1] * (-d2[0])
    if abs(den) < 1e-12:
        raise NoIntersection("departure and arrival rays are parallel")
    r = u - p
    s = (r[0] * (-d2[1]) - r[1] * (-d2[0])) / den
    t = (d1[0] * r[1] - d1[1] * r[0]) / den
    if s <= 0 or t <= 0:
        raise NoIntersection("rays intersect behind an origin")
    return Point2.of(p + s * d1)


def rsp_from_angles_many(pa, ue, aod, aoa):
    """Vectorised :func:`rsp_from_angles`.

    ``pa``/``ue`` broadcast as (..., 2) arrays. Returns (rsp, valid); invalid
    rows hold NaN.
    """
    pa = np.asarray(pa, dtype=float)
    ue = np.asarray(ue, dtype=float)
    d1 = np.stack([np.cos(aod), np.sin(aod)], axis=-1)
    d2 = np.stack([np.cos(aoa), np.sin(aoa)], axis=-1)
    den = -d1[..., 0] * d2[..., 1] + d1[..., 1] * d2[..., 0]
    r = ue - pa
    with np.errstate(divide="ignore", invalid="ignore"):
        s = (-r[..., 0] * d2[..., 1] + r[..., 1] * d2[..., 0]) / den
        t = (d1[..., 0] * r[..., 1] - d1[..., 1] * r[..., 0]) / den
    valid = (np.abs(den) >= 1e-12) & (s > 0) & (t > 0)
    rsp = pa + s[..., None] * d1
    rsp = np.where(valid[..., None], rsp, np.nan)
    return rsp, valid


def va_from_rsp(pa, rsp, aoa_global: float) -> Point2:
    """Unfold the arrival direction at the RSP by the PA-to-RSP distance."""
    p = np.asarray(tuple(Point2.of(pa)), dtype=float)
    r = np.asarray(tuple(Point2.of(rsp)), dtype=float)
    dist = np.linalg.norm(r - p)
    if dist == 0:
        raise GeometryError("rsp coincides with pa")
    return Point2.of(r + dist * np.array([math.cos(aoa_global), math.sin(aoa_global)]))


def va_from_rsp_many(pa, rsp, aoa):
    pa = np.asarray(pa, dtype=float)
    rsp = np.asarray(rsp, dtype=float)
    dist = np.linalg.norm(rsp - pa, axis=-1)
    return rsp + dist[..., None] * np.stack([np.cos(aoa), np.sin(aoa)], axis=-1)


def reflection_point_many(pa, va, ue):
    """Vectorised :func:`reflection_point`; returns (rsp, valid)."""
    pa = np.asarray(pa, dtype=float)
    va = np.asarray(va, dtype=float)
    ue = np.asarray(ue, dtype=float)
    diff = va - pa
    length = np.linalg.norm(diff, axis=-1)
    with np.errstate(divide="ignore", invalid="ignore"):
        n = diff / length[..., None]
        mid = 0.5 * (pa + va)
        side_ue = np.sum((ue - mid) * n, axis=-1)
        den = np.sum((va - ue) * n, axis=-1)
        s = -side_ue / den
        rsp = ue + s[..., None] * (va - ue)
    valid = (length > 0) & (side_ue < 0)
    rsp = np.where(valid[..., None], rsp, np.nan)
    return rsp, valid


def reflection_point(pa, va, ue) -> Point2:
    """Point where the UE-VA segment crosses the perpendicular bisector of PA-VA."""
    pa_a = np.asarray(tuple(Point2.of(pa)), dtype=float)
    va_a = np.asarray(tuple(Point2.of(va)), dtype=float)
    if np.allclose(pa_a, va_a, rtol=0, atol=0):
        raise GeometryError("va coincides with pa")
    rsp, valid = reflection_point_many(pa_a, va_a, np.asarray(tuple(Point2.of(ue)), dtype=float))
    if not valid:
        raise SameSideViolation("ue is not on the PA side of the reflecting line")
    return Point2.of(rsp)


def predicted_angles(feature_kind: str, feature_pos, pa: Pose, ue: Pose) -> tuple[float, float]:
    """Local (AOD, AOA) that a PA or VA feature would produce at ``ue``."""
    f = tuple(Point2.of(feature_pos))
    u = tuple(ue.position)
    if f == u:
        raise GeometryError("feature coincides with ue")
    if str(feature_kind).upper() == "PA":
        aod = _direction(f, u)
        aoa = _direction(u, f)
    else:
        rsp = reflection_point(pa.position, f, ue.position)
        aod = _direction(tuple(pa.position), tuple(rsp))
        aoa = _direction(u, f)
    return wrap_angle(aod - pa.orientation), wrap_angle(aoa - ue.orientation)


def predicted_angles_many(kind: str, feature_pos, pa_pos, ue_pos):
    """Global (AOD, AOA, valid) for arrays of paired feature/UE positions."""
    f = np.asarray(feature_pos, dtype=float)
    u = np.asarray(ue_pos, dtype=float)
    aoa = np.arctan2(f[..., 1] - u[..., 1], f[..., 0] - u[..., 0])
    if str(kind).upper() == "PA":
        aod = wrap_angle(aoa + np.pi)
        valid = np.any(f != u, axis=-1)
        return aod, aoa, valid
    rsp, valid = reflection_point_many(pa_pos, f, u)
    pa = np.asarray(pa_pos, dtype=float)
    aod = np.arctan2(rsp[..., 1] - pa[..., 1], rsp[..., 0] - pa[..., 0])
    return aod, aoa, valid


def _segment_hit(p, q, wall: Wall, eps: float = 1e-9) -> bool:
    """True when the open segment p-q properly crosses the wall segment."""
    a = wall.endpoint_a.array()
    b = wall.endpoint_b.array()
    d = q - p
    e = b - a
    den = d[0] * e[1] - d[1] * e[0]
    if abs(den) < 1e-15:
        return False
    w = a - p
    s = (w[0] * e[1] - w[1] * e[0]) / den
    t = (w[0] * d[1] - w[1] * d[0]) / den
    return eps < s < 1 - eps and -eps <= t <= 1 + eps


def _blocked(p, q, walls, skip=None) -> bool:
    return any(_segment_hit(p, q, w) for i, w in enumerate(walls) if i != skip)


def ground_truth_paths(scene: Scene, ue: Pose) -> list[PathTruth]:
    """LOS plus one single-bounce path per wall whose specular point lies on
    the finite segment with both legs unobstructed."""
    pa = scene.pa.position.array()
    u = ue.position.array()
    paths = []
    if not _blocked(pa, u, scene.walls) and np.linalg.norm(u - pa) > 0:
        aod = _direction(pa, u)
        aoa = _direction(u, pa)
        paths.append(PathTruth(
            kind=PathKind.LOS, aod_global=aod, aoa_global=aoa,
            length=float(np.linalg.norm(u - pa)),
            aod=wrap_angle(aod - scene.pa.orientation), aoa=wrap_angle(aoa - ue.orientation)))
    for i, wall in enumerate(scene.walls):
        va = mirror_anchor(scene.pa.position, wall).array()
        try:
            rsp = reflection_point(pa, va, u).array()
        except GeometryError:
            continue
        a = wall.endpoint_a.array()
        b = wall.endpoint_b.array()
        t = np.dot(rsp - a, b - a) / np.dot(b - a, b - a)
        if not (0.0 <= t <= 1.0):
            continue
        if _blocked(pa, rsp, scene.walls, skip=i) or _blocked(rsp, u, scene.walls, skip=i):
            continue
        aod = _direction(pa, rsp)
        aoa = _direction(u, rsp)
        paths.append(PathTruth(
            kind=PathKind.BOUNCE, aod_global=aod, aoa_global=aoa,
            length=float(np.linalg.norm(u - va)), rsp=Point2.of(rsp), wall=i,
            reflectivity_db=wall.reflectivity_db,
            aod=wrap_angle(aod - scene.pa.orientation), aoa=wrap_angle(aoa - ue.orientation)))
    return paths
