"""Polyline geometry: arc length, point/segment distances, Hausdorff distance.

The Hausdorff computation is exact for polylines (up to a stated absolute
tolerance) rather than vertex-sampled: distances from interior points of
segments are bounded with a Lipschitz branch-and-bound refinement, so the
result does not depend on how densely either curve happens to be sampled.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from numpy.typing import NDArray

from .errors import InvalidInput

FloatArray = NDArray[np.float64]

# Absolute tolerance of the branch-and-bound Hausdorff refinement.
HAUSDORFF_TOL = 1e-13


def as_points(a) -> FloatArray:
    pts = np.asarray(a, dtype=np.float64)
    if pts.ndim != 2 or pts.shape[1] != 2:
        raise InvalidInput(f"expected an (M, 2) vertex array, got shape {pts.shape}")
    if not np.all(np.isfinite(pts)):
        raise InvalidInput("vertex array contains non-finite entries")
    return pts


@dataclass
class Polyline:
    """An ordered open or closed polygonal curve in the plane.

    ``period_x`` declares that the curve lives on a cylinder of that
    circumference; comparisons between two such curves are then taken
    modulo horizontal shifts by the period.
    """

    vertices: FloatArray
    closed: bool = False
    period_x: float | None = None

    def __post_init__(self):
        self.vertices = as_points(self.vertices)
        if len(self.vertices) < 1:
            raise InvalidInput("polyline needs at least one vertex")
        if self.period_x is not None and self.period_x <= 0:
            raise InvalidInput("period_x must be positive")

    @property
    def arclength(self) -> float:
        return float(np.sum(np.linalg.norm(np.diff(self._ring(), axis=0), axis=1)))

    def _ring(self) -> FloatArray:
        if self.closed and len(self.vertices) > 1:
            first = self.vertices[:1]
            if self.period_x is not None:
                # close onto the image of the first vertex nearest the last
                # one, so a curve winding around the cylinder gets a short
                # closing segment instead of a full-width chord
                k = round(float(self.vertices[-1, 0] - self.vertices[0, 0])
                          / self.period_x)
                first = first + np.array([k * self.period_x, 0.0])
            return np.vstack([self.vertices, first])
        return self.vertices

    def segments(self) -> tuple[FloatArray, FloatArray]:
        """Return (starts, ends); a single-vertex curve yields one zero-length segment."""
        ring = self._ring()
        if len(ring) == 1:
            return ring, ring
        return ring[:-1], ring[1:]


def polyline_length(vertices: FloatArray) -> float:
    pts = as_points(vertices)
    if len(pts) < 2:
        return 0.0
    return float(np.sum(np.linalg.norm(np.diff(pts, axis=0), axis=1)))


def point_segment_distance(p, a, b) -> float:
    """Distance from point ``p`` to the segment ``[a, b]``."""
    p = np.asarray(p, dtype=np.float64)
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    d = b - a
    dd = float(d @ d)
    if dd == 0.0:
        return float(np.linalg.norm(p - a))
    t = float(np.clip((p - a) @ d / dd, 0.0, 1.0))
    return float(np.linalg.norm(p - (a + t * d)))


class _SegmentSet:
    """Preprocessed target polyline for fast point-to-curve distances."""

    def __init__(self, curve: Polyline, period_x: float | None):
        starts, ends = curve.segments()
        if period_x is not None:
            starts = starts.copy()
            ends = ends.copy()
            # Wrap each segment by its midpoint, then replicate at +-period so
            # every query wrapped into [0, period) sees its nearest image.
            mid_x = 0.5 * (starts[:, 0] + ends[:, 0])
            shift = np.floor(mid_x / period_x) * period_x
            starts[:, 0] -= shift
            ends[:, 0] -= shift
            reps = []
            for k in (-1.0, 0.0, 1.0):
                off = np.array([k * period_x, 0.0])
                reps.append((starts + off, ends + off))
            starts = np.vstack([r[0] for r in reps])
            ends = np.vstack([r[1] for r in reps])
        self.period_x = period_x
        self.a = starts
        self.d = ends - starts
        self.dd = np.einsum("ij,ij->i", self.d, self.d)
        self.dd_safe = np.where(self.dd == 0.0, 1.0, self.dd)

    def distance(self, p: FloatArray) -> float:
        q = p
        if self.period_x is not None:
            q = np.array([p[0] % self.period_x, p[1]])
        w = q - self.a
        t = np.clip(np.einsum("ij,ij->i", w, self.d) / self.dd_safe, 0.0, 1.0)
        closest = self.a + t[:, None] * self.d
        diff = q - closest
        return float(np.sqrt(np.min(np.einsum("ij,ij->i", diff, diff))))


def _directed_hausdorff(source: Polyline, target: _SegmentSet, tol: float) -> float:
    """sup over points of ``source`` of the distance to ``target``, exact to ``tol``.

    The distance-to-target function is 1-Lipschitz along each source segment,
    so on a subsegment with endpoint distances ga, gb and chord length ell the
    supremum is at most (ga + gb + ell) / 2; subsegments whose bound cannot
    beat the current best are discarded.
    """
    starts, ends = source.segments()
    verts = source._ring()
    g_verts = np.array([target.distance(v) for v in verts])
    best = float(np.max(g_verts))
    stack: list[tuple[FloatArray, FloatArray, float, float]] = []
    for i in range(len(starts)):
        a, b = starts[i], ends[i]
        ga = g_verts[i]
        gb = g_verts[i + 1] if len(verts) > 1 else ga
        stack.append((a, b, ga, gb))
    while stack:
        a, b, ga, gb = stack.pop()
        ell = float(np.linalg.norm(b - a))
        if ell == 0.0:
            continue
        upper = 0.5 * (ga + gb + ell)
        if upper <= best + tol:
            continue
        m = 0.5 * (a + b)
        gm = target.distance(m)
        if gm > best:
            best = gm
        stack.append((a, m, ga, gm))
        stack.append((m, b, gm, gb))
    return best


def hausdorff_distance(a: Polyline | FloatArray, b: Polyline | FloatArray) -> float:
    """Hausdorff distance between two polylines.

    If both curves declare the same x-period the distance is computed on the
    cylinder (horizontal coordinates compared modulo the period). Declaring
    mismatched periods is an error; a period declared on only one curve is
    ignored.
    """
    pa = a if isinstance(a, Polyline) else Polyline(a)
    pb = b if isinstance(b, Polyline) else Polyline(b)
    period = None
    if pa.period_x is not None and pb.period_x is not None:
        if not np.isclose(pa.period_x, pb.period_x, rtol=1e-12, atol=0.0):
            raise InvalidInput("polylines declare different x-periods")
        period = pa.period_x
    d_ab = _directed_hausdorff(pa, _SegmentSet(pb, period), HAUSDORFF_TOL)
    d_ba = _directed_hausdorff(pb, _SegmentSet(pa, period), HAUSDORFF_TOL)
    return max(d_ab, d_ba)
