"""Reference oracles and diagnostic metrics.

The extracted barriers are validated against independent ground truth:
the non-twist map's exact shearless curve from iterated indicator points,
transverse profiles of the stretching exponent, and the deformation of
advected tracer blobs straddling (or missing) a barrier.
"""
from __future__ import annotations

from dataclasses import dataclass, field as dataclass_field

import numpy as np

from .errors import InvalidInput
from .geometry import FloatArray, Polyline, hausdorff_distance  # noqa: F401 (re-export)
from .solver import SolverConfig
from .strainfield import StrainField
from .systems import DynamicalSystem, advect_blob, indicator_points, sntm_step

__all__ = [
    "MetricReport", "format_reports", "indicator_barrier", "hausdorff_distance",
    "TransverseProfile", "ftle_transverse_profile", "blob_stretch_ratio",
]


@dataclass
class MetricReport:
    """One named scalar check; ``passed`` is derived when a tolerance is set."""

    name: str
    value: float
    tolerance: float | None = None
    passed: bool = True
    context: dict = dataclass_field(default_factory=dict)

    def __post_init__(self):
        self.value = float(self.value)
        if self.tolerance is not None:
            self.tolerance = float(self.tolerance)
            self.passed = bool(self.value <= self.tolerance)

    def line(self) -> str:
        status = "PASS" if self.passed else "FAIL"
        tol = "" if self.tolerance is None else f" tolerance={self.tolerance:.6g}"
        ctx = "".join(f" {k}={v}" for k, v in sorted(self.context.items()))
        return f"[{status}] {self.name}: value={self.value:.9g}{tol}{ctx}"


def format_reports(reports: list[MetricReport]) -> str:
    """Structured-text report; last line summarizes the aggregate verdict."""
    lines = [r.line() for r in reports]
    n_fail = sum(not r.passed for r in reports)
    lines.append(f"{'FAILED' if n_fail else 'OK'}: {len(reports) - n_fail}/{len(reports)} checks passed")
    return "\n".join(lines) + "\n"


def _wrap_x(x: FloatArray, period: float = 1.0, center: float = 0.0) -> FloatArray:
    half = 0.5 * period
    return (x - center + half) % period - half + center


def indicator_barrier(a: float, b: float, n_iter: int) -> Polyline:
    """Exact asymptotic shearless curve of the standard non-twist map.

    The two indicator points x = a/2 +- 1/4, y = 0 are iterated under the
    map; the union of all iterates (seeds included), sorted by x wrapped into
    [-1/2, 1/2), samples the shearless invariant curve. Returned as an
    x-periodic closed polyline.
    """
    n_iter = int(n_iter)
    if n_iter < 1:
        raise InvalidInput("n_iter must be at least 1")
    seeds = indicator_points(a)
    x = seeds[:, 0].astype(np.float64).copy()
    y = seeds[:, 1].astype(np.float64).copy()
    xs = [x.copy()]
    ys = [y.copy()]
    for _ in range(n_iter):
        x, y = sntm_step(x, y, a, b)
        xs.append(x.copy())
        ys.append(y.copy())
    pts = np.column_stack([_wrap_x(np.concatenate(xs)), np.concatenate(ys)])
    order = np.lexsort((pts[:, 1], pts[:, 0]))
    return Polyline(pts[order], closed=True, period_x=1.0)


@dataclass(frozen=True)
class TransverseProfile:
    """Stretching-exponent samples along a vertical segment."""

    x: float
    ys: FloatArray
    values: FloatArray
    minima_ys: FloatArray     # strict 3-point local minima
    minima_idx: np.ndarray

    @property
    def spacing(self) -> float:
        return float(self.ys[1] - self.ys[0]) if len(self.ys) > 1 else 0.0


def ftle_transverse_profile(field: StrainField, x_fixed: float, y_range,
                            n_samples: int) -> TransverseProfile:
    """Sample the FTLE along x = x_fixed and locate its trenches.

    A trench is a strict discrete local minimum (three-point test). The
    whole segment must lie inside the field hull.
    """
    if n_samples < 3:
        raise InvalidInput("n_samples must be at least 3")
    y0, y1 = float(y_range[0]), float(y_range[1])
    if not y1 > y0:
        raise InvalidInput("y_range must be increasing")
    ys = np.linspace(y0, y1, int(n_samples))
    pts = np.column_stack([np.full_like(ys, float(x_fixed)), ys])
    vals, ok = field.scalar_at("ftle", pts)
    if not np.all(ok):
        raise InvalidInput("profile segment leaves the field hull or hits invalid nodes")
    interior = np.arange(1, len(ys) - 1)
    is_min = (vals[interior] < vals[interior - 1]) & (vals[interior] < vals[interior + 1])
    idx = interior[is_min]
    return TransverseProfile(float(x_fixed), ys, vals, ys[idx], idx)


def blob_stretch_ratio(system: DynamicalSystem, center, radius: float, n_pts: int,
                       t0: float, t1: float, solver: SolverConfig | None = None) -> float:
    """Relative growth of a tracer blob's diameter under advection.

    A circle of ``n_pts`` tracers is advected from t0 to t1; the result is
    the maximum pairwise distance among the advected points (in unwrapped
    coordinates) divided by the initial diameter 2*radius.
    """
    if n_pts < 16:
        raise InvalidInput("n_pts must be at least 16")
    pts = advect_blob(system, center, radius, n_pts, t0, t1, solver)
    diff = pts[:, None, :] - pts[None, :, :]
    max_dist = float(np.max(np.hypot(diff[..., 0], diff[..., 1])))
    return max_dist / (2.0 * float(radius))
