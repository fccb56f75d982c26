"""Detection and classification of Cauchy-Green singularities (C = I points).

Detection finds common zeros of f = C11 - C22 and g = C12 cell by cell:
zero crossings of each function are located on cell edges by linear
interpolation, joined into zero-isoline segments, and intersected. Spurious
intersections in strongly deformed cells are discarded with an
incompressibility filter (|lam1 lam2 - 1| <= det_tol on the cell corners),
and candidates closer than one cell diagonal are merged.

Classification is differentiation-free: on a small circle around the
candidate, the radial alignment f_i(theta) = |<xi_i, r>| / (|xi_i||r|) of
each eigenvector family is sampled and its near-1/near-0 contact episodes
are counted with hysteresis; a trisector shows three alternating episodes
per band (its three separatrices), a wedge one or two. Anything else is
kept but marked unclassified.

At long integration horizons a single structural singularity fragments
into a tight string of elementary ones whose alignment circles overlap;
``merge_clusters`` folds such strings into one composite candidate whose
classification circle encloses the whole cluster.
"""
from __future__ import annotations

from dataclasses import dataclass, replace
from typing import Sequence

import numpy as np

from .errors import DegenerateField, InvalidInput
from .geometry import FloatArray
from .strainfield import ISOTROPY_TOL, StrainField

TRISECTOR = "trisector"
WEDGE = "wedge"
UNCLASSIFIED = "unclassified"

# f_i(theta) counting bands: a run above the high band is one maximum, a run
# below the low band one minimum; values between the bands are ignored, which
# makes the counting robust to interpolation ripple.
HIGH_BAND = 0.95
LOW_BAND = 0.2


@dataclass
class Singularity:
    """A located C = I point.

    ``kind`` is None until classification; ``strain_dirs``/``stretch_dirs``
    hold the angles (radians) where the respective eigenvector family aligns
    radially — for trisectors these are the separatrix launch directions.
    ``residual`` is |f| + |g| interpolated at the located position. For a
    composite produced by ``merge_clusters``, ``extent`` is the largest
    member distance from the merged position (0 for an elementary point);
    classification circles must clear it.
    """

    id: int
    position: FloatArray
    kind: str | None = None
    residual: float = np.nan
    strain_dirs: FloatArray | None = None
    stretch_dirs: FloatArray | None = None
    extent: float = 0.0

    @property
    def x(self) -> float:
        return float(self.position[0])

    @property
    def y(self) -> float:
        return float(self.position[1])


def _edge_crossings(v: FloatArray) -> list[tuple[str, float, float]]:
    """Zero crossings of corner values [v00, v10, v01, v11] on cell edges.

    Returns (edge name, u, v) entries in unit-square coordinates.
    """
    v00, v10, v01, v11 = v
    out = []

    def cross(a, b):
        return a * b < 0.0

    if cross(v00, v10):
        out.append(("bottom", v00 / (v00 - v10), 0.0))
    if cross(v10, v11):
        out.append(("right", 1.0, v10 / (v10 - v11)))
    if cross(v01, v11):
        out.append(("top", v01 / (v01 - v11), 1.0))
    if cross(v00, v01):
        out.append(("left", 0.0, v00 / (v00 - v01)))
    return out


def _isoline_segments(corners: FloatArray) -> list[tuple[np.ndarray, np.ndarray]]:
    """Zero-isoline chords of a bilinear function on the unit cell."""
    pts = _edge_crossings(corners)
    if len(pts) < 2:
        return []
    coords = {name: np.array([u, w]) for name, u, w in pts}
    if len(pts) == 2:
        (a, b) = coords.values()
        return [(a, b)]
    if len(pts) == 4:
        # Saddle cell: resolve the pairing with the center value (the
        # bilinear value at the center is the corner mean).
        center = float(np.mean(corners))
        if center * corners[0] >= 0.0:
            pairs = [("bottom", "right"), ("top", "left")]
        else:
            pairs = [("bottom", "left"), ("top", "right")]
        return [(coords[a], coords[b]) for a, b in pairs if a in coords and b in coords]
    return []


def _segment_intersection(a0, a1, b0, b1):
    """Intersection point of two 2D segments, or None."""
    d1 = a1 - a0
    d2 = b1 - b0
    denom = d1[0] * d2[1] - d1[1] * d2[0]
    if abs(denom) < 1e-300:
        return None
    rhs = b0 - a0
    t = (rhs[0] * d2[1] - rhs[1] * d2[0]) / denom
    s = (rhs[0] * d1[1] - rhs[1] * d1[0]) / denom
    eps = 1e-9
    if -eps <= t <= 1.0 + eps and -eps <= s <= 1.0 + eps:
        return a0 + t * d1
    return None


def _bilinear(corners: FloatArray, u: float, w: float) -> float:
    v00, v10, v01, v11 = corners
    return (v00 * (1 - u) * (1 - w) + v10 * u * (1 - w)
            + v01 * (1 - u) * w + v11 * u * w)


def _newton_refine(fc: FloatArray, gc: FloatArray, uv: np.ndarray, iters: int = 4) -> np.ndarray:
    """Newton iterations on the bilinear (f, g) system inside one cell."""
    u, w = float(uv[0]), float(uv[1])
    for _ in range(iters):
        f = _bilinear(fc, u, w)
        g = _bilinear(gc, u, w)
        fu = (fc[1] - fc[0]) * (1 - w) + (fc[3] - fc[2]) * w
        fw = (fc[2] - fc[0]) * (1 - u) + (fc[3] - fc[1]) * u
        gu = (gc[1] - gc[0]) * (1 - w) + (gc[3] - gc[2]) * w
        gw = (gc[2] - gc[0]) * (1 - u) + (gc[3] - gc[1]) * u
        det = fu * gw - fw * gu
        if abs(det) < 1e-300:
            break
        du = (f * gw - g * fw) / det
        dw = (fu * g - gu * f) / det
        u, w = u - du, w - dw
        if not (-0.25 <= u <= 1.25 and -0.25 <= w <= 1.25):
            return uv  # refinement escaped the cell; keep the chord estimate
    return np.array([min(max(u, 0.0), 1.0), min(max(w, 0.0), 1.0)])


def _wrapped_dx(x1, x2, period: float | None):
    d = x1 - x2
    if period is None:
        return d
    return (d + 0.5 * period) % period - 0.5 * period


def detect_singularities(field: StrainField, det_tol: float = 1.0) -> list[Singularity]:
    """Locate candidate C = I points on the field grid.

    Returns singularities with kind unset, ordered by (y, x), ids assigned
    in that order. Raises DegenerateField when f and g vanish on a large
    share of the grid (e.g. the identity field), where zero sets are not
    isolated points.
    """
    if det_tol <= 0:
        raise InvalidInput("det_tol must be positive")
    f = field.c11 - field.c22
    g = field.c12
    valid = field.valid
    if not np.any(valid):
        raise DegenerateField("field has no valid nodes")
    mag = np.abs(f[valid]) + np.abs(g[valid])
    scale = np.nanmedian(np.abs(field.lam2[valid] - 1.0)) + 1e-300
    degenerate_share = float(np.mean(mag <= 1e-12 * max(1.0, scale)))
    if degenerate_share > 0.5:
        raise DegenerateField(
            f"f and g vanish on {degenerate_share:.0%} of valid nodes; "
            "zero sets are not isolated points")

    ny, nx = f.shape
    v4 = valid[:-1, :-1] & valid[:-1, 1:] & valid[1:, :-1] & valid[1:, 1:]

    def corner_stack(arr):
        return np.stack([arr[:-1, :-1], arr[:-1, 1:], arr[1:, :-1], arr[1:, 1:]])

    fc = corner_stack(f)
    gc = corner_stack(g)
    with np.errstate(invalid="ignore"):
        cross_f = (np.min(fc, axis=0) < 0) & (np.max(fc, axis=0) > 0)
        cross_g = (np.min(gc, axis=0) < 0) & (np.max(gc, axis=0) > 0)
        det_dev = np.max(np.abs(corner_stack(field.det_c) - 1.0), axis=0)
    cells = np.argwhere(v4 & cross_f & cross_g & (det_dev <= det_tol))

    grid = field.grid
    found: list[tuple[np.ndarray, float]] = []
    for j, i in cells:
        fcell = fc[:, j, i]
        gcell = gc[:, j, i]
        for a0, a1 in _isoline_segments(fcell):
            for b0, b1 in _isoline_segments(gcell):
                uv = _segment_intersection(a0, a1, b0, b1)
                if uv is None:
                    continue
                uv = _newton_refine(fcell, gcell, uv)
                res = abs(_bilinear(fcell, *uv)) + abs(_bilinear(gcell, *uv))
                pos = np.array([grid.x0 + (i + uv[0]) * grid.dx,
                                grid.y0 + (j + uv[1]) * grid.dy])
                found.append((pos, res))

    # Re-apply the determinant filter at the refined positions: a candidate
    # cell with clean corners can still localize onto an interpolated point
    # whose tensor is wildly non-volume-preserving (seam/chaotic-band noise).
    if found:
        comps, ok = field.cg_at(np.array([pos for pos, _ in found]))
        det_pos = comps[:, 0] * comps[:, 2] - comps[:, 1] ** 2
        with np.errstate(invalid="ignore"):
            keep = ok & (np.abs(det_pos - 1.0) <= det_tol)
        found = [fr for fr, k in zip(found, keep) if k]

    # Merge candidates within one cell diagonal, keeping the best-localized.
    radius = float(np.hypot(grid.dx, grid.dy))
    found.sort(key=lambda t: t[1])
    kept: list[tuple[np.ndarray, float]] = []
    for pos, res in found:
        dup = any(
            np.hypot(_wrapped_dx(pos[0], q[0], grid.period_x), pos[1] - q[1]) < radius
            for q, _ in kept)
        if not dup:
            kept.append((pos, res))

    kept.sort(key=lambda t: (t[0][1], t[0][0]))
    return [Singularity(idx, pos, residual=res) for idx, (pos, res) in enumerate(kept)]


def _hysteresis_episodes(values: FloatArray, high: float, low: float):
    """Alternating band-contact episodes of a circular profile.

    Walks the circle once from a neutral sample (low < f < high). A new
    high (low) episode fires only after the profile has visited the low
    (high) band since the previous one, so interpolation ripple inside one
    physical contact never double-counts. Contacts separated only by
    neutral values merge, including across the wrap-around. Returns a list
    of [kind, best_index, best_value] with kinds alternating cyclically,
    or None when no neutral sample exists (profile pinned in the bands).
    """
    n = len(values)
    neutral = np.where((values > low) & (values < high))[0]
    if len(neutral) == 0:
        return None
    start = int(neutral[0])
    episodes: list[list] = []
    state = ""
    for k in (np.arange(1, n + 1) + start) % n:
        v = values[k]
        if v >= high:
            if state != "H":
                episodes.append(["H", int(k), float(v)])
                state = "H"
            elif v > episodes[-1][2]:
                episodes[-1][1:] = [int(k), float(v)]
        elif v <= low:
            if state != "L":
                episodes.append(["L", int(k), float(v)])
                state = "L"
            elif v < episodes[-1][2]:
                episodes[-1][1:] = [int(k), float(v)]
    if len(episodes) >= 2 and episodes[0][0] == episodes[-1][0]:
        last = episodes.pop()
        first = episodes[0]
        better = max if first[0] == "H" else min
        if better(first[2], last[2]) == last[2]:
            first[1:] = last[1:]
    return episodes


def _refine_peak(values: FloatArray, idx: int, angles: FloatArray) -> float:
    """Quadratic sub-sample refinement of a circular extremum position."""
    n = len(values)
    y0 = values[(idx - 1) % n]
    y1 = values[idx]
    y2 = values[(idx + 1) % n]
    denom = y0 - 2.0 * y1 + y2
    offset = 0.0 if abs(denom) < 1e-300 else 0.5 * (y0 - y2) / denom
    offset = float(np.clip(offset, -1.0, 1.0))
    dtheta = angles[1] - angles[0]
    return float((angles[idx] + offset * dtheta) % (2.0 * np.pi))


def _profile_classify(field: StrainField, center: np.ndarray, radius: float,
                      n_samples: int, high: float, low: float):
    """Match both alignment profiles on one circle against the templates.

    Returns ``(kind, [strain_dirs, stretch_dirs])``, or None when the circle
    leaves the field hull or sits in a mostly-isotropic zone.
    """
    angles = np.linspace(0.0, 2.0 * np.pi, n_samples, endpoint=False)
    rhat = np.column_stack([np.cos(angles), np.sin(angles)])
    pts = center[None, :] + radius * rhat
    sample = field.eig_at(pts)
    if not np.all(sample.ok) or np.mean(sample.isotropic) > 0.05:
        return None

    verdicts = []
    dirs = []
    for xi in (sample.xi1, sample.xi2):
        f_i = np.abs(np.einsum("ij,ij->i", np.nan_to_num(xi, nan=0.5), rhat))
        if np.any(f_i > 1.0 + 1e-9):
            raise InvalidInput("alignment profile exceeded 1 (non-unit eigenvector)")
        episodes = _hysteresis_episodes(f_i, high, low)
        if episodes is None:
            episodes = []
        n_high = sum(e[0] == "H" for e in episodes)
        n_low = sum(e[0] == "L" for e in episodes)
        if n_high == 3 and n_low == 3:
            verdicts.append(TRISECTOR)
        elif n_high == n_low and n_high in (1, 2):
            verdicts.append(WEDGE)
        else:
            verdicts.append(UNCLASSIFIED)
        max_angles = [_refine_peak(f_i, e[1], angles) for e in episodes if e[0] == "H"]
        dirs.append(np.sort(np.asarray(max_angles)))

    kind = verdicts[0] if verdicts[0] == verdicts[1] else UNCLASSIFIED
    return kind, dirs


def classify_singularity(field: StrainField, s: Singularity,
                         radius: float | None = None, n_samples: int = 360,
                         high: float = HIGH_BAND, low: float = LOW_BAND) -> Singularity:
    """Classify one singularity from the radial-alignment profiles f_i(theta).

    For each eigenvector family, f_i(theta) = |<xi_i, r_hat>| is sampled on a
    circle and its near-1/near-0 contact episodes are counted with hysteresis
    (a new episode requires visiting the opposite band first, so episodes
    alternate structurally and high and low counts are equal on the circle).
    Three episodes per band mark the three separatrices of a trisector; one
    or two mark a wedge (its ideal three radial-alignment contacts are not
    separated by near-0 dips, so under hysteresis they merge). Both families
    must agree; disagreement or any other count yields kind="unclassified"
    (kept, but excluded from barrier extraction).

    Composites (``extent > 0``) aggregate a tight cluster of near-degenerate
    points whose episode profile is noise-dominated, so their kind is taken
    from the winding index of the eigenvector line field instead (-1/2
    trisector, +1/2 wedge), scanned over an expanding ladder of circles until
    the index is decisive; separatrix directions come from the most prominent
    alignment peaks on that circle.
    """
    if n_samples < 90:
        raise InvalidInput("n_samples must be at least 90")
    base = radius if radius is not None else 2.0 * field.grid.max_spacing
    if s.extent == 0.0:
        got = _profile_classify(field, s.position, base, n_samples, high, low)
        if got is None:
            return replace(s, kind=UNCLASSIFIED)
        kind, dirs = got
        return replace(s, kind=kind, strain_dirs=dirs[0], stretch_dirs=dirs[1])

    angles = np.linspace(0.0, 2.0 * np.pi, n_samples, endpoint=False)
    rhat = np.column_stack([np.cos(angles), np.sin(angles)])
    for step in range(6):
        r = (base + s.extent) * 1.3 ** step
        pts = s.position[None, :] + r * rhat
        sample = field.eig_at(pts)
        if not np.all(sample.ok):
            break  # circle left the hull; larger ones would too
        if np.mean(sample.isotropic) > 0.05:
            continue
        index = tensor_index(field, s.position, r)
        if abs(index + 0.5) < 0.1:
            kind, n_dirs = TRISECTOR, 3
        elif abs(index - 0.5) < 0.1:
            kind, n_dirs = WEDGE, 1
        else:
            continue  # annulus still inside the noise zone
        # The eigenvector field stays scrambled well past the detected
        # members (undetected near-degenerate partners pad the cluster), so
        # read directions off a conservatively enlarged circle and widen the
        # downstream clearance (launch offset, capture radius) to match.
        clearance = max(r, base + 2.5 * s.extent)
        if clearance > r:
            outer = field.eig_at(s.position[None, :] + clearance * rhat)
            if np.all(outer.ok):
                sample = outer
            else:
                clearance = r
        dirs = []
        for xi in (sample.xi1, sample.xi2):
            f_i = np.abs(np.einsum("ij,ij->i", np.nan_to_num(xi, nan=0.5), rhat))
            dirs.append(_top_peaks(f_i, angles, n_dirs))
        return replace(s, kind=kind, strain_dirs=dirs[0], stretch_dirs=dirs[1],
                       extent=clearance - base)
    return replace(s, kind=UNCLASSIFIED)


def _top_peaks(f_i: np.ndarray, angles: np.ndarray, k: int) -> np.ndarray:
    """Angles of the k most prominent, mutually separated local maxima."""
    n = len(f_i)
    maxima = [i for i in range(n)
              if f_i[i] > f_i[(i - 1) % n] and f_i[i] >= f_i[(i + 1) % n]]
    maxima.sort(key=lambda i: -f_i[i])
    min_sep = 2.0 * np.pi / (3.0 * max(k, 1))
    chosen: list[int] = []
    for i in maxima:
        gaps = [abs((angles[i] - angles[j] + np.pi) % (2.0 * np.pi) - np.pi)
                for j in chosen]
        if all(gap >= min_sep for gap in gaps):
            chosen.append(i)
        if len(chosen) == k:
            break
    return np.sort(np.asarray([_refine_peak(f_i, i, angles) for i in chosen]))


def classify_singularities(field: StrainField, sings: Sequence[Singularity],
                           radius: float | None = None, n_samples: int = 360,
                           high: float = HIGH_BAND, low: float = LOW_BAND) -> list[Singularity]:
    return [classify_singularity(field, s, radius, n_samples, high, low) for s in sings]


def merge_clusters(sings: Sequence[Singularity], radius: float,
                   period_x: float | None = None) -> list[Singularity]:
    """Single-link merge of candidates closer than ``radius`` into composites.

    A composite sits at the member centroid (x-periodic aware) with
    ``extent`` = largest member offset, so downstream circles and launch
    offsets can clear the whole cluster. Elementary candidates pass through
    unchanged; ids are reassigned in (y, x) order.
    """
    if radius < 0:
        raise InvalidInput("merge radius must be nonnegative")
    n = len(sings)
    parent = list(range(n))

    def find(i: int) -> int:
        while parent[i] != i:
            parent[i] = parent[parent[i]]
            i = parent[i]
        return i

    for i in range(n):
        for j in range(i + 1, n):
            d = np.hypot(_wrapped_dx(sings[i].x, sings[j].x, period_x),
                         sings[i].y - sings[j].y)
            if d <= radius:
                parent[find(i)] = find(j)

    groups: dict[int, list[int]] = {}
    for i in range(n):
        groups.setdefault(find(i), []).append(i)

    out = []
    for members in groups.values():
        if len(members) == 1:
            out.append(sings[members[0]])
            continue
        ref = sings[members[0]].position
        rel = np.array([[_wrapped_dx(sings[i].x, ref[0], period_x),
                         sings[i].y - ref[1]] for i in members])
        offset = rel - rel.mean(axis=0)
        out.append(Singularity(
            id=min(sings[i].id for i in members),
            position=ref + rel.mean(axis=0),
            residual=min(sings[i].residual for i in members),
            extent=float(np.max(np.hypot(offset[:, 0], offset[:, 1]))),
        ))
    out.sort(key=lambda s: (s.y, s.x))
    return [replace(s, id=k) for k, s in enumerate(out)]


def tensor_index(field: StrainField, center, radius: float,
                 n_samples: int = 720) -> float:
    """Winding index of the eigenvector line field around a circle.

    Independent of the f_i(theta) templates: unwraps the xi1 direction
    (mod pi) around the loop and returns the net rotation in turns. Generic
    values: -1/2 for a trisector, +1/2 for a wedge, 0 for a regular point.
    """
    angles = np.linspace(0.0, 2.0 * np.pi, n_samples, endpoint=False)
    pts = np.asarray(center, dtype=np.float64)[None, :] + radius * np.column_stack(
        [np.cos(angles), np.sin(angles)])
    sample = field.eig_at(pts)
    if not np.all(sample.ok):
        raise InvalidInput("index circle leaves the field hull")
    raw = np.arctan2(sample.xi1[:, 1], sample.xi1[:, 0]) % np.pi
    total = 0.0
    for k in range(n_samples):
        nxt = raw[(k + 1) % n_samples]
        d = (nxt - raw[k] + np.pi / 2.0) % np.pi - np.pi / 2.0
        total += d
    return total / (2.0 * np.pi)
