"""Parabolic-barrier extraction pipeline and hyperbolic candidate scoring.

The parabolic pipeline runs in stages over a strain field: classify the
singularities, trace separatrix tensorlines out of every trisector, keep the
ones captured by a wedge's attracting sector, certify each such connection
against the transverse-neutrality conditions (convexity of the trench and
weak minimality), and assemble certified connections into maximal chains of
strictly alternating strainline/stretchline segments. A chain is the
generalized jet core: an unsteady-flow analogue of a shearless KAM curve.

Hyperbolic candidates are scored separately: tensorlines that stay away from
singularities, ranked by their arc-length mean stretching against neighbors
seeded along a transversal.
"""
from __future__ import annotations

import logging
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field as dataclass_field, replace

import numpy as np

from .errors import InvalidInput, ShearlessError, StageFailure, Stagnation
from .geometry import FloatArray
from .singularities import (TRISECTOR, WEDGE, Singularity, _wrapped_dx,
                            classify_singularities, detect_singularities,
                            merge_clusters)
from .solver import SolverConfig
from .strainfield import StrainField, compute_strain_field, neutrality_at
from .tensorlines import (STRAIN, STRETCH, EndTag, StopConfig, Tensorline,
                          integrate_tensorline, max_shear_residual)

log = logging.getLogger(__name__)


def _map_maybe_parallel(fn, items, threads: int):
    if threads <= 1 or len(items) <= 1:
        return [fn(item) for item in items]
    with ThreadPoolExecutor(max_workers=threads) as pool:
        return list(pool.map(fn, items))


@dataclass
class Connection:
    """A separatrix tensorline running from a trisector into a wedge."""

    id: int
    line: Tensorline
    family: str
    from_id: int
    to_id: int
    convexity_ok: bool | None = None
    weak_min_ok: bool | None = None
    convexity_fraction: float = np.nan
    weak_min_fraction: float = np.nan
    shear_ok: bool | None = None
    shear_max: float = np.nan

    @property
    def certified(self) -> bool:
        return (bool(self.convexity_ok) and bool(self.weak_min_ok)
                and self.shear_ok is not False)


@dataclass
class BarrierChain:
    """An alternating chain of certified connections joined at singularities."""

    id: int
    segments: list[Connection]
    node_ids: list[int]
    node_positions: FloatArray  # (len(segments)+1, 2), junction singularities
    closed: bool
    period_x: float | None = None

    @property
    def families(self) -> list[str]:
        return [c.family for c in self.segments]

    def polyline(self) -> FloatArray:
        """Traversal-order vertices, x-aligned across periodic seams.

        Junction singularity positions are inserted between segments to
        bridge the capture/launch gaps around each singularity.
        """
        pieces = [np.asarray(self.node_positions[0], dtype=np.float64)[None, :]]
        for k, conn in enumerate(self.segments):
            v = conn.line.vertices
            if self.node_ids[k] == conn.from_id:
                piece = v
            else:
                piece = v[::-1]
            pieces.append(piece)
            pieces.append(np.asarray(self.node_positions[k + 1], dtype=np.float64)[None, :])
        out = [pieces[0]]
        for piece in pieces[1:]:
            prev_x = out[-1][-1, 0]
            piece = piece.copy()
            if self.period_x is not None:
                shift = self.period_x * np.round((prev_x - piece[0, 0]) / self.period_x)
                piece[:, 0] += shift
            out.append(piece)
        return np.vstack(out)


@dataclass
class PipelineConfig:
    """All knobs of the extraction pipeline, with grid-relative defaults."""

    solver: SolverConfig | None = None
    aux_spacing: float | None = None
    margin: float = 0.0
    det_tol: float = 1.0
    classify_radius: float | None = None       # default 2 x grid max spacing
    classify_samples: int = 360
    cluster_radius: float | None = None        # default 2 x classify radius; 0 disables
    stop: StopConfig = dataclass_field(default_factory=StopConfig)
    launch_offset: float | None = None         # default = classification radius
    cone_half_angle_deg: float = 60.0
    quorum: float = 0.9
    certify_samples: int = 48
    certify_march: int = 60
    certify_spacing: float | None = None       # default = grid max spacing
    junction_min_angle_deg: float = 90.0
    strict_alternation: bool = True
    p_tol: float = 1e-2                         # max pointwise shear on a certified segment
    threads: int = 1


@dataclass
class PipelineResult:
    field: StrainField
    singularities: list[Singularity]
    separatrices: list[Tensorline]
    connections: list[Connection]
    chains: list[BarrierChain]
    branch_failures: list[str] = dataclass_field(default_factory=list)


def trace_separatrices(field: StrainField, trisector: Singularity,
                       stop: StopConfig | None = None,
                       launch_offset: float | None = None) -> list[Tensorline]:
    """Launch one tensorline per separatrix direction of a trisector.

    Both families are traced. Branch failures (stagnation, immediate hull
    exit) are logged and skipped without aborting the remaining branches.
    """
    if trisector.kind != TRISECTOR:
        raise InvalidInput(f"singularity {trisector.id} is not a trisector")
    if trisector.strain_dirs is None or trisector.stretch_dirs is None:
        raise InvalidInput("trisector has no separatrix directions (classify first)")
    if launch_offset is None:
        launch_offset = 2.0 * field.grid.max_spacing
    launch_offset = launch_offset + trisector.extent  # clear the whole cluster
    out = []
    for family, dirs in ((STRAIN, trisector.strain_dirs), (STRETCH, trisector.stretch_dirs)):
        for theta in np.atleast_1d(dirs):
            direction = np.array([np.cos(theta), np.sin(theta)])
            seed = trisector.position + launch_offset * direction
            try:
                out.append(integrate_tensorline(field, seed, family, direction,
                                                stop, source_id=trisector.id))
            except ShearlessError as exc:
                log.warning("separatrix (%s, theta=%.3f) from singularity %d failed: %s",
                            family, theta, trisector.id, exc)
    return out


def connect_to_wedge(line: Tensorline, singularities: list[Singularity],
                     capture_radius: float, cone_half_angle_deg: float = 60.0,
                     period_x: float | None = None) -> Connection | None:
    """Promote a separatrix to a Connection if it lands in a wedge's attracting sector.

    Requires the terminal vertex within ``capture_radius`` of a wedge and the
    terminal tangent within the given half-angle of the line to the wedge.
    Trisector-to-trisector near-connections are rejected (structurally
    unstable), as is anything not ending in a singularity capture.
    """
    if line.start_tag.kind != "singularity":
        raise InvalidInput("connection candidate must start at a trisector")
    by_id = {s.id: s for s in singularities}
    source = by_id.get(line.start_tag.singularity_id)
    if source is None or source.kind != TRISECTOR:
        raise InvalidInput("connection candidate must start at a trisector")
    if line.end_tag.kind != "singularity":
        return None
    target = by_id.get(line.end_tag.singularity_id)
    if target is None or target.kind != WEDGE:
        return None
    v = line.vertices
    if len(v) < 2:
        return None
    end = v[-1]
    to_wedge = np.array([_wrapped_dx(target.position[0], end[0], period_x),
                         target.position[1] - end[1]])
    dist = float(np.hypot(*to_wedge))
    if dist > capture_radius + target.extent:
        return None
    tangent = v[-1] - v[-2]
    t_norm = float(np.hypot(*tangent))
    if dist > 1e-12 * capture_radius and t_norm > 0:
        cos_angle = float(tangent @ to_wedge) / (t_norm * dist)
        if cos_angle < math.cos(math.radians(cone_half_angle_deg)):
            return None
    return Connection(id=-1, line=line, family=line.family,
                      from_id=source.id, to_id=target.id)


def certify_segment(field: StrainField, conn: Connection, quorum: float = 0.9,
                    n_samples: int = 48, max_march: int = 60,
                    spacing: float | None = None,
                    p_tol: float | None = None) -> Connection:
    """Check the transverse-neutrality conditions along a connection.

    At sampled vertices, probes march along the local normal in grid-spacing
    steps. Convexity requires a positive second difference of the segment
    family's neutrality at the vertex; weak minimality requires the nearest
    directional stationary minimum (the trench) to be reached through probes
    that all satisfy the convexity condition. Samples whose probes leave the
    hull before a verdict are indeterminate and excluded; each flag needs
    ``quorum`` of the determinate samples.

    When ``p_tol`` is given, the connection must also keep the pointwise
    tangential shear below it at every vertex. Shear vanishes identically
    along exact eigenvector lines, so a large residual means the traced curve
    has drifted off the eigenvector field (typical of curves crossing
    strongly mixing regions) and cannot be trusted as a barrier segment.
    """
    if not 0 < quorum <= 1:
        raise InvalidInput("quorum must be in (0, 1]")
    h = spacing if spacing is not None else field.grid.max_spacing
    verts = conn.line.vertices
    idx = np.unique(np.linspace(0, len(verts) - 1, n_samples).astype(int))
    pts = verts[idx]
    m = len(pts)

    sample = field.eig_at(pts)
    normal = sample.xi2 if conn.family == STRAIN else sample.xi1
    usable = sample.ok & ~sample.isotropic & np.all(np.isfinite(normal), axis=1)
    normal = np.where(np.isfinite(normal), normal, 0.0)

    k_range = np.arange(-max_march, max_march + 1)
    prof = np.full((len(k_range), m), np.nan)
    for row, k in enumerate(k_range):
        probe = pts + (k * h) * normal
        vals, ok = neutrality_at(field, probe, conn.family)
        prof[row] = np.where(ok & usable, vals, np.nan)

    center = max_march
    sec = prof[:-2] - 2.0 * prof[1:-1] + prof[2:]  # second difference at k_range[1:-1]

    conv_vals = sec[center - 1]  # second difference at k = 0
    conv_det = np.isfinite(conv_vals)
    conv_pass = conv_vals > 0.0

    weak_det = np.zeros(m, dtype=bool)
    weak_pass = np.zeros(m, dtype=bool)
    for i in range(m):
        p = prof[:, i]
        if not np.isfinite(p[center]):
            continue
        # contiguous finite window around the center
        lo = center
        while lo - 1 >= 0 and np.isfinite(p[lo - 1]):
            lo -= 1
        hi = center
        while hi + 1 < len(p) and np.isfinite(p[hi + 1]):
            hi += 1
        interior = np.arange(lo + 1, hi)
        if len(interior) == 0:
            continue
        mins = interior[(p[interior] < p[interior - 1]) & (p[interior] < p[interior + 1])]
        if len(mins) == 0:
            continue  # no trench before the hull/march limit: indeterminate
        nearest = mins[np.argmin(np.abs(mins - center))]
        weak_det[i] = True
        step = 1 if nearest >= center else -1
        inter = np.arange(center + step, nearest, step)
        weak_pass[i] = bool(np.all(p[inter - 1] - 2.0 * p[inter] + p[inter + 1] > 0.0)) \
            if len(inter) else True

    def verdict(det, ok_mask):
        n_det = int(np.sum(det))
        if n_det == 0:
            return False, 0.0
        frac = float(np.sum(ok_mask & det) / n_det)
        return frac >= quorum, frac

    conv_ok, conv_frac = verdict(conv_det, conv_pass)
    weak_ok, weak_frac = verdict(weak_det, weak_pass)
    shear_ok = None
    shear_max = np.nan
    if p_tol is not None:
        shear_max = max_shear_residual(field, conn.line)
        shear_ok = bool(shear_max <= p_tol)
    return replace(conn, convexity_ok=conv_ok, weak_min_ok=weak_ok,
                   convexity_fraction=conv_frac, weak_min_fraction=weak_frac,
                   shear_ok=shear_ok, shear_max=shear_max)


def _arrival(conn: Connection, node_id: int) -> FloatArray:
    """Unit tangent pointing into ``node_id`` along the connection's curve."""
    v = conn.line.vertices
    if node_id == conn.to_id:
        d = v[-1] - v[-2]
    elif node_id == conn.from_id:
        d = v[0] - v[1]
    else:
        raise InvalidInput("node is not an endpoint of the connection")
    return d / np.hypot(*d)


def assemble_chains(connections: list[Connection], singularities: list[Singularity],
                    junction_min_angle_deg: float = 90.0,
                    strict_alternation: bool = True,
                    period_x: float | None = None,
                    require_certified: bool = True) -> list[BarrierChain]:
    """Join certified connections into maximal alternating chains.

    Consecutive segments must share a singularity, alternate family (unless
    relaxed), and pass through the junction smoothly: their arrival tangents
    at the shared singularity must be separated by at least
    ``junction_min_angle_deg``. Chains are maximal trails of the resulting
    graph; a trail returning to its start singularity with a compatible
    closing junction is marked closed.
    """
    by_id = {s.id: s for s in singularities}
    edges = [c for c in connections if c.certified or not require_certified]
    if not edges:
        return []
    cos_thresh = math.cos(math.radians(junction_min_angle_deg)) + 1e-12
    adj: dict[int, list[int]] = {}
    for k, c in enumerate(edges):
        adj.setdefault(c.from_id, []).append(k)
        adj.setdefault(c.to_id, []).append(k)

    def compatible(e1: Connection, e2: Connection, node: int) -> bool:
        if e1 is e2:
            return False
        if strict_alternation and e1.family == e2.family:
            return False
        return float(_arrival(e1, node) @ _arrival(e2, node)) <= cos_thresh

    open_sigs: set[tuple] = set()
    cycle_sigs: set[tuple] = set()
    found: list[tuple[list[int], list[int], bool]] = []  # (edge idxs, node ids, closed)

    def other(edge_idx: int, node: int) -> int:
        c = edges[edge_idx]
        return c.to_id if node == c.from_id else c.from_id

    def emit(path: list[int], nodes: list[int], closed: bool):
        ids = tuple(edges[k].id for k in path)
        if closed:
            ring = list(ids)
            cands = []
            for seq in (ring, ring[::-1]):
                cands += [tuple(seq[i:] + seq[:i]) for i in range(len(seq))]
            sig = min(cands)
            if sig in cycle_sigs:
                return
            cycle_sigs.add(sig)
        else:
            sig = min(ids, ids[::-1])
            if sig in open_sigs:
                return
            open_sigs.add(sig)
        found.append((list(path), list(nodes), closed))

    def dfs(path: list[int], nodes: list[int], used: set[int]):
        head = nodes[-1]
        last = edges[path[-1]]
        options = [k for k in adj.get(head, []) if k not in used
                   and compatible(last, edges[k], head)]
        # closing the loop back onto the first edge?
        closed_here = (len(path) >= 2 and head == nodes[0]
                       and compatible(last, edges[path[0]], head))
        if closed_here:
            emit(path, nodes, True)
        if options:
            for k in options:
                dfs(path + [k], nodes + [other(k, head)], used | {k})
        elif not closed_here:
            # maximal at the head; maximal at the tail too?
            tail = nodes[0]
            first = edges[path[0]]
            pre = [k for k in adj.get(tail, []) if k not in used
                   and compatible(edges[k], first, tail)]
            if not pre:
                emit(path, nodes, False)

    for k, c in enumerate(edges):
        for start in (c.from_id, c.to_id):
            dfs([k], [start, other(k, start)], {k})

    found.sort(key=lambda t: (not t[2], -len(t[0]), tuple(t[1])))
    out = []
    for cid, (path, nodes, closed) in enumerate(found):
        segs = [edges[k] for k in path]
        positions = np.array([by_id[n].position for n in nodes])
        out.append(BarrierChain(cid, segs, nodes, positions, closed, period_x))
    return out


def find_singularities(field: StrainField, cfg: PipelineConfig | None = None) -> list[Singularity]:
    """Detect, cluster, and classify singularities with pipeline defaults."""
    cfg = cfg or PipelineConfig()
    cands = detect_singularities(field, cfg.det_tol)
    base_radius = (cfg.classify_radius if cfg.classify_radius is not None
                   else 2.0 * field.grid.max_spacing)
    merge_radius = (cfg.cluster_radius if cfg.cluster_radius is not None
                    else 2.0 * base_radius)
    if merge_radius > 0:
        cands = merge_clusters(cands, merge_radius, field.grid.period_x)
    return classify_singularities(field, cands, radius=cfg.classify_radius,
                                  n_samples=cfg.classify_samples)


def run_pipeline(system, window, resolution, t0, t1,
                 cfg: PipelineConfig | None = None,
                 field: StrainField | None = None) -> PipelineResult:
    """Execute the full extraction pipeline with stage attribution."""
    cfg = cfg or PipelineConfig()

    def stage(name, fn):
        try:
            return fn()
        except ShearlessError as exc:
            raise StageFailure(name, exc) from exc

    if field is None:
        field = stage("field", lambda: compute_strain_field(
            system, window, resolution, t0, t1,
            solver=cfg.solver, aux_spacing=cfg.aux_spacing, margin=cfg.margin))

    sings = stage("singularities", lambda: find_singularities(field, cfg))
    trisectors = [s for s in sings if s.kind == TRISECTOR]
    stop = replace(cfg.stop, singularities=sings)

    def _separatrices():
        launch = cfg.launch_offset
        if launch is None and cfg.classify_radius is not None:
            launch = cfg.classify_radius
        per_tri = _map_maybe_parallel(
            lambda tri: trace_separatrices(field, tri, stop, launch),
            trisectors, cfg.threads)
        return [line for lines in per_tri for line in lines]

    separatrices = stage("tensorlines", _separatrices)

    def _connections():
        resolved = stop.resolved(field.grid)
        conns = []
        for line in separatrices:
            c = connect_to_wedge(line, sings, resolved.capture_radius,
                                 cfg.cone_half_angle_deg, field.grid.period_x)
            if c is not None:
                conns.append(replace(c, id=len(conns)))
        return _map_maybe_parallel(
            lambda c: certify_segment(field, c, cfg.quorum, cfg.certify_samples,
                                      cfg.certify_march, cfg.certify_spacing,
                                      cfg.p_tol),
            conns, cfg.threads)

    connections = stage("connections", _connections)
    chains = stage("chains", lambda: assemble_chains(
        connections, sings, cfg.junction_min_angle_deg, cfg.strict_alternation,
        field.grid.period_x))
    return PipelineResult(field, sings, separatrices, connections, chains)


def extract_parabolic_barriers(system, window, resolution, t0, t1,
                               cfg: PipelineConfig | None = None) -> list[BarrierChain]:
    """Full pipeline; returns only the assembled barrier chains."""
    return run_pipeline(system, window, resolution, t0, t1, cfg).chains


@dataclass
class HyperbolicCandidate:
    seed: FloatArray
    line: Tensorline
    mean_stretch: float
    is_extremum: bool
    family: str


def score_hyperbolic_candidates(field: StrainField, seeds, family: str,
                                neighborhood: float | None = None,
                                stop: StopConfig | None = None) -> list[HyperbolicCandidate]:
    """Score tensorlines as hyperbolic LCS candidates.

    Seeds whose tensorline passes within the capture radius of a singularity
    are discarded. Strain-family candidates carry the arc-length mean of
    sqrt(lam2) and are flagged when it is a strict local minimum among
    neighbors seeded within ``neighborhood`` (most repelling); stretch-family
    candidates carry mean sqrt(lam1), flagged at a strict local maximum
    (most attracting).
    """
    if family not in (STRAIN, STRETCH):
        raise InvalidInput(f"unknown family '{family}'")
    seeds = np.asarray(seeds, dtype=np.float64).reshape(-1, 2)
    if neighborhood is None:
        neighborhood = 5.0 * field.grid.max_spacing
    stop = stop or StopConfig()
    resolved = stop.resolved(field.grid)
    sing_pos = np.array([s.position for s in resolved.singularities]).reshape(-1, 2)
    period = field.grid.period_x

    kept: list[HyperbolicCandidate] = []
    for seed in seeds:
        sample = field.eig_at(seed[None, :])
        if not sample.ok[0] or sample.isotropic[0]:
            continue
        base = sample.xi1[0] if family == STRAIN else sample.xi2[0]
        try:
            fwd = integrate_tensorline(field, seed, family, base, stop)
            bwd = integrate_tensorline(field, seed, family, -base, stop)
        except Stagnation:
            continue
        vertices = np.vstack([bwd.vertices[::-1], fwd.vertices[1:]])
        line = Tensorline(family, vertices, bwd.end_tag, fwd.end_tag)
        if len(sing_pos):
            d = np.hypot(_wrapped_dx(vertices[:, 0, None], sing_pos[None, :, 0], period),
                         vertices[:, 1, None] - sing_pos[None, :, 1])
            if np.min(d) <= resolved.capture_radius:
                continue  # H1: keep clear of singularities
        mids = 0.5 * (vertices[:-1] + vertices[1:])
        lengths = np.linalg.norm(np.diff(vertices, axis=0), axis=1)
        s = field.eig_at(mids)
        lam = s.lam2 if family == STRAIN else s.lam1
        good = s.ok & np.isfinite(lam) & (lengths > 0)
        if not np.any(good):
            continue
        mean = float(np.sum(np.sqrt(lam[good]) * lengths[good]) / np.sum(lengths[good]))
        kept.append(HyperbolicCandidate(seed, line, mean, False, family))

    for i, cand in enumerate(kept):
        neigh = []
        for j, other in enumerate(kept):
            if i == j:
                continue
            d = np.hypot(_wrapped_dx(cand.seed[0], other.seed[0], period),
                         cand.seed[1] - other.seed[1])
            if d <= neighborhood:
                neigh.append(other.mean_stretch)
        if not neigh:
            continue
        if family == STRAIN:
            cand.is_extremum = all(cand.mean_stretch < v for v in neigh)
        else:
            cand.is_extremum = all(cand.mean_stretch > v for v in neigh)
    return kept
