"""End-to-end acceptance battery for the barrier-extraction pipeline.

Each criterion checks one quantitative promise of the package on a reference
flow — singularity census and chain structure on the standard non-twist map,
convergence toward the exact shearless curve, behavior on an FTLE
counterexample, mean-field coupling, the Bickley jet, and the pointwise
algebraic identities of the shear field. Criteria produce MetricReports;
:func:`run_acceptance` executes a chosen subset and returns them all.

Heavy pipeline runs are cached on an :class:`AcceptanceContext`, so criteria
sharing a run (census, structure, convergence, shear residual,
incompressibility all reuse the 100-iteration non-twist field) pay for it
once. Golden thresholds are frozen from reference runs at default settings;
each constant notes the reference value it was frozen against.
"""
from __future__ import annotations

import logging
from collections import Counter
from typing import Callable

import numpy as np

from .barriers import (BarrierChain, PipelineConfig, PipelineResult,
                       find_singularities, run_pipeline)
from .errors import InvalidInput
from .geometry import Polyline, hausdorff_distance
from .meanfield import (MeanFieldState, mean_field_evolve, passive_sntm,
                        place_active_particles)
from .singularities import TRISECTOR, WEDGE
from .solver import SolverConfig
from .strainfield import (boundary_term, d_tensor, lagrangian_shear_c,
                          normal_repulsion, rotate90, shear_coefficients,
                          shear_vectors)
from .systems import BickleyConfig, bickley_jet, ftle_counterexample, sntm
from .tensorlines import STRAIN, StopConfig, integrate_tensorline, max_shear_residual
from .validation import MetricReport, ftle_transverse_profile, indicator_barrier

log = logging.getLogger(__name__)

__all__ = ["AcceptanceContext", "CRITERIA", "run_acceptance"]

DAY = 86400.0

# Standard non-twist map reference setup.
SNTM_WINDOW = (-0.5, 0.5, -2.0, 2.0)
SNTM_RESOLUTION = (400, 800)
INTEGRABLE_A, INTEGRABLE_B = 0.08, 0.125
CHAOTIC_A, CHAOTIC_B = 0.27, 0.38

# Golden distance thresholds (curve-to-curve Hausdorff, map units).
# Reference runs at default settings measured 0.01564 (integrable, 300
# iterations) and 0.01189 (chaotic, 100 iterations) against the exact curve
# from 200 indicator-point iterations.
GOLDEN_INTEGRABLE_300 = 0.02
GOLDEN_CHAOTIC_100 = 0.02

SHEAR_RESIDUAL_TOL = 1e-2        # max |p| along extracted chain segments
SWEEP_MATCH_TOL = 1e-6           # extremal shear vs. dense direction sweep
BOUNDARY_TERM_TOL = 1e-10        # boundary term at the extremal coefficients
DETC_MEDIAN_TOL = 1e-2           # incompressibility of the reference field

# Counterexample flow: steady, with an attracting invariant line y = 0.
COUNTER_WINDOW = (-1.0, 1.0, -1.0, 1.0)
COUNTER_RESOLUTION = (121, 121)
COUNTER_HORIZON = 10.0

# Bickley jet, quasiperiodic forcing.
BICKLEY_SPAN = 40.0 * DAY
BICKLEY_Y_MAX = 3.0e6
BICKLEY_RESOLUTION = (192, 96)
BICKLEY_SOLVER = SolverConfig(rtol=1e-6, atol=1e-3)


class AcceptanceContext:
    """Caches the expensive reference runs shared between criteria."""

    def __init__(self, threads: int = 1):
        self.threads = max(1, int(threads))
        self._cache: dict = {}

    def _memo(self, key, fn):
        if key not in self._cache:
            log.info("acceptance: computing %s", key)
            self._cache[key] = fn()
        return self._cache[key]

    def integrable(self, n_iter: int) -> PipelineResult:
        return self._memo(("integrable", n_iter), lambda: run_pipeline(
            sntm(INTEGRABLE_A, INTEGRABLE_B), SNTM_WINDOW, SNTM_RESOLUTION,
            0.0, float(n_iter), PipelineConfig(threads=self.threads)))

    def chaotic(self) -> PipelineResult:
        return self._memo(("chaotic", 100), lambda: run_pipeline(
            sntm(CHAOTIC_A, CHAOTIC_B), SNTM_WINDOW, SNTM_RESOLUTION,
            0.0, 100.0, PipelineConfig(threads=self.threads)))

    def sntm_oracle(self, a: float, b: float) -> Polyline:
        return self._memo(("oracle", a, b), lambda: indicator_barrier(a, b, 200))

    def counterexample(self) -> PipelineResult:
        return self._memo("counterexample", lambda: run_pipeline(
            ftle_counterexample(), COUNTER_WINDOW, COUNTER_RESOLUTION,
            0.0, COUNTER_HORIZON, PipelineConfig(threads=self.threads)))

    def meanfield_passive(self) -> PipelineResult:
        def build():
            positions = place_active_particles(16, seed=0)
            state = MeanFieldState(positions, INTEGRABLE_B, 0.0,
                                   np.zeros(len(positions)), INTEGRABLE_A)
            _, drive = mean_field_evolve(state, 100)
            return run_pipeline(passive_sntm(INTEGRABLE_A, drive), SNTM_WINDOW,
                                SNTM_RESOLUTION, 0.0, 100.0,
                                PipelineConfig(threads=self.threads))
        return self._memo("meanfield-passive", build)

    def meanfield_active(self):
        def build():
            positions = place_active_particles(20000, seed=0)
            state = MeanFieldState(positions, INTEGRABLE_B, 0.0,
                                   np.full(len(positions), 2e-5), INTEGRABLE_A)
            _, drive = mean_field_evolve(state, 100)
            result = run_pipeline(passive_sntm(INTEGRABLE_A, drive), SNTM_WINDOW,
                                  SNTM_RESOLUTION, 0.0, 100.0,
                                  PipelineConfig(threads=self.threads))
            return result, drive
        return self._memo("meanfield-active", build)

    def bickley(self) -> PipelineResult:
        cfg = BickleyConfig()
        window = (0.0, cfg.period_x, -BICKLEY_Y_MAX, BICKLEY_Y_MAX)
        return self._memo("bickley", lambda: run_pipeline(
            bickley_jet(cfg), window, BICKLEY_RESOLUTION, 0.0, BICKLEY_SPAN,
            PipelineConfig(solver=BICKLEY_SOLVER, threads=self.threads)))


# ---------------------------------------------------------------------------
# Helpers


def _closed_chain(result: PipelineResult) -> BarrierChain | None:
    for ch in result.chains:
        if ch.closed:
            return ch
    return None


def _chain_distance(chain: BarrierChain, oracle: Polyline) -> float:
    curve = Polyline(chain.polyline(), closed=chain.closed, period_x=1.0)
    return hausdorff_distance(curve, oracle)


def _alternating(families: list[str]) -> bool:
    return all(a != b for a, b in zip(families, families[1:]))


def _sample_anisotropic_nodes(field, rng, count: int):
    """Cauchy-Green components at randomly chosen strongly anisotropic nodes."""
    lam1 = field.channels["lam1"]
    lam2 = field.channels["lam2"]
    good = (np.isfinite(lam1) & np.isfinite(lam2)
            & (lam2 - lam1 > 1e-6 * np.abs(lam2)))
    idx = np.flatnonzero(good.ravel())
    pick = rng.choice(idx, size=min(count, len(idx)), replace=False)
    flat = lambda name: field.channels[name].ravel()[pick]  # noqa: E731
    C = np.empty((len(pick), 2, 2))
    C[:, 0, 0] = flat("C11")
    C[:, 0, 1] = C[:, 1, 0] = flat("C12")
    C[:, 1, 1] = flat("C22")
    xi1 = np.column_stack([flat("xi1x"), flat("xi1y")])
    return C, flat("lam1"), flat("lam2"), xi1


# ---------------------------------------------------------------------------
# Criteria


def _criterion_census(ctx: AcceptanceContext) -> list[MetricReport]:
    result = ctx.integrable(100)
    kinds = Counter(s.kind for s in result.singularities)
    n_tri = kinds.get(TRISECTOR, 0)
    n_wedge = kinds.get(WEDGE, 0)
    total = len(result.singularities)
    ok = total == 6 and n_tri == 2 and n_wedge == 4
    return [MetricReport(
        "singularity-census", float(total), passed=ok,
        context={"trisectors": n_tri, "wedges": n_wedge,
                 "expected": "6 total = 2 trisectors + 4 wedges"})]


def _criterion_structure(ctx: AcceptanceContext) -> list[MetricReport]:
    result = ctx.integrable(100)
    chains = result.chains
    reports = [MetricReport("chain-count", float(len(chains)),
                            passed=len(chains) == 1, context={"expected": 1})]
    if chains:
        ch = chains[0]
        ok = ch.closed and len(ch.segments) == 4 and _alternating(ch.families)
        reports.append(MetricReport(
            "chain-structure", float(len(ch.segments)), passed=ok,
            context={"closed": ch.closed, "families": "/".join(ch.families),
                     "expected": "4 alternating segments, closed"}))
    return reports


def _criterion_convergence(ctx: AcceptanceContext) -> list[MetricReport]:
    oracle = ctx.sntm_oracle(INTEGRABLE_A, INTEGRABLE_B)
    distances = []
    for n_iter in (100, 200, 300):
        chain = _closed_chain(ctx.integrable(n_iter))
        if chain is None:
            return [MetricReport("barrier-distance-monotone", float("nan"),
                                 passed=False,
                                 context={"error": f"no closed chain at {n_iter} iterations"})]
        distances.append(_chain_distance(chain, oracle))
    drops = np.diff(distances)
    dist_txt = "/".join(f"{d:.5f}" for d in distances)
    return [
        MetricReport("barrier-distance-monotone", float(drops.max()),
                     passed=bool(np.all(drops < 0)),
                     context={"distances": dist_txt, "iterations": "100/200/300"}),
        MetricReport("barrier-distance-final", distances[-1],
                     tolerance=GOLDEN_INTEGRABLE_300, context={"iterations": 300}),
    ]


def _criterion_chaotic(ctx: AcceptanceContext) -> list[MetricReport]:
    result = ctx.chaotic()
    oracle = ctx.sntm_oracle(CHAOTIC_A, CHAOTIC_B)
    chain = _closed_chain(result)
    if chain is None:
        return [MetricReport("chaotic-barrier-distance", float("nan"), passed=False,
                             context={"error": "no closed chain extracted"})]
    n_open = sum(not ch.closed for ch in result.chains)
    return [MetricReport(
        "chaotic-barrier-distance", _chain_distance(chain, oracle),
        tolerance=GOLDEN_CHAOTIC_100,
        context={"segments": len(chain.segments), "open_chains": n_open})]


def _criterion_shear_residual(ctx: AcceptanceContext) -> list[MetricReport]:
    worst = 0.0
    worst_ctx: dict = {}
    n_segments = 0
    runs = [(f"integrable-{n}", ctx.integrable(n)) for n in (100, 200, 300)]
    runs.append(("chaotic-100", ctx.chaotic()))
    for tag, result in runs:
        for chain in result.chains:
            for seg in chain.segments:
                n_segments += 1
                value = max_shear_residual(result.field, seg.line)
                if value > worst:
                    worst = value
                    worst_ctx = {"run": tag, "chain": chain.id, "segment": seg.id}
    return [MetricReport("chain-shear-residual", worst,
                         tolerance=SHEAR_RESIDUAL_TOL,
                         context={"segments_checked": n_segments, **worst_ctx})]


def _criterion_counterexample(ctx: AcceptanceContext) -> list[MetricReport]:
    result = ctx.counterexample()
    field = result.field

    worst_offset = 0.0
    spacing = None
    for x_fixed in (-0.5, 0.0, 0.5):
        prof = ftle_transverse_profile(field, x_fixed, (-0.5, 0.5), 101)
        spacing = prof.spacing
        if len(prof.minima_ys) == 0:
            worst_offset = float("inf")
        else:
            worst_offset = max(worst_offset, float(np.min(np.abs(prof.minima_ys))))
    reports = [MetricReport("ftle-trench-position", worst_offset,
                            tolerance=spacing,
                            context={"columns": "x=-0.5/0/0.5",
                                     "expected": "trench at y=0"})]

    xs = np.linspace(-0.9, 0.9, 19)
    pts = np.column_stack([xs, np.zeros_like(xs)])
    comps, ok = field.cg_at(pts)
    C = np.empty((len(pts), 2, 2))
    C[:, 0, 0] = comps[:, 0]
    C[:, 0, 1] = C[:, 1, 0] = comps[:, 1]
    C[:, 1, 1] = comps[:, 2]
    rho = normal_repulsion(C, np.array([0.0, 1.0]))
    expected = float(np.exp(-COUNTER_HORIZON))
    rel_err = float(np.max(np.abs(rho[ok] - expected))) / expected
    reports.append(MetricReport("normal-repulsion-on-line", rel_err, tolerance=0.1,
                                context={"expected": "exp(-10), attracting"}))

    crossing = 0
    for ch in result.chains:
        y = ch.polyline()[:, 1]
        if np.min(y) <= 0.0 <= np.max(y):
            crossing += 1
    reports.append(MetricReport("chains-crossing-line", float(crossing),
                                tolerance=0.0,
                                context={"chains_total": len(result.chains)}))
    return reports


def _criterion_meanfield(ctx: AcceptanceContext) -> list[MetricReport]:
    auto = ctx.integrable(100)
    passive = ctx.meanfield_passive()

    identical = len(auto.chains) == len(passive.chains)
    if identical:
        for ch_a, ch_p in zip(auto.chains, passive.chains):
            if not np.array_equal(ch_a.polyline(), ch_p.polyline()):
                identical = False
                break
    pos_a = np.array([s.position for s in auto.singularities])
    pos_p = np.array([s.position for s in passive.singularities])
    identical = identical and np.array_equal(pos_a, pos_p)
    reports = [MetricReport(
        "meanfield-decoupled-identical", 0.0 if identical else 1.0,
        passed=identical,
        context={"expected": "bitwise equal chains and singularities at zero coupling"})]

    active, drive = ctx.meanfield_active()
    chain = _closed_chain(active)
    b_span = float(np.ptp(drive[:, 0]))
    ok = chain is not None and b_span > 0.0
    reports.append(MetricReport(
        "meanfield-active-barrier", b_span, passed=ok,
        context={"closed_chain": chain is not None,
                 "particles": 20000, "coupling": 2e-5,
                 "expected": "closed chain exists, drive amplitude non-constant"}))
    return reports


def _criterion_bickley(ctx: AcceptanceContext) -> list[MetricReport]:
    result = ctx.bickley()
    cfg = BickleyConfig()
    best = None
    for ch in result.chains:
        if not ch.closed:
            continue
        pl = ch.polyline()
        winding = round(float(pl[-1, 0] - pl[0, 0]) / cfg.period_x)
        if winding == 0:
            continue
        y_max = float(np.max(np.abs(pl[:, 1])))
        if best is None or y_max < best:
            best = y_max
    if best is None:
        return [MetricReport("bickley-jet-core-barrier", float("nan"), passed=False,
                             context={"error": "no x-periodic closed chain",
                                      "chains": len(result.chains)})]
    return [MetricReport("bickley-jet-core-barrier", best / cfg.L, tolerance=1.5,
                         context={"max_abs_y_m": f"{best:.3e}",
                                  "jet_half_width_m": f"{cfg.L:.3e}"})]


def _criterion_shear_directions(ctx: AcceptanceContext) -> list[MetricReport]:
    field = ctx.integrable(100).field
    rng = np.random.default_rng(7)
    C, lam1, lam2, xi1 = _sample_anisotropic_nodes(field, rng, 100)

    eta_plus, _ = shear_vectors(lam1, lam2, xi1)
    p_extremal = lagrangian_shear_c(C, eta_plus)

    thetas = np.linspace(0.0, np.pi, 3600, endpoint=False)
    dirs = np.column_stack([np.cos(thetas), np.sin(thetas)])
    worst = 0.0
    for i in range(len(C)):
        p = lagrangian_shear_c(C[i], dirs)
        j = int(np.argmax(p))
        # parabolic refinement around the best sampled direction (p is a
        # smooth pi-periodic function of the angle)
        pm, p0, pp = p[j - 1], p[j], p[(j + 1) % len(p)]
        denom = pm - 2.0 * p0 + pp
        sweep_max = p0
        if denom != 0.0:
            theta_star = thetas[j] + 0.5 * (pm - pp) / denom * (thetas[1] - thetas[0])
            refined = lagrangian_shear_c(
                C[i], np.array([np.cos(theta_star), np.sin(theta_star)]))
            sweep_max = max(sweep_max, float(refined))
        worst = max(worst, abs(float(p_extremal[i]) - sweep_max))

    alpha, beta = shear_coefficients(lam1, lam2)
    bt = boundary_term(lam1, lam2, alpha, beta)
    return [
        MetricReport("shear-extremal-vs-sweep", worst, tolerance=SWEEP_MATCH_TOL,
                     context={"points": len(C), "sweep_directions": 3600}),
        MetricReport("boundary-term-at-extremal", float(np.max(np.abs(bt))),
                     tolerance=BOUNDARY_TERM_TOL, context={"points": len(C)}),
    ]


def _criterion_incompressibility(ctx: AcceptanceContext) -> list[MetricReport]:
    det_c = ctx.integrable(100).field.channels["detC"]
    med = float(np.nanmedian(np.abs(det_c - 1.0)))
    return [MetricReport("detC-median-error", med, tolerance=DETC_MEDIAN_TOL)]


def _criterion_invariants(ctx: AcceptanceContext) -> list[MetricReport]:
    """Spot-check the core algebraic and geometric invariants on live data.

    The full invariant coverage lives in the unit-test suite; this criterion
    re-verifies a representative subset against the cached reference field so
    a standalone validation run still exercises them.
    """
    field = ctx.integrable(100).field
    rng = np.random.default_rng(11)
    C, lam1, lam2, xi1 = _sample_anisotropic_nodes(field, rng, 200)
    checks: dict[str, bool] = {}

    xi2 = rotate90(xi1)
    res1 = np.einsum("nij,nj->ni", C, xi1) - lam1[:, None] * xi1
    res2 = np.einsum("nij,nj->ni", C, xi2) - lam2[:, None] * xi2
    scale = np.maximum(lam2, 1.0)[:, None]
    checks["eigenpairs"] = bool(
        np.max(np.abs(res1) / scale) < 1e-8 and np.max(np.abs(res2) / scale) < 1e-8)
    checks["unit-eigenvectors"] = bool(
        np.max(np.abs(np.linalg.norm(xi1, axis=1) - 1.0)) < 1e-12)
    det = C[:, 0, 0] * C[:, 1, 1] - C[:, 0, 1] ** 2
    checks["eigenvalue-product"] = bool(
        np.max(np.abs(lam1 * lam2 - det) / np.maximum(np.abs(det), 1e-300)) < 1e-8)

    D = d_tensor(C)
    checks["shear-tensor-traceless"] = bool(
        np.max(np.abs(D[:, 0, 0] + D[:, 1, 1])) == 0.0)

    angles = rng.uniform(0.0, 2.0 * np.pi, len(C))
    normals = np.column_stack([np.cos(angles), np.sin(angles)])
    rho = normal_repulsion(C, normals)
    slack = 1e-9
    checks["repulsion-bounds"] = bool(np.all(
        (rho >= np.sqrt(lam1) * (1 - slack)) & (rho <= np.sqrt(lam2) * (1 + slack))))

    seed = np.array([0.1, 0.6])
    stop = StopConfig(max_arclength=0.2)
    fwd = integrate_tensorline(field, seed, STRAIN, np.array([1.0, 0.0]), stop)
    bwd = integrate_tensorline(field, seed, STRAIN, np.array([-1.0, 0.0]), stop)
    t_f = fwd.vertices[1] - fwd.vertices[0]
    t_b = bwd.vertices[1] - bwd.vertices[0]
    checks["tensorline-reversibility"] = bool(
        np.linalg.norm(t_f + t_b) < 1e-9 * np.linalg.norm(t_f))
    checks["reverse-roundtrip"] = bool(
        np.array_equal(fwd.reversed().reversed().vertices, fwd.vertices))

    polys = [Polyline(rng.standard_normal((12, 2)).cumsum(axis=0)) for _ in range(3)]
    d_ab = hausdorff_distance(polys[0], polys[1])
    d_ba = hausdorff_distance(polys[1], polys[0])
    d_bc = hausdorff_distance(polys[1], polys[2])
    d_ac = hausdorff_distance(polys[0], polys[2])
    checks["hausdorff-symmetry"] = d_ab == d_ba
    checks["hausdorff-identity"] = hausdorff_distance(polys[0], polys[0]) == 0.0
    checks["hausdorff-triangle"] = d_ac <= d_ab + d_bc + 1e-12

    sings_a = find_singularities(field)
    sings_b = find_singularities(field)
    checks["singularity-determinism"] = bool(
        len(sings_a) == len(sings_b) and all(
            np.array_equal(x.position, y.position) and x.kind == y.kind
            for x, y in zip(sings_a, sings_b)))

    failed = sorted(name for name, ok in checks.items() if not ok)
    return [MetricReport("invariant-pack", float(len(failed)), tolerance=0.0,
                         context={"checks": len(checks),
                                  **({"failed": ",".join(failed)} if failed else {})})]


CRITERIA: dict[str, Callable[[AcceptanceContext], list[MetricReport]]] = {
    "singularity-census": _criterion_census,
    "barrier-structure": _criterion_structure,
    "barrier-convergence": _criterion_convergence,
    "chaotic-barrier": _criterion_chaotic,
    "shear-residual": _criterion_shear_residual,
    "ftle-counterexample": _criterion_counterexample,
    "meanfield-coupling": _criterion_meanfield,
    "bickley-jet-core": _criterion_bickley,
    "shear-extremal-directions": _criterion_shear_directions,
    "incompressibility": _criterion_incompressibility,
    "invariant-pack": _criterion_invariants,
}


def run_acceptance(threads: int = 1, criteria=None,
                   ctx: AcceptanceContext | None = None) -> list[MetricReport]:
    """Run the acceptance battery (or a named subset) and collect reports.

    A criterion that raises is reported as failed with the error message in
    its context rather than aborting the remaining criteria.
    """
    ctx = ctx or AcceptanceContext(threads)
    if criteria is None:
        names = list(CRITERIA)
    else:
        names = [str(c) for c in criteria]
        unknown = [n for n in names if n not in CRITERIA]
        if unknown:
            raise InvalidInput(
                f"unknown acceptance criteria {unknown}; known: {sorted(CRITERIA)}")
    reports: list[MetricReport] = []
    for name in names:
        try:
            reports.extend(CRITERIA[name](ctx))
        except Exception as exc:  # noqa: BLE001 - keep the battery running
            log.exception("criterion %s raised", name)
            reports.append(MetricReport(name, float("nan"), passed=False,
                                        context={"error": f"{type(exc).__name__}: {exc}"}))
    return reports
