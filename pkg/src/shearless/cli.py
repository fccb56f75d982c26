"""Command-line front end: wires systems, configs, pipeline stages, exports.

Commands (all take ``--config``, ``--out``, ``--threads``, ``--log-level``):

- ``field``          strain field + FTLE export
- ``singularities``  detect / cluster / classify singularities
- ``tensorlines``    trace tensorlines from configured seeds
- ``barriers``       full parabolic-barrier extraction pipeline
- ``hyperbolic``     strongest repelling/attracting tensorline scoring
- ``oracle-sntm``    barrier-vs-indicator-curve convergence report
- ``tracers``        blob advection / stretch-ratio experiments
- ``validate``       full acceptance suite over the bundled experiments

``--config`` accepts a file path, the name of a bundled config (e.g.
``sntm-integrable``), or a previously emitted run manifest (the resolved
config is reused, which reproduces the run). Config errors exit with status
2 and name the offending field; pipeline failures exit 1 with stage
attribution. No command writes outside its output directory.
"""
from __future__ import annotations

import argparse
import importlib.resources
import json
import logging
import os
import sys
from pathlib import Path

import numpy as np

from . import __version__, io
from .barriers import (PipelineConfig, find_singularities, run_pipeline,
                       score_hyperbolic_candidates)
from .errors import ConfigError, ShearlessError, StageFailure
from .geometry import Polyline, hausdorff_distance
from .meanfield import MeanFieldState, mean_field_evolve, passive_sntm, place_active_particles
from .singularities import TRISECTOR, WEDGE
from .solver import SolverConfig
from .strainfield import compute_strain_field
from .systems import (BickleyConfig, Rect, bickley_jet, canonical_shear,
                      ftle_counterexample, lorenz_signal,
                      sampled_velocity_system, sntm)
from .tensorlines import StopConfig, integrate_tensorline
from .validation import (MetricReport, blob_stretch_ratio, format_reports,
                         indicator_barrier)

log = logging.getLogger("shearless.cli")

THREADS_ENV = "SHEARLESS_THREADS"

COMMANDS = ("field", "singularities", "tensorlines", "barriers", "hyperbolic",
            "oracle-sntm", "tracers", "validate")

_TYPE_NAMES = {
    "number": (int, float),
    "integer": int,
    "string": str,
    "boolean": bool,
    "array": list,
    "object": dict,
}


# ---------------------------------------------------------------------------
# Config access


def _check_type(field: str, value, kind: str):
    expected = _TYPE_NAMES[kind]
    if kind == "number" and isinstance(value, bool):
        raise ConfigError(field, f"expected a number, got {value!r}")
    if kind == "integer" and (isinstance(value, bool) or not isinstance(value, int)):
        raise ConfigError(field, f"expected an integer, got {value!r}")
    if not isinstance(value, expected):
        raise ConfigError(field, f"expected {kind}, got {type(value).__name__}")
    return value


def cfg_req(cfg: dict, field: str, kind: str):
    """Fetch a required config entry; ``field`` may be dotted (a.b.c)."""
    node = cfg
    parts = field.split(".")
    for i, part in enumerate(parts):
        if not isinstance(node, dict) or part not in node:
            raise ConfigError(".".join(parts[: i + 1]), "missing required field")
        node = node[part]
    return _check_type(field, node, kind)


def cfg_opt(cfg: dict, field: str, kind: str, default=None):
    node = cfg
    for part in field.split("."):
        if not isinstance(node, dict) or part not in node:
            return default
        node = node[part]
    if node is None:
        return default
    return _check_type(field, node, kind)


def load_config(spec: str) -> tuple[dict, Path | None]:
    """Load a config from a path, bundled name, or emitted run manifest.

    Returns (config dict, base directory for relative paths).
    """
    path = Path(spec)
    if path.is_file():
        text = path.read_text(encoding="utf-8")
        base = path.parent
    else:
        res = importlib.resources.files("shearless").joinpath("configs", f"{spec}.json")
        if not res.is_file():
            raise ConfigError("config", f"no such file or bundled config: {spec!r}")
        text = res.read_text(encoding="utf-8")
        base = None
    try:
        data = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ConfigError("config", f"invalid JSON at line {exc.lineno}, "
                          f"column {exc.colno}: {exc.msg}") from exc
    if not isinstance(data, dict):
        raise ConfigError("config", "top level must be an object")
    if data.get("tool") == "shearless" and isinstance(data.get("config"), dict):
        data = data["config"]  # round-trip from an emitted run manifest
    return data, base


# ---------------------------------------------------------------------------
# Builders


def build_solver(cfg: dict) -> SolverConfig | None:
    sub = cfg_opt(cfg, "solver", "object")
    if sub is None:
        return None
    method = cfg_opt(sub, "method", "string", "dopri5")
    if method not in ("dopri5", "rk4"):
        raise ConfigError("solver.method", f"unknown method {method!r}")
    return SolverConfig(
        method=method,
        rtol=cfg_opt(sub, "rtol", "number", 1e-8),
        atol=cfg_opt(sub, "atol", "number", 1e-8),
        rk4_step=cfg_opt(sub, "rk4_step", "number"),
        max_steps=cfg_opt(sub, "max_steps", "integer", 1_000_000),
    )


def build_window(cfg: dict) -> Rect:
    win = cfg_req(cfg, "window", "array")
    if len(win) != 4 or not all(isinstance(v, (int, float)) and not isinstance(v, bool)
                                for v in win):
        raise ConfigError("window", "must be [x_min, x_max, y_min, y_max]")
    if win[0] >= win[1] or win[2] >= win[3]:
        raise ConfigError("window", "must satisfy x_min < x_max and y_min < y_max")
    return Rect(*[float(v) for v in win])


def build_resolution(cfg: dict) -> tuple[int, int]:
    res = cfg_req(cfg, "resolution", "array")
    if len(res) != 2 or not all(isinstance(v, int) and not isinstance(v, bool)
                                and v >= 2 for v in res):
        raise ConfigError("resolution", "must be [nx, ny] with integers >= 2")
    return int(res[0]), int(res[1])


def build_system(cfg: dict, base: Path | None):
    """Construct the dynamical system; returns (system, t0, t1, extras).

    ``extras`` may carry auxiliary artifacts (e.g. the mean-field drive).
    """
    spec = cfg_req(cfg, "system", "object")
    name = cfg_req(spec, "name", "string")
    field = "system.name"
    extras: dict = {}

    if name == "sntm":
        a = cfg_req(spec, "a", "number")
        b = cfg_req(spec, "b", "number")
        system = sntm(float(a), float(b))
        t0, t1 = _map_span(cfg)
    elif name == "sntm-meanfield":
        a = float(cfg_req(spec, "a", "number"))
        b0 = float(cfg_req(spec, "b0", "number"))
        theta0 = float(cfg_opt(spec, "theta0", "number", 0.0))
        n_particles = cfg_req(spec, "n_particles", "integer")
        gamma = float(cfg_req(spec, "gamma", "number"))
        seed = cfg_opt(cfg, "seed", "integer", 0)
        t0, t1 = _map_span(cfg)
        positions = place_active_particles(n_particles, seed)
        state = MeanFieldState(positions, b0, theta0,
                               np.full(n_particles, gamma), a)
        _, drive = mean_field_evolve(state, int(t1))
        system = passive_sntm(a, drive)
        extras["drive"] = drive
    elif name == "bickley":
        system = bickley_jet(_build_bickley(spec, cfg))
        t0 = float(cfg_req(cfg, "t0", "number"))
        t1 = float(cfg_req(cfg, "t1", "number"))
    elif name == "ftle-counterexample":
        system = ftle_counterexample()
        t0 = float(cfg_req(cfg, "t0", "number"))
        t1 = float(cfg_req(cfg, "t1", "number"))
    elif name == "canonical-shear":
        system = canonical_shear()
        t0 = float(cfg_req(cfg, "t0", "number"))
        t1 = float(cfg_req(cfg, "t1", "number"))
    elif name == "sampled":
        rel = cfg_req(spec, "velocity", "string")
        vpath = Path(rel)
        if not vpath.is_absolute() and base is not None:
            vpath = base / vpath
        if not vpath.is_file():
            raise ConfigError("system.velocity", f"file not found: {vpath}")
        system = sampled_velocity_system(io.load_velocity(vpath),
                                         name=cfg_opt(spec, "label", "string", "sampled"))
        t0 = float(cfg_req(cfg, "t0", "number"))
        t1 = float(cfg_req(cfg, "t1", "number"))
    else:
        raise ConfigError(field, f"unknown system {name!r}")
    return system, t0, t1, extras


def _map_span(cfg: dict) -> tuple[float, float]:
    """Time span for an iterated map: explicit t0/t1 or an iteration count."""
    if "iterations" in cfg:
        n = cfg_req(cfg, "iterations", "integer")
        if n < 1:
            raise ConfigError("iterations", "must be at least 1")
        return 0.0, float(n)
    t0 = cfg_req(cfg, "t0", "number")
    t1 = cfg_req(cfg, "t1", "number")
    return float(t0), float(t1)


def _build_bickley(spec: dict, cfg: dict) -> BickleyConfig:
    kwargs: dict = {}
    eps = cfg_opt(spec, "eps", "array")
    if eps is not None:
        if len(eps) != 3:
            raise ConfigError("system.eps", "needs exactly three amplitudes")
        kwargs["eps"] = tuple(float(v) for v in eps)
    c = cfg_opt(spec, "c", "array")
    if c is not None:
        if len(c) != 3:
            raise ConfigError("system.c", "needs exactly three phase speeds")
        kwargs["c"] = tuple(float(v) for v in c)
    for key in ("U", "L", "r0"):
        val = cfg_opt(spec, key, "number")
        if val is not None:
            kwargs[key] = float(val)
    forcing = cfg_opt(spec, "forcing", "object")
    if forcing is not None:
        kind = cfg_req(forcing, "kind", "string")
        if kind != "lorenz":
            raise ConfigError("system.forcing.kind", f"unknown forcing {kind!r}")
        seeds = cfg_req(forcing, "seeds", "array")
        if len(seeds) != 2:
            raise ConfigError("system.forcing.seeds", "needs two integer seeds")
        t0 = float(cfg_req(cfg, "t0", "number"))
        t1 = float(cfg_req(cfg, "t1", "number"))
        pad = 0.05 * (t1 - t0) + 1.0
        n_samples = cfg_opt(forcing, "n_samples", "integer", 4096)
        kwargs["eps1_signal"] = lorenz_signal(
            int(seeds[0]), t0 - pad, t1 + pad,
            float(cfg_req(forcing, "eps1_low", "number")),
            float(cfg_req(forcing, "eps1_high", "number")),
            n_samples, name="eps1")
        kwargs["eps2_signal"] = lorenz_signal(
            int(seeds[1]), t0 - pad, t1 + pad,
            float(cfg_req(forcing, "eps2_low", "number")),
            float(cfg_req(forcing, "eps2_high", "number")),
            n_samples, name="eps2")
    return BickleyConfig(**kwargs)


def build_pipeline_config(cfg: dict, threads: int) -> PipelineConfig:
    sing = cfg_opt(cfg, "singularities", "object", {})
    lines = cfg_opt(cfg, "tensorlines", "object", {})
    barr = cfg_opt(cfg, "barriers", "object", {})
    stop = StopConfig(
        step=cfg_opt(lines, "step", "number"),
        capture_radius=cfg_opt(lines, "capture_radius", "number"),
        max_arclength=cfg_opt(lines, "max_arclength", "number"),
    )
    return PipelineConfig(
        solver=build_solver(cfg),
        aux_spacing=cfg_opt(cfg, "field.aux_spacing", "number"),
        margin=cfg_opt(cfg, "field.margin", "number", 0.0),
        det_tol=cfg_opt(sing, "det_tol", "number", 1.0),
        classify_radius=cfg_opt(sing, "classify_radius", "number"),
        classify_samples=cfg_opt(sing, "classify_samples", "integer", 360),
        cluster_radius=cfg_opt(sing, "cluster_radius", "number"),
        stop=stop,
        launch_offset=cfg_opt(barr, "launch_offset", "number"),
        cone_half_angle_deg=cfg_opt(barr, "cone_half_angle_deg", "number", 60.0),
        quorum=cfg_opt(barr, "quorum", "number", 0.9),
        certify_samples=cfg_opt(barr, "certify_samples", "integer", 48),
        certify_march=cfg_opt(barr, "certify_march", "integer", 60),
        certify_spacing=cfg_opt(barr, "certify_spacing", "number"),
        junction_min_angle_deg=cfg_opt(barr, "junction_min_angle_deg", "number", 90.0),
        strict_alternation=cfg_opt(barr, "strict_alternation", "boolean", True),
        p_tol=cfg_opt(lines, "p_tol", "number", 1e-2),
        threads=threads,
    )


def resolved_config(cfg: dict, window: Rect, resolution, t0: float, t1: float,
                    threads: int) -> dict:
    out = dict(cfg)
    out["window"] = [window.x_min, window.x_max, window.y_min, window.y_max]
    out["resolution"] = [int(resolution[0]), int(resolution[1])]
    out["t0"] = t0
    out["t1"] = t1
    out.pop("iterations", None)
    out["threads"] = threads
    return out


# ---------------------------------------------------------------------------
# Command implementations (each returns an exit status)


def _field_inputs(cfg: dict, base: Path | None, threads: int):
    system, t0, t1, extras = build_system(cfg, base)
    window = build_window(cfg)
    resolution = build_resolution(cfg)
    pipe = build_pipeline_config(cfg, threads)
    return system, window, resolution, t0, t1, pipe, extras


def _write_extras(outdir: Path, extras: dict, artifacts: list[str]):
    if "drive" in extras:
        drive = extras["drive"]
        np.savetxt(outdir / "drive.csv", drive, fmt=io.FLOAT_FMT, delimiter=",",
                   header="b,theta", comments="# ")
        artifacts.append("drive.csv")


def cmd_field(cfg, base, outdir, threads) -> int:
    system, window, resolution, t0, t1, pipe, extras = _field_inputs(cfg, base, threads)
    field = compute_strain_field(system, window, resolution, t0, t1,
                                 solver=pipe.solver, aux_spacing=pipe.aux_spacing,
                                 margin=pipe.margin)
    artifacts = ["field.npz", "ftle.npz"]
    io.save_field(field, outdir / "field.npz")
    io.export_ftle(field, outdir / "ftle.npz")
    _write_extras(outdir, extras, artifacts)
    io.write_run_manifest(outdir, "field",
                          resolved_config(cfg, window, resolution, t0, t1, threads),
                          artifacts)
    log.info("field: %dx%d nodes, %.1f%% invalid", resolution[0], resolution[1],
             100.0 * field.invalid_fraction)
    return 0


def cmd_singularities(cfg, base, outdir, threads) -> int:
    system, window, resolution, t0, t1, pipe, extras = _field_inputs(cfg, base, threads)
    field = compute_strain_field(system, window, resolution, t0, t1,
                                 solver=pipe.solver, aux_spacing=pipe.aux_spacing,
                                 margin=pipe.margin)
    sings = find_singularities(field, pipe)
    artifacts = ["singularities.json"]
    io.write_singularities_json(outdir / "singularities.json", sings)
    _write_extras(outdir, extras, artifacts)
    io.write_run_manifest(outdir, "singularities",
                          resolved_config(cfg, window, resolution, t0, t1, threads),
                          artifacts)
    kinds = [s.kind for s in sings]
    log.info("singularities: %d total (%d trisectors, %d wedges)",
             len(sings), kinds.count(TRISECTOR), kinds.count(WEDGE))
    return 0


def cmd_tensorlines(cfg, base, outdir, threads) -> int:
    system, window, resolution, t0, t1, pipe, extras = _field_inputs(cfg, base, threads)
    lines_cfg = cfg_opt(cfg, "tensorlines", "object", {})
    seeds = cfg_req(lines_cfg, "seeds", "array") if "seeds" in lines_cfg else None
    if seeds is None:
        raise ConfigError("tensorlines.seeds", "missing required field")
    family = cfg_opt(lines_cfg, "family", "string", "strain")
    if family not in ("strain", "stretch"):
        raise ConfigError("tensorlines.family", f"unknown family {family!r}")
    field = compute_strain_field(system, window, resolution, t0, t1,
                                 solver=pipe.solver, aux_spacing=pipe.aux_spacing,
                                 margin=pipe.margin)
    sings = find_singularities(field, pipe)
    stop = StopConfig(step=pipe.stop.step, capture_radius=pipe.stop.capture_radius,
                      max_arclength=pipe.stop.max_arclength, singularities=sings)
    artifacts = []
    for k, seed in enumerate(seeds):
        if not (isinstance(seed, list) and len(seed) == 2):
            raise ConfigError(f"tensorlines.seeds[{k}]", "must be [x, y]")
        p = np.asarray(seed, dtype=np.float64)
        sample = field.eig_at(p[None, :])
        if not sample.ok[0] or sample.isotropic[0]:
            log.warning("seed %d at (%.4g, %.4g) is outside the field or isotropic",
                        k, p[0], p[1])
            continue
        base_dir = sample.xi1[0] if family == "strain" else sample.xi2[0]
        fwd = integrate_tensorline(field, p, family, base_dir, stop)
        bwd = integrate_tensorline(field, p, family, -base_dir, stop)
        merged = np.vstack([bwd.vertices[::-1], fwd.vertices[1:]])
        name = f"tensorline-{k}.csv"
        io.write_polyline_csv(outdir / name, Polyline(merged))
        artifacts.append(name)
    _write_extras(outdir, extras, artifacts)
    io.write_run_manifest(outdir, "tensorlines",
                          resolved_config(cfg, window, resolution, t0, t1, threads),
                          artifacts)
    log.info("tensorlines: wrote %d curves", len(artifacts))
    return 0


def cmd_barriers(cfg, base, outdir, threads) -> int:
    system, window, resolution, t0, t1, pipe, extras = _field_inputs(cfg, base, threads)
    result = run_pipeline(system, window, resolution, t0, t1, pipe)
    artifacts = ["singularities.json"]
    io.write_singularities_json(outdir / "singularities.json", result.singularities)
    for k, line in enumerate(result.separatrices):
        name = f"separatrix-{k}.csv"
        io.write_polyline_csv(outdir / name, Polyline(line.vertices))
        artifacts.append(name)
    manifest = io.write_chain_artifacts(outdir, result.chains, result.connections,
                                        period_x=result.field.grid.period_x)
    artifacts.append("chains.json")
    for entry in manifest["chains"]:
        artifacts.append(entry["polyline"])
        artifacts.extend(entry["segments"])
    lines = [f"chains: {len(result.chains)}"]
    for ch in result.chains:
        fams = "/".join(c.family for c in ch.segments)
        lines.append(f"  chain {ch.id}: {'closed' if ch.closed else 'open'}, "
                     f"{len(ch.segments)} segments ({fams}), nodes {ch.node_ids}")
    certified = sum(1 for c in result.connections if c.certified)
    lines.append(f"connections: {len(result.connections)} traced, {certified} certified")
    for msg in result.branch_failures:
        lines.append(f"note: {msg}")
    io.write_report_text(outdir / "report.txt", "\n".join(lines))
    artifacts.append("report.txt")
    _write_extras(outdir, extras, artifacts)
    io.write_run_manifest(outdir, "barriers",
                          resolved_config(cfg, window, resolution, t0, t1, threads),
                          artifacts)
    log.info("%s", lines[0])
    return 0


def cmd_hyperbolic(cfg, base, outdir, threads) -> int:
    system, window, resolution, t0, t1, pipe, extras = _field_inputs(cfg, base, threads)
    hyp = cfg_opt(cfg, "hyperbolic", "object", {})
    family = cfg_opt(hyp, "family", "string", "strain")
    if family not in ("strain", "stretch"):
        raise ConfigError("hyperbolic.family", f"unknown family {family!r}")
    field = compute_strain_field(system, window, resolution, t0, t1,
                                 solver=pipe.solver, aux_spacing=pipe.aux_spacing,
                                 margin=pipe.margin)
    sings = find_singularities(field, pipe)
    if "seeds" in hyp:
        seeds = np.asarray(cfg_req(hyp, "seeds", "array"), dtype=np.float64)
        if seeds.ndim != 2 or seeds.shape[1] != 2:
            raise ConfigError("hyperbolic.seeds", "must be a list of [x, y] pairs")
    else:
        grid_spec = cfg_opt(hyp, "seed_grid", "array", [12, 12])
        if len(grid_spec) != 2:
            raise ConfigError("hyperbolic.seed_grid", "must be [nx, ny]")
        gx = np.linspace(window.x_min, window.x_max, int(grid_spec[0]) + 2)[1:-1]
        gy = np.linspace(window.y_min, window.y_max, int(grid_spec[1]) + 2)[1:-1]
        seeds = np.array([(x, y) for y in gy for x in gx])
    stop = StopConfig(step=pipe.stop.step, capture_radius=pipe.stop.capture_radius,
                      max_arclength=pipe.stop.max_arclength, singularities=sings)
    cands = score_hyperbolic_candidates(field, seeds, family,
                                        neighborhood=cfg_opt(hyp, "neighborhood", "number"),
                                        stop=stop)
    records = []
    artifacts = ["candidates.json"]
    for k, cand in enumerate(cands):
        rec = {
            "seed": list(cand.seed),
            "family": cand.family,
            "mean_stretch": cand.mean_stretch,
            "is_extremum": bool(cand.is_extremum),
            "arclength": cand.line.arclength,
        }
        if cand.is_extremum:
            name = f"candidate-{k}.csv"
            io.write_polyline_csv(outdir / name, Polyline(cand.line.vertices))
            rec["polyline"] = name
            artifacts.append(name)
        records.append(rec)
    io.write_json(outdir / "candidates.json", records)
    _write_extras(outdir, extras, artifacts)
    io.write_run_manifest(outdir, "hyperbolic",
                          resolved_config(cfg, window, resolution, t0, t1, threads),
                          artifacts)
    log.info("hyperbolic: %d candidates, %d extrema", len(cands),
             sum(1 for c in cands if c.is_extremum))
    return 0


def cmd_oracle_sntm(cfg, base, outdir, threads) -> int:
    spec = cfg_req(cfg, "system", "object")
    if cfg_req(spec, "name", "string") != "sntm":
        raise ConfigError("system.name", "oracle-sntm requires the sntm system")
    a = float(cfg_req(spec, "a", "number"))
    b = float(cfg_req(spec, "b", "number"))
    oracle_cfg = cfg_opt(cfg, "oracle", "object", {})
    iterations = cfg_opt(oracle_cfg, "iterations", "array", [100, 200, 300])
    if not iterations or not all(isinstance(n, int) and not isinstance(n, bool)
                                 and n >= 1 for n in iterations):
        raise ConfigError("oracle.iterations", "must be a non-empty list of positive integers")
    ref_iters = cfg_opt(oracle_cfg, "reference_iterations", "integer", 200)
    window = build_window(cfg)
    resolution = build_resolution(cfg)
    pipe = build_pipeline_config(cfg, threads)
    reference = indicator_barrier(a, b, ref_iters)

    reports: list[MetricReport] = []
    artifacts = []
    distances = []
    for n in iterations:
        result = run_pipeline(sntm(a, b), window, resolution, 0.0, float(n), pipe)
        closed = [c for c in result.chains if c.closed]
        target = closed[0] if closed else (result.chains[0] if result.chains else None)
        context = {"iterations": n, "chains": len(result.chains)}
        if target is None:
            reports.append(MetricReport(f"barrier-distance-{n}", float("inf"),
                                        None, context=context))
            distances.append(float("inf"))
            continue
        pl = Polyline(target.polyline(), closed=target.closed,
                      period_x=result.field.grid.period_x)
        d = hausdorff_distance(pl, reference)
        distances.append(d)
        name = f"barrier-{n}.csv"
        io.write_polyline_csv(outdir / name, pl)
        artifacts.append(name)
        reports.append(MetricReport(f"barrier-distance-{n}", d, None, context=context))
    deltas = np.diff(distances)
    monotone_gap = float(np.max(deltas)) if len(deltas) else 0.0
    reports.append(MetricReport("distance-monotone-decrease", monotone_gap, 0.0,
                                context={"iterations": list(iterations)}))
    text = format_reports(reports)
    io.write_report_text(outdir / "oracle-report.txt", text)
    artifacts.append("oracle-report.txt")
    io.write_json(outdir / "reports.json",
                  [r.__dict__ for r in reports])
    artifacts.append("reports.json")
    io.write_run_manifest(outdir, "oracle-sntm",
                          resolved_config(cfg, window, resolution, 0.0,
                                          float(max(iterations)), threads),
                          artifacts)
    print(text)
    return 0 if all(r.passed is not False for r in reports) else 1


def cmd_tracers(cfg, base, outdir, threads) -> int:
    system, t0, t1, extras = build_system(cfg, base)
    tr = cfg_opt(cfg, "tracers", "object", {})
    blobs = cfg_req(tr, "blobs", "array") if "blobs" in tr else None
    if blobs is None:
        raise ConfigError("tracers.blobs", "missing required field")
    n_pts = cfg_opt(tr, "n_pts", "integer", 64)
    solver = build_solver(cfg)
    records = []
    reports = []
    for k, blob in enumerate(blobs):
        if not isinstance(blob, dict):
            raise ConfigError(f"tracers.blobs[{k}]", "must be an object")
        center = cfg_req(blob, "center", "array")
        if len(center) != 2:
            raise ConfigError(f"tracers.blobs[{k}].center", "must be [x, y]")
        radius = float(cfg_req(blob, "radius", "number"))
        label = cfg_opt(blob, "label", "string", f"blob-{k}")
        ratio = blob_stretch_ratio(system, np.asarray(center, dtype=np.float64),
                                   radius, n_pts, t0, t1, solver=solver)
        records.append({"label": label, "center": list(center), "radius": radius,
                        "stretch_ratio": ratio})
        reports.append(MetricReport(f"stretch-ratio-{label}", ratio, None,
                                    context={"center": list(center), "radius": radius}))
    io.write_json(outdir / "tracers.json", records)
    text = format_reports(reports)
    io.write_report_text(outdir / "report.txt", text)
    artifacts = ["tracers.json", "report.txt"]
    _write_extras(outdir, extras, artifacts)
    resolved = dict(cfg)
    resolved["t0"], resolved["t1"] = t0, t1
    resolved.pop("iterations", None)
    resolved["threads"] = threads
    io.write_run_manifest(outdir, "tracers", resolved, artifacts)
    print(text)
    return 0


def cmd_validate(cfg, base, outdir, threads) -> int:
    from .acceptance import run_acceptance
    only = cfg_opt(cfg, "criteria", "array")
    reports = run_acceptance(threads=threads, criteria=only)
    text = format_reports(reports)
    io.write_report_text(outdir / "acceptance-report.txt", text)
    resolved = dict(cfg)
    resolved["threads"] = threads
    io.write_run_manifest(outdir, "validate", resolved, ["acceptance-report.txt"])
    print(text)
    return 0 if all(r.passed is not False for r in reports) else 1


HANDLERS = {
    "field": cmd_field,
    "singularities": cmd_singularities,
    "tensorlines": cmd_tensorlines,
    "barriers": cmd_barriers,
    "hyperbolic": cmd_hyperbolic,
    "oracle-sntm": cmd_oracle_sntm,
    "tracers": cmd_tracers,
    "validate": cmd_validate,
}


# ---------------------------------------------------------------------------
# Entry point


def _resolve_threads(flag: int | None, cfg: dict) -> int:
    if flag is not None:
        n = flag
    elif "threads" in cfg:
        n = cfg_req(cfg, "threads", "integer")
    elif os.environ.get(THREADS_ENV):
        try:
            n = int(os.environ[THREADS_ENV])
        except ValueError:
            raise ConfigError("threads", f"environment variable {THREADS_ENV} "
                              f"is not an integer: {os.environ[THREADS_ENV]!r}")
    else:
        n = os.cpu_count() or 1
    if n < 1:
        raise ConfigError("threads", "must be at least 1")
    return n


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="shearless",
        description="Shearless transport barrier extraction for finite-time "
                    "2D flows and maps.")
    parser.add_argument("--version", action="version",
                        version=f"%(prog)s {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)
    for name in COMMANDS:
        p = sub.add_parser(name, help=f"run the {name} command")
        p.add_argument("--config", required=True,
                       help="config file path or bundled config name")
        p.add_argument("--out", default=None,
                       help="output directory (default: from config, else ./out-<command>)")
        p.add_argument("--threads", type=int, default=None,
                       help=f"worker cap (default: config, then ${THREADS_ENV}, "
                            "then available parallelism)")
        p.add_argument("--log-level", default="info",
                       choices=["debug", "info", "warning", "error"])
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=args.log_level.upper(),
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        cfg, base = load_config(args.config)
        threads = _resolve_threads(args.threads, cfg)
        out = args.out or cfg_opt(cfg, "output", "string") or f"out-{args.command}"
        outdir = Path(out)
        outdir.mkdir(parents=True, exist_ok=True)
        return HANDLERS[args.command](cfg, base, outdir, threads)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 2
    except StageFailure as exc:
        print(f"pipeline failure in stage '{exc.stage}': {exc.original}", file=sys.stderr)
        return 1
    except ShearlessError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
