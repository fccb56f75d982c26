"""On-disk formats for fields, curves, singularity records, and manifests.

Conventions:

- Strain fields and gridded velocity samples use ``.npz`` archives with a
  JSON metadata entry; only the tensor components are stored, and all derived
  channels are recomputed on load through the same code path as the original
  computation, so a round trip is bit-exact.
- Polylines and scalar signals use two-column CSV with ``%.17g`` formatting
  (full float64 round-trip precision); polyline structure flags travel in a
  comment header line.
- Records (singularities, connections, chains, run manifests) use JSON.
"""
from __future__ import annotations

import json
from pathlib import Path

import numpy as np

from . import __version__
from .errors import FormatError, InvalidInput
from .geometry import FloatArray, Polyline
from .singularities import Singularity
from .strainfield import Grid, StrainField, assemble_field
from .systems import SampledSignal, SampledVelocity

FLOAT_FMT = "%.17g"

FIELD_FORMAT = "shearless-field-1"
VELOCITY_FORMAT = "shearless-velocity-1"


def _as_path(path) -> Path:
    return Path(path)


# ---------------------------------------------------------------------------
# Strain fields


def save_field(field: StrainField, path) -> Path:
    """Write a strain field to ``path`` (.npz archive)."""
    path = _as_path(path)
    g = field.grid
    meta = {
        "format": FIELD_FORMAT,
        "x0": g.x0, "y0": g.y0, "dx": g.dx, "dy": g.dy,
        "nx": g.nx, "ny": g.ny, "period_x": g.period_x,
        "t0": field.t0, "t1": field.t1,
        "aux_spacing": field.aux_spacing,
        "system_name": field.system_name,
        "warnings": list(field.warnings),
    }
    np.savez_compressed(path, meta=np.array(json.dumps(meta)),
                        c11=field.c11, c12=field.c12, c22=field.c22,
                        valid=field.valid)
    return path


def load_field(path) -> StrainField:
    """Read a strain field written by :func:`save_field`."""
    path = _as_path(path)
    try:
        with np.load(path, allow_pickle=False) as data:
            meta = json.loads(str(data["meta"]))
            if meta.get("format") != FIELD_FORMAT:
                raise FormatError(f"{path}: not a strain-field archive "
                                  f"(format tag {meta.get('format')!r})")
            grid = Grid(meta["x0"], meta["y0"], meta["dx"], meta["dy"],
                        meta["nx"], meta["ny"], period_x=meta["period_x"])
            field = assemble_field(grid, data["c11"], data["c12"], data["c22"],
                                   data["valid"], meta["t0"], meta["t1"],
                                   meta["aux_spacing"], meta["system_name"])
    except (KeyError, ValueError, json.JSONDecodeError) as exc:
        raise FormatError(f"{path}: malformed strain-field archive: {exc}") from exc
    field.warnings = list(meta.get("warnings", []))
    return field


def export_ftle(field: StrainField, path) -> Path:
    """Write grid axes and the FTLE channel to ``path`` (.npz archive)."""
    path = _as_path(path)
    np.savez_compressed(path, x=field.grid.xs(), y=field.grid.ys(),
                        ftle=field.ftle, valid=field.valid)
    return path


# ---------------------------------------------------------------------------
# Polylines and signals


def write_polyline_csv(path, pl: Polyline | FloatArray) -> Path:
    """Write a polyline as CSV: one flag comment, an x,y header, then rows."""
    path = _as_path(path)
    if not isinstance(pl, Polyline):
        pl = Polyline(pl)
    period = "none" if pl.period_x is None else FLOAT_FMT % pl.period_x
    header = f"closed={str(pl.closed).lower()} period_x={period}\nx,y"
    np.savetxt(path, pl.vertices, fmt=FLOAT_FMT, delimiter=",",
               header=header, comments="# ")
    return path


def read_polyline_csv(path) -> Polyline:
    path = _as_path(path)
    closed = False
    period_x = None
    with open(path, "r", encoding="utf-8") as fh:
        first = fh.readline()
    if first.startswith("#"):
        for token in first[1:].split():
            if "=" not in token:
                continue
            key, val = token.split("=", 1)
            if key == "closed":
                closed = val.strip().lower() == "true"
            elif key == "period_x" and val.strip().lower() != "none":
                period_x = float(val)
    try:
        pts = np.loadtxt(path, delimiter=",", comments="#", skiprows=0, ndmin=2)
    except ValueError as exc:
        raise FormatError(f"{path}: malformed polyline CSV: {exc}") from exc
    if pts.shape[1] != 2:
        raise FormatError(f"{path}: polyline CSV needs exactly 2 columns, "
                          f"got {pts.shape[1]}")
    return Polyline(pts, closed=closed, period_x=period_x)


def write_signal_csv(path, signal: SampledSignal) -> Path:
    path = _as_path(path)
    np.savetxt(path, np.column_stack([signal.times, signal.values]),
               fmt=FLOAT_FMT, delimiter=",", header=f"name={signal.name}\nt,value",
               comments="# ")
    return path


def read_signal_csv(path, name: str | None = None) -> SampledSignal:
    """Read a two-column (time, value) CSV as a sampled signal."""
    path = _as_path(path)
    label = name or path.stem
    with open(path, "r", encoding="utf-8") as fh:
        first = fh.readline()
    if name is None and first.startswith("#") and "name=" in first:
        label = first.split("name=", 1)[1].split()[0].strip()
    try:
        data = np.loadtxt(path, delimiter=",", comments="#", ndmin=2)
    except ValueError as exc:
        raise FormatError(f"{path}: malformed signal CSV: {exc}") from exc
    if data.shape[1] != 2:
        raise FormatError(f"{path}: signal CSV needs exactly 2 columns, "
                          f"got {data.shape[1]}")
    return SampledSignal(data[:, 0], data[:, 1], name=label)


# ---------------------------------------------------------------------------
# Gridded velocity samples


def save_velocity(data: SampledVelocity, path) -> Path:
    path = _as_path(path)
    meta = {
        "format": VELOCITY_FORMAT,
        "origin": list(data.origin),
        "spacing": list(data.spacing),
        "nx": data.nx, "ny": data.ny,
        "periodic_x": bool(data.periodic_x),
    }
    np.savez_compressed(path, meta=np.array(json.dumps(meta)),
                        times=data.times, u=data.u, v=data.v)
    return path


def load_velocity(path) -> SampledVelocity:
    path = _as_path(path)
    try:
        with np.load(path, allow_pickle=False) as archive:
            meta = json.loads(str(archive["meta"]))
            if meta.get("format") != VELOCITY_FORMAT:
                raise FormatError(f"{path}: not a velocity archive "
                                  f"(format tag {meta.get('format')!r})")
            return SampledVelocity(
                origin=tuple(meta["origin"]), spacing=tuple(meta["spacing"]),
                nx=int(meta["nx"]), ny=int(meta["ny"]),
                times=archive["times"], u=archive["u"], v=archive["v"],
                periodic_x=bool(meta["periodic_x"]))
    except (KeyError, ValueError, json.JSONDecodeError) as exc:
        raise FormatError(f"{path}: malformed velocity archive: {exc}") from exc


# ---------------------------------------------------------------------------
# Records


def _json_default(obj):
    if isinstance(obj, np.ndarray):
        return obj.tolist()
    if isinstance(obj, (np.floating, np.integer)):
        return obj.item()
    if isinstance(obj, np.bool_):
        return bool(obj)
    raise TypeError(f"cannot serialize {type(obj).__name__}")


def write_json(path, payload) -> Path:
    path = _as_path(path)
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(payload, fh, indent=2, default=_json_default)
        fh.write("\n")
    return path


def read_json(path):
    path = _as_path(path)
    try:
        with open(path, "r", encoding="utf-8") as fh:
            return json.load(fh)
    except json.JSONDecodeError as exc:
        raise FormatError(f"{path}: malformed JSON: {exc}") from exc


def singularity_record(s: Singularity) -> dict:
    return {
        "id": s.id,
        "x": s.x,
        "y": s.y,
        "kind": s.kind,
        "residual": s.residual,
        "extent": s.extent,
        "strain_dirs": None if s.strain_dirs is None else list(np.asarray(s.strain_dirs)),
        "stretch_dirs": None if s.stretch_dirs is None else list(np.asarray(s.stretch_dirs)),
    }


def write_singularities_json(path, sings) -> Path:
    return write_json(path, [singularity_record(s) for s in sings])


def read_singularities_json(path) -> list[Singularity]:
    records = read_json(path)
    out = []
    for rec in records:
        try:
            out.append(Singularity(
                id=int(rec["id"]),
                position=np.array([rec["x"], rec["y"]], dtype=np.float64),
                residual=float(rec["residual"]),
                kind=rec["kind"],
                strain_dirs=None if rec.get("strain_dirs") is None
                else np.asarray(rec["strain_dirs"], dtype=np.float64),
                stretch_dirs=None if rec.get("stretch_dirs") is None
                else np.asarray(rec["stretch_dirs"], dtype=np.float64),
                extent=float(rec.get("extent", 0.0)),
            ))
        except (KeyError, TypeError, ValueError) as exc:
            raise FormatError(f"{path}: malformed singularity record: {exc}") from exc
    return out


def connection_record(conn) -> dict:
    return {
        "id": conn.id,
        "family": conn.family,
        "from_id": conn.from_id,
        "to_id": conn.to_id,
        "convexity_ok": conn.convexity_ok,
        "convexity_fraction": conn.convexity_fraction,
        "weak_min_ok": conn.weak_min_ok,
        "weak_min_fraction": conn.weak_min_fraction,
        "shear_ok": conn.shear_ok,
        "shear_max": conn.shear_max,
        "certified": conn.certified,
        "arclength": conn.line.arclength,
    }


def write_chain_artifacts(outdir, chains, connections, period_x=None) -> dict:
    """Write chain manifest plus one CSV per chain polyline and per segment.

    Returns the manifest dictionary (also written to ``chains.json``).
    """
    outdir = Path(outdir)
    outdir.mkdir(parents=True, exist_ok=True)
    chain_entries = []
    for ch in chains:
        poly_name = f"chain-{ch.id}.csv"
        write_polyline_csv(outdir / poly_name,
                           Polyline(ch.polyline(), closed=ch.closed,
                                    period_x=period_x))
        seg_files = []
        for k, conn in enumerate(ch.segments):
            seg_name = f"chain-{ch.id}-segment-{k}.csv"
            write_polyline_csv(outdir / seg_name, Polyline(conn.line.vertices))
            seg_files.append(seg_name)
        chain_entries.append({
            "id": ch.id,
            "closed": ch.closed,
            "node_ids": list(ch.node_ids),
            "families": [c.family for c in ch.segments],
            "connection_ids": [c.id for c in ch.segments],
            "polyline": poly_name,
            "segments": seg_files,
        })
    manifest = {
        "chains": chain_entries,
        "connections": [connection_record(c) for c in connections],
    }
    write_json(outdir / "chains.json", manifest)
    return manifest


def write_run_manifest(outdir, command: str, config: dict, artifacts: list[str],
                       status: str = "ok") -> Path:
    """Record the resolved configuration and outputs of one CLI run."""
    outdir = Path(outdir)
    outdir.mkdir(parents=True, exist_ok=True)
    payload = {
        "tool": "shearless",
        "version": __version__,
        "command": command,
        "status": status,
        "config": config,
        "artifacts": sorted(artifacts),
    }
    return write_json(outdir / "manifest.json", payload)


def write_report_text(path, text: str) -> Path:
    path = _as_path(path)
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(text)
        if not text.endswith("\n"):
            fh.write("\n")
    return path
