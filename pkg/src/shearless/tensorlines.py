"""Orientation-continued integration of strainlines and stretchlines.

Eigenvector fields carry a sign ambiguity, so curve integration keeps a
running reference direction: every eigenvector evaluation is flipped to have
a nonnegative dot product with the previous stage's direction. Integration
uses fixed-step RK4 on the unit direction field (adaptive controllers
misbehave on sign-corrected fields, which are only piecewise smooth).
"""
from __future__ import annotations

from dataclasses import dataclass, field as dataclass_field

import numpy as np

from .errors import DomainEscape, InvalidInput, IsotropicPoint, Stagnation
from .geometry import FloatArray, polyline_length
from .singularities import Singularity, _wrapped_dx
from .strainfield import ISOTROPY_TOL, StrainField

STRAIN = "strain"
STRETCH = "stretch"
FAMILIES = (STRAIN, STRETCH)


@dataclass(frozen=True)
class EndTag:
    """Why a tensorline starts/ends where it does.

    kinds: 'seed', 'singularity' (with id), 'boundary', 'length_cap',
    'isotropic'.
    """

    kind: str
    singularity_id: int | None = None

    def __str__(self):
        if self.kind == "singularity":
            return f"singularity:{self.singularity_id}"
        return self.kind


@dataclass
class StopConfig:
    """Stopping rules for tensorline integration.

    Length quantities default relative to the field grid: step = step_factor
    x min spacing, capture_radius = capture_factor x max spacing,
    max_arclength = arclength_factor x hull perimeter.
    """

    step: float | None = None
    capture_radius: float | None = None
    max_arclength: float | None = None
    singularities: list[Singularity] = dataclass_field(default_factory=list)
    isotropy_tol: float = ISOTROPY_TOL
    stagnation_steps: int = 10
    stagnation_factor: float = 1e-3
    step_factor: float = 0.125
    capture_factor: float = 1.5
    arclength_factor: float = 2.0

    def resolved(self, fieldgrid) -> "StopConfig":
        step = self.step if self.step is not None else self.step_factor * fieldgrid.min_spacing
        cap = (self.capture_radius if self.capture_radius is not None
               else self.capture_factor * fieldgrid.max_spacing)
        if self.max_arclength is not None:
            cap_len = self.max_arclength
        else:
            hull = fieldgrid.hull
            cap_len = self.arclength_factor * 2.0 * (hull.width + hull.height)
        if step <= 0 or cap <= 0 or cap_len <= 0:
            raise InvalidInput("step, capture_radius, max_arclength must be positive")
        out = StopConfig(step, cap, cap_len, self.singularities, self.isotropy_tol,
                         self.stagnation_steps, self.stagnation_factor)
        return out


@dataclass
class Tensorline:
    """An integrated curve tangent to one eigenvector family."""

    family: str
    vertices: FloatArray
    start_tag: EndTag
    end_tag: EndTag

    @property
    def arclength(self) -> float:
        return polyline_length(self.vertices)

    def reversed(self) -> "Tensorline":
        return Tensorline(self.family, self.vertices[::-1], self.end_tag, self.start_tag)


class _HullExit(Exception):
    pass


class _IsotropicStop(Exception):
    pass


def _direction(field: StrainField, p: FloatArray, family: str, ref: FloatArray,
               isotropy_tol: float) -> FloatArray:
    sample = field.eig_at(p[None, :], isotropy_tol)
    if not sample.ok[0]:
        raise _HullExit
    if sample.isotropic[0]:
        raise _IsotropicStop
    xi = sample.xi1[0] if family == STRAIN else sample.xi2[0]
    if float(xi @ ref) < 0.0:
        xi = -xi
    return xi


def eigvec_at(field: StrainField, x, family: str, reference_dir) -> FloatArray:
    """Interpolated-C eigenvector, sign-aligned with ``reference_dir``."""
    if family not in FAMILIES:
        raise InvalidInput(f"unknown family '{family}'")
    ref = np.asarray(reference_dir, dtype=np.float64)
    if not np.any(ref != 0):
        raise InvalidInput("reference_dir must be nonzero")
    try:
        return _direction(field, np.asarray(x, dtype=np.float64), family, ref,
                          ISOTROPY_TOL)
    except _HullExit:
        raise DomainEscape("eigenvector queried outside the field hull") from None
    except _IsotropicStop:
        raise IsotropicPoint("eigenvector direction undefined (isotropic point)") from None


def integrate_tensorline(field: StrainField, x0, family: str, initial_dir,
                         stop: StopConfig | None = None,
                         source_id: int | None = None) -> Tensorline:
    """Trace a tensorline from ``x0`` along ``initial_dir``.

    Stops on singularity capture (tagging the singularity id), hull exit,
    arclength cap, or an isotropic region. Capture by the launching
    singularity (``source_id``) is suppressed until the curve has left its
    capture radius once. Raises Stagnation when the curve stops progressing
    before producing a usable polyline.
    """
    if family not in FAMILIES:
        raise InvalidInput(f"unknown family '{family}'")
    cfg = (stop or StopConfig()).resolved(field.grid)
    h = cfg.step
    p = np.asarray(x0, dtype=np.float64).copy()
    ref = np.asarray(initial_dir, dtype=np.float64)
    norm = float(np.hypot(ref[0], ref[1]))
    if norm == 0:
        raise InvalidInput("initial_dir must be nonzero")
    ref = ref / norm

    period = field.grid.period_x
    sing_pos = np.array([s.position for s in cfg.singularities]).reshape(-1, 2)
    sing_ids = [s.id for s in cfg.singularities]
    # composite singularities capture at their cluster extent plus the base radius
    sing_cap = np.array([cfg.capture_radius + s.extent for s in cfg.singularities])

    def captured(pt: FloatArray, allow_source: bool) -> int | None:
        if len(sing_pos) == 0:
            return None
        d = np.hypot(_wrapped_dx(pt[0], sing_pos[:, 0], period), pt[1] - sing_pos[:, 1])
        for idx in np.argsort(d - sing_cap):
            if d[idx] > sing_cap[idx]:
                break
            sid = sing_ids[idx]
            if sid == source_id and not allow_source:
                continue
            return sid
        return None

    start_tag = EndTag("seed") if source_id is None else EndTag("singularity", source_id)
    source_pos = None
    source_cap = cfg.capture_radius
    if source_id is not None and source_id in sing_ids:
        source_pos = sing_pos[sing_ids.index(source_id)]
        source_cap = float(sing_cap[sing_ids.index(source_id)])
    vertices = [p.copy()]
    arclength = 0.0
    stagnant = 0
    left_source = source_pos is None
    end_tag = None
    max_steps = int(np.ceil(cfg.max_arclength / h)) * 4 + 16

    for _ in range(max_steps):
        try:
            v1 = _direction(field, p, family, ref, cfg.isotropy_tol)
            v2 = _direction(field, p + 0.5 * h * v1, family, v1, cfg.isotropy_tol)
            v3 = _direction(field, p + 0.5 * h * v2, family, v2, cfg.isotropy_tol)
            v4 = _direction(field, p + h * v3, family, v3, cfg.isotropy_tol)
        except _HullExit:
            end_tag = EndTag("boundary")
            break
        except _IsotropicStop:
            end_tag = EndTag("isotropic")
            break
        step_vec = (h / 6.0) * (v1 + 2.0 * v2 + 2.0 * v3 + v4)
        p_new = p + step_vec
        sample = field.eig_at(p_new[None, :], cfg.isotropy_tol)
        if not sample.ok[0]:
            end_tag = EndTag("boundary")
            break
        disp = float(np.hypot(step_vec[0], step_vec[1]))
        if disp < cfg.stagnation_factor * h:
            stagnant += 1
            if stagnant >= cfg.stagnation_steps:
                raise Stagnation(
                    f"tensorline stalled after {len(vertices)} vertices "
                    f"(displacement < {cfg.stagnation_factor:g} x step)")
        else:
            stagnant = 0
        p = p_new
        ref = step_vec / disp if disp > 0 else v1
        vertices.append(p.copy())
        arclength += disp
        if not left_source:
            d_src = np.hypot(_wrapped_dx(p[0], source_pos[0], period), p[1] - source_pos[1])
            if d_src > source_cap:
                left_source = True
        sid = captured(p, allow_source=left_source)
        if sid is not None:
            end_tag = EndTag("singularity", sid)
            break
        if arclength >= cfg.max_arclength:
            end_tag = EndTag("length_cap")
            break
    else:
        end_tag = EndTag("length_cap")

    if len(vertices) < 2:
        raise Stagnation("tensorline made no progress from the seed")
    return Tensorline(family, np.array(vertices), start_tag, end_tag)


def max_shear_residual(field: StrainField, line: Tensorline) -> float:
    """Largest |Lagrangian shear| along the line, with discrete tangents.

    Tensorlines are null directions of the shear tensor, so this residual
    measures how faithfully the traced polyline follows the eigenvector
    field.
    """
    from .strainfield import shear_along

    p, _ = shear_along(field, line.vertices)
    return float(np.max(np.abs(p))) if len(p) else 0.0
