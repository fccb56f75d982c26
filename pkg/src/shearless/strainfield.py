"""Cauchy-Green strain tensor fields and derived deformation diagnostics.

A :class:`StrainField` holds per-node tensor components C11, C12, C22, the
eigenpairs (lam1 <= lam2, xi1 perpendicular to xi2), the FTLE
ln(lam2)/(2|t1-t0|), and det C, on a uniform grid. Off-grid queries always
interpolate the tensor components bilinearly and re-eigendecompose at the
query point; eigenvector fields are never interpolated directly (a line
field is only defined up to sign, so componentwise interpolation of it is
meaningless near rotations).

Derived quantities:

- normal repulsion  rho(n) = 1/sqrt(<n, C^-1 n>)
- neutrality        N = (sqrt(lam_complementary) - 1)^2
- shear tensor      D = (C Omega - Omega C)/2,  Omega = 90-degree rotation
- Lagrangian shear  p(r') = <r', D r'> / sqrt(<r', C r'> <r', r'>)
- shear vectors     eta+- (unit directions extremizing p)

All shear expansions use the right-handed frame (xi1, Omega xi1) so that
p(eta+) = +(sqrt(lam2) - sqrt(lam1)) deterministically.
"""
from __future__ import annotations

import logging
from dataclasses import dataclass, field as dataclass_field
from typing import NamedTuple

import numpy as np

from .errors import (DomainEscape, FieldQuality, InvalidInput, IsotropicPoint)
from .geometry import FloatArray
from .solver import SolverConfig
from .systems import DynamicalSystem, Rect, flow_map_gradient_batch, resolve_aux_spacing

log = logging.getLogger(__name__)

# Relative eigenvalue contrast (lam2-lam1)/(lam2+lam1) below which the
# eigenvector direction is treated as undefined.
ISOTROPY_TOL = 1e-6

OMEGA = np.array([[0.0, -1.0], [1.0, 0.0]])


def rotate90(v: FloatArray) -> FloatArray:
    """Apply the 90-degree rotation Omega to vectors in the last axis."""
    return np.stack([-v[..., 1], v[..., 0]], axis=-1)


def _normalize_sign(v: FloatArray) -> FloatArray:
    """Deterministic sign: nonnegative first component, ties by second."""
    flip = (v[..., 0] < 0) | ((v[..., 0] == 0) & (v[..., 1] < 0))
    return np.where(flip[..., None], -v, v)


def eig_sym2_batch(c11, c12, c22, isotropy_tol: float = ISOTROPY_TOL):
    """Closed-form eigen-decomposition of symmetric 2x2 tensors.

    Returns (lam1, lam2, xi1, xi2, isotropic); eigenvectors are NaN where
    the contrast is below ``isotropy_tol``.
    """
    c11 = np.asarray(c11, dtype=np.float64)
    c12 = np.asarray(c12, dtype=np.float64)
    c22 = np.asarray(c22, dtype=np.float64)
    half_sum = 0.5 * (c11 + c22)
    half_diff = 0.5 * (c11 - c22)
    disc = np.hypot(half_diff, c12)
    lam1 = half_sum - disc
    lam2 = half_sum + disc
    with np.errstate(invalid="ignore", divide="ignore"):
        contrast = np.where(half_sum != 0.0, disc / np.abs(half_sum), np.inf)
    isotropic = contrast < isotropy_tol
    theta = 0.5 * np.arctan2(2.0 * c12, c11 - c22)
    ct, st = np.cos(theta), np.sin(theta)
    xi2 = _normalize_sign(np.stack([ct, st], axis=-1))
    xi1 = _normalize_sign(np.stack([-st, ct], axis=-1))
    bad = isotropic | ~np.isfinite(lam2)
    if np.any(bad):
        xi1 = np.where(bad[..., None], np.nan, xi1)
        xi2 = np.where(bad[..., None], np.nan, xi2)
    return lam1, lam2, xi1, xi2, isotropic


def eig_sym2(C, isotropy_tol: float = ISOTROPY_TOL):
    """Eigen-decomposition of one symmetric 2x2 matrix.

    Returns (lam1, lam2, xi1, xi2) with lam1 <= lam2; raises IsotropicPoint
    when the eigenvector direction is undefined.
    """
    C = np.asarray(C, dtype=np.float64)
    if C.shape != (2, 2) or not np.all(np.isfinite(C)):
        raise InvalidInput("need a finite 2x2 matrix")
    if abs(C[0, 1] - C[1, 0]) > 1e-9 * (1.0 + abs(C[0, 1])):
        raise InvalidInput("matrix is not symmetric")
    lam1, lam2, xi1, xi2, iso = eig_sym2_batch(C[0, 0], 0.5 * (C[0, 1] + C[1, 0]),
                                               C[1, 1], isotropy_tol)
    if iso:
        raise IsotropicPoint(f"eigenvalues coincide (lam = {float(lam1):g})")
    return float(lam1), float(lam2), xi1, xi2


@dataclass(frozen=True)
class Grid:
    """Uniform rectangular lattice; node (i, j) sits at (x0 + i dx, y0 + j dy).

    Arrays over the grid are indexed [j, i] (row-major, y outer). If
    ``period_x`` is set the grid spans exactly one period and column nx-1
    coincides with column 0 shifted by the period.
    """

    x0: float
    y0: float
    dx: float
    dy: float
    nx: int
    ny: int
    period_x: float | None = None

    def __post_init__(self):
        if self.nx < 2 or self.ny < 2:
            raise InvalidInput("grid needs nx, ny >= 2")
        if self.dx <= 0 or self.dy <= 0:
            raise InvalidInput("grid spacing must be positive")

    @property
    def x_max(self) -> float:
        return self.x0 + (self.nx - 1) * self.dx

    @property
    def y_max(self) -> float:
        return self.y0 + (self.ny - 1) * self.dy

    @property
    def hull(self) -> Rect:
        return Rect(self.x0, self.x_max, self.y0, self.y_max)

    @property
    def max_spacing(self) -> float:
        return max(self.dx, self.dy)

    @property
    def min_spacing(self) -> float:
        return min(self.dx, self.dy)

    def xs(self) -> FloatArray:
        return self.x0 + self.dx * np.arange(self.nx)

    def ys(self) -> FloatArray:
        return self.y0 + self.dy * np.arange(self.ny)

    def nodes(self) -> FloatArray:
        X, Y = np.meshgrid(self.xs(), self.ys())
        return np.column_stack([X.ravel(), Y.ravel()])

    def wrap_x(self, x):
        """Wrap x-coordinates into [x0, x0 + period) when periodic."""
        if self.period_x is None:
            return x
        return self.x0 + (np.asarray(x) - self.x0) % self.period_x

    def locate(self, pts: FloatArray):
        """Cell indices and local coordinates; returns (i0, j0, tx, ty, inside)."""
        pts = np.asarray(pts, dtype=np.float64)
        gx = (pts[:, 0] - self.x0) / self.dx
        gy = (pts[:, 1] - self.y0) / self.dy
        eps = 1e-9
        if self.period_x is not None:
            gx = gx % (self.nx - 1)
            inside_x = np.ones(len(pts), dtype=bool)
        else:
            inside_x = (gx >= -eps) & (gx <= self.nx - 1 + eps)
        inside = inside_x & (gy >= -eps) & (gy <= self.ny - 1 + eps) & np.all(np.isfinite(pts), axis=1)
        gx = np.clip(gx, 0.0, self.nx - 1.0)
        gy = np.clip(gy, 0.0, self.ny - 1.0)
        i0 = np.minimum(gx.astype(int), self.nx - 2)
        j0 = np.minimum(gy.astype(int), self.ny - 2)
        return i0, j0, gx - i0, gy - j0, inside

    def interpolate(self, channels: FloatArray, pts: FloatArray):
        """Bilinear interpolation of (ny, nx, K) channels at (N, 2) points.

        Returns (values (N, K), ok); ok is False outside the hull or where a
        participating node is non-finite.
        """
        i0, j0, tx, ty, inside = self.locate(pts)
        i1 = i0 + 1
        j1 = j0 + 1
        c00 = channels[j0, i0]
        c10 = channels[j0, i1]
        c01 = channels[j1, i0]
        c11 = channels[j1, i1]
        w00 = ((1 - tx) * (1 - ty))[:, None]
        w10 = (tx * (1 - ty))[:, None]
        w01 = ((1 - tx) * ty)[:, None]
        w11 = (tx * ty)[:, None]
        vals = w00 * c00 + w10 * c10 + w01 * c01 + w11 * c11
        ok = inside & np.all(np.isfinite(c00), axis=-1) & np.all(np.isfinite(c10), axis=-1) \
            & np.all(np.isfinite(c01), axis=-1) & np.all(np.isfinite(c11), axis=-1)
        return vals, ok


class EigSample(NamedTuple):
    lam1: FloatArray
    lam2: FloatArray
    xi1: FloatArray
    xi2: FloatArray
    ok: np.ndarray
    isotropic: np.ndarray


@dataclass
class StrainField:
    """Cauchy-Green tensor data on a grid plus metadata.

    Invalid nodes (escaped/non-finite/non-positive-definite) hold NaN in all
    channels, with ``valid`` False; consumers must consult the mask.
    """

    grid: Grid
    c11: FloatArray
    c12: FloatArray
    c22: FloatArray
    lam1: FloatArray
    lam2: FloatArray
    xi1: FloatArray
    xi2: FloatArray
    ftle: FloatArray
    det_c: FloatArray
    valid: np.ndarray
    t0: float
    t1: float
    aux_spacing: float
    system_name: str
    warnings: list = dataclass_field(default_factory=list)

    _C_STACK_CACHE: FloatArray | None = dataclass_field(default=None, repr=False)

    @property
    def hull(self) -> Rect:
        return self.grid.hull

    @property
    def invalid_fraction(self) -> float:
        return float(1.0 - np.mean(self.valid))

    @property
    def horizon(self) -> float:
        return abs(self.t1 - self.t0)

    def channels(self) -> dict[str, FloatArray]:
        return {
            "C11": self.c11, "C12": self.c12, "C22": self.c22,
            "lam1": self.lam1, "lam2": self.lam2,
            "xi1x": self.xi1[..., 0], "xi1y": self.xi1[..., 1],
            "ftle": self.ftle, "detC": self.det_c,
        }

    def _c_stack(self) -> FloatArray:
        if self._C_STACK_CACHE is None:
            self._C_STACK_CACHE = np.stack([self.c11, self.c12, self.c22], axis=-1)
        return self._C_STACK_CACHE

    def cg_at(self, pts: FloatArray):
        """Interpolated tensor components at points: ((N, 3) [C11, C12, C22], ok)."""
        pts = np.asarray(pts, dtype=np.float64)
        return self.grid.interpolate(self._c_stack(), pts)

    def eig_at(self, pts: FloatArray, isotropy_tol: float = ISOTROPY_TOL) -> EigSample:
        comps, ok = self.cg_at(pts)
        lam1, lam2, xi1, xi2, iso = eig_sym2_batch(
            comps[:, 0], comps[:, 1], comps[:, 2], isotropy_tol)
        return EigSample(lam1, lam2, xi1, xi2, ok, iso)

    def scalar_at(self, name: str, pts: FloatArray):
        """Interpolate one named channel (e.g. 'ftle') at points."""
        chan = self.channels()[name]
        vals, ok = self.grid.interpolate(chan[..., None], np.asarray(pts, dtype=np.float64))
        return vals[:, 0], ok


def compute_strain_field(system: DynamicalSystem, window, resolution,
                         t0: float, t1: float,
                         solver: SolverConfig | None = None,
                         aux_spacing: float | None = None,
                         margin: float = 0.0) -> StrainField:
    """Build the Cauchy-Green field over ``window`` at the given resolution.

    ``window`` is a Rect or (x_min, x_max, y_min, y_max); ``resolution`` is
    (nx, ny). If the window spans exactly one x-period of the system, the
    field is marked periodic and queries wrap. C = (grad F)^T (grad F) is
    symmetric by construction, which also enforces the symmetric part of the
    finite-difference Jacobian product.
    """
    if not isinstance(window, Rect):
        window = Rect(*window)
    nx, ny = int(resolution[0]), int(resolution[1])
    if nx < 2 or ny < 2:
        raise InvalidInput("resolution must be at least 2x2")
    period = None
    if system.period_x is not None and np.isclose(window.width, system.period_x,
                                                  rtol=1e-9, atol=0.0):
        period = system.period_x
    grid = Grid(window.x_min, window.y_min,
                window.width / (nx - 1), window.height / (ny - 1),
                nx, ny, period_x=period)
    aux = resolve_aux_spacing(system, aux_spacing, reference_extent=window.min_extent())

    jac, valid = flow_map_gradient_batch(system, grid.nodes(), t0, t1,
                                         aux_spacing=aux, solver=solver, margin=margin)
    jac = jac.reshape(ny, nx, 2, 2)
    valid = valid.reshape(ny, nx)
    c11 = jac[..., 0, 0] ** 2 + jac[..., 1, 0] ** 2
    c12 = jac[..., 0, 0] * jac[..., 0, 1] + jac[..., 1, 0] * jac[..., 1, 1]
    c22 = jac[..., 0, 1] ** 2 + jac[..., 1, 1] ** 2
    return assemble_field(grid, c11, c12, c22, valid, t0, t1, aux, system.name)


def assemble_field(grid: Grid, c11: FloatArray, c12: FloatArray, c22: FloatArray,
                   valid: np.ndarray, t0: float, t1: float,
                   aux_spacing: float, system_name: str) -> StrainField:
    """Derive the eigen/FTLE/determinant channels from tensor components.

    Shared by the flow-map computation and the on-disk loader, so a reloaded
    field goes through the exact same floating-point derivation.
    """
    c11 = np.array(c11, dtype=np.float64)
    c12 = np.array(c12, dtype=np.float64)
    c22 = np.array(c22, dtype=np.float64)
    valid = np.array(valid, dtype=bool)
    lam1, lam2, xi1, xi2, _ = eig_sym2_batch(c11, c12, c22)
    valid = valid & np.isfinite(lam1) & np.isfinite(lam2) & (lam1 > 0.0)
    det_c = c11 * c22 - c12 * c12
    horizon = abs(t1 - t0)
    with np.errstate(invalid="ignore", divide="ignore"):
        ftle = np.log(lam2) / (2.0 * horizon) if horizon > 0 else np.zeros_like(lam2)

    bad = ~valid
    for arr in (c11, c12, c22, lam1, lam2, ftle, det_c):
        arr[bad] = np.nan
    xi1[bad] = np.nan
    xi2[bad] = np.nan

    warnings: list[str] = []
    invalid_fraction = float(np.mean(bad))
    if invalid_fraction >= 1.0:
        raise FieldQuality("strain field has no valid nodes")
    if invalid_fraction > 0.05:
        msg = f"{invalid_fraction:.1%} of strain-field nodes are invalid"
        warnings.append(msg)
        log.warning(msg)

    return StrainField(grid, c11, c12, c22, lam1, lam2, xi1, xi2, ftle, det_c,
                       valid, float(t0), float(t1), aux_spacing, system_name, warnings)


# ---------------------------------------------------------------------------
# Pointwise diagnostics


def d_tensor(C) -> FloatArray:
    """Shear tensor D = (C Omega - Omega C)/2; symmetric and exactly traceless."""
    C = np.asarray(C, dtype=np.float64)
    c11, c12, c22 = C[..., 0, 0], C[..., 0, 1], C[..., 1, 1]
    off = 0.5 * (c22 - c11)
    row0 = np.stack([c12, off], axis=-1)
    row1 = np.stack([off, -c12], axis=-1)
    return np.stack([row0, row1], axis=-2)


def normal_repulsion(C, n) -> FloatArray:
    """Repulsion rate rho(n) = 1/sqrt(<n, C^-1 n>) for unit normals n."""
    C = np.asarray(C, dtype=np.float64)
    n = np.asarray(n, dtype=np.float64)
    det = C[..., 0, 0] * C[..., 1, 1] - C[..., 0, 1] * C[..., 1, 0]
    if np.any(~np.isfinite(det)) or np.any(det <= 0):
        raise InvalidInput("C must be positive definite")
    # <n, C^-1 n> = (c22 nx^2 - 2 c12 nx ny + c11 ny^2) / det
    q = (C[..., 1, 1] * n[..., 0] ** 2
         - 2.0 * C[..., 0, 1] * n[..., 0] * n[..., 1]
         + C[..., 0, 0] * n[..., 1] ** 2) / det
    return 1.0 / np.sqrt(q)


def neutrality_of(lam1, lam2, family: str):
    """Neutrality of a curve of the given family from the eigenvalues.

    Strainlines (xi1-tangent) have normal repulsion sqrt(lam2), stretchlines
    sqrt(lam1); neutrality is (repulsion - 1)^2.
    """
    if family == "strain":
        return (np.sqrt(lam2) - 1.0) ** 2
    if family == "stretch":
        return (np.sqrt(lam1) - 1.0) ** 2
    raise InvalidInput(f"unknown family '{family}'")


def neutrality_at(field: StrainField, pts: FloatArray, family: str):
    """Batch neutrality at points: (values, ok)."""
    s = field.eig_at(pts)
    return neutrality_of(s.lam1, s.lam2, family), s.ok


def neutrality(field: StrainField, x, family: str) -> float:
    vals, ok = neutrality_at(field, np.asarray(x, dtype=np.float64)[None, :], family)
    if not ok[0]:
        raise DomainEscape("neutrality queried outside the field hull")
    return float(vals[0])


def lagrangian_shear_c(C, tangent):
    """Lagrangian shear p from tensor components; invariant under tangent rescaling."""
    C = np.asarray(C, dtype=np.float64)
    r = np.asarray(tangent, dtype=np.float64)
    rx, ry = r[..., 0], r[..., 1]
    c11, c12, c22 = C[..., 0, 0], C[..., 0, 1], C[..., 1, 1]
    # <r, D r> with D = [[c12, (c22-c11)/2], [(c22-c11)/2, -c12]]
    num = c12 * (rx * rx - ry * ry) + (c22 - c11) * rx * ry
    crc = c11 * rx * rx + 2.0 * c12 * rx * ry + c22 * ry * ry
    rr = rx * rx + ry * ry
    return num / np.sqrt(crc * rr)


def lagrangian_shear(field: StrainField, x, tangent) -> float:
    """Shear p at one point for the given tangent direction."""
    r = np.asarray(tangent, dtype=np.float64)
    if not np.any(r != 0):
        raise InvalidInput("tangent must be nonzero")
    comps, ok = field.cg_at(np.asarray(x, dtype=np.float64)[None, :])
    if not ok[0]:
        raise DomainEscape("shear queried outside the field hull")
    C = np.array([[comps[0, 0], comps[0, 1]], [comps[0, 1], comps[0, 2]]])
    return float(lagrangian_shear_c(C, r))


def shear_along(field: StrainField, vertices: FloatArray):
    """Shear sampled at segment midpoints of a polyline: (p (M-1,), lengths)."""
    pts = np.asarray(vertices, dtype=np.float64)
    if len(pts) < 2:
        raise InvalidInput("curve needs at least 2 vertices")
    mids = 0.5 * (pts[:-1] + pts[1:])
    tangents = pts[1:] - pts[:-1]
    lengths = np.linalg.norm(tangents, axis=1)
    keep = lengths > 0
    comps, ok = field.cg_at(mids)
    if not np.all(ok[keep]):
        raise DomainEscape("curve leaves the field hull")
    c11, c12, c22 = comps[:, 0], comps[:, 1], comps[:, 2]
    rx, ry = tangents[:, 0], tangents[:, 1]
    num = c12 * (rx * rx - ry * ry) + (c22 - c11) * rx * ry
    crc = c11 * rx * rx + 2.0 * c12 * rx * ry + c22 * ry * ry
    with np.errstate(invalid="ignore", divide="ignore"):
        p = np.where(keep, num / np.sqrt(crc * lengths ** 2), 0.0)
    return p, lengths


def averaged_shear(field: StrainField, vertices: FloatArray) -> float:
    """Arc-length-weighted mean Lagrangian shear along a polyline."""
    p, lengths = shear_along(field, vertices)
    total = float(np.sum(lengths))
    if total == 0.0:
        raise InvalidInput("curve has zero length")
    return float(np.sum(p * lengths) / total)


def shear_vectors(lam1, lam2, xi1):
    """Unit directions eta+/- extremizing the Lagrangian shear.

    Expansion in the right-handed frame (xi1, Omega xi1):
    eta+- = sqrt(s2/(s1+s2)) xi1 +- sqrt(s1/(s1+s2)) Omega xi1, s_i = sqrt(lam_i);
    then p(eta+) = s2 - s1 >= 0 and p(eta-) = -(s2 - s1).
    """
    lam1 = np.asarray(lam1, dtype=np.float64)
    lam2 = np.asarray(lam2, dtype=np.float64)
    xi1 = np.asarray(xi1, dtype=np.float64)
    if np.any(~(lam2 > lam1)):
        raise IsotropicPoint("shear vectors undefined where lam1 == lam2")
    s1 = np.sqrt(lam1)
    s2 = np.sqrt(lam2)
    alpha = np.sqrt(s2 / (s1 + s2))[..., None]
    beta = np.sqrt(s1 / (s1 + s2))[..., None]
    xi2 = rotate90(xi1)
    return alpha * xi1 + beta * xi2, alpha * xi1 - beta * xi2


def shear_coefficients(lam1, lam2):
    """The (alpha, beta) eigenbasis coefficients of eta+."""
    s1 = np.sqrt(np.asarray(lam1, dtype=np.float64))
    s2 = np.sqrt(np.asarray(lam2, dtype=np.float64))
    return np.sqrt(s2 / (s1 + s2)), np.sqrt(s1 / (s1 + s2))


def boundary_term(lam1, lam2, alpha, beta):
    """Normal-perturbation boundary term for a tangent alpha xi1 + beta xi2.

    Closed form in the eigenbasis; vanishes identically for lam1 = lam2 and
    exactly at the shear-vector coefficients (the directions extremizing p).
    """
    lam1 = np.asarray(lam1, dtype=np.float64)
    lam2 = np.asarray(lam2, dtype=np.float64)
    alpha = np.asarray(alpha, dtype=np.float64)
    beta = np.asarray(beta, dtype=np.float64)
    a2, b2 = alpha ** 2, beta ** 2
    mix = a2 * lam1 + b2 * lam2
    num = mix * (a2 - b2) * (lam2 - lam1) - a2 * b2 * (lam2 - lam1) ** 2
    den = np.sqrt(a2 + b2) * mix ** 1.5
    return num / den
