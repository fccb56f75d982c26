"""Shared fixtures: small flow-derived fields and hand-built tensor fields.

The synthetic fields put exact analytic control over the tensor components:

- ``index_half_field(sign)``: C = I + s[[u, g],[g, -u]] with (u, w) the
  offsets from a planted zero and g = sign * s * w.  The eigenvector line
  field winds by sign/2 around the zero, so sign=-1 plants a trisector and
  sign=+1 a wedge.
- ``pair_field``: tensor whose (C11-C22, C12) zeros are the planted points
  a (winding +1/2, wedge) and b (winding -1/2, trisector), linked by an
  exactly horizontal strainline along the segment between them.
- ``trench_field``: C = diag(exp(-phi), exp(phi)) with
  phi = b0 + curvature*(y-y0)^2, so strainlines run along y = y0 at the
  bottom of a convex valley of the strain-family neutrality.
"""
from __future__ import annotations

import numpy as np
import pytest

from shearless.strainfield import Grid, assemble_field, compute_strain_field
from shearless.systems import canonical_shear, ftle_counterexample, sntm

# A deliberately off-lattice anchor so planted zeros never sit on grid nodes.
OFFSET = (0.0137, -0.0219)


def field_from_components(cfun, window, resolution, period_x=None,
                          name="synthetic", t0=0.0, t1=1.0):
    """Assemble a StrainField from an analytic map (X, Y) -> (c11, c12, c22)."""
    x_min, x_max, y_min, y_max = window
    nx, ny = resolution
    grid = Grid(x_min, y_min, (x_max - x_min) / (nx - 1),
                (y_max - y_min) / (ny - 1), nx, ny, period_x=period_x)
    X, Y = np.meshgrid(grid.xs(), grid.ys())
    comps = [np.broadcast_to(np.asarray(c, dtype=np.float64), X.shape).copy()
             for c in cfun(X, Y)]
    valid = np.ones(X.shape, dtype=bool)
    return assemble_field(grid, *comps, valid, t0, t1, 1e-3, name)


def index_half_field(sign, scale=0.25, window=(-1.0, 1.0, -1.0, 1.0),
                     resolution=(81, 81), offset=OFFSET):
    def cfun(X, Y):
        u = X - offset[0]
        w = Y - offset[1]
        return 1.0 + scale * u, sign * scale * w, 1.0 - scale * u

    kind = "trisector" if sign < 0 else "wedge"
    return field_from_components(cfun, window, resolution, name=f"model-{kind}")


def pair_field(a=(0.4513, 0.0137), b=(-0.4487, 0.0137), scale=0.2,
               resolution=(121, 121), second_kind="wedge"):
    """Two planted zeros: a trisector at ``b`` joined to ``a`` along y = 0.

    ``second_kind='trisector'`` flips the orientation at ``a`` so the link
    ends at a second trisector instead of a wedge.
    """
    flip = -1.0 if second_kind == "trisector" else 1.0

    def cfun(X, Y):
        w1 = (X - a[0]) + 1j * flip * (Y - a[1])
        w2 = (X - b[0]) - 1j * (Y - b[1])
        prod = w1 * w2
        f = scale * prod.real
        g = scale * prod.imag
        return 1.0 + 0.5 * f, 0.5 * g, 1.0 - 0.5 * f

    return field_from_components(cfun, (-1.0, 1.0, -1.0, 1.0), resolution,
                                 name="model-pair")


def trench_field(b0=0.5, curvature=8.0, y0=0.0, window=(-1.0, 1.0, -0.45, 0.45),
                 resolution=(101, 91)):
    def cfun(X, Y):
        phi = b0 + curvature * (Y - y0) ** 2
        return np.exp(-phi), np.zeros_like(X), np.exp(phi)

    return field_from_components(cfun, window, resolution, name="model-trench")


def ridge_field(b0=1.2, curvature=4.0, window=(-1.0, 1.0, -0.45, 0.45),
                resolution=(101, 91)):
    def cfun(X, Y):
        phi = b0 - curvature * Y ** 2
        return np.exp(-phi), np.zeros_like(X), np.exp(phi)

    return field_from_components(cfun, window, resolution, name="model-ridge")


def constant_field(c11=1.0, c12=0.0, c22=4.0, window=(-1.0, 1.0, -1.0, 1.0),
                   resolution=(41, 41)):
    def cfun(X, Y):
        return c11, c12, c22

    return field_from_components(cfun, window, resolution, name="model-constant")


@pytest.fixture(scope="session")
def shear_field():
    """Canonical shear flow u = 1 - y^2 over one time unit."""
    return compute_strain_field(canonical_shear(), (-0.5, 0.5, -0.5, 0.5),
                                (41, 41), 0.0, 1.0, aux_spacing=1e-5)


@pytest.fixture(scope="session")
def counter_field():
    """FTLE-trench counterexample flow, short horizon to keep it cheap."""
    return compute_strain_field(ftle_counterexample(), (-1.0, 1.0, -0.6, 0.6),
                                (41, 41), 0.0, 2.0, aux_spacing=1e-6)


@pytest.fixture(scope="session")
def integrable_field():
    """Weakly perturbed non-twist map on a coarse grid (unit-test scale)."""
    return compute_strain_field(sntm(0.08, 0.125), (-0.5, 0.5, -2.0, 2.0),
                                (120, 240), 0.0, 100.0, aux_spacing=1e-5)


@pytest.fixture(scope="session")
def tri_field():
    return index_half_field(-1.0)


@pytest.fixture(scope="session")
def wedge_field():
    return index_half_field(+1.0)


@pytest.fixture(scope="session")
def valley_field():
    return trench_field()


def eigvec_winding(field, center, radius=0.15, n=720):
    """Phase-portrait oracle: winding number of the xi1 line field.

    Samples xi1 on a circle, unwraps the direction angle modulo pi (a line
    field has no global sign), and counts full turns.  Trisectors wind by
    -1/2, wedges by +1/2.
    """
    th = np.linspace(0.0, 2.0 * np.pi, n, endpoint=False)
    pts = np.asarray(center) + radius * np.column_stack([np.cos(th), np.sin(th)])
    sample = field.eig_at(pts)
    assert np.all(sample.ok) and not np.any(sample.isotropic)
    ang = np.arctan2(sample.xi1[:, 1], sample.xi1[:, 0])
    d = np.diff(ang)
    d = (d + np.pi / 2) % np.pi - np.pi / 2
    return float(np.sum(d) / (2.0 * np.pi))
