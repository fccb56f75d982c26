"""Flow maps, gradients, built-in systems, and the integration backends."""
from __future__ import annotations

import math

import numpy as np
import pytest

from shearless.errors import (BudgetExceeded, DomainEscape, FormatError,
                              InvalidInput, SignalOutOfRange)
from shearless.solver import SolverConfig, integrate_batch, integrate_path
from shearless.systems import (BickleyConfig, ContinuousSystem, Rect,
                               SampledSignal, SampledVelocity, advect_blob,
                               bickley_jet, bickley_velocity, canonical_shear,
                               flow_map, flow_map_batch, flow_map_gradient,
                               flow_map_gradient_batch, ftle_counterexample,
                               indicator_points, lorenz_signal,
                               sampled_velocity_system, sntm, sntm_step)

RNG = np.random.default_rng(42)


# ---------------------------------------------------------------------------
# Closed-form flows


def test_shear_flow_map_matches_closed_form():
    sys = canonical_shear()
    for x0, y0, t in [(0.0, 0.0, 1.0), (0.2, 0.3, 2.5), (-0.4, -0.5, 0.7)]:
        out = flow_map(sys, [x0, y0], 0.0, t)
        assert out[0] == pytest.approx(x0 + (1.0 - y0 * y0) * t, abs=1e-9)
        assert out[1] == pytest.approx(y0, abs=1e-12)


def test_shear_flow_gradient_matches_closed_form():
    sys = canonical_shear()
    y0, t = 0.3, 2.0
    jac = flow_map_gradient(sys, [0.1, y0], 0.0, t, aux_spacing=1e-5)
    expected = np.array([[1.0, -2.0 * y0 * t], [0.0, 1.0]])
    assert np.allclose(jac, expected, atol=1e-7)


def test_counterexample_gradient_is_diagonal_exponential():
    sys = ftle_counterexample()
    T = 2.0
    # tight absolute tolerance: the decaying auxiliary trajectories are small
    jac = flow_map_gradient(sys, [0.0, 0.0], 0.0, T, aux_spacing=1e-4,
                            solver=SolverConfig(rtol=1e-10, atol=1e-12))
    assert jac[0, 0] == pytest.approx(math.exp(T), rel=1e-4)
    assert jac[1, 1] == pytest.approx(math.exp(-T), rel=1e-4)
    assert abs(jac[0, 1]) < 1e-6 and abs(jac[1, 0]) < 1e-6


def test_continuous_composition_property():
    sys = ftle_counterexample()
    pts = RNG.uniform(-0.5, 0.5, size=(8, 2))
    direct = flow_map_batch(sys, pts, 0.0, 2.0).positions
    leg = flow_map_batch(sys, pts, 0.0, 1.2).positions
    composed = flow_map_batch(sys, leg, 1.2, 2.0).positions
    # both routes hold the same trajectory to within 10x the solver tolerance
    assert np.allclose(composed, direct, rtol=1e-6, atol=1e-7)


# ---------------------------------------------------------------------------
# Discrete maps


def test_discrete_flow_map_equals_explicit_iteration():
    a, b = 0.27, 0.38
    sys = sntm(a, b)
    pts = RNG.uniform(-1.0, 1.0, size=(20, 2))
    res = flow_map_batch(sys, pts, 0.0, 7.0)
    x, y = pts[:, 0].copy(), pts[:, 1].copy()
    for _ in range(7):
        x, y = sntm_step(x, y, a, b)
    assert np.array_equal(res.positions, np.column_stack([x, y]))
    assert res.all_valid


def test_discrete_composition_is_exact():
    sys = sntm(0.27, 0.38)
    pts = RNG.uniform(-1.0, 1.0, size=(12, 2))
    direct = flow_map_batch(sys, pts, 0.0, 9.0).positions
    first = flow_map_batch(sys, pts, 0.0, 4.0).positions
    composed = flow_map_batch(sys, first, 4.0, 9.0).positions
    assert np.array_equal(direct, composed)


def test_discrete_time_must_be_integer_steps():
    sys = sntm(0.1, 0.1)
    with pytest.raises(InvalidInput):
        flow_map(sys, [0.0, 0.0], 0.0, 2.5)
    with pytest.raises(InvalidInput):
        flow_map(sys, [0.0, 0.0], 0.0, -1.0)


def test_unforced_nontwist_map_step():
    x, y = sntm_step(0.3, 0.7, a=0.25, b=0.0)
    assert y == 0.7
    assert x == pytest.approx(0.3 + 0.25 * (1.0 - 0.49), abs=1e-15)


def test_map_area_preservation():
    sys = sntm(0.08, 0.125)
    xs = np.linspace(-0.4, 0.4, 5)
    ys = np.linspace(-1.5, 1.5, 7)
    pts = np.array([(x, y) for x in xs for y in ys])
    jac, valid = flow_map_gradient_batch(sys, pts, 0.0, 20.0, aux_spacing=1e-5)
    assert np.all(valid)
    dets = jac[:, 0, 0] * jac[:, 1, 1] - jac[:, 0, 1] * jac[:, 1, 0]
    err = np.abs(dets - 1.0)
    # the map preserves area; differencing degrades only where stretching is
    # strong enough to break the finite-difference stencil, so gate the bulk
    assert np.median(err) < 1e-6
    assert np.mean(err < 1e-3) >= 0.9


def test_indicator_points_arithmetic():
    pts = indicator_points(0.08)
    assert np.allclose(pts, [[0.29, 0.0], [-0.21, 0.0]], atol=1e-15)


# ---------------------------------------------------------------------------
# Bickley jet


def test_bickley_velocity_at_jet_axis():
    cfg = BickleyConfig()
    u, v = bickley_velocity(cfg, 0.0, 0.0, 0.0)
    assert float(u) == pytest.approx(62.66, abs=1e-12)
    assert float(v) == pytest.approx(0.0, abs=1e-12)
    # with all wave amplitudes off, the zonal profile is exactly U sech^2
    flat = BickleyConfig(eps=(0.0, 0.0, 0.0))
    for x in (0.0, 3.0e6, 1.7e7):
        u, v = bickley_velocity(flat, x, 0.0, 5.0e5)
        assert float(u) == pytest.approx(62.66, abs=1e-12)
        assert float(v) == 0.0


def test_bickley_velocity_derives_from_stream_function():
    cfg = BickleyConfig()

    def psi(x, y, t):
        base = -cfg.U * cfg.L * np.tanh(y / cfg.L)
        wave = sum(cfg.eps[n] * np.cos(cfg.k[n] * (x - cfg.c[n] * t))
                   for n in range(3))
        return base + cfg.U * cfg.L / np.cosh(y / cfg.L) ** 2 * wave

    rng = np.random.default_rng(3)
    h = 40.0  # meters; finite-difference error ~ (h/L)^2
    for _ in range(12):
        x = rng.uniform(0.0, cfg.period_x)
        y = rng.uniform(-2.5e6, 2.5e6)
        t = rng.uniform(0.0, 5.0e5)
        u, v = bickley_velocity(cfg, x, y, t)
        u_fd = -(psi(x, y + h, t) - psi(x, y - h, t)) / (2.0 * h)
        v_fd = (psi(x + h, y, t) - psi(x - h, y, t)) / (2.0 * h)
        assert float(u) == pytest.approx(u_fd, rel=1e-6, abs=1e-6)
        assert float(v) == pytest.approx(v_fd, rel=1e-6, abs=1e-6)


def test_bickley_wave_amplitude_sum_enters_meridional_velocity():
    # v(x, 0, 0) = -U L sum_n eps_n k_n sin(k_n x): the wave part of the
    # stream function evaluates to U L (eps1 + eps2 + eps3) at the origin,
    # and its x-derivative is reproduced exactly by the velocity field.
    cfg = BickleyConfig(eps=(0.075, 0.4, 0.3))
    assert cfg.U * cfg.L * sum(cfg.eps) == pytest.approx(62.66 * 1.77e6 * 0.775)
    for x in (1.0e5, 2.0e6, 8.0e6):
        _, v = bickley_velocity(cfg, x, 0.0, 0.0)
        expected = -cfg.U * cfg.L * sum(cfg.eps[n] * cfg.k[n] * np.sin(cfg.k[n] * x)
                                        for n in range(3))
        assert float(v) == pytest.approx(expected, rel=1e-12)


def test_bickley_config_defaults_and_period():
    cfg = BickleyConfig()
    assert cfg.period_x == pytest.approx(math.pi * 6.371e6)
    assert cfg.c[0] == pytest.approx(0.1446 * 62.66)
    assert cfg.c[1] == pytest.approx(0.205 * 62.66)
    assert cfg.c[2] == pytest.approx(0.461 * 62.66)
    assert not cfg.chaotic
    sys = bickley_jet(cfg)
    assert sys.period_x == cfg.period_x
    with pytest.raises(InvalidInput):
        BickleyConfig(U=-1.0)
    with pytest.raises(InvalidInput):
        BickleyConfig(eps1_signal=SampledSignal([0.0, 1.0], [0.1, 0.2]))


def test_chaotic_forcing_replaces_first_two_amplitudes():
    s1 = SampledSignal([0.0, 10.0], [0.05, 0.15], name="e1")
    s2 = SampledSignal([0.0, 10.0], [0.3, 0.5], name="e2")
    cfg = BickleyConfig(eps1_signal=s1, eps2_signal=s2)
    assert cfg.chaotic
    amps = cfg.amplitudes(5.0)
    assert amps[0] == pytest.approx(0.1)
    assert amps[1] == pytest.approx(0.4)
    assert amps[2] == pytest.approx(cfg.eps[2])


# ---------------------------------------------------------------------------
# Sampled signals


def test_lorenz_signal_is_deterministic_and_bounded():
    s1 = lorenz_signal(11, 0.0, 100.0, 0.2, 0.6, n_samples=256)
    s2 = lorenz_signal(11, 0.0, 100.0, 0.2, 0.6, n_samples=256)
    assert np.array_equal(s1.values, s2.values)
    assert np.array_equal(s1.times, s2.times)
    assert s1.values.min() == pytest.approx(0.2)
    assert s1.values.max() == pytest.approx(0.6)
    s3 = lorenz_signal(12, 0.0, 100.0, 0.2, 0.6, n_samples=256)
    assert not np.array_equal(s1.values, s3.values)
    # the signal actually wanders instead of settling to a constant
    assert np.std(np.diff(s1.values)) > 1e-3


def test_signal_validation_and_range():
    with pytest.raises(FormatError):
        SampledSignal([0.0, 0.0], [1.0, 2.0])
    with pytest.raises(FormatError):
        SampledSignal([0.0, 1.0], [1.0, np.nan])
    sig = SampledSignal([0.0, 1.0, 3.0], [1.0, 2.0, 0.0])
    assert sig(2.0) == pytest.approx(1.0)
    with pytest.raises(SignalOutOfRange):
        sig(3.5)


# ---------------------------------------------------------------------------
# Sampled velocity data


def _analytic_uv(x, y):
    u = np.sin(2.0 * np.pi * y) + 1.5
    v = np.cos(2.0 * np.pi * x)
    return u, v


def _sample_velocity(n):
    xs = np.linspace(0.0, 1.0, n)
    ys = np.linspace(0.0, 1.0, n)
    X, Y = np.meshgrid(xs, ys)
    u, v = _analytic_uv(X, Y)
    return SampledVelocity((0.0, 0.0), (xs[1], ys[1]), n, n,
                           [0.0], u[None], v[None])


def test_sampled_velocity_interpolation_refines_quadratically():
    probes = RNG.uniform(0.21, 0.79, size=(40, 2))

    def max_err(n):
        sysm = sampled_velocity_system(_sample_velocity(n))
        got = sysm.velocity(0.0, probes)
        want = np.column_stack(_analytic_uv(probes[:, 0], probes[:, 1]))
        return np.max(np.abs(got - want))

    e1, e2 = max_err(41), max_err(81)
    assert e1 / e2 == pytest.approx(4.0, rel=0.25)


def test_single_time_sample_is_steady():
    sysm = sampled_velocity_system(_sample_velocity(41))
    p0 = np.array([[0.5, 0.25]])
    v_early = sysm.velocity(0.0, p0)
    v_late = sysm.velocity(37.5, p0)
    assert np.array_equal(v_early, v_late)
    # and it can actually be advected over a nonzero horizon
    res = flow_map_batch(sysm, p0, 0.0, 0.05)
    assert res.all_valid


def test_time_dependent_samples_interpolate_linearly_and_escape_outside():
    n = 21
    xs = np.linspace(0.0, 1.0, n)
    X, Y = np.meshgrid(xs, xs)
    u0 = np.zeros_like(X)
    u1 = np.ones_like(X)
    v = np.zeros_like(X)
    data = SampledVelocity((0.0, 0.0), (xs[1], xs[1]), n, n, [0.0, 2.0],
                           np.stack([u0, u1]), np.stack([v, v]))
    sysm = sampled_velocity_system(data)
    got = sysm.velocity(0.5, np.array([[0.5, 0.5]]))
    assert got[0, 0] == pytest.approx(0.25)
    with pytest.raises(DomainEscape):
        sysm.velocity(3.0, np.array([[0.5, 0.5]]))


def test_sampled_velocity_shape_validation():
    with pytest.raises(FormatError):
        SampledVelocity((0.0, 0.0), (0.1, 0.1), 4, 4, [0.0],
                        np.zeros((1, 3, 4)), np.zeros((1, 4, 4)))
    with pytest.raises(FormatError):
        SampledVelocity((0.0, 0.0), (0.0, 0.1), 4, 4, [0.0],
                        np.zeros((1, 4, 4)), np.zeros((1, 4, 4)))


def test_periodic_sampled_velocity_wraps_across_the_seam():
    n = 16
    dx = 1.0 / n  # periodic grid: node n-1 sits one spacing short of the seam
    xs = dx * np.arange(n)
    X, Y = np.meshgrid(xs, xs)
    u = np.sin(2.0 * np.pi * X)
    v = np.zeros_like(X)
    data = SampledVelocity((0.0, 0.0), (dx, dx), n, n, [0.0], u[None], v[None],
                           periodic_x=True)
    sysm = sampled_velocity_system(data, "wrapped")
    left = sysm.velocity(0.0, np.array([[0.001, 0.4]]))
    right = sysm.velocity(0.0, np.array([[1.001, 0.4]]))
    assert np.allclose(left, right, atol=1e-12)


# ---------------------------------------------------------------------------
# Tracer blobs


def test_blob_is_identity_at_zero_horizon():
    out = advect_blob(canonical_shear(), (0.0, 0.2), 0.1, 32, 0.0, 0.0)
    ang = np.linspace(0.0, 2.0 * np.pi, 32, endpoint=False)
    circle = np.column_stack([0.1 * np.cos(ang), 0.2 + 0.1 * np.sin(ang)])
    assert np.allclose(out, circle, atol=1e-15)


def test_blob_under_rigid_rotation_keeps_its_diameter():
    rot = ContinuousSystem("rotation", lambda t, p: np.column_stack([-p[:, 1], p[:, 0]]))
    out = advect_blob(rot, (0.3, 0.0), 0.1, 64, 0.0, np.pi / 2)
    d = np.linalg.norm(out[:, None, :] - out[None, :, :], axis=-1)
    assert np.max(d) == pytest.approx(0.2, rel=1e-7)
    center = out.mean(axis=0)
    assert np.allclose(center, [0.0, 0.3], atol=1e-7)


def test_blob_input_validation():
    with pytest.raises(InvalidInput):
        advect_blob(canonical_shear(), (0.0, 0.0), 0.1, 2, 0.0, 1.0)
    with pytest.raises(InvalidInput):
        advect_blob(canonical_shear(), (0.0, 0.0), -0.1, 32, 0.0, 1.0)


# ---------------------------------------------------------------------------
# Integration backends


def test_rk4_is_bitwise_deterministic():
    cfg = SolverConfig(method="rk4", rk4_step=0.01)
    pts = RNG.uniform(-0.5, 0.5, size=(10, 2))
    sys = ftle_counterexample()
    a = flow_map_batch(sys, pts, 0.0, 1.0, cfg).positions
    b = flow_map_batch(sys, pts, 0.0, 1.0, cfg).positions
    assert np.array_equal(a, b)


def test_rk4_matches_adaptive_solution():
    pts = np.array([[0.1, 0.2], [0.0, -0.3]])
    sys = ftle_counterexample()
    fixed = flow_map_batch(sys, pts, 0.0, 1.0, SolverConfig(method="rk4", rk4_step=1e-3))
    adaptive = flow_map_batch(sys, pts, 0.0, 1.0)
    assert np.allclose(fixed.positions, adaptive.positions, atol=1e-7)


def test_step_budget_is_enforced():
    with pytest.raises(BudgetExceeded):
        flow_map(canonical_shear(), [0.0, 0.3], 0.0, 1.0,
                 SolverConfig(method="rk4", rk4_step=1e-7, max_steps=100))
    with pytest.raises(BudgetExceeded):
        flow_map(canonical_shear(), [0.0, 0.3], 0.0, 10.0,
                 SolverConfig(max_steps=3))


def test_escaped_trajectories_freeze_instead_of_aborting():
    drift = ContinuousSystem("drift", lambda t, p: np.column_stack(
        [np.ones(len(p)), np.zeros(len(p))]), domain=Rect(-1.0, 1.0, -1.0, 1.0))
    pts = np.array([[0.0, 0.0], [0.95, 0.0]])
    res = flow_map_batch(drift, pts, 0.0, 0.5)
    assert res.valid[0] and not res.valid[1]
    assert np.isnan(res.escape_time[0])
    assert 0.0 < res.escape_time[1] <= 0.5
    # the frozen endpoint sits at the state where escape was detected
    assert 1.0 <= res.positions[1, 0] <= 1.2
    with pytest.raises(DomainEscape):
        flow_map(drift, [0.95, 0.0], 0.0, 0.5)


def test_backward_integration_inverts_forward():
    sys = ftle_counterexample()
    pts = RNG.uniform(-0.4, 0.4, size=(6, 2))
    fwd = flow_map_batch(sys, pts, 0.0, 1.5).positions
    back = flow_map_batch(sys, fwd, 1.5, 0.0).positions
    assert np.allclose(back, pts, atol=1e-6)


def test_integrate_path_samples_are_consistent_with_endpoints():
    sys = canonical_shear()
    pts = np.array([[0.0, 0.5], [0.0, -0.2]])
    path = integrate_path(sys.velocity, pts, [0.0, 0.5, 1.0])
    assert path.shape == (3, 2, 2)
    end = integrate_batch(sys.velocity, pts, 0.0, 1.0).positions
    assert np.allclose(path[-1], end, atol=1e-9)


def test_zero_length_span_returns_input():
    pts = np.array([[0.1, 0.2]])
    res = integrate_batch(lambda t, p: p, pts, 2.0, 2.0)
    assert np.array_equal(res.positions, pts)
    assert res.all_valid
