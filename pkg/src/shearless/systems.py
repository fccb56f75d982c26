"""Dynamical systems, flow maps, flow-map gradients, and tracer advection.

Continuous systems expose a batch velocity ``v(t, points) -> velocities`` and
are integrated with the solvers in :mod:`shearless.solver`; discrete systems
expose one map application per integer step. Built-ins cover the model flows
used throughout the package: a canonical parallel shear flow, the standard
non-twist map (SNTM), a steady flow whose FTLE trench is attracting rather
than jet-like, and the Bickley jet with quasiperiodic or sampled chaotic
forcing. Gridded velocity data can be wrapped into a system via
:func:`sampled_velocity_system`.

Horizontal coordinates are never wrapped during integration: trajectories of
x-periodic systems accumulate x so that finite differences across the seam
stay meaningful. Wrap at presentation time only.
"""
from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Callable

import numpy as np

from .errors import (DomainEscape, FormatError, InvalidInput,
                     NumericalBlowup, SignalOutOfRange)
from .geometry import FloatArray
from .solver import BatchResult, SolverConfig, integrate_batch

DAY = 86400.0  # seconds


@dataclass(frozen=True)
class Rect:
    """Axis-aligned rectangle; infinite bounds mark unbounded directions."""

    x_min: float
    x_max: float
    y_min: float
    y_max: float

    def __post_init__(self):
        if not (self.x_min < self.x_max and self.y_min < self.y_max):
            raise InvalidInput("rectangle bounds must satisfy min < max")

    @property
    def width(self) -> float:
        return self.x_max - self.x_min

    @property
    def height(self) -> float:
        return self.y_max - self.y_min

    def min_extent(self) -> float:
        return min(self.width, self.height)

    def contains(self, pts: FloatArray, margin: float = 0.0,
                 skip_x: bool = False) -> np.ndarray:
        x, y = pts[:, 0], pts[:, 1]
        ok = (y >= self.y_min - margin) & (y <= self.y_max + margin)
        if not skip_x:
            ok &= (x >= self.x_min - margin) & (x <= self.x_max + margin)
        return ok


class DynamicalSystem:
    """Common interface: a named planar system with optional domain bounds.

    ``period_x`` declares x-periodicity (evaluation is periodic; trajectories
    are reported unwrapped). ``domain`` bounds trigger DomainEscape handling;
    ``None`` means the system is evaluable everywhere.
    """

    kind = ""

    def __init__(self, name: str, domain: Rect | None = None,
                 period_x: float | None = None):
        self.name = name
        self.domain = domain
        self.period_x = period_x

    def bounds_check(self, margin: float) -> Callable[[FloatArray], np.ndarray] | None:
        if self.domain is None:
            return None
        dom, periodic = self.domain, self.period_x is not None
        return lambda pts: dom.contains(pts, margin, skip_x=periodic)


class ContinuousSystem(DynamicalSystem):
    kind = "continuous"

    def __init__(self, name: str, velocity: Callable[[float, FloatArray], FloatArray],
                 domain: Rect | None = None, period_x: float | None = None):
        super().__init__(name, domain, period_x)
        self._velocity = velocity

    def velocity(self, t: float, pts: FloatArray) -> FloatArray:
        return self._velocity(t, pts)


class DiscreteSystem(DynamicalSystem):
    kind = "discrete"

    def __init__(self, name: str, step: Callable[[FloatArray, int], FloatArray],
                 domain: Rect | None = None, period_x: float | None = None):
        super().__init__(name, domain, period_x)
        self._step = step

    def step(self, pts: FloatArray, n: int) -> FloatArray:
        return self._step(pts, n)


def _as_step_index(t: float, label: str) -> int:
    n = round(t)
    if abs(t - n) > 1e-9:
        raise InvalidInput(f"{label} must be an integer step count for discrete systems, got {t}")
    return int(n)


def _iterate_map(system: DiscreteSystem, pts: FloatArray, n0: int, n1: int,
                 in_bounds) -> BatchResult:
    x = pts.copy()
    n_pts = len(x)
    active = np.ones(n_pts, dtype=bool)
    valid = np.ones(n_pts, dtype=bool)
    escape_time = np.full(n_pts, np.nan)

    def freeze(t: float):
        bad = ~np.all(np.isfinite(x), axis=1)
        if in_bounds is not None:
            with np.errstate(invalid="ignore"):
                bad |= ~np.asarray(in_bounds(np.where(np.isfinite(x), x, 0.0)), dtype=bool)
        newly = active & bad
        escape_time[newly] = t
        valid[newly] = False
        active[newly] = False

    freeze(n0)
    for n in range(n0, n1):
        if not np.any(active):
            break
        x_new = system.step(x, n)
        x = np.where(active[:, None], x_new, x)
        freeze(n + 1)
    return BatchResult(x, valid, escape_time)


def flow_map_batch(system: DynamicalSystem, x0, t0: float, t1: float,
                   solver: SolverConfig | None = None,
                   margin: float = 0.0) -> BatchResult:
    """Advance a batch of initial positions from t0 to t1.

    Escaped or non-finite trajectories are frozen and reported through the
    result's validity mask instead of aborting the batch.
    """
    pts = np.array(x0, dtype=np.float64)
    if pts.ndim != 2 or pts.shape[1] != 2:
        raise InvalidInput(f"expected (N, 2) positions, got shape {pts.shape}")
    in_bounds = system.bounds_check(margin)
    if isinstance(system, DiscreteSystem):
        n0 = _as_step_index(t0, "t0")
        n1 = _as_step_index(t1, "t1")
        if n1 < n0:
            raise InvalidInput("discrete systems integrate forward only (t1 >= t0)")
        return _iterate_map(system, pts, n0, n1, in_bounds)
    if not isinstance(system, ContinuousSystem):
        raise InvalidInput(f"unsupported system kind '{system.kind}'")
    return integrate_batch(system.velocity, pts, t0, t1, solver, in_bounds=in_bounds)


def flow_map(system: DynamicalSystem, x0, t0: float, t1: float,
             solver: SolverConfig | None = None, margin: float = 0.0) -> FloatArray:
    """Single-trajectory flow map; raises on escape or blow-up."""
    res = flow_map_batch(system, np.asarray(x0, dtype=np.float64)[None, :], t0, t1,
                         solver, margin)
    if not res.valid[0]:
        t_esc = float(res.escape_time[0])
        if not np.all(np.isfinite(res.positions[0])):
            raise NumericalBlowup(f"trajectory became non-finite near t = {t_esc:g}")
        raise DomainEscape(escape_time=t_esc)
    return res.positions[0]


def flow_map_gradient_batch(system: DynamicalSystem, x0, t0: float, t1: float,
                            aux_spacing: float | None = None,
                            solver: SolverConfig | None = None,
                            margin: float = 0.0) -> tuple[FloatArray, np.ndarray]:
    """Central-difference flow-map Jacobians from four auxiliary trajectories.

    Returns (jacobians (N, 2, 2), valid (N,)); a node is valid only if all
    four auxiliary trajectories stayed in bounds and finite.
    """
    pts = np.array(x0, dtype=np.float64)
    if pts.ndim != 2 or pts.shape[1] != 2:
        raise InvalidInput(f"expected (N, 2) positions, got shape {pts.shape}")
    h = resolve_aux_spacing(system, aux_spacing)
    n = len(pts)
    aux = np.empty((4 * n, 2))
    aux[0 * n:1 * n] = pts + [h, 0.0]
    aux[1 * n:2 * n] = pts - [h, 0.0]
    aux[2 * n:3 * n] = pts + [0.0, h]
    aux[3 * n:4 * n] = pts - [0.0, h]
    res = flow_map_batch(system, aux, t0, t1, solver, margin)
    p = res.positions
    jac = np.empty((n, 2, 2))
    jac[:, :, 0] = (p[0 * n:1 * n] - p[1 * n:2 * n]) / (2.0 * h)
    jac[:, :, 1] = (p[2 * n:3 * n] - p[3 * n:4 * n]) / (2.0 * h)
    valid = (res.valid[0 * n:1 * n] & res.valid[1 * n:2 * n]
             & res.valid[2 * n:3 * n] & res.valid[3 * n:4 * n])
    valid &= np.all(np.isfinite(jac), axis=(1, 2))
    return jac, valid


def flow_map_gradient(system: DynamicalSystem, x0, t0: float, t1: float,
                      aux_spacing: float | None = None,
                      solver: SolverConfig | None = None,
                      margin: float = 0.0) -> FloatArray:
    jac, valid = flow_map_gradient_batch(
        system, np.asarray(x0, dtype=np.float64)[None, :], t0, t1,
        aux_spacing, solver, margin)
    if not valid[0]:
        raise DomainEscape("an auxiliary trajectory escaped the domain")
    return jac[0]


def resolve_aux_spacing(system: DynamicalSystem, aux_spacing: float | None,
                        reference_extent: float | None = None) -> float:
    """Default auxiliary spacing: 1e-4 x the smallest finite extent available."""
    if aux_spacing is not None:
        if aux_spacing <= 0:
            raise InvalidInput("aux_spacing must be positive")
        return float(aux_spacing)
    if reference_extent is not None and np.isfinite(reference_extent):
        return 1e-4 * float(reference_extent)
    if system.domain is not None and np.isfinite(system.domain.min_extent()):
        return 1e-4 * system.domain.min_extent()
    return 1e-4


def advect_blob(system: DynamicalSystem, center, radius: float, n_pts: int,
                t0: float, t1: float, solver: SolverConfig | None = None) -> FloatArray:
    """Advect a circle of tracers; returns the ordered advected points."""
    if n_pts < 3:
        raise InvalidInput("n_pts must be at least 3")
    if radius <= 0:
        raise InvalidInput("radius must be positive")
    cx, cy = float(center[0]), float(center[1])
    ang = np.linspace(0.0, 2.0 * np.pi, n_pts, endpoint=False)
    circle = np.column_stack([cx + radius * np.cos(ang), cy + radius * np.sin(ang)])
    res = flow_map_batch(system, circle, t0, t1, solver)
    if not res.all_valid:
        raise DomainEscape(escape_time=float(np.nanmin(res.escape_time)))
    return res.positions


# ---------------------------------------------------------------------------
# Built-in systems


def canonical_shear() -> ContinuousSystem:
    """Steady parallel shear flow u = 1 - y^2, v = 0."""

    def vel(t: float, pts: FloatArray) -> FloatArray:
        out = np.zeros_like(pts)
        out[:, 0] = 1.0 - pts[:, 1] ** 2
        return out

    return ContinuousSystem("canonical-shear", vel)


def ftle_counterexample() -> ContinuousSystem:
    """Steady incompressible flow whose FTLE trench on y=0 is attracting.

    xdot = x (1 + 3 y^2), ydot = -y - y^3; the line y = 0 is invariant and
    attracting, with flow-map gradient diag(e^T, e^-T) on it.
    """

    def vel(t: float, pts: FloatArray) -> FloatArray:
        x, y = pts[:, 0], pts[:, 1]
        return np.column_stack([x * (1.0 + 3.0 * y * y), -y - y ** 3])

    return ContinuousSystem("ftle-counterexample", vel)


def sntm_step(x, y, a: float, b, theta=0.0):
    """One application of the (possibly driven) standard non-twist map.

    The y update uses the updated value in the x update; with theta = 0 and
    constant b this is the autonomous map. Shared by the autonomous,
    externally driven, and particle-coupled variants so that a driving
    sequence that is identically (b, 0) reproduces the autonomous arithmetic
    bit for bit.
    """
    y1 = y - b * np.sin(2.0 * np.pi * x - theta)
    x1 = x + a * (1.0 - y1 * y1)
    return x1, y1


def sntm(a: float, b: float) -> DiscreteSystem:
    """Standard non-twist map on the cylinder (x period 1)."""

    def step(pts: FloatArray, n: int) -> FloatArray:
        x1, y1 = sntm_step(pts[:, 0], pts[:, 1], a, b)
        return np.column_stack([x1, y1])

    return DiscreteSystem(f"sntm(a={a:g},b={b:g})", step, period_x=1.0)


INDICATOR_Y = 0.0


def indicator_points(a: float) -> FloatArray:
    """The two seeds x = a/2 +- 1/4, y = 0 of the exact shearless curve.

    The pair is exchanged by the map's symmetry (x, y) -> (x + 1/2, -y), so
    both seeds lie on the same symmetric invariant curve; their iterates
    sample the asymptotic shearless barrier.
    """
    return np.array([[a / 2.0 + 0.25, INDICATOR_Y], [a / 2.0 - 0.25, INDICATOR_Y]])


# ---------------------------------------------------------------------------
# Sampled signals and the Bickley jet


@dataclass
class SampledSignal:
    """A scalar time series with linear interpolation between samples."""

    times: FloatArray
    values: FloatArray
    name: str = "signal"

    def __post_init__(self):
        self.times = np.asarray(self.times, dtype=np.float64)
        self.values = np.asarray(self.values, dtype=np.float64)
        if self.times.ndim != 1 or self.times.shape != self.values.shape:
            raise FormatError("signal needs matching 1-d time and value arrays")
        if len(self.times) < 1:
            raise FormatError("signal needs at least one sample")
        if np.any(np.diff(self.times) <= 0):
            raise FormatError("signal times must be strictly increasing")
        if not (np.all(np.isfinite(self.times)) and np.all(np.isfinite(self.values))):
            raise FormatError("signal contains non-finite entries")

    @property
    def support(self) -> tuple[float, float]:
        return float(self.times[0]), float(self.times[-1])

    def __call__(self, t: float) -> float:
        lo, hi = self.support
        slack = 1e-9 * max(1.0, hi - lo)
        if t < lo - slack or t > hi + slack:
            raise SignalOutOfRange(
                f"signal '{self.name}' queried at t={t:g}, support [{lo:g}, {hi:g}]")
        return float(np.interp(t, self.times, self.values))


def lorenz_signal(seed: int, t0: float, t1: float, low: float, high: float,
                  n_samples: int = 2048, name: str = "lorenz") -> SampledSignal:
    """Deterministic chaotic signal: rescaled x-observable of the Lorenz-63 system.

    Given the same seed and arguments the returned samples are bit-identical,
    so runs driven by a generated signal are reproducible.
    """
    if t1 <= t0:
        raise InvalidInput("need t1 > t0 for signal support")
    if n_samples < 2:
        raise InvalidInput("n_samples must be at least 2")
    rng = np.random.default_rng(seed)
    state = np.array([1.0, 1.0, 20.0]) + rng.normal(0.0, 1.0, 3)
    sigma, rho, beta = 10.0, 28.0, 8.0 / 3.0

    def rhs(s):
        x, y, z = s
        return np.array([sigma * (y - x), x * (rho - z) - y, x * y - beta * z])

    def rk4(s, h, n):
        for _ in range(n):
            k1 = rhs(s)
            k2 = rhs(s + 0.5 * h * k1)
            k3 = rhs(s + 0.5 * h * k2)
            k4 = rhs(s + h * k3)
            s = s + (h / 6.0) * (k1 + 2 * k2 + 2 * k3 + k4)
        return s

    h = 0.004
    state = rk4(state, h, 5000)  # discard transient onto the attractor
    window = 40.0  # chaotic-time span mapped onto [t0, t1]
    sub = max(1, int(round(window / (n_samples - 1) / h)))
    raw = np.empty(n_samples)
    raw[0] = state[0]
    for i in range(1, n_samples):
        state = rk4(state, h, sub)
        raw[i] = state[0]
    lo, hi = float(np.min(raw)), float(np.max(raw))
    if hi - lo < 1e-12:
        raise NumericalBlowup("degenerate chaotic signal (constant observable)")
    scaled = low + (high - low) * (raw - lo) / (hi - lo)
    times = np.linspace(t0, t1, n_samples)
    return SampledSignal(times, scaled, name=name)


_BICKLEY_U = 62.66        # m/s
_BICKLEY_L = 1.77e6       # m
_BICKLEY_R0 = 6.371e6     # m, mean Earth radius
# Rossby-wave phase speeds are not fixed by the model itself; these are the
# conventional literature values, expressed as fractions of U.
_BICKLEY_C_FRACTIONS = (0.1446, 0.205, 0.461)


@dataclass
class BickleyConfig:
    """Parameters of the Bickley jet (SI units: meters, seconds).

    ``eps`` are the three wave amplitudes; ``c`` the phase speeds (default:
    the standard literature values, not part of the model definition).
    For chaotically forced runs, ``eps1_signal``/``eps2_signal`` replace the
    first two amplitudes with sampled time signals; ``eps[2]`` stays fixed.
    """

    U: float = _BICKLEY_U
    L: float = _BICKLEY_L
    r0: float = _BICKLEY_R0
    eps: tuple[float, float, float] = (0.075, 0.4, 0.3)
    c: tuple[float, float, float] | None = None
    eps1_signal: SampledSignal | None = None
    eps2_signal: SampledSignal | None = None

    def __post_init__(self):
        if self.U <= 0 or self.L <= 0 or self.r0 <= 0:
            raise InvalidInput("U, L, r0 must be positive")
        if self.c is None:
            self.c = tuple(f * self.U for f in _BICKLEY_C_FRACTIONS)
        if len(self.eps) != 3 or len(self.c) != 3:
            raise InvalidInput("eps and c must have three entries")
        if (self.eps1_signal is None) != (self.eps2_signal is None):
            raise InvalidInput("chaotic forcing needs both eps1 and eps2 signals")

    @property
    def k(self) -> FloatArray:
        return np.array([2.0 * n / self.r0 for n in (1, 2, 3)])

    @property
    def period_x(self) -> float:
        return math.pi * self.r0

    @property
    def chaotic(self) -> bool:
        return self.eps1_signal is not None

    def amplitudes(self, t: float) -> FloatArray:
        if self.chaotic:
            return np.array([self.eps1_signal(t), self.eps2_signal(t), self.eps[2]])
        return np.asarray(self.eps, dtype=np.float64)


def bickley_velocity(cfg: BickleyConfig, x, y, t: float):
    """Analytic Bickley-jet velocity (u, v) at positions (x, y), time t."""
    x = np.asarray(x, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    eps = cfg.amplitudes(t)
    k = cfg.k
    sech2 = 1.0 / np.cosh(y / cfg.L) ** 2
    th = np.tanh(y / cfg.L)
    cos_sum = 0.0
    sin_sum = 0.0
    for n in range(3):
        phase = k[n] * (x - cfg.c[n] * t)
        cos_sum = cos_sum + eps[n] * np.cos(phase)
        sin_sum = sin_sum + eps[n] * k[n] * np.sin(phase)
    u = cfg.U * sech2 * (1.0 + 2.0 * th * cos_sum)
    v = -cfg.U * cfg.L * sech2 * sin_sum
    return u, v


def bickley_jet(cfg: BickleyConfig | None = None) -> ContinuousSystem:
    cfg = cfg or BickleyConfig()

    def vel(t: float, pts: FloatArray) -> FloatArray:
        u, v = bickley_velocity(cfg, pts[:, 0], pts[:, 1], t)
        return np.column_stack([u, v])

    name = "bickley-chaotic" if cfg.chaotic else "bickley-quasiperiodic"
    sys = ContinuousSystem(name, vel, period_x=cfg.period_x)
    sys.config = cfg
    return sys


# ---------------------------------------------------------------------------
# Gridded velocity data


@dataclass
class SampledVelocity:
    """Uniformly gridded velocity samples at a set of times.

    ``u``/``v`` have shape (n_times, ny, nx), row-major with x varying along
    the last axis.
    """

    origin: tuple[float, float]
    spacing: tuple[float, float]
    nx: int
    ny: int
    times: FloatArray
    u: FloatArray
    v: FloatArray
    periodic_x: bool = False

    def __post_init__(self):
        self.times = np.asarray(self.times, dtype=np.float64)
        self.u = np.asarray(self.u, dtype=np.float64)
        self.v = np.asarray(self.v, dtype=np.float64)
        shape = (len(self.times), self.ny, self.nx)
        if self.u.shape != shape or self.v.shape != shape:
            raise FormatError(
                f"velocity arrays must have shape {shape}, got u{self.u.shape} v{self.v.shape}")
        if len(self.times) < 1 or np.any(np.diff(self.times) <= 0):
            raise FormatError("time stamps must be nonempty and strictly increasing")
        if self.nx < 2 or self.ny < 2:
            raise FormatError("grid needs at least 2x2 nodes")
        if self.spacing[0] <= 0 or self.spacing[1] <= 0:
            raise FormatError("grid spacing must be positive")

    @property
    def hull(self) -> Rect:
        return Rect(self.origin[0], self.origin[0] + (self.nx - 1) * self.spacing[0],
                    self.origin[1], self.origin[1] + (self.ny - 1) * self.spacing[1])

    @property
    def period(self) -> float:
        return self.nx * self.spacing[0]  # period assumes last column precedes the seam


def _bilinear_uv(sv: SampledVelocity, it: int, x: FloatArray, y: FloatArray):
    dx, dy = sv.spacing
    gx = (x - sv.origin[0]) / dx
    gy = (y - sv.origin[1]) / dy
    if sv.periodic_x:
        gx = gx % sv.nx
        i0 = np.floor(gx).astype(int)
        i1 = (i0 + 1) % sv.nx
    else:
        gx = np.clip(gx, 0.0, sv.nx - 1.0)
        i0 = np.minimum(np.floor(gx).astype(int), sv.nx - 2)
        i1 = i0 + 1
    gy = np.clip(gy, 0.0, sv.ny - 1.0)
    j0 = np.minimum(np.floor(gy).astype(int), sv.ny - 2)
    j1 = j0 + 1
    tx = gx - i0
    ty = gy - j0
    out = []
    for chan in (sv.u[it], sv.v[it]):
        c00 = chan[j0, i0]
        c10 = chan[j0, i1]
        c01 = chan[j1, i0]
        c11 = chan[j1, i1]
        out.append((1 - tx) * (1 - ty) * c00 + tx * (1 - ty) * c10
                   + (1 - tx) * ty * c01 + tx * ty * c11)
    return out[0], out[1]


def sampled_velocity_system(data: SampledVelocity, name: str = "sampled") -> ContinuousSystem:
    """Wrap gridded samples as a continuous system.

    Bilinear in space, linear in time; a single time sample is treated as a
    steady field. Queries are clamped to the spatial hull for evaluation, but
    trajectories that actually leave the hull are flagged as escaped by the
    flow-map bounds check. Time queries outside the sampled support escape.
    """
    times = data.times
    t_lo, t_hi = float(times[0]), float(times[-1])
    t_slack = 1e-9 * max(1.0, t_hi - t_lo)

    def vel(t: float, pts: FloatArray) -> FloatArray:
        x, y = pts[:, 0], pts[:, 1]
        if len(times) == 1:
            u, v = _bilinear_uv(data, 0, x, y)
            return np.column_stack([u, v])
        if t < t_lo - t_slack or t > t_hi + t_slack:
            raise DomainEscape(
                f"velocity data queried at t={t:g}, sampled support [{t_lo:g}, {t_hi:g}]",
                escape_time=t)
        it = int(np.clip(np.searchsorted(times, t, side="right") - 1, 0, len(times) - 2))
        w = (t - times[it]) / (times[it + 1] - times[it])
        u0, v0 = _bilinear_uv(data, it, x, y)
        u1, v1 = _bilinear_uv(data, it + 1, x, y)
        return np.column_stack([(1 - w) * u0 + w * u1, (1 - w) * v0 + w * v1])

    hull = data.hull
    period = data.period if data.periodic_x else None
    return ContinuousSystem(name, vel, domain=hull, period_x=period)
