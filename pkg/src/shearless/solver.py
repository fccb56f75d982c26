"""Vectorized time integration for batches of planar trajectories.

All integrators advance an (N, 2) array of positions at once; the right-hand
side is evaluated on whole batches so grid-sized advections stay in numpy.
The adaptive scheme shares one step size across the batch (controlled by the
worst per-point error), which keeps results independent of batch splitting
order and fully deterministic.
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, Sequence

import numpy as np

from .errors import BudgetExceeded, InvalidInput, NumericalBlowup
from .geometry import FloatArray

Rhs = Callable[[float, FloatArray], FloatArray]
BoundsCheck = Callable[[FloatArray], np.ndarray]


@dataclass
class SolverConfig:
    """Settings for continuous-time integration.

    ``dopri5`` is an adaptive embedded Runge-Kutta 5(4) pair; ``rk4`` takes
    fixed steps of size ``rk4_step`` (useful when bitwise determinism across
    runs with different spans matters more than adaptivity).
    """

    method: str = "dopri5"
    rtol: float = 1e-8
    atol: float = 1e-8
    rk4_step: float | None = None
    max_steps: int = 1_000_000

    def __post_init__(self):
        if self.method not in ("dopri5", "rk4"):
            raise InvalidInput(f"unknown integration method '{self.method}'")
        if self.rtol <= 0 or self.atol <= 0:
            raise InvalidInput("tolerances must be positive")


@dataclass
class BatchResult:
    """Endpoint state of a batch integration.

    ``valid[i]`` is False when trajectory ``i`` left bounds or went
    non-finite; such points are frozen at the state where that happened and
    ``escape_time[i]`` records when.
    """

    positions: FloatArray
    valid: np.ndarray
    escape_time: FloatArray

    @property
    def all_valid(self) -> bool:
        return bool(np.all(self.valid))


# Dormand-Prince 5(4) coefficients.
_DP_C = np.array([0.0, 1 / 5, 3 / 10, 4 / 5, 8 / 9, 1.0, 1.0])
_DP_A = [
    np.array([]),
    np.array([1 / 5]),
    np.array([3 / 40, 9 / 40]),
    np.array([44 / 45, -56 / 15, 32 / 9]),
    np.array([19372 / 6561, -25360 / 2187, 64448 / 6561, -212 / 729]),
    np.array([9017 / 3168, -355 / 33, 46732 / 5247, 49 / 176, -5103 / 18656]),
    np.array([35 / 384, 0.0, 500 / 1113, 125 / 192, -2187 / 6784, 11 / 84]),
]
_DP_B5 = np.array([35 / 384, 0.0, 500 / 1113, 125 / 192, -2187 / 6784, 11 / 84, 0.0])
_DP_B4 = np.array([5179 / 57600, 0.0, 7571 / 16695, 393 / 640, -92097 / 339200, 187 / 2100, 1 / 40])
_DP_ERR = _DP_B5 - _DP_B4


def _as_batch(x0) -> FloatArray:
    pts = np.array(x0, dtype=np.float64)
    if pts.ndim != 2 or pts.shape[1] != 2:
        raise InvalidInput(f"expected (N, 2) positions, got shape {pts.shape}")
    return pts


def _apply_bounds(x: FloatArray, t: float, active: np.ndarray, frozen: FloatArray,
                  escape_time: FloatArray, valid: np.ndarray,
                  in_bounds: BoundsCheck | None) -> None:
    """Freeze newly escaped or non-finite trajectories in place."""
    bad = ~np.all(np.isfinite(x), axis=1)
    if in_bounds is not None:
        with np.errstate(invalid="ignore"):
            bad |= ~np.asarray(in_bounds(np.where(np.isfinite(x), x, 0.0)), dtype=bool)
    newly = active & bad
    if np.any(newly):
        frozen[newly] = x[newly]
        escape_time[newly] = t
        valid[newly] = False
        active[newly] = False


def _rk4(rhs: Rhs, x0: FloatArray, t0: float, t1: float, cfg: SolverConfig,
         in_bounds: BoundsCheck | None) -> BatchResult:
    span = t1 - t0
    step = cfg.rk4_step if cfg.rk4_step is not None else abs(span) / 200.0
    if step <= 0:
        raise InvalidInput("rk4_step must be positive")
    n = max(1, int(np.ceil(abs(span) / step - 1e-12)))
    if n > cfg.max_steps:
        raise BudgetExceeded(f"rk4 would need {n} steps (max_steps = {cfg.max_steps})")
    h = span / n
    x = x0.copy()
    n_pts = len(x)
    active = np.ones(n_pts, dtype=bool)
    valid = np.ones(n_pts, dtype=bool)
    escape_time = np.full(n_pts, np.nan)
    frozen = x.copy()
    _apply_bounds(x, t0, active, frozen, escape_time, valid, in_bounds)
    for i in range(n):
        if not np.any(active):
            break
        t = t0 + i * h
        k1 = rhs(t, x)
        k2 = rhs(t + 0.5 * h, x + 0.5 * h * k1)
        k3 = rhs(t + 0.5 * h, x + 0.5 * h * k2)
        k4 = rhs(t + h, x + h * k3)
        x_new = x + (h / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4)
        x = np.where(active[:, None], x_new, x)
        _apply_bounds(x, t + h, active, frozen, escape_time, valid, in_bounds)
    x[~valid] = frozen[~valid]
    return BatchResult(x, valid, escape_time)


def _dopri5(rhs: Rhs, x0: FloatArray, t0: float, t1: float, cfg: SolverConfig,
            in_bounds: BoundsCheck | None) -> BatchResult:
    span = t1 - t0
    direction = 1.0 if span >= 0 else -1.0
    x = x0.copy()
    n_pts = len(x)
    active = np.ones(n_pts, dtype=bool)
    valid = np.ones(n_pts, dtype=bool)
    escape_time = np.full(n_pts, np.nan)
    frozen = x.copy()
    _apply_bounds(x, t0, active, frozen, escape_time, valid, in_bounds)

    t = t0
    h = span / 100.0 if span != 0.0 else 0.0
    h_min = abs(span) * 1e-14
    k = np.empty((7, n_pts, 2))
    done = False
    for _ in range(cfg.max_steps):
        if done or not np.any(active):
            break
        last = abs(h) >= abs(t1 - t)
        if last:
            h = t1 - t
        k[0] = rhs(t, x)
        for s in range(1, 7):
            xs = x + h * np.tensordot(_DP_A[s], k[:s], axes=(0, 0))
            k[s] = rhs(t + _DP_C[s] * h, xs)
        x5 = x + h * np.tensordot(_DP_B5, k, axes=(0, 0))
        err = h * np.tensordot(_DP_ERR, k, axes=(0, 0))
        scale = cfg.atol + cfg.rtol * np.maximum(np.abs(x), np.abs(x5))
        with np.errstate(invalid="ignore", divide="ignore"):
            ratios = np.where(scale > 0, err / scale, 0.0)
            per_point = np.sqrt(np.mean(ratios * ratios, axis=1))
        per_point = np.where(active, per_point, 0.0)
        if not np.all(np.isfinite(per_point)):
            # Non-finite error estimate: freeze the offending trajectories.
            blown = active & ~np.isfinite(per_point)
            frozen[blown] = x[blown]
            escape_time[blown] = t
            valid[blown] = False
            active[blown] = False
            continue
        err_norm = float(np.max(per_point)) if np.any(active) else 0.0
        if err_norm <= 1.0:
            x = np.where(active[:, None], x5, x)
            t = t1 if last else t + h
            done = last
            _apply_bounds(x, t, active, frozen, escape_time, valid, in_bounds)
        factor = 0.9 * err_norm ** -0.2 if err_norm > 0 else 5.0
        h = h * min(5.0, max(0.2, factor))
        if abs(h) < h_min:
            raise NumericalBlowup("adaptive step size collapsed")
    else:
        raise BudgetExceeded(f"dopri5 exceeded max_steps = {cfg.max_steps}")
    x[~valid] = frozen[~valid]
    return BatchResult(x, valid, escape_time)


def integrate_batch(rhs: Rhs, x0, t0: float, t1: float,
                    config: SolverConfig | None = None, *,
                    in_bounds: BoundsCheck | None = None) -> BatchResult:
    """Advance positions ``x0`` from ``t0`` to ``t1`` under ``rhs``.

    ``in_bounds(points) -> bool mask`` is checked after every accepted step;
    failing trajectories are frozen where they escaped rather than aborting
    the whole batch.
    """
    cfg = config or SolverConfig()
    pts = _as_batch(x0)
    if t0 == t1 or len(pts) == 0:
        n = len(pts)
        res = BatchResult(pts.copy(), np.ones(n, dtype=bool), np.full(n, np.nan))
        _apply_bounds(res.positions, t0, res.valid.copy(), res.positions,
                      res.escape_time, res.valid, in_bounds)
        return res
    if cfg.method == "rk4":
        return _rk4(rhs, pts, t0, t1, cfg, in_bounds)
    return _dopri5(rhs, pts, t0, t1, cfg, in_bounds)


def integrate_path(rhs: Rhs, x0, times: Sequence[float],
                   config: SolverConfig | None = None, *,
                   in_bounds: BoundsCheck | None = None) -> FloatArray:
    """Sample trajectories at the given times; returns (len(times), N, 2).

    Escaped trajectories hold their last in-bounds state for the remaining
    sample times.
    """
    pts = _as_batch(x0)
    times = list(times)
    if len(times) < 1:
        raise InvalidInput("need at least one sample time")
    out = np.empty((len(times), len(pts), 2))
    current = pts
    t_prev = times[0]
    out[0] = current
    for i, t in enumerate(times[1:], start=1):
        res = integrate_batch(rhs, current, t_prev, t, config, in_bounds=in_bounds)
        current = res.positions
        out[i] = current
        t_prev = t
    return out
