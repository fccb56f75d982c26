"""Self-consistently driven non-twist map: active particles feed a mean field
back into the map's forcing amplitude b and phase theta.

Per step n, with particle positions (x, y), amplitude b_n and phase theta_n:

    eta_n        = sum_i gamma_i sin(x_i - theta_n)
    d eta_n / d theta = -sum_i gamma_i cos(x_i - theta_n)
    b_{n+1}      = sqrt(b_n^2 + eta_n^2) + eta_n        (>= 0 always)
    y_{n+1}      = y_n - b_{n+1} sin(2 pi x_n - theta_n)
    x_{n+1}      = x_n + a (1 - y_{n+1}^2)
    theta_{n+1}  = theta_n + (d eta_n / d theta) / b_{n+1}

The sum runs over the N active particles. When every coupling constant is
zero the (b, theta) update is skipped entirely, so the particle update goes
through the exact same floating-point path as the autonomous map and the
emitted drive reproduces autonomous trajectories bit for bit.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import BudgetExceeded, InvalidInput, NumericalBlowup
from .geometry import FloatArray
from .systems import DiscreteSystem, sntm_step


@dataclass
class MeanFieldState:
    """Active-particle ensemble plus the forcing pair (b, theta)."""

    positions: FloatArray   # (N, 2)
    b: float
    theta: float
    gammas: FloatArray      # (N,)
    a: float

    def __post_init__(self):
        self.positions = np.asarray(self.positions, dtype=np.float64)
        self.gammas = np.asarray(self.gammas, dtype=np.float64)
        if self.positions.ndim != 2 or self.positions.shape[1] != 2:
            raise InvalidInput("positions must have shape (N, 2)")
        if self.gammas.shape != (len(self.positions),):
            raise InvalidInput("need one coupling constant per particle")
        if self.b < 0:
            raise InvalidInput("b must be nonnegative")


def mean_field_evolve(state: MeanFieldState, n_steps: int) -> tuple[MeanFieldState, FloatArray]:
    """Advance the coupled system; returns (final state, drive).

    ``drive`` has shape (n_steps + 1, 2) holding (b_n, theta_n) for
    n = 0..n_steps; it fully determines the passive map via
    :func:`passive_sntm`.
    """
    if n_steps < 0:
        raise InvalidInput("n_steps must be nonnegative")
    x = state.positions[:, 0].copy()
    y = state.positions[:, 1].copy()
    gam = state.gammas
    a = state.a
    b = float(state.b)
    theta = float(state.theta)
    drive = np.empty((n_steps + 1, 2))
    drive[0] = (b, theta)
    for n in range(n_steps):
        eta = float(np.sum(gam * np.sin(x - theta)))
        deta = float(-np.sum(gam * np.cos(x - theta)))
        if eta == 0.0 and deta == 0.0:
            b_next, theta_next = b, theta
        else:
            b_next = np.sqrt(b * b + eta * eta) + eta
            theta_next = theta + deta / b_next
            if not (np.isfinite(b_next) and np.isfinite(theta_next)):
                raise NumericalBlowup(f"mean-field drive became non-finite at step {n + 1}")
        x, y = sntm_step(x, y, a, b_next, theta)
        b, theta = b_next, theta_next
        drive[n + 1] = (b, theta)
    final = MeanFieldState(np.column_stack([x, y]), b, theta, gam, a)
    return final, drive


def passive_sntm(a: float, drive: FloatArray) -> DiscreteSystem:
    """Non-autonomous SNTM driven by an emitted (b_n, theta_n) sequence.

    Step n applies b_{n+1} and theta_n, matching the coupled update; a drive
    of length m + 1 therefore supports m map applications.
    """
    drive = np.asarray(drive, dtype=np.float64)
    if drive.ndim != 2 or drive.shape[1] != 2 or len(drive) < 1:
        raise InvalidInput("drive must have shape (n_steps + 1, 2)")

    def step(pts: FloatArray, n: int) -> FloatArray:
        if n + 1 >= len(drive) or n < 0:
            raise BudgetExceeded(
                f"drive supports steps 0..{len(drive) - 2}, requested step {n}")
        x1, y1 = sntm_step(pts[:, 0], pts[:, 1], a, drive[n + 1, 0], drive[n, 1])
        return np.column_stack([x1, y1])

    return DiscreteSystem(f"sntm-driven(a={a:g})", step, period_x=1.0)


def place_active_particles(n: int, seed: int,
                           centers=((0.0, 1.0), (-0.5, -1.0)),
                           radius: float = 0.15) -> FloatArray:
    """Seed n particles uniformly over discs around the given centers.

    The reference experiment's exact particle layout is not reproducible;
    any localized cloud near the island chains qualifies, so this places
    deterministic (seeded) discs there.
    """
    if n < 1:
        raise InvalidInput("need at least one particle")
    rng = np.random.default_rng(seed)
    counts = [n // len(centers)] * len(centers)
    counts[0] += n - sum(counts)
    chunks = []
    for (cx, cy), m in zip(centers, counts):
        r = radius * np.sqrt(rng.random(m))
        phi = 2.0 * np.pi * rng.random(m)
        chunks.append(np.column_stack([cx + r * np.cos(phi), cy + r * np.sin(phi)]))
    return np.vstack(chunks)
