"""Central-difference (leapfrog) integration of ``M w'' = K w``.

``K`` is the negative definite stiffness matrix, so the recurrence is

    w_{n+1} = 2 w_n - w_{n-1} + dt**2 M^{-1} K w_n,

started from ``w_0 = g(x_i)`` and
``w_1 = w_0 + dt h(x_i) + dt**2 / 2 M^{-1} K w_0``.  ``M^{-1}`` is applied
through a tridiagonal solve, never formed.
"""

from __future__ import annotations

import csv
import io
import logging
import math
from dataclasses import dataclass, replace
from typing import Callable, Sequence

import numpy as np

from .fem import PiecewiseLinear, TriDiag, mass_matrix, stiffness_matrix
from .measure import MeasureSpec
from .mesh import LevelMesh, build_mesh

__all__ = [
    "InitialData",
    "WaveState",
    "UnstableStepError",
    "initial_state",
    "step",
    "advance",
    "simulate",
    "max_stable_dt",
    "discrete_energy",
    "snapshots_to_csv",
    "STABILITY_FACTOR",
]

log = logging.getLogger(__name__)

STABILITY_FACTOR = 0.9


class UnstableStepError(ValueError):
    pass


@dataclass(frozen=True)
class InitialData:
    """Initial displacement ``g`` and velocity ``h``; both vanish at a and b."""

    g: Callable
    h: Callable | None = None

    def check(self, a: float, b: float, tol: float = 1e-12) -> None:
        for label, f in (("g", self.g), ("h", self.h)):
            if f is None:
                continue
            ends = (float(f(a)), float(f(b)))
            if max(abs(ends[0]), abs(ends[1])) > tol:
                raise ValueError(f"initial data {label} must vanish at the boundary, got {ends}")

    def velocity(self, x: np.ndarray) -> np.ndarray:
        if self.h is None:
            return np.zeros_like(x)
        return np.asarray(self.h(x), dtype=float) * np.ones_like(x)


@dataclass(frozen=True, eq=False)
class WaveState:
    """Two consecutive interior coefficient vectors of the leapfrog scheme."""

    prev: np.ndarray
    curr: np.ndarray
    step_index: int
    dt: float

    def __post_init__(self):
        if self.prev.shape != self.curr.shape:
            raise ValueError("prev and curr must have the same length")
        if not self.dt > 0:
            raise ValueError("time step must be positive")

    @property
    def time(self) -> float:
        return self.step_index * self.dt

    def reversed(self) -> "WaveState":
        """Swap the pair so that stepping runs backwards in time."""
        return replace(self, prev=self.curr, curr=self.prev)


def max_stable_dt(M: TriDiag, K: TriDiag, tol: float = 1e-6, maxiter: int = 10_000) -> float:
    """Leapfrog stability limit ``2 / sqrt(lambda_max)`` for ``-K x = lambda M x``.

    ``lambda_max`` is the Rayleigh quotient of power iteration on
    ``M^{-1}(-K)``, stopped once successive quotients agree to ``tol``
    relative.  The start vector ``(-1)**i sin(pi i / (n + 1))`` is the exact
    top eigenvector of any symmetric Toeplitz pencil, which removes the slow
    clustered-spectrum convergence on uniform meshes.
    """
    n = M.n
    if n == 0:
        raise ValueError("no interior nodes")
    L = K.scaled(-1.0)
    i = np.arange(1, n + 1)
    x = np.where(i % 2 == 1, 1.0, -1.0) * np.sin(np.pi * i / (n + 1))
    x /= math.sqrt(x @ M.matvec(x))
    lam = 0.0
    for _ in range(maxiter):
        Lx = L.matvec(x)
        new = float(x @ Lx)  # x is M-normalised
        if abs(new - lam) <= tol * new:
            return 2.0 / math.sqrt(new)
        lam = new
        y = M.solve(Lx)
        x = y / math.sqrt(float(y @ M.matvec(y)))
    raise RuntimeError(f"power iteration did not converge in {maxiter} iterations (lambda ~ {lam:.6g})")


def _accel(M: TriDiag, K: TriDiag, w: np.ndarray) -> np.ndarray:
    return M.solve(K.matvec(w))


def initial_state(
    spec: MeasureSpec,
    mesh: LevelMesh,
    M: TriDiag,
    K: TriDiag,
    data: InitialData,
    dt: float,
    force: bool = False,
    dt_limit: float | None = None,
) -> WaveState:
    """Startup pair ``(w_0, w_1)``.

    Unless ``force`` is set, ``dt`` must not exceed ``0.9 * max_stable_dt``
    (``dt_limit`` may pass a precomputed limit).
    """
    if not dt > 0:
        raise ValueError("time step must be positive")
    data.check(*spec.support)
    _gate(M, K, dt, force, dt_limit)
    x = np.asarray(mesh.nodes[1:-1])
    w0 = np.asarray(data.g(x), dtype=float) * np.ones_like(x)
    v0 = data.velocity(x)
    w1 = w0 + dt * v0 + 0.5 * dt * dt * _accel(M, K, w0)
    return WaveState(w0, w1, 1, dt)


def _gate(M: TriDiag, K: TriDiag, dt: float, force: bool, dt_limit: float | None) -> None:
    limit = max_stable_dt(M, K) if dt_limit is None else dt_limit
    if dt > STABILITY_FACTOR * limit:
        msg = (
            f"dt = {dt:g} exceeds {STABILITY_FACTOR} x the leapfrog stability limit "
            f"{limit:.6g}; choose dt <= {STABILITY_FACTOR * limit:.6g} or force the run"
        )
        if not force:
            raise UnstableStepError(msg)
        log.warning(msg)


def step(state: WaveState, M: TriDiag, K: TriDiag) -> WaveState:
    dt = state.dt
    nxt = 2.0 * state.curr - state.prev + dt * dt * _accel(M, K, state.curr)
    return WaveState(state.curr, nxt, state.step_index + 1, dt)


def advance(state: WaveState, M: TriDiag, K: TriDiag, nsteps: int) -> WaveState:
    """Apply ``step`` ``nsteps`` times without building intermediate states."""
    prev, curr = state.prev, state.curr
    dt2 = state.dt * state.dt
    for _ in range(nsteps):
        prev, curr = curr, 2.0 * curr - prev + dt2 * M.solve(K.matvec(curr))
    return WaveState(prev, curr, state.step_index + nsteps, state.dt)


def discrete_energy(state: WaveState, M: TriDiag, K: TriDiag) -> float:
    """``1/2 v^T M v + 1/2 w_n^T (-K) w_{n+1}`` with ``v = (w_{n+1} - w_n)/dt``.

    ``(w_n, w_{n+1})`` is the stored pair ``(prev, curr)``; the quantity is
    invariant under ``step`` in exact arithmetic.
    """
    v = (state.curr - state.prev) / state.dt
    return 0.5 * float(v @ M.matvec(v)) - 0.5 * float(state.prev @ K.matvec(state.curr))


def _snap(t: float, dt: float) -> int:
    n = int(round(t / dt))
    return max(n, 0)


def simulate(
    spec: MeasureSpec,
    m: int,
    data: InitialData,
    dt: float,
    t_end: float,
    sample_times: Sequence[float],
    force: bool = False,
    mesh: LevelMesh | None = None,
) -> list[tuple[float, PiecewiseLinear]]:
    """Run the scheme on the level-m mesh and return snapshots.

    Each sample time is snapped to the nearest multiple of ``dt``; the
    reported time is the requested one when the snap is exact up to
    rounding, otherwise the snapped ``n * dt``.  Snapshots include the
    (zero) boundary values.
    """
    if not dt > 0:
        raise ValueError("time step must be positive")
    times = [float(t) for t in sample_times]
    if any(t < 0 or t > t_end * (1 + 1e-12) for t in times):
        raise ValueError(f"sample times must lie in [0, {t_end}]")
    mesh = build_mesh(spec, m) if mesh is None else mesh
    M = mass_matrix(spec, mesh)
    K = stiffness_matrix(mesh)
    state = initial_state(spec, mesh, M, K, data, dt, force=force)

    wanted = sorted({_snap(t, dt) for t in times})
    frames: dict[int, np.ndarray] = {}
    if 0 in wanted:
        frames[0] = state.prev
    for n in wanted:
        if n == 0:
            continue
        if n > state.step_index:
            state = advance(state, M, K, n - state.step_index)
        frames[n] = state.curr

    out = []
    for t in times:
        n = _snap(t, dt)
        t_rep = t if abs(n * dt - t) <= 1e-9 * dt else n * dt
        out.append((t_rep, PiecewiseLinear.from_interior(mesh, frames[n])))
    return out


def snapshots_to_csv(snapshots: Sequence[tuple[float, PiecewiseLinear]]) -> str:
    """Long-format ``t,x,u`` table; values written in round-trip precision."""
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(["t", "x", "u"])
    for t, f in snapshots:
        for x, u in zip(f.mesh.nodes, f.coeffs):
            writer.writerow([repr(float(t)), repr(float(x)), repr(float(u))])
    return buf.getvalue()

