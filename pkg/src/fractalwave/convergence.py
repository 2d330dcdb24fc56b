"""Level-refinement studies of the spatial convergence rate.

The exact weak solution is unknown for fractal measures, so each level-m
solution is compared with a much finer reference level at a common time.
Coarse meshes are nested in the reference mesh, so the coarse snapshot is
represented exactly on the reference nodes and the difference is measured
with the reference mass matrix.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .dynamics import STABILITY_FACTOR, InitialData, UnstableStepError, max_stable_dt, simulate
from .fem import PiecewiseLinear, evaluate, full_mass_matrix, l2mu_norm, mass_matrix, stiffness_matrix
from .measure import MeasureSpec
from .mesh import build_mesh

__all__ = ["ConvergenceReport", "refine_study", "fit_rate"]


def fit_rate(levels: Sequence[int], errors: Sequence[float]) -> tuple[float, float]:
    """Least-squares fit ``log e_m ~ log(constant) + slope * m``.

    Zero errors are dropped; at least three positive errors are required.
    """
    lv = np.asarray(levels, dtype=float)
    err = np.asarray(errors, dtype=float)
    keep = err > 0
    if keep.sum() < 3:
        raise ValueError(f"need at least 3 positive errors to fit a rate, got {int(keep.sum())}")
    slope, intercept = np.polyfit(lv[keep], np.log(err[keep]), 1)
    return float(slope), float(math.exp(intercept))


@dataclass
class ConvergenceReport:
    levels: list[int]
    errors: list[float]
    rho: float
    t_star: float
    dt: float
    m_ref: int
    fitted_rate: float | None = None
    fit_constant: float | None = None
    notes: list[str] = field(default_factory=list)

    @property
    def rho_bounds(self) -> list[float]:
        return [self.rho ** (m / 2) for m in self.levels]

    @property
    def ratios(self) -> list[float]:
        return [e / r for e, r in zip(self.errors, self.rho_bounds)]

    @property
    def bound_constant(self) -> float:
        """Smallest C with ``e_m <= C rho**(m/2)`` on the tested levels."""
        return max(self.ratios)

    @property
    def theory_slope(self) -> float:
        return 0.5 * math.log(self.rho)

    def envelope_ok(self, slack: float = 2.0) -> bool:
        """``e_m <= slack * (e_{m0} / rho**(m0/2)) * rho**(m/2)`` for ``m > m0``."""
        c0 = self.ratios[0]
        return all(r <= slack * c0 for r in self.ratios[1:])

    def rate_ok(self, margin: float = 0.05) -> bool:
        if self.fitted_rate is None:
            return all(e == 0 for e in self.errors)
        return self.fitted_rate <= self.theory_slope + margin

    def passed(self, slack: float = 2.0, margin: float = 0.05) -> bool:
        return self.envelope_ok(slack) and self.rate_ok(margin)

    def verdict(self, slack: float = 2.0, margin: float = 0.05) -> str:
        status = "PASS" if self.passed(slack, margin) else "FAIL"
        rate = "n/a" if self.fitted_rate is None else f"{self.fitted_rate:.4f}"
        return (
            f"{status}: fitted log-slope {rate} vs theory {self.theory_slope:.4f} (+{margin}); "
            f"envelope slack {slack} {'holds' if self.envelope_ok(slack) else 'violated'}; "
            f"rho={self.rho:.6g}, t*={self.t_star:g}, dt={self.dt:.6g}, reference level {self.m_ref}"
        )

    def to_csv(self) -> str:
        lines = ["m,error,rho_bound,ratio"]
        for m, e, r, q in zip(self.levels, self.errors, self.rho_bounds, self.ratios):
            lines.append(f"{m},{e!r},{r!r},{q!r}")
        return "\n".join(lines) + "\n"


def refine_study(
    spec: MeasureSpec,
    data: InitialData,
    dt: float | None,
    t_star: float | None,
    levels: Sequence[int],
    m_ref: int,
    force: bool = False,
) -> ConvergenceReport:
    """Errors ``||u^m(t*) - u^{m_ref}(t*)||_mu`` for each requested level.

    ``dt=None`` picks half the reference-level stability limit, shrunk so that
    ``t_star`` is a whole number of steps; ``t_star=None`` means
    ``0.3 * (b - a)``.  The same ``dt`` is used on every level.
    """
    levels = [int(m) for m in levels]
    if not levels:
        raise ValueError("no levels requested")
    if any(m < 1 for m in levels) or any(b <= a for a, b in zip(levels, levels[1:])):
        raise ValueError(f"levels must be positive and strictly increasing, got {levels}")
    if m_ref < max(levels) + 2:
        raise ValueError(f"reference level {m_ref} must be at least max(levels) + 2 = {max(levels) + 2}")
    if t_star is None:
        t_star = 0.3 * spec.length
    if not t_star > 0:
        raise ValueError("t_star must be positive")

    ref_mesh = build_mesh(spec, m_ref)
    limit = max_stable_dt(mass_matrix(spec, ref_mesh), stiffness_matrix(ref_mesh))
    if dt is None:
        nsteps = math.ceil(t_star / (0.5 * limit))
        dt = t_star / nsteps
    else:
        nsteps = round(t_star / dt)
        if nsteps < 1 or abs(nsteps * dt - t_star) > 1e-9 * t_star:
            raise ValueError(f"t_star = {t_star} is not a whole number of steps of dt = {dt}")
        if dt > STABILITY_FACTOR * limit and not force:
            raise UnstableStepError(
                f"dt = {dt:g} is unstable on the reference level (limit {limit:.6g})"
            )

    ref = simulate(spec, m_ref, data, dt, t_star, [t_star], force=force, mesh=ref_mesh)[0][1]
    mass = full_mass_matrix(spec, ref_mesh)
    errors = []
    for m in levels:
        coarse = simulate(spec, m, data, dt, t_star, [t_star], force=force)[0][1]
        on_ref = evaluate(coarse, ref_mesh.nodes)
        diff = PiecewiseLinear(ref_mesh, on_ref - ref.coeffs)
        errors.append(l2mu_norm(spec, ref_mesh, diff, mass=mass))

    report = ConvergenceReport(levels, errors, spec.rho, float(t_star), float(dt), m_ref)
    try:
        report.fitted_rate, report.fit_constant = fit_rate(levels, errors)
    except ValueError as exc:
        report.notes.append(str(exc))
    return report
