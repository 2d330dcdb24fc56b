"""Acceptance criteria 1-9, each at its stated tolerance.

Every test records one ``criterion N: PASS|FAIL`` line, repeated in the
pytest terminal summary, before asserting.
"""

import csv
import itertools
import math
import time
from fractions import Fraction

import numpy as np

from fractalwave.cli import main
from fractalwave.convergence import refine_study
from fractalwave.dynamics import InitialData, advance, discrete_energy, initial_state, max_stable_dt, simulate
from fractalwave.fem import full_mass_matrix, is_strictly_diagonally_dominant, mass_matrix, stiffness_matrix
from fractalwave.measure import builtin_measure, interval_measure, level_moments, moment, validate_spec
from fractalwave.mesh import build_mesh

RHO = (math.sqrt(5) - 1) / 2


def sine(spec):
    a, b = spec.support
    return lambda x: np.sin(np.pi * (np.asarray(x) - a) / (b - a))


# ---------------------------------------------------------------- 1


# (k, j) -> closed form of int x**k d(mu o T_j)
TABLE_GOLDEN = {
    (0, 1): 1 / 3,
    (0, 2): 1 / 3,
    (0, 3): 1 / 3,
    (1, 1): 1 / (6 * (3 * RHO - 1)),
    (1, 2): 1 / 6,
    (1, 3): 1 / (6 * (3 * RHO**2 + 3)),
    (2, 1): (5 * RHO + 4) / (6 * (RHO + 8)),
    (2, 2): (RHO + 5) / (6 * (RHO + 8)),
    (2, 3): (2 - RHO) / (6 * (RHO + 8)),
}
TABLE_CANTOR = {
    (0, 1): Fraction(1, 5),
    (0, 2): Fraction(3, 5),
    (0, 3): Fraction(1, 5),
    (1, 1): Fraction(27, 70),
    (1, 2): Fraction(9, 10),
    (1, 3): Fraction(3, 14),
    (2, 1): Fraction(5517, 6440),
    (2, 2): Fraction(11943, 6440),
    (2, 3): Fraction(63, 184),
}


def test_criterion_1_measure_tables(report_line):
    start = time.perf_counter()
    mismatches = []
    for name, table in (("golden", TABLE_GOLDEN), ("cantor", TABLE_CANTOR)):
        spec = builtin_measure(name)
        for (k, j), value in table.items():
            got = interval_measure(spec, (j,)) if k == 0 else moment(spec, (j,), k)
            if k == 0:
                assert got == moment(spec, (j,), 0)
            if abs(got - float(value)) > 1e-14:
                mismatches.append(f"{name} k={k} j={j}: computed {got:.15g}, table {float(value):.15g}")
    elapsed = time.perf_counter() - start
    ok = not mismatches
    report_line(1, ok, f"18 table entries, {len(mismatches)} mismatched; {elapsed * 1e3:.1f} ms" + ("; " + "; ".join(mismatches) if mismatches else ""))
    assert ok, "\n".join(mismatches)


# ---------------------------------------------------------------- 2


def test_criterion_2_oracle_cross_check(report_line):
    start = time.perf_counter()
    worst = {}
    ok = True
    for name in ("golden", "cantor"):
        rep = validate_spec(builtin_measure(name), depth=14, tol=5e-3)
        worst[name] = max(rep.identity_residuals.max(), rep.moment_residuals.max())
        ok &= rep.passed
    elapsed = time.perf_counter() - start
    ok &= elapsed < 30
    report_line(2, ok, f"max residual golden {worst['golden']:.2e}, cantor {worst['cantor']:.2e} (tol 5e-3); {elapsed:.1f} s (< 30 s)")
    assert ok


# ---------------------------------------------------------------- 3


def test_criterion_3_lebesgue_reduction(report_line):
    start = time.perf_counter()
    spec = builtin_measure("bernoulli", 0.5)
    f = simulate(spec, 8, InitialData(sine(spec)), 2.5e-4, 1.0, [1.0])[0][1]
    # relative L2 error against sin(pi x) cos(pi t) by 6-point Gauss quadrature per cell
    x = f.mesh.nodes
    xg, wg = np.polynomial.legendre.leggauss(6)
    half = 0.5 * np.diff(x)
    pts = half[:, None] * xg[None, :] + (0.5 * (x[1:] + x[:-1]))[:, None]
    w = half[:, None] * wg[None, :]
    exact = np.sin(np.pi * pts) * math.cos(math.pi * 1.0)
    err = math.sqrt(np.sum(w * (np.interp(pts, x, f.coeffs) - exact) ** 2) / np.sum(w * exact**2))
    elapsed = time.perf_counter() - start
    ok = err < 1e-2 and elapsed < 10
    report_line(3, ok, f"relative L2 error {err:.3e} (< 1e-2); {elapsed:.2f} s (< 10 s)")
    assert ok


# ---------------------------------------------------------------- 4


def test_criterion_4_energy_conservation(report_line):
    start = time.perf_counter()
    drifts = {}
    for name in ("bernoulli", "golden", "cantor"):
        spec = builtin_measure(name)
        mesh = build_mesh(spec, 5)
        M, K = mass_matrix(spec, mesh), stiffness_matrix(mesh)
        dt = 0.5 * max_stable_dt(M, K)
        s = initial_state(spec, mesh, M, K, InitialData(sine(spec)), dt)
        e0 = discrete_energy(s, M, K)
        worst = 0.0
        for _ in range(100):
            s = advance(s, M, K, 100)
            worst = max(worst, abs(discrete_energy(s, M, K) - e0) / e0)
        drifts[name] = worst
    elapsed = time.perf_counter() - start
    ok = all(d < 1e-10 for d in drifts.values()) and elapsed < 10
    detail = ", ".join(f"{k} {v:.1e}" for k, v in drifts.items())
    report_line(4, ok, f"max relative drift over 1e4 steps: {detail} (< 1e-10); {elapsed:.2f} s (< 10 s)")
    assert ok


# ---------------------------------------------------------------- 5


def test_criterion_5_mass_conservation(report_line):
    worst = 0.0
    for name, p in (("bernoulli", None), ("bernoulli", 0.5), ("golden", None), ("cantor", None)):
        spec = builtin_measure(name, p)
        for m in range(1, 7):
            M = full_mass_matrix(spec, build_mesh(spec, m))
            total = math.fsum(M.diag) + math.fsum(M.sub) + math.fsum(M.sup)
            worst = max(worst, abs(total - spec.total_mass))
    ok = worst < 1e-12
    report_line(5, ok, f"max |sum(M) - total mass| = {worst:.1e} over built-ins, m = 1..6 (< 1e-12)")
    assert ok


# ---------------------------------------------------------------- 6


def test_criterion_6_diagonal_dominance(report_line):
    results = {}
    for name in ("golden", "cantor"):
        spec = builtin_measure(name)
        results[name] = all(is_strictly_diagonally_dominant(mass_matrix(spec, build_mesh(spec, m))) for m in range(1, 5))
    ok = all(results.values())
    report_line(6, ok, f"strictly dominant for m = 1..4: golden {results['golden']}, cantor {results['cantor']}")
    assert ok


# ---------------------------------------------------------------- 7


def test_criterion_7_convergence_rate(report_line):
    start = time.perf_counter()
    lines, ok = [], True
    for name, ref in (("bernoulli", 10), ("golden", 8), ("cantor", 8)):
        spec = builtin_measure(name)
        r = refine_study(spec, InitialData(sine(spec)), None, None, [2, 3, 4, 5], ref)
        passed = r.passed(slack=2.0, margin=0.05)
        ok &= passed
        lines.append(f"{name} slope {r.fitted_rate:.3f} vs {r.theory_slope:.3f}+0.05, envelope {'ok' if r.envelope_ok(2.0) else 'violated'}")
    elapsed = time.perf_counter() - start
    ok &= elapsed < 300
    report_line(7, ok, "; ".join(lines) + f"; {elapsed:.1f} s (< 300 s)")
    assert ok


# ---------------------------------------------------------------- 8


PRESET_TIMES = {
    "fig1": [round(0.1 * i, 1) for i in range(10)],
    "fig2": [round(0.1 * i, 1) for i in range(12)],
    "fig3": [round(0.2 * i, 1) for i in range(11)],
}


def test_criterion_8_figure_presets(tmp_path, report_line):
    problems = []
    for preset, times in PRESET_TIMES.items():
        out = tmp_path / preset
        if main(["simulate", "--preset", preset, "--out", str(out)]) != 0:
            problems.append(f"{preset}: nonzero exit")
            continue
        with open(out / "snapshots.csv") as fh:
            rows = list(csv.DictReader(fh))
        got = sorted({float(r["t"]) for r in rows})
        if got != times:
            problems.append(f"{preset}: times {got}")
        spec = builtin_measure({"fig1": "bernoulli", "fig2": "golden", "fig3": "cantor"}[preset])
        a, b = spec.support
        for t in times:
            snap = [(float(r["x"]), float(r["u"])) for r in rows if float(r["t"]) == t]
            if snap[0] != (a, 0.0) or snap[-1] != (b, 0.0):
                problems.append(f"{preset} t={t}: boundary {snap[0]}, {snap[-1]}")
        first = [(float(r["x"]), float(r["u"])) for r in rows if float(r["t"]) == 0.0][1:-1]
        xs = np.array([x for x, _ in first])
        if not np.array_equal([u for _, u in first], sine(spec)(xs)):
            problems.append(f"{preset}: t=0 row differs from the interpolated initial data")
    ok = not problems
    report_line(8, ok, "fig1/fig2/fig3 preset sample times, exact Dirichlet boundaries, t=0 equals interpolant" + ("; " + "; ".join(problems) if problems else ""))
    assert ok, problems


# ---------------------------------------------------------------- 9


def test_criterion_9_partition_additivity(report_line):
    worst = 0.0
    for name, p in (("bernoulli", None), ("bernoulli", 0.5), ("golden", None), ("cantor", None)):
        spec = builtin_measure(name, p)
        for m in range(1, 11):
            total = math.fsum(level_moments(spec, m)[:, 0])
            worst = max(worst, abs(total - spec.total_mass))
    # spot-check the vectorized table against word-by-word evaluation
    spec = builtin_measure("golden")
    direct = math.fsum(interval_measure(spec, J) for J in itertools.product((1, 2, 3), repeat=6))
    worst = max(worst, abs(direct - 1.0))
    ok = worst < 1e-12
    report_line(9, ok, f"max |sum_J mu(T_J[a,b]) - total mass| = {worst:.1e} for m <= 10 (< 1e-12)")
    assert ok
