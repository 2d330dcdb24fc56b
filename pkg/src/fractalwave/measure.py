"""Self-similar measures with second-order self-similar identities.

A measure is described by its IFS ``S_i`` with weights ``p_i`` and by an
auxiliary IFS ``T_j`` whose images tile the support ``[a, b]``.  The transfer
matrices ``M_j`` express ``mu(T_i T_j A)`` as a combination of the
``mu(T_k A)``, so the measure and the first polynomial moments of every
level-m subinterval follow from a row-vector/matrix product and a small table
of base moments ``I[k, j] = int x**k d(mu o T_j)``.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from math import comb
from pathlib import Path
from typing import Sequence

import numpy as np

__all__ = [
    "AffineMap",
    "MeasureSpec",
    "MeasureSpecError",
    "AtomMeasure",
    "ValidationReport",
    "BUILTIN_NAMES",
    "DEFAULT_BERNOULLI_P",
    "builtin_measure",
    "check_word",
    "word_coefficients",
    "interval_measure",
    "moment",
    "level_coefficients",
    "level_moments",
    "solve_base_moments",
    "atom_oracle",
    "validate_spec",
    "load_measure",
    "measure_to_dict",
]

TILING_TOL = 1e-12
DEFAULT_BERNOULLI_P = 2.0 - math.sqrt(3.0)
GOLDEN = (math.sqrt(5.0) - 1.0) / 2.0


class MeasureSpecError(ValueError):
    """Raised when a measure description violates one of its invariants.

    ``problems`` holds one human-readable line per violated invariant.
    """

    def __init__(self, problems: Sequence[str]):
        self.problems = list(problems)
        super().__init__("invalid measure spec:\n  - " + "\n  - ".join(self.problems))


@dataclass(frozen=True)
class AffineMap:
    """Orientation-preserving similitude ``x -> ratio * x + shift``."""

    ratio: float
    shift: float

    def __post_init__(self):
        if not (0.0 < self.ratio < 1.0):
            raise ValueError(f"contraction ratio must lie in (0, 1), got {self.ratio!r}")

    def __call__(self, x):
        return self.ratio * x + self.shift

    def inverse(self, y):
        return (y - self.shift) / self.ratio

    def then(self, inner: "AffineMap") -> "AffineMap":
        """Composition ``self o inner``."""
        return AffineMap(self.ratio * inner.ratio, self.ratio * inner.shift + self.shift)


@dataclass(frozen=True, eq=False)
class MeasureSpec:
    """IFS data plus second-order identities for one self-similar measure.

    ``transfer[j]`` is the N x N matrix ``M_{j+1}`` and ``base_moments[k, j]``
    is ``int x**k d(mu o T_{j+1})`` for ``k = 0, 1, 2``.  Letters of words are
    1-based throughout the public API, matching the usual multi-index notation.
    """

    maps: tuple[AffineMap, ...]
    weights: np.ndarray
    support: tuple[float, float]
    aux: tuple[AffineMap, ...]
    transfer: np.ndarray
    base_moments: np.ndarray
    name: str = "custom"
    allow_negative_transfer: bool = False
    params: dict = field(default_factory=dict)

    def __post_init__(self):
        object.__setattr__(self, "maps", tuple(self.maps))
        object.__setattr__(self, "aux", tuple(self.aux))
        object.__setattr__(self, "support", (float(self.support[0]), float(self.support[1])))
        for attr in ("weights", "transfer", "base_moments"):
            arr = np.array(getattr(self, attr), dtype=float)
            arr.setflags(write=False)
            object.__setattr__(self, attr, arr)
        problems = _spec_problems(self)
        if problems:
            raise MeasureSpecError(problems)

    @property
    def N(self) -> int:
        return len(self.aux)

    @property
    def q(self) -> int:
        return len(self.maps)

    @property
    def a(self) -> float:
        return self.support[0]

    @property
    def b(self) -> float:
        return self.support[1]

    @property
    def length(self) -> float:
        return self.b - self.a

    @property
    def rho(self) -> float:
        """Largest auxiliary contraction ratio; sets the mesh decay rate."""
        return max(t.ratio for t in self.aux)

    @property
    def total_mass(self) -> float:
        return math.fsum(self.base_moments[0])


def _spec_problems(spec: MeasureSpec) -> list[str]:
    problems = []
    a, b = spec.support
    if not b > a:
        problems.append(f"support must satisfy a < b, got [{a}, {b}]")
        return problems
    if spec.weights.shape != (spec.q,):
        problems.append(f"expected {spec.q} weights, got shape {spec.weights.shape}")
    else:
        if np.any(spec.weights <= 0):
            problems.append("weights must be strictly positive")
        if abs(math.fsum(spec.weights) - 1.0) > 1e-12:
            problems.append(f"weights must sum to 1, got {math.fsum(spec.weights)!r}")
    for i, s in enumerate(spec.maps, start=1):
        lo, hi = s(a), s(b)
        if lo < a - TILING_TOL * (b - a) or hi > b + TILING_TOL * (b - a):
            problems.append(f"map S_{i} does not send [a, b] into itself")

    n = spec.N
    if n == 0:
        problems.append("auxiliary IFS is empty")
        return problems
    images = [(t(a), t(b)) for t in spec.aux]
    tol = TILING_TOL * (b - a)
    if abs(images[0][0] - a) > tol:
        problems.append(f"T_1[a, b] must start at a = {a}, starts at {images[0][0]!r}")
    if abs(images[-1][1] - b) > tol:
        problems.append(f"T_{n}[a, b] must end at b = {b}, ends at {images[-1][1]!r}")
    for j in range(n - 1):
        if abs(images[j][1] - images[j + 1][0]) > tol:
            problems.append(
                f"T_{j + 1}[a, b] and T_{j + 2}[a, b] do not abut "
                f"({images[j][1]!r} vs {images[j + 1][0]!r})"
            )

    if spec.transfer.shape != (n, n, n):
        problems.append(f"transfer must hold {n} matrices of shape {n}x{n}, got {spec.transfer.shape}")
    elif not spec.allow_negative_transfer and np.any(spec.transfer < 0):
        bad = sorted({int(j) + 1 for j in np.argwhere(spec.transfer < 0)[:, 0]})
        problems.append(f"transfer matrices {bad} have negative entries (set allow_negative_transfer to override)")

    if spec.base_moments.shape != (3, n):
        problems.append(f"base_moments must have shape (3, {n}), got {spec.base_moments.shape}")
    else:
        if not np.all(np.isfinite(spec.base_moments)):
            problems.append("base_moments must be finite")
        elif np.any(spec.base_moments[0] <= 0):
            problems.append("every T_j[a, b] must carry positive mass (full support)")
        elif abs(math.fsum(spec.base_moments[0]) - 1.0) > 1e-12:
            problems.append(
                f"base masses I[0, :] must sum to the total mass 1, got {math.fsum(spec.base_moments[0])!r}"
            )
    return problems


# --------------------------------------------------------------------------
# built-in measures


BUILTIN_NAMES = {
    "bernoulli": "bernoulli_weighted",
    "bernoulli_weighted": "bernoulli_weighted",
    "golden": "golden_bernoulli",
    "golden_bernoulli": "golden_bernoulli",
    "cantor": "cantor_3fold",
    "cantor_3fold": "cantor_3fold",
}


def builtin_measure(name: str, p: float | None = None) -> MeasureSpec:
    """Return one of the three measures worked out in closed form.

    ``bernoulli_weighted`` takes the weight ``p`` of the left half-map
    (default ``2 - sqrt(3)``); ``golden_bernoulli`` is only tabulated for the
    classical weight ``p = 1/2``; ``cantor_3fold`` takes no parameter.
    """
    key = BUILTIN_NAMES.get(name)
    if key is None:
        raise ValueError(f"unknown built-in measure {name!r}; choose from {sorted(set(BUILTIN_NAMES))}")
    if key == "bernoulli_weighted":
        return _bernoulli_weighted(DEFAULT_BERNOULLI_P if p is None else p)
    if key == "golden_bernoulli":
        return _golden_bernoulli(0.5 if p is None else p)
    if p is not None:
        raise ValueError("cantor_3fold takes no weight parameter")
    return _cantor_3fold()


def _bernoulli_weighted(p: float) -> MeasureSpec:
    p = float(p)
    if not (0.0 < p < 1.0):
        raise ValueError(f"bernoulli weight p must lie in (0, 1), got {p!r}")
    halves = (AffineMap(0.5, 0.0), AffineMap(0.5, 0.5))
    # The IFS satisfies the OSC, so mu o S_1 = p mu and mu o S_2 = (1-p) mu.
    # Moments of mu from int f dmu = p int f(x/2) dmu + (1-p) int f(x/2 + 1/2) dmu.
    m1 = 1.0 - p
    m2 = (1.0 - p) * (3.0 - 2.0 * p) / 3.0
    mom = np.array([1.0, m1, m2])
    return MeasureSpec(
        maps=halves,
        weights=np.array([p, 1.0 - p]),
        support=(0.0, 1.0),
        aux=halves,
        transfer=np.array([p * np.eye(2), (1.0 - p) * np.eye(2)]),
        base_moments=np.column_stack([p * mom, (1.0 - p) * mom]),
        name="bernoulli_weighted",
        params={"p": p},
    )


def golden_table() -> np.ndarray:
    """Base moments of the classical golden-ratio Bernoulli convolution.

    The T_3 row of moments is obtained from the T_1 row through the reflection
    x -> 1 - x, which maps the measure to itself and T_1[0, 1] onto T_3[0, 1].
    """
    r = GOLDEN
    i11 = 1.0 / (6.0 * (3.0 * r - 1.0))
    i21 = (5.0 * r + 4.0) / (6.0 * (r + 8.0))
    return np.array(
        [
            [1.0 / 3.0, 1.0 / 3.0, 1.0 / 3.0],
            [i11, 1.0 / 6.0, (2.0 - r) / 10.0],
            [i21, (r + 5.0) / (6.0 * (r + 8.0)), 1.0 / 3.0 - 2.0 * i11 + i21],
        ]
    )


def _golden_bernoulli(p: float) -> MeasureSpec:
    if not (0.0 < p < 1.0):
        raise ValueError(f"golden weight p must lie in (0, 1), got {p!r}")
    if p != 0.5:
        raise ValueError("golden_bernoulli base moments are only tabulated for p = 1/2")
    r = GOLDEN
    q = 1.0 - p
    m1 = [[p * p, 0, 0], [q * p * p, q * p, 0], [0, q, 0]]
    m2 = [[0, p * p, 0], [0, q * p, 0], [0, q * q, 0]]
    m3 = [[0, p, 0], [0, q * p, q * q * p], [0, 0, q * q]]
    return MeasureSpec(
        maps=(AffineMap(r, 0.0), AffineMap(r, 1.0 - r)),
        weights=np.array([p, q]),
        support=(0.0, 1.0),
        aux=(AffineMap(r * r, 0.0), AffineMap(r**3, r * r), AffineMap(r * r, r)),
        transfer=np.array([m1, m2, m3]),
        base_moments=golden_table(),
        name="golden_bernoulli",
        params={"p": p},
    )


def _cantor_3fold() -> MeasureSpec:
    third = 1.0 / 3.0
    transfer = np.array(
        [
            [[1, 0, 0], [0, 3, 0], [1, 0, 3]],
            [[0, 1, 0], [3, 0, 3], [0, 1, 0]],
            [[3, 0, 1], [0, 3, 0], [0, 0, 1]],
        ]
    ) / 8.0
    moments = np.array(
        [
            [1 / 5, 3 / 5, 1 / 5],
            [27 / 70, 9 / 10, 3 / 14],
            [5517 / 6440, 11943 / 6440, 63 / 184],
        ]
    )
    return MeasureSpec(
        maps=tuple(AffineMap(third, 2.0 * i / 3.0) for i in range(4)),
        weights=np.array([1, 3, 3, 1]) / 8.0,
        support=(0.0, 3.0),
        aux=tuple(AffineMap(third, float(j)) for j in range(3)),
        transfer=transfer,
        base_moments=moments,
        name="cantor_3fold",
    )


# --------------------------------------------------------------------------
# words, coefficients and moments


def check_word(J: Sequence[int], N: int) -> tuple[int, ...]:
    word = tuple(int(j) for j in J)
    if len(word) == 0:
        raise ValueError("a word needs at least one letter")
    for j in word:
        if not 1 <= j <= N:
            raise ValueError(f"letter {j} out of range 1..{N}")
    return word


def word_coefficients(spec: MeasureSpec, J: Sequence[int]) -> np.ndarray:
    """Row vector ``c_J = e_{j1} M_{j2} ... M_{jm}``."""
    word = check_word(J, spec.N)
    c = np.zeros(spec.N)
    c[word[0] - 1] = 1.0
    for j in word[1:]:
        c = c @ spec.transfer[j - 1]
    return c


def moment(spec: MeasureSpec, J: Sequence[int], k: int) -> float:
    """``int x**k d(mu o T_J)`` over ``[a, b]`` for ``k`` in 0, 1, 2."""
    if k not in (0, 1, 2):
        raise ValueError(f"moment order must be 0, 1 or 2, got {k!r}")
    return float(word_coefficients(spec, J) @ spec.base_moments[k])


def interval_measure(spec: MeasureSpec, J: Sequence[int]) -> float:
    """``mu(T_J[a, b])``."""
    return moment(spec, J, 0)


def level_coefficients(spec: MeasureSpec, m: int) -> np.ndarray:
    """All ``c_J`` for words of length ``m``, rows in lexicographic order."""
    if m < 1:
        raise ValueError("level must be >= 1")
    c = np.eye(spec.N)
    for _ in range(m - 1):
        # c_{J j} = c_J M_j, and (J, j) sits at row i(J) * N + j
        c = np.einsum("ik,jkl->ijl", c, spec.transfer).reshape(-1, spec.N)
    return c


def level_moments(spec: MeasureSpec, m: int) -> np.ndarray:
    """Array of shape (N**m, 3): moments 0..2 of ``mu o T_J`` per level-m word."""
    return level_coefficients(spec, m) @ spec.base_moments.T


def solve_base_moments(spec: MeasureSpec, kmax: int = 2) -> np.ndarray:
    """Recover the base moment table from the transfer matrices alone.

    Splitting ``[a, b]`` into the tiles ``T_j[a, b]`` and applying the
    second-order identities gives, for ``nu_i = mu o T_i``,

        int f dnu_i = sum_j sum_k M_j[i, k] int f(T_j x) dnu_k(x),

    a linear fixed-point system in the moments.  Order 0 is the Perron vector
    of ``sum_j M_j`` scaled to total mass 1; higher orders are triangular in
    the order.  Used as an independent check on tabulated moments.  Raises
    ValueError when eigenvalue 1 of ``sum_j M_j`` is not simple (as for
    ``bernoulli_weighted``, whose identities are trivial), since the masses
    are then not determined by the transfer matrices.
    """
    n = spec.N
    total = spec.transfer.sum(axis=0)
    vals, vecs = np.linalg.eig(total)
    idx = int(np.argmin(np.abs(vals - 1.0)))
    if abs(vals[idx] - 1.0) > 1e-9:
        raise ValueError("sum of transfer matrices has no eigenvalue 1")
    if np.count_nonzero(np.abs(vals - 1.0) <= 1e-9) > 1:
        raise ValueError("eigenvalue 1 of the summed transfer matrices is not simple")
    i0 = np.real(vecs[:, idx])
    rows = [i0 / i0.sum()]
    for order in range(1, kmax + 1):
        lhs = np.eye(n)
        rhs = np.zeros(n)
        for t, mj in zip(spec.aux, spec.transfer):
            lhs -= t.ratio**order * mj
            for lower in range(order):
                rhs += comb(order, lower) * t.ratio**lower * t.shift ** (order - lower) * (mj @ rows[lower])
        rows.append(np.linalg.solve(lhs, rhs))
    return np.array(rows)


# --------------------------------------------------------------------------
# atom oracle


@dataclass(frozen=True, eq=False)
class AtomMeasure:
    """Finite sum of point masses, sorted by position."""

    positions: np.ndarray
    weights: np.ndarray

    @property
    def total(self) -> float:
        return math.fsum(self.weights)

    def mass(self, lo: float, hi: float, closed: bool = False) -> float:
        """Mass of ``[lo, hi)``, or of ``[lo, hi]`` when ``closed``."""
        i = np.searchsorted(self.positions, lo, side="left")
        j = np.searchsorted(self.positions, hi, side="right" if closed else "left")
        return float(np.sum(self.weights[i:j]))

    def integrate(self, f, lo: float | None = None, hi: float | None = None, closed: bool = False) -> float:
        x, w = self.positions, self.weights
        if lo is not None:
            i = np.searchsorted(x, lo, side="left")
            j = np.searchsorted(x, hi, side="right" if closed else "left")
            x, w = x[i:j], w[i:j]
        return float(np.sum(w * f(x)))


def atom_oracle(spec: MeasureSpec, depth: int, cap: int = 10**7, merge_tol: float = 1e-13) -> AtomMeasure:
    """Discrete weak approximation ``sum_{|w| = depth} p_w delta_{S_w(x0)}``.

    ``x0`` is the midpoint of the support.  Overlapping IFSs send many words to
    the same point; atoms closer than ``merge_tol * (b - a)`` are merged after
    every level, which keeps the atom count far below ``q**depth``.  ``cap``
    bounds the number of stored atoms.
    """
    if depth < 1:
        raise ValueError("oracle depth must be >= 1")
    a, b = spec.support
    x = np.array([(a + b) / 2.0])
    w = np.array([1.0])
    ratios = np.array([s.ratio for s in spec.maps])
    shifts = np.array([s.shift for s in spec.maps])
    tol = merge_tol * (b - a)
    for _ in range(depth):
        if x.size * spec.q > cap:
            raise ValueError(f"atom cap {cap} exceeded at {x.size * spec.q} atoms; lower the depth")
        x = (ratios[:, None] * x[None, :] + shifts[:, None]).ravel()
        w = (spec.weights[:, None] * w[None, :]).ravel()
        order = np.argsort(x, kind="stable")
        x, w = x[order], w[order]
        starts = np.concatenate(([0], np.flatnonzero(np.diff(x) > tol) + 1))
        x = x[starts]
        w = np.add.reduceat(w, starts)
    return AtomMeasure(x, w)


@dataclass
class ValidationReport:
    """Residuals of a measure spec against an atom-oracle estimate."""

    name: str
    depth: int
    tol: float
    identity_residuals: np.ndarray  # [i, j]: |mu(T_i T_j A) - e_i M_j mu(T_. A)|
    moment_residuals: np.ndarray  # [k, j]: |I[k, j] - oracle moment|
    oracle_masses: np.ndarray

    @property
    def failures(self) -> list[str]:
        out = []
        n = self.identity_residuals.shape[0]
        for i in range(n):
            for j in range(n):
                r = self.identity_residuals[i, j]
                if not r < self.tol:
                    out.append(f"identity row i={i + 1}, matrix j={j + 1}: residual {r:.3e} >= {self.tol:g}")
        for k in range(3):
            for j in range(n):
                r = self.moment_residuals[k, j]
                if not r < self.tol:
                    out.append(f"base moment k={k}, j={j + 1}: residual {r:.3e} >= {self.tol:g}")
        return out

    @property
    def passed(self) -> bool:
        return not self.failures

    def to_text(self) -> str:
        lines = [
            f"measure: {self.name}",
            f"oracle depth: {self.depth}",
            f"tolerance: {self.tol:g}",
            f"max identity residual: {self.identity_residuals.max():.3e}",
            f"max moment residual: {self.moment_residuals.max():.3e}",
        ]
        lines += [f"FAIL {f}" for f in self.failures]
        lines.append("verdict: " + ("PASS" if self.passed else "FAIL"))
        return "\n".join(lines) + "\n"


def _oracle_mass(atoms: AtomMeasure, lo: float, hi: float, b: float, length: float) -> float:
    return atoms.mass(lo, hi, closed=abs(hi - b) <= TILING_TOL * length)


def validate_spec(spec: MeasureSpec, depth: int = 14, tol: float = 5e-3, cap: int = 10**7) -> ValidationReport:
    """Check the second-order identities and base moments against the oracle.

    Uses ``A = [a, b]``; every mismatch is reported rather than raised.
    """
    atoms = atom_oracle(spec, depth, cap=cap)
    a, b = spec.support
    n = spec.N
    masses = np.array([_oracle_mass(atoms, t(a), t(b), b, spec.length) for t in spec.aux])

    ident = np.zeros((n, n))
    for i, ti in enumerate(spec.aux):
        for j, tj in enumerate(spec.aux):
            tij = ti.then(tj)
            observed = _oracle_mass(atoms, tij(a), tij(b), b, spec.length)
            predicted = spec.transfer[j][i] @ masses
            ident[i, j] = abs(observed - predicted)

    mom = np.zeros((3, n))
    for j, t in enumerate(spec.aux):
        closed = abs(t(b) - b) <= TILING_TOL * spec.length
        for k in range(3):
            est = atoms.integrate(lambda y: t.inverse(y) ** k, t(a), t(b), closed=closed)
            mom[k, j] = abs(spec.base_moments[k, j] - est)
    return ValidationReport(spec.name, depth, tol, ident, mom, masses)


# --------------------------------------------------------------------------
# measure files


def _maps_from(items, label: str, problems: list[str]) -> list[AffineMap]:
    maps = []
    for idx, item in enumerate(items, start=1):
        try:
            maps.append(AffineMap(float(item["ratio"]), float(item["shift"])))
        except (KeyError, TypeError, ValueError) as exc:
            problems.append(f"{label}[{idx}]: {exc}")
    return maps


def load_measure(source: str | Path | dict, allow_negative_transfer: bool | None = None) -> MeasureSpec:
    """Build a MeasureSpec from a JSON file (or an already parsed dict).

    Expected keys: ``maps``, ``weights``, ``support``, ``aux``, ``transfer``,
    ``base_moments``; optional ``name`` and ``allow_negative_transfer``.
    Every violated invariant is listed in the raised ``MeasureSpecError``.
    """
    if isinstance(source, dict):
        data = source
    else:
        with open(source) as fh:
            data = json.load(fh)
    problems: list[str] = []
    missing = [k for k in ("maps", "weights", "support", "aux", "transfer", "base_moments") if k not in data]
    if missing:
        raise MeasureSpecError([f"missing field {k!r}" for k in missing])
    maps = _maps_from(data["maps"], "maps", problems)
    aux = _maps_from(data["aux"], "aux", problems)
    support = data["support"]
    if not (isinstance(support, (list, tuple)) and len(support) == 2):
        problems.append("support must be a pair [a, b]")
    if problems:
        raise MeasureSpecError(problems)
    if allow_negative_transfer is None:
        allow_negative_transfer = bool(data.get("allow_negative_transfer", False))
    try:
        transfer = np.array(data["transfer"], dtype=float)
        base = np.array(data["base_moments"], dtype=float)
        weights = np.array(data["weights"], dtype=float)
    except (TypeError, ValueError) as exc:
        raise MeasureSpecError([f"non-numeric array field: {exc}"]) from exc
    return MeasureSpec(
        maps=tuple(maps),
        weights=weights,
        support=(float(support[0]), float(support[1])),
        aux=tuple(aux),
        transfer=transfer,
        base_moments=base,
        name=str(data.get("name", Path(source).stem if not isinstance(source, dict) else "custom")),
        allow_negative_transfer=allow_negative_transfer,
    )


def measure_to_dict(spec: MeasureSpec) -> dict:
    return {
        "name": spec.name,
        "maps": [{"ratio": s.ratio, "shift": s.shift} for s in spec.maps],
        "weights": spec.weights.tolist(),
        "support": list(spec.support),
        "aux": [{"ratio": t.ratio, "shift": t.shift} for t in spec.aux],
        "transfer": spec.transfer.tolist(),
        "base_moments": spec.base_moments.tolist(),
        "allow_negative_transfer": spec.allow_negative_transfer,
    }
