"""Level-m partitions of the support induced by the auxiliary IFS."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .measure import MeasureSpec, check_word

__all__ = ["LevelMesh", "build_mesh", "index_of_word", "word_of_index", "mesh_norm", "level_maps"]

NODE_CAP = 2**24
SNAP_TOL = 1e-12


@dataclass(frozen=True, eq=False)
class LevelMesh:
    """Nodes ``x_0 = a < ... < x_{N**m} = b`` of the level-m partition.

    Cell ``i`` (1-based) is ``[x_{i-1}, x_i] = T_J[a, b]`` for the word ``J``
    with ``index_of_word(J) == i``.
    """

    level: int
    nodes: np.ndarray
    spec: MeasureSpec

    @property
    def n_cells(self) -> int:
        return self.nodes.size - 1

    @property
    def n_interior(self) -> int:
        return self.nodes.size - 2

    @property
    def widths(self) -> np.ndarray:
        return np.diff(self.nodes)

    def compatible(self, other: "LevelMesh") -> bool:
        return self is other or (
            self.spec is other.spec and self.level == other.level and np.array_equal(self.nodes, other.nodes)
        )


def level_maps(spec: MeasureSpec, m: int) -> tuple[np.ndarray, np.ndarray]:
    """Ratios and shifts of ``T_J = T_{j1} o ... o T_{jm}`` in lexicographic order."""
    r = np.array([t.ratio for t in spec.aux])
    d = np.array([t.shift for t in spec.aux])
    ratios, shifts = r.copy(), d.copy()
    for _ in range(m - 1):
        # T_{J j} = T_J o T_j
        shifts = (shifts[:, None] + ratios[:, None] * d[None, :]).ravel()
        ratios = (ratios[:, None] * r[None, :]).ravel()
    return ratios, shifts


def build_mesh(spec: MeasureSpec, m: int, node_cap: int = NODE_CAP) -> LevelMesh:
    if m < 1:
        raise ValueError("mesh level must be >= 1")
    count = spec.N**m + 1
    if count > node_cap:
        raise ValueError(f"level {m} needs {count} nodes, above the cap {node_cap}")
    a, b = spec.support
    ratios, shifts = level_maps(spec, m)
    left = ratios * a + shifts
    right = ratios * b + shifts
    tol = SNAP_TOL * (b - a)
    if abs(left[0] - a) > tol or abs(right[-1] - b) > tol or np.any(np.abs(right[:-1] - left[1:]) > tol):
        raise ValueError(f"level-{m} images do not tile [{a}, {b}]")
    nodes = np.concatenate((left, [b]))
    nodes[0] = a
    if np.any(np.diff(nodes) <= tol):
        raise ValueError(f"level-{m} mesh has a degenerate subinterval")
    nodes.setflags(write=False)
    return LevelMesh(m, nodes, spec)


def index_of_word(J: Sequence[int], N: int) -> int:
    """1-based position of ``J`` among level-m words in lexicographic order."""
    word = check_word(J, N)
    i = 0
    for j in word:
        i = i * N + (j - 1)
    return i + 1


def word_of_index(i: int, m: int, N: int) -> tuple[int, ...]:
    if m < 1:
        raise ValueError("level must be >= 1")
    if not 1 <= i <= N**m:
        raise ValueError(f"index {i} out of range 1..{N**m}")
    rest = i - 1
    letters = []
    for _ in range(m):
        rest, r = divmod(rest, N)
        letters.append(r + 1)
    return tuple(reversed(letters))


def mesh_norm(mesh: LevelMesh) -> float:
    """Largest subinterval length."""
    return float(mesh.widths.max())
