"""Pairwise occlusion order: the N x N relation matrix, binary front/occluded
labels, absolute layer orders, derivation from a removal schedule, and
consistency checking.

Entry semantics for ``entries[i][j]`` (row instance i, column instance j):
+1 i is in front of j, -1 i is occluded by j, 0 no overlap relation.
Builders in this package always produce antisymmetric, acyclic matrices;
hand-built or predicted ones may not, so deep invariants are surfaced by
:func:`validate` rather than enforced at construction.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Iterable, Mapping

import numpy as np

from .raster import overlap_area


class CyclicOrderError(ValueError):
    """The occlusion relation contains a directed cycle."""

    def __init__(self, cycle: list[int]):
        self.cycle = cycle
        super().__init__(f"occlusion relation contains a cycle: {' -> '.join(map(str, cycle))}")


@dataclass(frozen=True)
class OcclusionMatrix:
    """Pairwise occlusion relation over an ordered id list."""

    ids: tuple[int, ...]
    entries: np.ndarray

    def __post_init__(self) -> None:
        object.__setattr__(self, "ids", tuple(int(i) for i in self.ids))
        e = np.array(self.entries, dtype=np.int8, copy=True)
        n = len(self.ids)
        if len(set(self.ids)) != n:
            raise ValueError("ids must be distinct")
        if e.shape != (n, n):
            raise ValueError(f"entries must be {n}x{n}, got {e.shape}")
        if not np.isin(e, (-1, 0, 1)).all():
            raise ValueError("entries must lie in {-1, 0, 1}")
        e.flags.writeable = False
        object.__setattr__(self, "entries", e)

    @classmethod
    def zeros(cls, ids: Iterable[int]) -> "OcclusionMatrix":
        ids = tuple(ids)
        return cls(ids, np.zeros((len(ids), len(ids)), dtype=np.int8))

    @property
    def n(self) -> int:
        return len(self.ids)

    def index_of(self, instance_id: int) -> int:
        try:
            return self.ids.index(instance_id)
        except ValueError:
            raise KeyError(f"unknown instance id {instance_id}") from None

    def get(self, i: int, j: int) -> int:
        return int(self.entries[self.index_of(i), self.index_of(j)])

    def to_rows(self) -> dict[int, list[int]]:
        return {iid: [int(v) for v in self.entries[k]] for k, iid in enumerate(self.ids)}

    def reordered(self, ids: Iterable[int]) -> "OcclusionMatrix":
        """Same relation with rows/columns permuted to the given id order."""
        ids = tuple(ids)
        if sorted(ids) != sorted(self.ids):
            raise ValueError("reordered ids must be a permutation of the matrix ids")
        perm = [self.index_of(i) for i in ids]
        return OcclusionMatrix(ids, self.entries[np.ix_(perm, perm)])


def binary_labels(matrix: OcclusionMatrix) -> dict[int, int]:
    """0 for instances nothing occludes, 1 otherwise.

    An instance's occluder count is the number of -1 entries in its row
    (its "occluded by" relation), so the labeling stays well defined even
    for matrices that fail antisymmetry.
    """
    occluders = (matrix.entries == -1).sum(axis=1)
    return {iid: int(occluders[k] > 0) for k, iid in enumerate(matrix.ids)}


def peel(matrix: OcclusionMatrix, removed: set[int]) -> OcclusionMatrix:
    """Submatrix over the ids not in ``removed``; entries are untouched."""
    unknown = set(removed) - set(matrix.ids)
    if unknown:
        raise KeyError(f"unknown instance ids: {sorted(unknown)}")
    keep = [k for k, iid in enumerate(matrix.ids) if iid not in removed]
    kept_ids = tuple(matrix.ids[k] for k in keep)
    return OcclusionMatrix(kept_ids, matrix.entries[np.ix_(keep, keep)])


def absolute_order(matrix: OcclusionMatrix) -> dict[int, int]:
    """Layer index per instance: 0 when unoccluded, otherwise one more than
    the highest-order occluder. Computed by repeatedly peeling the
    unoccluded front. Raises :class:`CyclicOrderError` on cycles.
    """
    orders: dict[int, int] = {}
    current = matrix
    level = 0
    while current.n:
        labels = binary_labels(current)
        front = {iid for iid, lab in labels.items() if lab == 0}
        if not front:
            cycle = _find_cycle(current)
            assert cycle is not None  # a stalled peel implies a cycle
            raise CyclicOrderError(cycle)
        for iid in front:
            orders[iid] = level
        current = peel(current, front)
        level += 1
    return orders


def peel_rounds(matrix: OcclusionMatrix) -> list[set[int]]:
    """Ids grouped by absolute order: round k removes everything whose
    occluders were all removed in earlier rounds."""
    orders = absolute_order(matrix)
    if not orders:
        return []
    rounds: list[set[int]] = [set() for _ in range(max(orders.values()) + 1)]
    for iid, level in orders.items():
        rounds[level].add(iid)
    return rounds


def _find_cycle(matrix: OcclusionMatrix) -> list[int] | None:
    """A witness cycle in the "occludes" relation, as an id path a->..->a.

    An edge i->j exists when either entry claims i is in front of j
    (entries[i][j] == 1 or entries[j][i] == -1); for antisymmetric
    matrices this is exactly the +1 relation.
    """
    e = matrix.entries
    front_of = (e == 1) | (e.T == -1)
    n = matrix.n
    succ = [np.nonzero(front_of[k])[0].tolist() for k in range(n)]
    color = [0] * n  # 0 unvisited, 1 on stack, 2 done
    stack: list[int] = []

    def dfs(k: int) -> list[int] | None:
        color[k] = 1
        stack.append(k)
        for m in succ[k]:
            if color[m] == 1:
                at = stack.index(m)
                return stack[at:] + [m]
            if color[m] == 0:
                found = dfs(m)
                if found is not None:
                    return found
        stack.pop()
        color[k] = 2
        return None

    for k in range(n):
        if color[k] == 0:
            found = dfs(k)
            if found is not None:
                return [matrix.ids[m] for m in found]
    return None


def pairwise_from_trace(
    amodal_masks: Mapping[int, np.ndarray],
    step_of: Mapping[int, int],
    overlap_threshold: int = 1,
    substep_of: Mapping[int, int] | None = None,
) -> OcclusionMatrix:
    """Pairwise order implied by a removal schedule.

    Two instances relate only when their full masks overlap by at least
    ``overlap_threshold`` pixels; the one removed earlier is in front.
    ``substep_of`` breaks ties between instances removed in the same step
    (the engine records selection rank there); remaining ties fall back
    to the lower id, keeping the matrix antisymmetric.
    """
    ids = sorted(amodal_masks)
    missing = [i for i in ids if i not in step_of]
    if missing:
        raise KeyError(f"no removal step recorded for ids {missing}")

    def rank(iid: int) -> tuple[int, int, int]:
        sub = substep_of.get(iid, 0) if substep_of else 0
        return (step_of[iid], sub, iid)

    matrix = np.zeros((len(ids), len(ids)), dtype=np.int8)
    for a in range(len(ids)):
        for b in range(a + 1, len(ids)):
            ia, ib = ids[a], ids[b]
            if overlap_area(amodal_masks[ia], amodal_masks[ib]) < overlap_threshold:
                continue
            front_a = rank(ia) < rank(ib)
            matrix[a, b] = 1 if front_a else -1
            matrix[b, a] = -matrix[a, b]
    return OcclusionMatrix(tuple(ids), matrix)


@dataclass(frozen=True)
class Violation:
    kind: str  # "diagonal" | "antisymmetry" | "cycle"
    ids: tuple[int, ...]
    message: str


@dataclass(frozen=True)
class ValidationReport:
    violations: tuple[Violation, ...] = field(default_factory=tuple)

    @property
    def ok(self) -> bool:
        return not self.violations

    def __str__(self) -> str:
        if self.ok:
            return "occlusion matrix: no violations"
        return "\n".join(v.message for v in self.violations)


def validate(matrix: OcclusionMatrix) -> ValidationReport:
    """Report (never raise) structural defects: nonzero diagonal entries,
    antisymmetry breaks, and directed cycles with a witness path."""
    violations: list[Violation] = []
    e = matrix.entries
    for k in np.nonzero(np.diagonal(e))[0]:
        iid = matrix.ids[k]
        violations.append(Violation("diagonal", (iid,), f"nonzero diagonal entry for id {iid}"))
    asym = e + e.T  # zero wherever the pair is antisymmetric or doubly 0
    for k, m in zip(*np.nonzero(np.triu(asym, 1))):
        a, b = matrix.ids[k], matrix.ids[m]
        violations.append(
            Violation(
                "antisymmetry",
                (a, b),
                f"entries for pair ({a}, {b}) are {int(e[k, m])}/{int(e[m, k])}, not mirrored",
            )
        )
    cycle = _find_cycle(matrix)
    if cycle is not None:
        violations.append(
            Violation("cycle", tuple(cycle), f"occlusion cycle: {' -> '.join(map(str, cycle))}")
        )
    return ValidationReport(tuple(violations))
