"""Formal objects of the task/resource model shared by learner and environment.

Task types, agents and resources are dense integer ids so they index
matrices directly.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Any, Iterable, Mapping


@dataclass(frozen=True)
class AtomicTask:
    task_id: int
    task_type: int
    spec: Any = None  # carried, never interpreted


@dataclass(frozen=True)
class CompositeTask:
    composite_id: int
    composite_type: int
    member_types: frozenset[int]
    atomics: tuple[AtomicTask, ...]
    issued_at: int
    parent: int

    def __post_init__(self):
        if len(self.atomics) != len(self.member_types):
            raise ValueError(
                f"composite {self.composite_id}: {len(self.atomics)} atomics "
                f"for a type of size {len(self.member_types)}"
            )
        if type_of_composite(self) != self.member_types:
            raise ValueError(f"composite {self.composite_id}: atomic types do not match its type")


def type_of_composite(ct: CompositeTask) -> frozenset[int]:
    """Set of atomic task types making up ``ct``."""
    return frozenset(t.task_type for t in ct.atomics)


@dataclass(frozen=True)
class TaskAllocation:
    assignment: Mapping[int, int]  # atomic task_id -> child id

    def child_for(self, task: AtomicTask) -> int:
        return self.assignment[task.task_id]


@dataclass(frozen=True)
class SystemDescriptor:
    parents: tuple[int, ...]
    children: tuple[int, ...]
    n_task_types: int
    composite_types: tuple[frozenset[int], ...]
    resources: tuple[int, ...]
    resource_map: Mapping[tuple[int, int], float]  # (child, resource) -> amount
    composite_owner: Mapping[int, frozenset[int]]  # composite type -> parent ids
    task_frequency: Mapping[int, int] = field(default_factory=dict)

    @property
    def task_types(self) -> range:
        return range(self.n_task_types)

    def owned_type(self, parent: int) -> int:
        for ctype, owners in self.composite_owner.items():
            if parent in owners:
                return ctype
        raise KeyError(f"parent {parent} owns no composite type")

    def frequency(self, ctype: int) -> int:
        return self.task_frequency.get(ctype, 1)


def validate_system(sd: SystemDescriptor) -> list[str]:
    """Return every invariant violation found in ``sd``; empty means valid."""
    problems = []
    if len(set(sd.parents)) != len(sd.parents):
        problems.append("duplicate parent ids")
    if len(set(sd.children)) != len(sd.children):
        problems.append("duplicate child ids")
    if sd.n_task_types < 1:
        problems.append("no atomic task types")
    for ct, members in enumerate(sd.composite_types):
        if not members:
            problems.append(f"composite type {ct} is empty")
        unknown = sorted(t for t in members if not 0 <= t < sd.n_task_types)
        if unknown:
            problems.append(f"composite type {ct} references unknown atomic types {unknown}")
        owners = sd.composite_owner.get(ct, frozenset())
        if not owners:
            problems.append(f"composite type {ct} has no owning parent")
        dangling = sorted(set(owners) - set(sd.parents))
        if dangling:
            problems.append(f"composite type {ct} owned by unknown parents {dangling}")
        if sd.frequency(ct) < 1:
            problems.append(f"composite type {ct} has task frequency {sd.frequency(ct)} < 1")
    for ct in sd.composite_owner:
        if not 0 <= ct < len(sd.composite_types):
            problems.append(f"owner map references unknown composite type {ct}")
    for child in sd.children:
        for r in sd.resources:
            amount = sd.resource_map.get((child, r))
            if amount is None:
                problems.append(f"no amount for child {child}, resource {r}")
            elif not math.isfinite(amount) or amount < 0:
                problems.append(f"child {child} resource {r} has invalid amount {amount}")
    for child, r in sd.resource_map:
        if child not in sd.children or r not in sd.resources:
            problems.append(f"resource map entry for unknown pair ({child}, {r})")
    return problems


def allocation_snapshot(
    weights: Mapping[tuple[int, int], Iterable[float]],
    resource_map: Mapping[tuple[int, int], float],
) -> dict[tuple[int, int], set[tuple[int, float]]]:
    """System resource allocation at one episode.

    ``weights`` maps (child, resource) to a per-type weight vector; the result
    maps (child, task type) to the set of (resource, amount) pairs.
    """
    snap: dict[tuple[int, int], set[tuple[int, float]]] = {}
    for (child, r), w in weights.items():
        amount = resource_map[(child, r)]
        for tt, wt in enumerate(w):
            snap.setdefault((child, tt), set()).add((r, float(wt) * amount))
    return snap
