"""Multi-group resource allocation learner for a single child agent.

Each child keeps one weights matrix per resource with a row per parent
group and a column per atomic task type. Value feedback from parents is
spread over recently used cells by a replacing eligibility trace, and the
group rows are blended into the single allocation the child actually uses.
"""

from __future__ import annotations

import json
import math
from dataclasses import asdict, dataclass
from typing import Iterable, Mapping, Sequence

import numpy as np
from numba import njit


class UnknownParentError(KeyError):
    """A parent id was used before being registered in the group map."""


@dataclass(frozen=True)
class LearnerConfig:
    m: int
    n: int
    alpha: float = 0.1
    gamma: float = 0.9

    def __post_init__(self):
        if not 0.0 <= self.alpha <= 1.0:
            raise ValueError(f"alpha must be in [0, 1], got {self.alpha}")
        if not 0.0 <= self.gamma < 1.0:
            raise ValueError(f"gamma must be in [0, 1), got {self.gamma}")
        if self.m < 1 or self.n < 1:
            raise ValueError(f"need m >= 1 and n >= 1, got m={self.m}, n={self.n}")


class ParentGroupMap:
    """Fixed assignment of parent ids to group rows."""

    def __init__(self, group_of: Mapping[int, int]):
        self.group_of = dict(group_of)
        self.m = max(self.group_of.values()) + 1 if self.group_of else 0
        missing = set(range(self.m)) - set(self.group_of.values())
        if missing or min(self.group_of.values(), default=0) < 0:
            raise ValueError(f"group indices must cover 0..{self.m - 1}; missing {sorted(missing)}")

    @classmethod
    def round_robin(cls, parents: Sequence[int], group_size: int) -> "ParentGroupMap":
        """Deal sorted parents into ``ceil(len/group_size)`` groups in turn."""
        if group_size < 1:
            raise ValueError(f"group_size must be >= 1, got {group_size}")
        ordered = sorted(parents)
        m = math.ceil(len(ordered) / group_size)
        return cls({p: k % m for k, p in enumerate(ordered)})

    def __getitem__(self, parent: int) -> int:
        try:
            return self.group_of[parent]
        except KeyError:
            raise UnknownParentError(parent) from None

    def __len__(self):
        return self.m


def sum_normalize(v) -> np.ndarray:
    """Divide by the total; an all-zero vector stays all-zero."""
    v = np.asarray(v, dtype=float)
    if np.any(v < 0):
        raise ValueError("sum_normalize needs non-negative entries")
    total = v.sum()
    if total == 0:
        return np.zeros_like(v)
    return v / total


def softmax(v) -> np.ndarray:
    v = np.asarray(v, dtype=float)
    if not np.all(np.isfinite(v)):
        raise ValueError("softmax needs finite entries")
    z = np.exp(v - v.max())
    return z / z.sum()


def group_entropy(row) -> float:
    """Relative entropy of a weight row from the uniform distribution (nats)."""
    row = np.asarray(row, dtype=float)
    if np.any(row < 0) or abs(row.sum() - 1.0) > 1e-9:
        raise ValueError("group_entropy needs a normalized non-negative row")
    return float(_row_entropies(row[None, :])[0])


def _row_entropies(W: np.ndarray) -> np.ndarray:
    n = W.shape[1]
    with np.errstate(divide="ignore", invalid="ignore"):
        terms = np.where(W > 0, W * np.log(W * n), 0.0)
    # clip float noise from rows that are uniform up to rounding
    return np.maximum(terms.sum(axis=1), 0.0)


def blending_vector(counts, W) -> np.ndarray:
    W = np.asarray(W, dtype=float)
    counts = np.asarray(counts, dtype=float)
    if counts.shape != (W.shape[0],):
        raise ValueError(f"{counts.shape[0]} counts for {W.shape[0]} weight rows")
    return sum_normalize(_row_entropies(W)) + sum_normalize(counts)


def combined_weights(b, W) -> np.ndarray:
    b = np.asarray(b, dtype=float)
    W = np.asarray(W, dtype=float)
    if b.shape != (W.shape[0],):
        raise ValueError(f"blending vector of length {b.shape[0]} for {W.shape[0]} rows")
    return softmax(sum_normalize(b) @ W)


def eligibility_update(E, i: int, j: int, gamma: float) -> np.ndarray:
    """Replacing-trace step: decay every positive cell, then set (i, j) to 1."""
    E = np.asarray(E, dtype=float) * gamma  # zeros stay zero
    E[i, j] = 1.0
    return E


@njit(cache=True)
def _trace_step(W, E, i, j, gamma, step):
    """In-place eligibility decay/set followed by the weight update and row renormalization."""
    m, n = W.shape
    for a in range(m):
        total = 0.0
        for c in range(n):
            e = E[a, c] * gamma
            if a == i and c == j:
                e = 1.0
            E[a, c] = e
            if step != 0.0:
                W[a, c] += step * e
            total += W[a, c]
        if step != 0.0:
            for c in range(n):
                W[a, c] /= total


@njit(cache=True)
def _normalized_entropies(W):
    m, n = W.shape
    out = np.zeros(m)
    total = 0.0
    for a in range(m):
        h = 0.0
        for c in range(n):
            w = W[a, c]
            if w > 0.0:
                h += w * np.log(w * n)
        if h < 0.0:
            h = 0.0
        out[a] = h
        total += h
    if total > 0.0:
        out /= total
    return out


@njit(cache=True)
def _blend_softmax(W, ent, counts, n_samples):
    m, n = W.shape
    b = ent.copy()
    if n_samples > 0:
        for a in range(m):
            b[a] += counts[a] / n_samples
    bsum = b.sum()
    x = np.zeros(n)
    if bsum > 0.0:
        for a in range(m):
            wa = b[a] / bsum
            if wa != 0.0:
                for c in range(n):
                    x[c] += wa * W[a, c]
    x = np.exp(x - x.max())
    return x / x.sum()


class MGRAOLearner:
    """Learner state for one child: weights, traces and sample counts.

    ``resources`` maps resource id to the amount the child possesses.
    """

    def __init__(self, config: LearnerConfig, groups: ParentGroupMap, resources: Mapping[int, float]):
        if groups.m != config.m:
            raise ValueError(f"group map has {groups.m} groups, config says {config.m}")
        self.config = config
        self.groups = groups
        self.resources = dict(resources)
        shape = (config.m, config.n)
        self.W = {r: np.full(shape, 1.0 / config.n) for r in self.resources}
        self.E = {r: np.zeros(shape) for r in self.resources}
        self.counts = np.zeros(config.m)
        self._n_samples = 0
        self._entropy = {}  # per-resource normalized row entropies, dropped on every update

    def parent_task_index(self, parent: int, task_type: int) -> tuple[int, int]:
        if not 0 <= task_type < self.config.n:
            raise IndexError(f"unknown task type {task_type}")
        return self.groups[parent], task_type

    def record_sample(self, parent: int) -> None:
        self.counts[self.groups[parent]] += 1
        self._n_samples += 1

    def update(self, task_type: int, parent: int, atv: float) -> None:
        if not math.isfinite(atv):
            raise ValueError(f"atv must be finite, got {atv}")
        atv = max(atv, 0.0)
        i, j = self.parent_task_index(parent, task_type)
        step = self.config.alpha * atv
        for r in self.resources:
            _trace_step(self.W[r], self.E[r], i, j, self.config.gamma, step)
            if step:
                self._entropy.pop(r, None)

    def combined(self, resource: int) -> np.ndarray:
        """Blended per-type weights from the current state.

        Same result as ``combined_weights(blending_vector(counts, W), W)``,
        recomputed on every call; only the row entropies are cached between
        weight updates.
        """
        W = self.W[resource]
        ent = self._entropy.get(resource)
        if ent is None:
            ent = self._entropy[resource] = _normalized_entropies(W)
        return _blend_softmax(W, ent, self.counts, self._n_samples)

    def allocation(self, resource: int) -> np.ndarray:
        """Amount of ``resource`` devoted to each task type."""
        return self.combined(resource) * self.resources[resource]

    def weighting(self, task_type: int, parent: int, resource: int) -> tuple[int, float]:
        _, j = self.parent_task_index(parent, task_type)
        return resource, float(self.combined(resource)[j] * self.resources[resource])

    def state_dict(self) -> dict:
        return {
            "config": asdict(self.config),
            "groups": {str(p): g for p, g in sorted(self.groups.group_of.items())},
            "counts": [int(c) for c in self.counts],
            "resources": {
                str(r): {
                    "amount": _sig(self.resources[r]),
                    "W": [[_sig(x) for x in row] for row in self.W[r]],
                    "E": [[_sig(x) for x in row] for row in self.E[r]],
                }
                for r in sorted(self.resources)
            },
        }

    def dumps(self) -> str:
        return json.dumps(self.state_dict(), indent=2)


class UniformPolicy:
    """Baseline child whose weights are fixed at 1/n for every type."""

    def __init__(self, n: int, resources: Mapping[int, float]):
        self.n = n
        self.resources = dict(resources)

    def record_sample(self, parent: int) -> None:
        pass

    def update(self, task_type: int, parent: int, atv: float) -> None:
        pass

    def combined(self, resource: int) -> np.ndarray:
        return np.full(self.n, 1.0 / self.n)

    def allocation(self, resource: int) -> np.ndarray:
        return self.combined(resource) * self.resources[resource]

    def weighting(self, task_type: int, parent: int, resource: int) -> tuple[int, float]:
        return resource, self.resources[resource] / self.n


def _sig(x: float) -> float:
    return float(f"{x:.9g}")


def replay(config: LearnerConfig, groups: ParentGroupMap, resources: Mapping[int, float],
           events: Iterable[tuple[int, int, float]]) -> MGRAOLearner:
    """Build a learner and apply (task_type, parent, atv) updates in order."""
    learner = MGRAOLearner(config, groups, resources)
    for tt, parent, atv in events:
        learner.record_sample(parent)
        learner.update(tt, parent, atv)
    return learner
