"""Episode simulation.

Each episode, every active parent gets a composite task of its own type and
hands the atomic pieces to children. Children spend their resources according
to their policy; when the whole composite is done the parent scores it and
returns a reward per atomic task to whichever child ran it.
"""

from __future__ import annotations

import itertools
import math
from dataclasses import dataclass, field

import numpy as np

from .learner import LearnerConfig, MGRAOLearner, ParentGroupMap, UniformPolicy
from .model import AtomicTask, CompositeTask, SystemDescriptor, TaskAllocation, validate_system

CONSERVATION_TOL = 1e-9


class FeedbackConservationError(AssertionError):
    pass


@dataclass
class ParentAgent:
    id: int
    composite_type: int
    hidden_preference: np.ndarray
    n_children: int
    active: bool = True
    # running mean of received atv per (child, type)
    value_sum: np.ndarray = field(init=False)
    value_n: np.ndarray = field(init=False)

    def __post_init__(self):
        n = len(self.hidden_preference)
        self.value_sum = np.zeros((self.n_children, n))
        self.value_n = np.zeros((self.n_children, n), dtype=np.int64)

    def value_estimates(self, task_type: int) -> np.ndarray:
        n = self.value_n[:, task_type]
        return np.divide(self.value_sum[:, task_type], n, out=np.zeros(len(n)), where=n > 0)

    def observe(self, child: int, task_type: int, atv: float) -> None:
        self.value_sum[child, task_type] += atv
        self.value_n[child, task_type] += 1


@dataclass
class ChildAgent:
    id: int
    resources: dict[int, float]
    policy: MGRAOLearner | UniformPolicy


@dataclass(frozen=True)
class QualityModel:
    demand: np.ndarray  # per atomic task type, in (0, 1]

    def quality(self, task_type: int, amount: float) -> float:
        if amount <= 0:
            return 0.0
        return min(1.0, amount / self.demand[task_type])


@dataclass(frozen=True)
class ChildSelectionPolicy:
    epsilon: float = 0.0

    def __post_init__(self):
        if not 0.0 <= self.epsilon <= 1.0:
            raise ValueError(f"epsilon must be in [0, 1], got {self.epsilon}")


@dataclass(frozen=True)
class VolatilityModel:
    churn_probability: float = 0.0

    def __post_init__(self):
        if not 0.0 <= self.churn_probability <= 1.0:
            raise ValueError(f"churn_probability must be in [0, 1], got {self.churn_probability}")


def draw_resource_amount(rng: np.random.Generator, mu: float = 0.5, sigma: float = 0.2) -> float:
    """Normal draw truncated to (0, 1] by rejection."""
    while True:
        x = rng.normal(mu, sigma)
        if 0.0 < x <= 1.0:
            return float(x)


def generate_workload(episode: int, sd: SystemDescriptor, parents: list[ParentAgent],
                      ids: itertools.count) -> list[CompositeTask]:
    """One composite task per active parent whose type is due this episode."""
    if episode < 0:
        raise ValueError("episode must be >= 0")
    tasks = []
    for p in parents:
        if not p.active or episode % sd.frequency(p.composite_type):
            continue
        members = sd.composite_types[p.composite_type]
        atomics = tuple(AtomicTask(next(ids), tt) for tt in sorted(members))
        tasks.append(CompositeTask(next(ids), p.composite_type, members, atomics, episode, p.id))
    return tasks


def boltzmann_probabilities(estimates: np.ndarray) -> np.ndarray:
    z = np.exp(estimates - estimates.max())
    return z / z.sum()


def allocate_composite(parent: ParentAgent, ct: CompositeTask, n_children: int,
                       policy: ChildSelectionPolicy, rng: np.random.Generator) -> TaskAllocation:
    """Exploit the best-valued child, or with probability epsilon explore by Boltzmann draw."""
    if n_children < 1:
        raise ValueError("no child agents to allocate to")
    assignment = {}
    for t in ct.atomics:
        if n_children == 1:
            assignment[t.task_id] = 0
            continue
        est = parent.value_estimates(t.task_type)
        # both draws are always taken so the stream stays aligned across policies
        explore = rng.random() < policy.epsilon
        pick = rng.random()
        if explore:
            cdf = np.cumsum(boltzmann_probabilities(est))
            assignment[t.task_id] = int(min(np.searchsorted(cdf, pick * cdf[-1], side="right"),
                                            n_children - 1))
        else:
            assignment[t.task_id] = int(np.argmax(est))
    return TaskAllocation(assignment)


def execute_atomic(child: ChildAgent, task: AtomicTask, parent: int, quality: QualityModel) -> float:
    """Perform ``task`` with the child's current allocation and count the sample.

    With several resources the scarcest one bounds the quality.
    """
    q = 1.0
    for r in child.resources:
        _, amount = child.policy.weighting(task.task_type, parent, r)
        q = min(q, quality.quality(task.task_type, amount))
    child.policy.record_sample(parent)
    return q


def compute_ctv(parent: ParentAgent, ct: CompositeTask) -> dict[int, float]:
    pref = {t.task_id: float(parent.hidden_preference[t.task_type]) for t in ct.atomics}
    total = sum(pref.values())
    return {tid: v / total for tid, v in pref.items()}


def compute_taq(ct: CompositeTask, qualities: dict[int, float], ctv: dict[int, float]) -> float:
    return sum(ctv[t.task_id] * qualities[t.task_id] for t in ct.atomics)


def compute_atv(taq: float, ctv_t: float) -> float:
    return taq * ctv_t


def churn_step(parents: list[ParentAgent], vm: VolatilityModel, rng: np.random.Generator) -> int:
    """Toggle each parent's presence independently; returns the number of flips."""
    flips = rng.random(len(parents)) < vm.churn_probability
    for p, flip in zip(parents, flips):
        if flip:
            p.active = not p.active
    return int(flips.sum())


@dataclass
class SystemSpec:
    n_parents: int = 10
    n_children: int = 1
    n_task_types: int = 20
    n_composite_types: int = 10
    composite_size: int = 5
    n_resources: int = 1


@dataclass
class World:
    """A built system plus the agents acting in it."""

    sd: SystemDescriptor
    parents: list[ParentAgent]
    quality: QualityModel
    resource_map: dict[tuple[int, int], float]


def build_world(spec: SystemSpec, rng: np.random.Generator) -> World:
    """Draw composite types, demands, preferences and child resources."""
    n = spec.n_task_types
    if spec.composite_size > n:
        raise ValueError("composite_size exceeds the number of atomic task types")
    composite_types = tuple(
        frozenset(int(x) for x in rng.choice(n, size=spec.composite_size, replace=False))
        for _ in range(spec.n_composite_types)
    )
    demand = 1.0 - rng.random(n)  # (0, 1]
    parent_ids = tuple(range(spec.n_parents))
    # every composite type gets an owner while parents outnumber types
    owned = rng.permutation([p % spec.n_composite_types for p in parent_ids])
    owner: dict[int, set[int]] = {}
    for p in parent_ids:
        owner.setdefault(int(owned[p]), set()).add(p)
    prefs = rng.dirichlet(np.ones(n), size=spec.n_parents)
    # exact zeros would break the strictly positive ctv
    prefs = np.maximum(prefs, np.finfo(float).tiny)
    children = tuple(range(spec.n_children))
    resources = tuple(range(spec.n_resources))
    resource_map = {(c, r): draw_resource_amount(rng) for c in children for r in resources}
    sd = SystemDescriptor(
        parents=parent_ids,
        children=children,
        n_task_types=n,
        composite_types=composite_types,
        resources=resources,
        resource_map=resource_map,
        composite_owner={ct: frozenset(ps) for ct, ps in owner.items()},
    )
    problems = validate_system(sd)
    if problems:
        raise ValueError("invalid system: " + "; ".join(problems))
    parents = [
        ParentAgent(p, int(owned[p]), prefs[p], spec.n_children) for p in parent_ids
    ]
    return World(sd, parents, QualityModel(demand), resource_map)


def make_children(world: World, groups: ParentGroupMap | None, alpha: float, gamma: float) -> list[ChildAgent]:
    """Children with a learner when ``groups`` is given, else the uniform baseline."""
    sd = world.sd
    children = []
    for c in sd.children:
        res = {r: world.resource_map[(c, r)] for r in sd.resources}
        if groups is None:
            policy = UniformPolicy(sd.n_task_types, res)
        else:
            cfg = LearnerConfig(m=groups.m, n=sd.n_task_types, alpha=alpha, gamma=gamma)
            policy = MGRAOLearner(cfg, groups, res)
        children.append(ChildAgent(c, res, policy))
    return children


@dataclass
class EpisodeResult:
    utility: float
    n_composites: int
    n_atomics: int
    max_conservation_error: float
    flips: int


class Simulation:
    """Runs episodes over a world with a given child population.

    ``rng`` drives churn and exploration only; world construction uses its
    own stream so every variant sees the same system for a given seed.
    """

    def __init__(self, world: World, children: list[ChildAgent], selection: ChildSelectionPolicy,
                 volatility: VolatilityModel, rng: np.random.Generator):
        self.world = world
        self.children = children
        self.selection = selection
        self.volatility = volatility
        churn_seed, alloc_seed = rng.integers(0, 2**63, size=2)
        self.churn_rng = np.random.default_rng(churn_seed)
        self.alloc_rng = np.random.default_rng(alloc_seed)
        self.ids = itertools.count()
        self.episode = 0
        self.conservation_checks = 0

    def step(self) -> EpisodeResult:
        world = self.world
        sd = world.sd
        flips = 0
        if self.episode > 0 and self.volatility.churn_probability > 0:
            flips = churn_step(world.parents, self.volatility, self.churn_rng)
        workload = generate_workload(self.episode, sd, world.parents, self.ids)
        by_id = {p.id: p for p in world.parents}
        utility = 0.0
        worst = 0.0
        n_atomics = 0
        for ct in workload:
            parent = by_id[ct.parent]
            tl = allocate_composite(parent, ct, len(self.children), self.selection, self.alloc_rng)
            qualities = {}
            for t in ct.atomics:
                child = self.children[tl.child_for(t)]
                qualities[t.task_id] = execute_atomic(child, t, parent.id, world.quality)
            ctv = compute_ctv(parent, ct)
            taq = compute_taq(ct, qualities, ctv)
            atvs = {t.task_id: compute_atv(taq, ctv[t.task_id]) for t in ct.atomics}
            err = abs(math.fsum(atvs.values()) - taq)
            self.conservation_checks += 1
            if err > CONSERVATION_TOL:
                raise FeedbackConservationError(
                    f"episode {self.episode} composite {ct.composite_id}: sum(atv) - taq = {err}"
                )
            worst = max(worst, err)
            for t in ct.atomics:
                c = tl.child_for(t)
                parent.observe(c, t.task_type, atvs[t.task_id])
                self.children[c].policy.update(t.task_type, parent.id, atvs[t.task_id])
            utility += taq
            n_atomics += len(ct.atomics)
        self.episode += 1
        return EpisodeResult(utility, len(workload), n_atomics, worst, flips)
