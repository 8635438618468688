"""Hand-derivable checks: oracle value first, then the main implementation.

Each check computes its expected value with :mod:`mgrao.oracle` (or plain
arithmetic for counting cases) and compares the library result against it.
"""

from __future__ import annotations

import itertools
import math
import random
from collections import Counter
from dataclasses import dataclass
from typing import Callable

import numpy as np

from . import oracle
from .environment import (
    ChildAgent,
    ParentAgent,
    QualityModel,
    SystemSpec,
    build_world,
    compute_atv,
    compute_ctv,
    compute_taq,
    execute_atomic,
    generate_workload,
)
from .learner import (
    LearnerConfig,
    MGRAOLearner,
    ParentGroupMap,
    blending_vector,
    combined_weights,
    eligibility_update,
    group_entropy,
    softmax,
    sum_normalize,
)
from .model import AtomicTask, CompositeTask

TOL = 1e-12


@dataclass
class CheckResult:
    name: str
    expected: object
    actual: object
    error: float

    @property
    def ok(self) -> bool:
        return self.error <= TOL


def _err(a, b) -> float:
    a = np.asarray(a, dtype=float)
    b = np.asarray(b, dtype=float)
    if a.shape != b.shape:
        return math.inf
    return float(np.max(np.abs(a - b))) if a.size else 0.0


def _learner(W, E=None, counts=None, alpha=0.1, gamma=0.9, amount=1.0):
    W = np.array(W, dtype=float)
    m, n = W.shape
    lrn = MGRAOLearner(LearnerConfig(m=m, n=n, alpha=alpha, gamma=gamma),
                       ParentGroupMap({i: i for i in range(m)}), {0: amount})
    lrn.W[0][:] = W
    if E is not None:
        lrn.E[0][:] = E
    if counts is not None:
        lrn.counts[:] = counts
        lrn._n_samples = int(sum(counts))
    return lrn


def _sum_norm_examples():
    yield "sum_normalize [3,1]", oracle.norm([3, 1]), sum_normalize([3, 1])


def _softmax_examples():
    yield "softmax [1,0]", oracle.softmax([1, 0]), softmax([1, 0])


def _entropy_examples():
    yield "group_entropy [1,0]", oracle.kl_from_uniform([1, 0]), group_entropy([1, 0])
    yield "group_entropy [0.75,0.25]", oracle.kl_from_uniform([0.75, 0.25]), group_entropy([0.75, 0.25])


def _blend_examples():
    cases = [
        ("counts [3,1], uniform rows", [3, 1], [[0.5, 0.5], [0.5, 0.5]]),
        ("counts [0,0], rows [1,0],[.5,.5]", [0, 0], [[1, 0], [0.5, 0.5]]),
        ("counts [1,1], rows [1,0],[1,0]", [1, 1], [[1, 0], [1, 0]]),
    ]
    for label, counts, W in cases:
        yield f"blending_vector {label}", oracle.blend(counts, W), blending_vector(counts, W)


def _combined_examples():
    yield ("combined_weights m=1 W=[[1,0]]", oracle.crw([1.0], [[1, 0]]),
           combined_weights([1.0], [[1, 0]]))
    yield ("combined_weights b=[.75,.25] W=I", oracle.crw([0.75, 0.25], [[1, 0], [0, 1]]),
           combined_weights([0.75, 0.25], [[1, 0], [0, 1]]))
    lrn = _learner([[1.0, 0.0]])
    yield "learner.combined m=1 W=[[1,0]]", oracle.crw(oracle.blend([0], [[1, 0]]), [[1, 0]]), lrn.combined(0)


def _trace_examples():
    E0 = [[0, 0], [0, 0.5]]
    yield ("eligibility_update (0,0) gamma=.8", oracle.etu(E0, (0, 0), 0.8),
           eligibility_update(E0, 0, 0, 0.8))
    gamma, k = 0.9, 7
    E_or = oracle.etu([[0, 0], [0, 0]], (0, 0), gamma)
    E_np = eligibility_update(np.zeros((2, 2)), 0, 0, gamma)
    for _ in range(k):
        E_or = oracle.etu(E_or, (1, 1), gamma)
        E_np = eligibility_update(E_np, 1, 1, gamma)
    yield f"trace after {k} updates elsewhere", E_or[0][0], E_np[0, 0]
    yield f"trace gamma^{k}", gamma ** k, E_np[0, 0]


def _sample_examples():
    groups = ParentGroupMap({0: 0, 1: 0, 2: 1})
    lrn = MGRAOLearner(LearnerConfig(m=2, n=2), groups, {0: 1.0})
    allocs = [0, 1, 0, 2]
    for p in allocs:
        lrn.record_sample(p)
    tally = Counter(groups.group_of[p] for p in allocs)
    yield "record_sample 3 and 1", [tally[0], tally[1]], lrn.counts


def _update_examples():
    W0, alpha, atv = [[0.5, 0.5]], 0.2, 0.5
    W_or, _ = oracle.update(W0, [[0, 0]], (0, 0), atv, alpha, 0.9)
    lrn = _learner(W0, alpha=alpha)
    lrn.update(0, 0, atv)
    yield "mgrao_update W=[[.5,.5]] atv=.5 alpha=.2", W_or, lrn.W[0]
    yield "mgrao_update closed form 0.6/1.1", [0.6 / 1.1, 0.5 / 1.1], lrn.W[0][0]
    # repeated reward on one cell: oracle trajectory vs learner, step by step
    W_or, E_or = W0, [[0, 0]]
    lrn = _learner(W0, alpha=alpha)
    worst = 0.0
    for _ in range(50):
        W_or, E_or = oracle.update(W_or, E_or, (0, 0), 1.0, alpha, 0.9)
        lrn.update(0, 0, 1.0)
        worst = max(worst, _err(W_or, lrn.W[0]))
    yield "mgrao_update 50 repeats", worst, 0.0


def _weighting_examples():
    lrn = _learner([[1.0, 0.0]], amount=1.0)
    yield ("mgrao_weighting single group W=[[1,0]]", oracle.weighting(0, [[1, 0]], [0], 1.0),
           lrn.weighting(0, 0, 0)[1])


def _env_examples():
    q = QualityModel(np.array([0.5]))
    yield "quality demand .5 amount .25", oracle.quality(0.25, 0.5), q.quality(0, 0.25)
    parent = ParentAgent(0, 0, np.array([2.0, 1.0]), 1)
    ct = CompositeTask(0, 0, frozenset({0, 1}), (AtomicTask(1, 0), AtomicTask(2, 1)), 0, 0)
    ctv = compute_ctv(parent, ct)
    yield "ctv prefs [2,1]", oracle.ctv([2.0, 1.0]), [ctv[1], ctv[2]]
    yield "taq ctv [.5,.5] q [1,.5]", oracle.taq([0.5, 0.5], [1.0, 0.5]), compute_taq(
        ct, {1: 1.0, 2: 0.5}, {1: 0.5, 2: 0.5})
    yield "atv .75 x .5", 0.75 * 0.5, compute_atv(0.75, 0.5)
    world = build_world(SystemSpec(), np.random.default_rng(0))
    for p in world.parents[7:]:
        p.active = False
    tasks = generate_workload(0, world.sd, world.parents, itertools.count())
    yield "workload 7 active of 10", sum(p.active for p in world.parents), len(tasks)
    # execute_atomic against a hand-built child with a known allocation
    lrn = _learner([[1.0, 0.0]], amount=0.5)
    child = ChildAgent(0, {0: 0.5}, lrn)
    qm = QualityModel(np.array([0.5, 0.5]))
    expected = oracle.quality(oracle.weighting(0, [[1, 0]], [0], 0.5), 0.5)
    yield "execute_atomic via weighting", expected, execute_atomic(child, AtomicTask(0, 0), 0, qm)


def _random_pipeline(seed: int):
    """Small random update/weighting streams, oracle vs learner."""
    rnd = random.Random(seed)
    m, n = rnd.randint(1, 2), rnd.randint(2, 3)
    alpha, gamma = rnd.random(), rnd.random() * 0.99
    parents = list(range(rnd.randint(m, 4)))
    group_of = {p: (p % m) for p in parents}
    lrn = MGRAOLearner(LearnerConfig(m=m, n=n, alpha=alpha, gamma=gamma),
                       ParentGroupMap(group_of), {0: 0.8})
    W = [[1.0 / n] * n for _ in range(m)]
    E = [[0.0] * n for _ in range(m)]
    counts = [0] * m
    worst = 0.0
    for _ in range(rnd.randint(1, 10)):
        p, tt, atv = rnd.choice(parents), rnd.randrange(n), rnd.random()
        worst = max(worst, abs(oracle.weighting(tt, W, counts, 0.8) - lrn.weighting(tt, p, 0)[1]))
        counts[group_of[p]] += 1
        lrn.record_sample(p)
        W, E = oracle.update(W, E, (group_of[p], tt), atv, alpha, gamma)
        lrn.update(tt, p, atv)
        worst = max(worst, _err(W, lrn.W[0]), _err(E, lrn.E[0]))
    return worst


def _pipeline_examples(n_streams: int = 200):
    worst = max(_random_pipeline(s) for s in range(n_streams))
    yield f"random pipelines m<=2 n<=3 x{n_streams}", worst, 0.0


SUITES: list[Callable] = [
    _sum_norm_examples,
    _softmax_examples,
    _entropy_examples,
    _blend_examples,
    _combined_examples,
    _trace_examples,
    _sample_examples,
    _update_examples,
    _weighting_examples,
    _env_examples,
    _pipeline_examples,
]


def run_checks() -> list[CheckResult]:
    results = []
    for suite in SUITES:
        for name, expected, actual in suite():
            results.append(CheckResult(name, expected, actual, _err(expected, actual)))
    return results
