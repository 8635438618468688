import inspect
import itertools
import math

import numpy as np
import pytest
from scipy import stats

from mgrao.environment import (
    ChildAgent,
    ChildSelectionPolicy,
    FeedbackConservationError,
    ParentAgent,
    QualityModel,
    Simulation,
    SystemSpec,
    VolatilityModel,
    allocate_composite,
    boltzmann_probabilities,
    build_world,
    churn_step,
    compute_atv,
    compute_ctv,
    compute_taq,
    draw_resource_amount,
    execute_atomic,
    generate_workload,
    make_children,
)
from mgrao.learner import LearnerConfig, MGRAOLearner, ParentGroupMap, UniformPolicy
from mgrao.model import AtomicTask, CompositeTask


def composite(types, parent=0, start_id=0):
    atomics = tuple(AtomicTask(start_id + k, tt) for k, tt in enumerate(types))
    return CompositeTask(100 + start_id, 0, frozenset(types), atomics, 0, parent)


@pytest.fixture
def world():
    return build_world(SystemSpec(), np.random.default_rng(11))


class TestWorkload:
    def test_full_system(self, world):
        tasks = generate_workload(0, world.sd, world.parents, itertools.count())
        assert len(tasks) == 10
        assert sum(len(t.atomics) for t in tasks) == 50
        ids = [a.task_id for t in tasks for a in t.atomics] + [t.composite_id for t in tasks]
        assert len(set(ids)) == len(ids)

    def test_types_match_owner(self, world):
        for ct in generate_workload(3, world.sd, world.parents, itertools.count()):
            assert ct.member_types == world.sd.composite_types[world.parents[ct.parent].composite_type]
            assert ct.issued_at == 3

    def test_nobody_home(self, world):
        for p in world.parents:
            p.active = False
        assert generate_workload(0, world.sd, world.parents, itertools.count()) == []

    def test_partial_churn(self, world):
        for p in world.parents[::3]:
            p.active = False
        tasks = generate_workload(0, world.sd, world.parents, itertools.count())
        assert len(tasks) == 6
        assert {t.parent for t in tasks} == {p.id for p in world.parents if p.active}

    def test_negative_episode(self, world):
        with pytest.raises(ValueError):
            generate_workload(-1, world.sd, world.parents, itertools.count())


class TestWorld:
    def test_every_type_owned(self, world):
        assert set(world.sd.composite_owner) == set(range(10))
        for p in world.parents:
            assert p.id in world.sd.composite_owner[p.composite_type]

    def test_draws_in_range(self, world):
        assert np.all((world.quality.demand > 0) & (world.quality.demand <= 1))
        for amount in world.resource_map.values():
            assert 0 < amount <= 1
        for p in world.parents:
            assert np.all(p.hidden_preference > 0)
            assert p.hidden_preference.sum() == pytest.approx(1.0)

    def test_same_seed_same_world(self):
        a = build_world(SystemSpec(), np.random.default_rng(5))
        b = build_world(SystemSpec(), np.random.default_rng(5))
        assert a.sd == b.sd
        np.testing.assert_array_equal(a.quality.demand, b.quality.demand)

    def test_truncated_normal_moments(self):
        rng = np.random.default_rng(0)
        xs = np.array([draw_resource_amount(rng) for _ in range(20000)])
        assert xs.min() > 0 and xs.max() <= 1
        # symmetric truncation keeps the mean at 0.5; sd shrinks slightly below 0.2
        assert xs.mean() == pytest.approx(0.5, abs=0.01)
        assert 0.17 < xs.std() < 0.2


class TestAllocation:
    def test_single_child(self):
        parent = ParentAgent(0, 0, np.ones(4), 1)
        tl = allocate_composite(parent, composite([0, 1, 2]), 1, ChildSelectionPolicy(1.0),
                                np.random.default_rng(0))
        assert set(tl.assignment.values()) == {0}

    def test_pure_exploit(self):
        parent = ParentAgent(0, 0, np.ones(2), 2)
        parent.observe(0, 0, 0.9)
        parent.observe(1, 0, 0.1)
        rng = np.random.default_rng(0)
        for _ in range(200):
            tl = allocate_composite(parent, composite([0]), 2, ChildSelectionPolicy(0.0), rng)
            assert tl.assignment[0] == 0

    def test_boltzmann_chi_square(self):
        parent = ParentAgent(0, 0, np.ones(2), 2)
        parent.observe(0, 0, 1.0)
        parent.observe(1, 0, 0.0)
        rng = np.random.default_rng(2024)
        n = 10_000
        hits = sum(allocate_composite(parent, composite([0]), 2, ChildSelectionPolicy(1.0), rng).assignment[0] == 0
                   for _ in range(n))
        p = math.e / (math.e + 1)
        _, pval = stats.chisquare([hits, n - hits], [n * p, n * (1 - p)])
        assert pval > 0.001
        assert hits / n == pytest.approx(0.7311, abs=0.015)

    def test_boltzmann_formula(self):
        np.testing.assert_allclose(boltzmann_probabilities(np.array([1.0, 0.0])),
                                   [math.e / (math.e + 1), 1 / (math.e + 1)])

    def test_no_children(self):
        with pytest.raises(ValueError):
            allocate_composite(ParentAgent(0, 0, np.ones(2), 1), composite([0]), 0,
                               ChildSelectionPolicy(), np.random.default_rng())

    def test_unseen_estimates_are_zero(self):
        parent = ParentAgent(0, 0, np.ones(3), 2)
        np.testing.assert_array_equal(parent.value_estimates(2), [0, 0])
        parent.observe(1, 2, 0.4)
        parent.observe(1, 2, 0.2)
        np.testing.assert_allclose(parent.value_estimates(2), [0, 0.3])

    @pytest.mark.parametrize("eps", [-0.1, 1.5])
    def test_epsilon_range(self, eps):
        with pytest.raises(ValueError):
            ChildSelectionPolicy(eps)


class TestExecution:
    def test_quality_model(self):
        q = QualityModel(np.array([0.5, 0.2]))
        assert q.quality(0, 0.25) == 0.5
        assert q.quality(1, 0.3) == 1.0
        assert q.quality(0, 0.0) == 0.0

    def test_execute_counts_sample(self):
        child = ChildAgent(0, {0: 0.4}, UniformPolicy(4, {0: 0.4}))
        q = execute_atomic(child, AtomicTask(0, 1), 3, QualityModel(np.full(4, 0.2)))
        assert q == pytest.approx(0.5)

    def test_execute_feeds_learner_counts(self):
        lrn = MGRAOLearner(LearnerConfig(m=2, n=3), ParentGroupMap({7: 0, 8: 1}), {0: 1.0})
        child = ChildAgent(0, {0: 1.0}, lrn)
        execute_atomic(child, AtomicTask(0, 2), 8, QualityModel(np.ones(3)))
        np.testing.assert_array_equal(lrn.counts, [0, 1])

    def test_scarcest_resource_binds(self):
        pol = UniformPolicy(2, {0: 1.0, 1: 0.2})
        child = ChildAgent(0, {0: 1.0, 1: 0.2}, pol)
        assert execute_atomic(child, AtomicTask(0, 0), 0, QualityModel(np.ones(2))) == pytest.approx(0.1)


class TestValue:
    def test_equal_preferences(self):
        parent = ParentAgent(0, 0, np.ones(10), 1)
        ctv = compute_ctv(parent, composite([0, 1, 2, 3, 4]))
        assert all(v == pytest.approx(0.2) for v in ctv.values())

    def test_two_to_one(self):
        parent = ParentAgent(0, 0, np.array([2.0, 1.0]), 1)
        ctv = compute_ctv(parent, composite([0, 1]))
        assert ctv == {0: pytest.approx(2 / 3), 1: pytest.approx(1 / 3)}

    def test_taq(self):
        ct = composite([0, 1])
        assert compute_taq(ct, {0: 1.0, 1: 0.5}, {0: 0.5, 1: 0.5}) == 0.75
        assert compute_taq(ct, {0: 1.0, 1: 1.0}, {0: 0.3, 1: 0.7}) == pytest.approx(1.0)
        assert compute_taq(ct, {0: 0.0, 1: 0.0}, {0: 0.3, 1: 0.7}) == 0.0

    def test_atv(self):
        assert compute_atv(0.75, 0.5) == 0.375
        assert compute_atv(0.0, 0.9) == 0.0

    def test_conservation_on_random_composites(self):
        rng = np.random.default_rng(4)
        for k in range(200):
            types = sorted(rng.choice(20, size=5, replace=False).tolist())
            parent = ParentAgent(0, 0, rng.dirichlet(np.ones(20)), 1)
            ct = composite(types)
            ctv = compute_ctv(parent, ct)
            assert math.fsum(ctv.values()) == pytest.approx(1.0, abs=1e-12)
            q = {t.task_id: float(rng.random()) for t in ct.atomics}
            taq = compute_taq(ct, q, ctv)
            assert math.fsum(compute_atv(taq, ctv[t.task_id]) for t in ct.atomics) == pytest.approx(taq, abs=1e-9)


class TestChurn:
    def test_zero(self):
        parents = [ParentAgent(i, 0, np.ones(2), 1) for i in range(10)]
        assert churn_step(parents, VolatilityModel(0.0), np.random.default_rng(0)) == 0
        assert all(p.active for p in parents)

    def test_one_toggles_all(self):
        parents = [ParentAgent(i, 0, np.ones(2), 1) for i in range(10)]
        churn_step(parents, VolatilityModel(1.0), np.random.default_rng(0))
        assert not any(p.active for p in parents)
        churn_step(parents, VolatilityModel(1.0), np.random.default_rng(0))
        assert all(p.active for p in parents)

    def test_mean_flips(self):
        parents = [ParentAgent(i, 0, np.ones(2), 1) for i in range(10)]
        rng = np.random.default_rng(99)
        flips = [churn_step(parents, VolatilityModel(0.25), rng) for _ in range(10_000)]
        # binomial(10, .25): sd of the mean is about 0.014
        assert np.mean(flips) == pytest.approx(2.5, abs=0.06)

    def test_range(self):
        with pytest.raises(ValueError):
            VolatilityModel(1.2)


def simulation(world, groups=None, eps=0.0, churn=0.0, seed=0):
    children = make_children(world, groups, 0.1, 0.9)
    return Simulation(world, children, ChildSelectionPolicy(eps), VolatilityModel(churn),
                      np.random.default_rng(seed))


class TestSimulation:
    def test_episode_accounting(self, world):
        sim = simulation(world, ParentGroupMap.round_robin(world.sd.parents, 1))
        res = sim.step()
        assert (res.n_composites, res.n_atomics) == (10, 50)
        assert sim.conservation_checks == 10
        assert res.max_conservation_error <= 1e-9
        assert sim.children[0].policy._n_samples == 50

    def test_one_feedback_per_atomic(self, world):
        sim = simulation(world, ParentGroupMap.round_robin(world.sd.parents, 1))
        calls = []
        original = sim.children[0].policy.update

        def spy(tt, parent, atv):
            calls.append((tt, parent))
            original(tt, parent, atv)
        sim.children[0].policy.update = spy
        sim.step()
        assert len(calls) == 50

    def test_uniform_baseline_is_flat(self, world):
        sim = simulation(world)
        utilities = [sim.step().utility for _ in range(20)]
        assert max(utilities) - min(utilities) < 1e-12
        np.testing.assert_array_equal(sim.children[0].policy.combined(0), np.full(20, 1 / 20))

    def test_multi_child_spreads_work(self):
        w = build_world(SystemSpec(n_children=3), np.random.default_rng(2))
        sim = simulation(w, ParentGroupMap.round_robin(w.sd.parents, 1), eps=0.1)
        for _ in range(10):
            sim.step()
        used = [ch.policy._n_samples for ch in sim.children]
        assert sum(used) == 500
        assert sum(u > 0 for u in used) >= 2

    def test_conservation_guard(self, world, monkeypatch):
        import mgrao.environment as env
        monkeypatch.setattr(env, "compute_atv", lambda taq, c: taq * c * 1.01)
        with pytest.raises(FeedbackConservationError):
            simulation(world).step()

    def test_rejoining_parent_keeps_identity(self, world):
        sim = simulation(world, ParentGroupMap.round_robin(world.sd.parents, 1), churn=0.5, seed=3)
        before = {p.id: (p.composite_type, p.hidden_preference.copy()) for p in world.parents}
        for _ in range(10):
            sim.step()
        for p in world.parents:
            assert p.composite_type == before[p.id][0]
            np.testing.assert_array_equal(p.hidden_preference, before[p.id][1])


def test_child_interfaces_never_see_preferences():
    # children only learn through (task type, parent id, atv) and sample counts
    for method in ("update", "weighting", "record_sample"):
        params = set(inspect.signature(getattr(MGRAOLearner, method)).parameters) - {"self"}
        assert not params & {"hidden_preference", "preference", "ctv", "demand"}
    assert list(inspect.signature(MGRAOLearner.update).parameters) == ["self", "task_type", "parent", "atv"]
