import numpy as np
import pytest

from evoflow.agent import Trajectory, make_agent
from evoflow.envs import HypergridEnv
from evoflow.errors import ConfigError
from evoflow.evolution import (
    EvoConfig,
    Population,
    crossover,
    evaluate,
    evolve_generation,
    mutate,
    rng_stream,
    roulette_select,
    select_elites,
    tournament_select,
)
from evoflow.numnet import MlpSpec, all_row_views, init_params
from evoflow.replay import ReplayBuffer, ReplayConfig


@pytest.fixture
def proto(grid2x4):
    return make_agent("TB", grid2x4, (6,), np.random.default_rng(0))


def dummy_eval(fitness_by_member):
    def fn(i, agent, rng):
        return float(fitness_by_member[i]), []

    return fn


# -- evaluate -------------------------------------------------------------------

def test_evaluate_mean_reward(grid2x4, proto, rng):
    buf = ReplayBuffer(ReplayConfig(capacity=100))
    fitness, trajs = evaluate(proto, grid2x4, 4, rng, buffer=buf)
    assert len(trajs) == 4
    assert len(buf) == 4  # grows by exactly E
    assert fitness == pytest.approx(np.mean([t.reward for t in trajs]))


def test_evaluate_deterministic_agent(grid2x4, proto):
    from evoflow.numnet import zeros_params

    agent = proto.clone_with(zeros_params(proto.spec))
    _, b = agent.params.weights_and_bias(agent.params.n_layers - 1)
    b[grid2x4.stop_action] = 60.0  # always stop at the origin
    for seed in (1, 2, 3):
        fitness, _ = evaluate(agent, grid2x4, 3, np.random.default_rng(seed))
        assert fitness == pytest.approx(grid2x4.reward((0, 0)))


# -- selection ------------------------------------------------------------------

def test_select_elites_counts_and_ties():
    assert select_elites(np.array([1.0, 2.0, 3.0, 4.0, 5.0]), EvoConfig(k=5).n_elites) == [4]
    assert EvoConfig(k=5, elite_frac=0.2).n_elites == 1
    assert EvoConfig(k=10, elite_frac=0.4).n_elites == 4
    assert select_elites(np.array([7.0, 7.0, 7.0]), 2) == [0, 1]
    f = np.array([3.0, 9.0, 1.0, 8.0, 5.0, 9.5, 2.0, 0.5, 4.0, 8.5])
    assert set(select_elites(f, 4)) == {5, 1, 9, 3}


def test_roulette_uniform_when_tied(rng):
    f = np.full(4, 2.5)
    counts = np.zeros(4)
    n = 10_000
    for i in roulette_select(f, n, rng):
        counts[i] += 1
    sigma = np.sqrt(n * 0.25 * 0.75)
    assert np.all(np.abs(counts - n / 4) < 3 * sigma)


def test_roulette_dominant_member(rng):
    f = np.array([1e-9, 1e-9, 1e6, 1e-9])
    picks = roulette_select(f, 2000, rng)
    assert np.mean([p == 2 for p in picks]) > 0.999


def test_roulette_empty():
    assert roulette_select(np.array([1.0, 2.0]), 0, np.random.default_rng(0)) == []


def test_tournament_prefers_fit(rng):
    f = np.array([0.0, 10.0, 1.0, 2.0])
    picks = tournament_select(f, 3000, rng, size=3)
    share_best = np.mean([p == 1 for p in picks])
    assert share_best > 0.5


# -- crossover ------------------------------------------------------------------

class ForcedRng:
    """Plays back scripted integers/floats, delegating the rest."""

    def __init__(self, integers=(), randoms=()):
        self._integers = list(integers)
        self._randoms = list(randoms)

    def integers(self, lo, hi=None, size=None):
        return self._integers.pop(0)

    def random(self):
        return self._randoms.pop(0)


def make_pair(rng, spec=None):
    spec = spec or MlpSpec(3, (4,), 2)
    return init_params(spec, rng), init_params(spec, rng)


def test_crossover_zero_swaps_copies_parents(rng):
    a, b = make_pair(rng)
    forced = ForcedRng(integers=[0, 0])  # num_swaps = 0 in both layers
    ca, cb = crossover(a, b, forced)
    assert np.array_equal(ca.values, a.values)
    assert np.array_equal(cb.values, b.values)
    assert ca is not a and cb is not b


def test_crossover_single_forced_swap(rng):
    a, b = make_pair(rng)
    # layer 0: one swap at row 2 with r < 0.5; layer 1: none
    forced = ForcedRng(integers=[1, 2, 0], randoms=[0.1])
    ca, cb = crossover(a, b, forced)
    from evoflow.numnet import row_views

    assert np.array_equal(row_views(ca, 0)[2], row_views(b, 0)[2])
    for i in (0, 1, 3):
        assert np.array_equal(row_views(ca, 0)[i], row_views(a, 0)[i])
    assert np.array_equal(cb.values, b.values)
    assert np.array_equal(ca.layer(1), a.layer(1))


def test_crossover_row_provenance(rng):
    for _ in range(30):
        a, b = make_pair(rng)
        ca, cb = crossover(a, b, rng)
        for child in (ca, cb):
            rows_c = all_row_views(child)
            rows_a = all_row_views(a)
            rows_b = all_row_views(b)
            for rc, ra, rb in zip(rows_c, rows_a, rows_b):
                assert np.array_equal(rc, ra) or np.array_equal(rc, rb)


def test_crossover_layout_mismatch(rng):
    a, _ = make_pair(rng)
    c, _ = make_pair(rng, MlpSpec(3, (5,), 2))
    with pytest.raises(ConfigError):
        crossover(a, c, rng)


def test_crossover_leaves_parents_untouched(rng):
    a, b = make_pair(rng)
    va, vb = a.values.copy(), b.values.copy()
    crossover(a, b, rng)
    assert np.array_equal(a.values, va)
    assert np.array_equal(b.values, vb)


# -- mutation -------------------------------------------------------------------

def test_mutate_disabled(rng):
    a, _ = make_pair(rng)
    cfg = EvoConfig(p_mutation=0.0)
    assert mutate(a, cfg, rng) is a


def test_mutate_small_gamma(rng):
    a, _ = make_pair(rng)
    cfg = EvoConfig(mutation_strength=1e-7, p_mutation=1.0, row_mut_frac=1.0)
    out = mutate(a, cfg, rng)
    assert np.max(np.abs(out.values - a.values)) < 1e-6
    assert np.any(out.values != a.values)


def test_mutate_statistics(rng):
    # single-row parameter vector: every mutation hits that row
    spec = MlpSpec(7, (), 1)
    params = init_params(spec, rng)
    cfg = EvoConfig(mutation_strength=1.0, p_mutation=1.0, row_mut_frac=1.0)
    deltas = []
    for _ in range(10_000):
        out = mutate(params, cfg, rng)
        deltas.extend((out.values - params.values).tolist())
    deltas = np.asarray(deltas)
    n = deltas.size
    gamma = cfg.mutation_strength
    assert abs(deltas.mean()) < 3 * gamma / np.sqrt(n)
    # variance of the sample variance of a normal is ~2 sigma^4 / n
    assert abs(deltas.var() - gamma**2) < 3 * np.sqrt(2 * gamma**4 / n)


def test_mutate_row_fraction(rng):
    spec = MlpSpec(4, (10,), 4)
    params = init_params(spec, rng)
    cfg = EvoConfig(mutation_strength=1.0, p_mutation=1.0, row_mut_frac=0.1)
    out = mutate(params, cfg, rng)
    changed = sum(
        not np.array_equal(r1, r2)
        for r1, r2 in zip(all_row_views(params), all_row_views(out))
    )
    assert changed == 2  # ceil(0.1 * 14)


# -- evolve_generation ----------------------------------------------------------

def test_generation_size_and_elites(grid2x4, proto):
    cfg = EvoConfig(k=5)
    pop = Population.initial(proto, cfg.k, seed=3)
    buf = ReplayBuffer(ReplayConfig(capacity=1000))
    res = evolve_generation(pop, grid2x4, proto, buf, cfg, seed=3)
    assert len(res.population) == 5
    assert len(buf) == cfg.k * cfg.eval_episodes
    assert len(res.trajectories) == cfg.k * cfg.eval_episodes
    elite = res.elite_indices[0]
    assert np.array_equal(res.population.members[elite].values, pop.members[elite].values)
    assert res.population.generation == 1


def test_generation_deterministic_across_workers(grid2x4, proto):
    cfg = EvoConfig(k=5)
    outs = []
    for workers in (1, 4):
        pop = Population.initial(proto, cfg.k, seed=9)
        buf = ReplayBuffer(ReplayConfig(capacity=1000))
        res = evolve_generation(pop, grid2x4, proto, buf, cfg, seed=9, workers=workers)
        outs.append((res.fitness.copy(),
                     [m.values.copy() for m in res.population.members],
                     [t.actions for t in res.trajectories]))
    assert np.array_equal(outs[0][0], outs[1][0])
    assert all(np.array_equal(x, y) for x, y in zip(outs[0][1], outs[1][1]))
    assert outs[0][2] == outs[1][2]


def test_generation_children_are_crossover_products(grid2x4, proto):
    # with mutation off, every non-elite row must come from some member
    cfg = EvoConfig(k=4, p_mutation=0.0)
    pop = Population.initial(proto, cfg.k, seed=5)
    res = evolve_generation(pop, grid2x4, proto, None, cfg, seed=5)
    parents_rows = [all_row_views(m) for m in pop.members]
    elite_set = set(res.elite_indices)
    for slot in range(cfg.k):
        if slot in elite_set:
            continue
        for r_i, row in enumerate(all_row_views(res.population.members[slot])):
            assert any(np.array_equal(row, pr[r_i]) for pr in parents_rows)


def test_sync_replaces_worst_member(grid2x4, proto):
    cfg = EvoConfig(k=4, sync_period=2, p_mutation=1.0)
    fitness_script = [3.0, 1.0, 4.0, 2.0]
    pop = Population.initial(proto, cfg.k, seed=7)
    star = init_params(proto.spec, np.random.default_rng(99))
    # generation 0: no sync (period 2 means generations 1, 3, ... sync)
    res0 = evolve_generation(pop, grid2x4, proto, None, cfg, seed=7,
                             learner_params=star, evaluate_fn=dummy_eval(fitness_script))
    assert res0.synced_slot is None
    res1 = evolve_generation(res0.population, grid2x4, proto, None, cfg, seed=7,
                             learner_params=star, evaluate_fn=dummy_eval(fitness_script))
    assert res1.synced_slot == 1  # worst fitness
    assert np.array_equal(res1.population.members[1].values, star.values)
    assert res1.population.members[1] is not star


def test_sync_never_overwrites_elite(grid2x4, proto):
    cfg = EvoConfig(k=3, elite_frac=0.5, sync_period=1)
    # all fitness equal: elites are the lowest indices; sync must pick a non-elite
    pop = Population.initial(proto, cfg.k, seed=11)
    star = init_params(proto.spec, np.random.default_rng(1))
    res = evolve_generation(pop, grid2x4, proto, None, cfg, seed=11,
                            learner_params=star, evaluate_fn=dummy_eval([2.0, 2.0, 2.0]))
    assert res.synced_slot == 2
    assert set(res.elite_indices) == {0, 1}


def test_config_validation():
    with pytest.raises(ConfigError):
        EvoConfig(k=1)
    with pytest.raises(ConfigError):
        EvoConfig(elite_frac=0.0)
    with pytest.raises(ConfigError):
        EvoConfig(selection="rank")


def test_rng_stream_disjoint():
    a = rng_stream(3, 0, 1, 2).random(4)
    b = rng_stream(3, 0, 1, 3).random(4)
    c = rng_stream(3, 0, 1, 2).random(4)
    assert not np.array_equal(a, b)
    assert np.array_equal(a, c)
