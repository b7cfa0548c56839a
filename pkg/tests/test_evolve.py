import numpy as np
import pytest

from clbfgp import config, grammar as gr
from clbfgp.evolve import (ConfigInvalid, GpConfig, Individual, initial_population,
                           next_generation, rank, run, stream, tournament_select)
from clbfgp.fitness import FitnessBreakdown


def ind(total, params=1, largest=1.0, tag=0):
    bd = FitnessBreakdown([], [], [], [], 0.0, total)
    return Individual(gr.Genotype(gr.Node("V", tag)), breakdown=bd, complexity=(params, largest))


def test_rank_tie_breaks():
    assert rank([ind(5), ind(6)])[0].fitness == 6
    assert rank([ind(3, 5), ind(3, 2)])[0].complexity[0] == 2
    assert rank([ind(3, 2, 9.8), ind(3, 2, 3.2)])[0].complexity[1] == 3.2
    a, b = ind(1, tag=1), ind(1, tag=2)
    assert rank([a, b])[0] is a


def test_unevaluated_ranks_last():
    none = Individual(gr.Genotype(gr.Node("V", 0)))
    assert rank([none, ind(0.1)])[-1] is none


def test_tournament_picks_best_of_draws():
    pop = [ind(k) for k in range(10)]
    rng = np.random.default_rng(0)
    assert tournament_select(pop, 10, np.random.default_rng(0)).fitness >= \
        max(pop[int(i)].fitness for i in np.random.default_rng(0).integers(10, size=10))
    assert tournament_select(pop, 1, rng) in pop
    with pytest.raises(ValueError):
        tournament_select(pop, 11, rng)


def test_next_generation_keeps_elite_and_size():
    pf = config.load_problem("linear")
    cfg = GpConfig(population=16, elite=1, seed=3)
    genos = initial_population(pf.problem, pf.grammar, cfg)
    pop = [Individual(gsub, breakdown=FitnessBreakdown([], [], [], [], 0.0, float(k)))
           for k, gsub in enumerate(genos)]
    nxt = next_generation(pop, cfg, pf.grammar, 1)
    assert len(nxt) == 16 and nxt[0] == genos[-1]
    for gsub in nxt:
        gr.check_tree(pf.grammar, gsub.gene_V, "V")
    assert nxt == next_generation(pop, cfg, pf.grammar, 1)


def test_streams_are_independent_and_reproducible():
    a = stream(0, 1, 2).random(3)
    assert np.array_equal(a, stream(0, 1, 2).random(3))
    assert not np.array_equal(a, stream(0, 1, 3).random(3))


@pytest.mark.parametrize("bad", [dict(crossover_rate=1.5), dict(population=0),
                                 dict(elite=20), dict(tournament=17), dict(generations=0)])
def test_config_validation(bad):
    with pytest.raises(ConfigInvalid):
        GpConfig(**bad).validate()
    with pytest.raises(ConfigInvalid):
        GpConfig.from_dict({"nonsense": 1})


def test_small_run_is_deterministic():
    pf = config.load_problem("linear", {"generations": 2, "seed": 5})
    cfg = GpConfig(**{**pf.gp.__dict__, "population": 4, "cma_iters": 5, "generations": 2})
    a = run(pf.problem, pf.grammar, cfg)
    b = run(pf.problem, pf.grammar, cfg)
    assert a.best_V() == b.best_V() and a.generations == b.generations
    assert a.stats and "best_fitness" in a.stats_csv().splitlines()[0]
    d = a.to_dict()
    assert d["seed"] == 5 and d["stop_reason"] in ("verified", "generation limit")


def test_evolved_modes_need_single_input():
    pf = config.load_problem("cartpole_evolve")
    assert pf.problem.sys.m == 1
