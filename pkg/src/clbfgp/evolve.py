"""Grammar-guided genetic programming loop for CLBF synthesis."""

from __future__ import annotations

import csv
import io
import json
import math
import time
from dataclasses import asdict, dataclass, field, fields
from typing import Sequence

import numpy as np

from . import grammar as gr
from .cmaes import optimize
from .expr import Expr, bind_params, complexity, fold, render
from .fitness import (Candidate, EvolvedModes, Evaluator, FitnessBreakdown, ProverConfig,
                      SampleBank, SynthesisProblem, total_fitness)


class ConfigInvalid(ValueError):
    pass


@dataclass
class GpConfig:
    population: int = 16
    generations: int = 50
    crossover_rate: float = 0.5
    mutation_rate: float = 0.5
    cma_iters: int = 30
    cma_popsize: int | None = None
    sigma0: float | None = None
    n_samples: int = 100
    cex_cap: int = 300
    max_depth: int = 7
    tournament: int = 3
    elite: int = 1
    seed: int = 0
    prover_budget: int = 200_000
    prover_min_width: float = 1e-4
    prover_presample: int = 2000
    time_limit: float | None = None

    def validate(self) -> None:
        for name in ("crossover_rate", "mutation_rate"):
            v = getattr(self, name)
            if not 0.0 <= v <= 1.0:
                raise ConfigInvalid(f"{name} must lie in [0, 1]")
        for name in ("population", "generations", "cma_iters", "n_samples", "cex_cap",
                     "max_depth", "tournament", "prover_budget"):
            if getattr(self, name) < 1:
                raise ConfigInvalid(f"{name} must be >= 1")
        if not 0 <= self.elite <= self.population:
            raise ConfigInvalid("elite must lie in [0, population]")
        if self.tournament > self.population:
            raise ConfigInvalid("tournament size exceeds population")

    @classmethod
    def from_dict(cls, d: dict) -> GpConfig:
        known = {f.name for f in fields(cls)}
        unknown = set(d) - known
        if unknown:
            raise ConfigInvalid(f"unknown gp options: {sorted(unknown)}")
        cfg = cls(**d)
        cfg.validate()
        return cfg

    def prover(self) -> ProverConfig:
        return ProverConfig(budget=self.prover_budget, min_width=self.prover_min_width,
                            presample=self.prover_presample, seed=self.seed)


def stream(seed: int, *path: int) -> np.random.Generator:
    """Independent RNG stream named by ``(seed, *path)``."""
    return np.random.default_rng([seed, *path])


# -- individuals -----------------------------------------------------------------------

@dataclass
class Individual:
    genotype: gr.Genotype
    V: Expr | None = None
    modes: list[list[Expr]] | None = None
    breakdown: FitnessBreakdown | None = None
    complexity: tuple[int, float] = (0, 0.0)

    @property
    def fitness(self) -> float:
        return -math.inf if self.breakdown is None else self.breakdown.total

    @property
    def verified(self) -> bool:
        return self.breakdown is not None and self.breakdown.verified


def _phenotype(p: SynthesisProblem, g: gr.Grammar, geno: gr.Genotype):
    """Parametrized phenotype: V, raw modes and the initial parameter vector."""
    V = g_expr = gr.to_phenotype(g, geno.gene_V, as_params=True)
    values = gr.const_values(geno.gene_V)
    modes = None
    if geno.gene_G is not None:
        g_expr = gr.to_phenotype(g, geno.gene_G, as_params=True, offset=len(values))
        modes = [[e] for e in g_expr]
        values = values + gr.const_values(geno.gene_G)
    return V, modes, np.array(values, dtype=float)


def _bake(geno: gr.Genotype, values: np.ndarray, shift: float) -> gr.Genotype:
    """Write optimized constants back, folding the bias into a leading constant."""
    kv = len(gr.const_values(geno.gene_V))
    vals_V = [float(v) for v in values[:kv]]
    root = geno.gene_V
    lead = root.children[0] if isinstance(root, gr.Node) and root.children else None
    if shift and isinstance(lead, gr.Node) and lead.children \
            and isinstance(lead.children[0], gr.ConstLeaf) and kv:
        vals_V[0] -= shift
    gene_V = gr.with_constants(root, vals_V)
    gene_G = geno.gene_G
    if gene_G is not None:
        gene_G = gr.with_constants(gene_G, [float(v) for v in values[kv:]])
    return gr.Genotype(gene_V, gene_G)


def evaluate(p: SynthesisProblem, g: gr.Grammar, geno: gr.Genotype, bank: SampleBank,
             cfg: GpConfig, rng: np.random.Generator, optimize_constants: bool = True) -> Individual:
    """Tune constants by CMA-ES on the sample fitness, then score with the prover."""
    V, modes, values = _phenotype(p, g, geno)
    cand = Candidate(V, values, modes)
    ev = Evaluator(p, cand)
    if optimize_constants and values.size:
        sigma0 = cfg.sigma0 or 0.5 * (1.0 + float(np.max(np.abs(values))))
        res = optimize(lambda P: ev.sample_totals(P, bank), values, sigma0, cfg.cma_iters, rng,
                       popsize=cfg.cma_popsize, vectorized=True, target=float(p.n_conditions()))
        values = res.best_x
    shift = float(ev.shift_for(values[None, :], bank)[0])
    geno = _bake(geno, values, shift)
    V, modes, values = _phenotype(p, g, geno)
    cand = Candidate(V, values, modes)
    bd = total_fitness(p, cand, bank, cfg.prover())
    V_bound = fold(bind_params(V, values) - bd.shift) if bd.shift else fold(bind_params(V, values))
    modes_bound = None if modes is None else [[fold(bind_params(e, values)) for e in m] for m in modes]
    cx = [complexity(V_bound)] + [complexity(e) for m in (modes_bound or []) for e in m]
    comp = (sum(c[0] for c in cx), max(c[1] for c in cx))
    return Individual(geno, V_bound, modes_bound, bd, comp)


# -- selection ----------------------------------------------------------------------------

def _key(ind: Individual, idx: int):
    return (-ind.fitness, ind.complexity[0], ind.complexity[1], idx)


def rank(pop: Sequence[Individual]) -> list[Individual]:
    """Best first: fitness, then fewer parameters, then smaller largest parameter."""
    order = sorted(range(len(pop)), key=lambda i: _key(pop[i], i))
    return [pop[i] for i in order]


def tournament_select(pop: Sequence[Individual], size: int, rng: np.random.Generator) -> Individual:
    if not 1 <= size <= len(pop):
        raise ValueError("tournament size must lie in [1, len(pop)]")
    draws = rng.integers(len(pop), size=size)
    best = min(draws, key=lambda i: _key(pop[i], int(i)))
    return pop[int(best)]


def next_generation(pop: Sequence[Individual], cfg: GpConfig, g: gr.Grammar,
                    generation: int = 0) -> list[gr.Genotype]:
    """Elites verbatim, the rest bred from tournament winners.

    Offspring ``slot`` uses its own RNG stream, so the result does not
    depend on evaluation order.
    """
    ranked = rank(pop)
    out = [ind.genotype for ind in ranked[:cfg.elite]]
    for slot in range(cfg.elite, cfg.population):
        rng = stream(cfg.seed, generation, slot, 1)
        child = tournament_select(ranked, cfg.tournament, rng).genotype
        genes = child.genes()
        if rng.random() < cfg.crossover_rate:
            other = tournament_select(ranked, cfg.tournament, rng).genotype.genes()
            k = int(rng.integers(len(genes)))
            genes[k] = gr.crossover(g, genes[k], other[k], rng)[0]
        if rng.random() < cfg.mutation_rate:
            k = int(rng.integers(len(genes)))
            genes[k] = gr.mutate(g, genes[k], rng)
        out.append(gr.Genotype(*genes))
    return out


def initial_population(p: SynthesisProblem, g: gr.Grammar, cfg: GpConfig) -> list[gr.Genotype]:
    out = []
    for slot in range(cfg.population):
        rng = stream(cfg.seed, 0, slot, 0)
        gene_V = gr.grow(g, g.starts.get("V", "V"), rng)
        gene_G = gr.grow(g, g.starts.get("G", "G"), rng) if isinstance(p.modes, EvolvedModes) else None
        out.append(gr.Genotype(gene_V, gene_G))
    return out


# -- report --------------------------------------------------------------------------------

STATS_COLUMNS = ["generation", "best_fitness", "mean_fitness", "best_params", "bank_size",
                 "elapsed_s"]


@dataclass
class SynthesisReport:
    success: bool
    generations: int
    best: Individual | None
    stats: list[dict] = field(default_factory=list)
    counterexamples: list[dict] = field(default_factory=list)
    seed: int = 0
    config: dict = field(default_factory=dict)
    wall_time: float = 0.0
    var_names: list[str] = field(default_factory=list)
    stop_reason: str = ""

    def best_V(self) -> str:
        return render(self.best.V, self.var_names) if self.best else ""

    def best_modes(self) -> list[str] | None:
        if self.best is None or self.best.modes is None:
            return None
        return [render(m[0], self.var_names) for m in self.best.modes]

    def to_dict(self) -> dict:
        bd = self.best.breakdown if self.best else None
        return {
            "success": self.success,
            "stop_reason": self.stop_reason,
            "generations": self.generations,
            "wall_time_s": round(self.wall_time, 3),
            "seed": self.seed,
            "V": self.best_V(),
            "modes": self.best_modes(),
            "fitness": None if bd is None else {
                "total": bd.total, "errors": bd.errors, "f_samp": bd.f_samp,
                "weights": bd.weights, "f_smt": bd.f_smt, "center_error": bd.center_error,
                "budget_flags": bd.budget_flags,
                "outcomes": {str(k): str(v) for k, v in bd.outcomes.items()},
            },
            "complexity": None if self.best is None else list(self.best.complexity),
            "config": self.config,
            "stats": self.stats,
            "counterexamples": self.counterexamples,
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2)

    def stats_csv(self) -> str:
        buf = io.StringIO()
        ncond = max((len(r.get("errors", [])) for r in self.stats), default=0)
        cols = STATS_COLUMNS + [f"e{i + 1}" for i in range(ncond)] + [f"smt{i + 1}" for i in range(ncond)]
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(cols)
        for r in self.stats:
            w.writerow([r[c] for c in STATS_COLUMNS] + list(r["errors"]) + list(r["f_smt"]))
        return buf.getvalue()


def run(p: SynthesisProblem, g: gr.Grammar, cfg: GpConfig, log=None) -> SynthesisReport:
    """Evolve until every certified condition holds or the budget runs out."""
    cfg.validate()
    if isinstance(p.modes, EvolvedModes) and p.sys.m != 1:
        raise ConfigInvalid("evolved modes are supported for single-input systems only")
    t0 = time.perf_counter()
    bank = SampleBank(p, cfg.n_samples, cfg.cex_cap, stream(cfg.seed, 0, 0, 2))
    report = SynthesisReport(False, 0, None, seed=cfg.seed, config=asdict(cfg),
                             var_names=list(g.var_names))
    genos = initial_population(p, g, cfg)
    best: Individual | None = None
    for gen in range(cfg.generations):
        pop = [evaluate(p, g, geno, bank, cfg, stream(cfg.seed, gen, slot, 3))
               for slot, geno in enumerate(genos)]
        ranked = rank(pop)
        best = ranked[0]
        new_cex = [(ind, c) for ind in pop for c in ind.breakdown.counterexamples]
        for _, (i, pt) in new_cex:
            bank.add(i, pt)
            report.counterexamples.append({"generation": gen, "condition": i,
                                           "point": [float(v) for v in pt]})
        bd = best.breakdown
        row = {"generation": gen, "best_fitness": round(bd.total, 6),
               "mean_fitness": round(float(np.mean([i.fitness for i in pop])), 6),
               "best_params": best.complexity[0], "bank_size": len(bank),
               "elapsed_s": round(time.perf_counter() - t0, 3),
               "errors": [round(e, 6) for e in bd.errors], "f_smt": list(bd.f_smt)}
        report.stats.append(row)
        if log:
            log(f"gen {gen}: best {bd.total:.4f} mean {row['mean_fitness']:.4f} "
                f"cex {len(bank)} V = {render(best.V, g.var_names)}")
        report.generations = gen + 1
        verified = [ind for ind in ranked if ind.verified]
        if verified:
            best = verified[0]
            report.success, report.stop_reason = True, "verified"
            break
        if cfg.time_limit is not None and time.perf_counter() - t0 > cfg.time_limit:
            report.stop_reason = "time limit"
            break
        genos = next_generation(pop, cfg, g, gen + 1)
    else:
        report.stop_reason = "generation limit"
    report.best = best
    report.wall_time = time.perf_counter() - t0
    return report
