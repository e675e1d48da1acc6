"""One-feature differential-evolution attack and the random baseline.

A candidate is a 2-vector ``(k_real, delta)``: ``floor(k_real)`` picks the
feature, ``delta`` is the additive shift applied to it. The search is plain
DE/rand/1/bin with greedy per-individual selection, maximizing the prediction
loss reported by :func:`score`.
"""
from __future__ import annotations

import hashlib
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Any, Sequence

import numpy as np

from .features import (
    DEFAULT_BUDGET,
    FeatureId,
    Perturbation,
    apply,
    bounds_for,
    delta_bounds,
    enumerate_features,
)
from .predictor import Predictor
from .prompts import ParseFailure
from .scenario import (
    DrivingScenario,
    GroundTruth,
    PredictionResult,
    prediction_from_dict,
    prediction_to_dict,
)


class NoAttackSurface(ValueError):
    """The scenario has no surrounding vehicle, so there is nothing to perturb."""


@dataclass(frozen=True)
class DEParams:
    population: int = 5
    alpha: float = 0.5
    cr: float = 0.9
    generations: int = 10
    budget: float = DEFAULT_BUDGET

    def __post_init__(self) -> None:
        if self.population < 4:
            raise ValueError("population must be >= 4 (mutation needs three distinct donors)")
        if not 0 <= self.alpha <= 2:
            raise ValueError("alpha must lie in [0, 2]")
        if not 0 <= self.cr <= 1:
            raise ValueError("cr must lie in [0, 1]")
        if self.generations < 0:
            raise ValueError("generations must be >= 0")
        if not 0 < self.budget < 1:
            raise ValueError("budget must lie in (0, 1)")

    @property
    def max_queries(self) -> int:
        return self.population * (self.generations + 1)


@dataclass(frozen=True)
class FitnessWeights:
    trajectory: float = 1.0
    intention: float = 5.0
    parse_failure: float | None = None  # defaults to the intention weight

    def __post_init__(self) -> None:
        if self.trajectory < 0 or self.intention < 0:
            raise ValueError("weights must be non-negative")
        if self.trajectory == 0 and self.intention == 0:
            raise ValueError("weights must not both be zero")
        if self.parse_failure is None:
            object.__setattr__(self, "parse_failure", self.intention)


def rng_for(master_seed: int, scenario_id: str) -> np.random.Generator:
    """Private RNG stream per (seed, scenario), independent of scheduling."""
    digest = hashlib.sha256(scenario_id.encode()).digest()
    return np.random.default_rng([int(master_seed), int.from_bytes(digest[:8], "little")])


# -- DE operators ---------------------------------------------------------------


def decode(k_real: float, features: Sequence[FeatureId]) -> FeatureId:
    k = int(math.floor(k_real))
    return features[min(max(k, 0), len(features) - 1)]


def _features(scenario: DrivingScenario) -> list[FeatureId]:
    features = enumerate_features(scenario)
    if not features:
        raise NoAttackSurface(f"scenario {scenario.id} has no surrounding vehicles")
    return features


def init_population(
    scenario: DrivingScenario,
    params: DEParams,
    rng: np.random.Generator,
    features: Sequence[FeatureId] | None = None,
) -> np.ndarray:
    features = features or _features(scenario)
    F = len(features)
    spans = [delta_bounds(scenario, f, params.budget) for f in features]
    any_open = any(hi > lo for lo, hi in spans)
    pop = np.empty((params.population, 2))
    for i in range(params.population):
        while True:
            k_real = rng.uniform(0, F)
            lo, hi = spans[decode(k_real, features).ordinal]
            if hi > lo or not any_open:
                break
        pop[i] = k_real, rng.uniform(lo, hi)
    return pop


def pick_donors(n: int, i: int, rng: np.random.Generator) -> tuple[int, int, int]:
    others = [j for j in range(n) if j != i]
    r1, r2, r3 = rng.choice(others, size=3, replace=False)
    return int(r1), int(r2), int(r3)


def mutate(
    population: np.ndarray,
    i: int,
    alpha: float,
    rng: np.random.Generator,
    donors: tuple[int, int, int] | None = None,
) -> np.ndarray:
    """``x_r1 + alpha * (x_r2 - x_r3)`` with r1, r2, r3 distinct and != i."""
    if len(population) < 4:
        raise ValueError("mutation needs a population of at least 4")
    r1, r2, r3 = donors if donors is not None else pick_donors(len(population), i, rng)
    if len({i, r1, r2, r3}) != 4:
        raise ValueError(f"donors {r1, r2, r3} must be distinct and differ from {i}")
    return population[r1] + alpha * (population[r2] - population[r3])


def crossover(x: np.ndarray, v: np.ndarray, cr: float, rng) -> np.ndarray:
    """Binomial crossover; dimension ``rand2`` always comes from the mutant."""
    d = len(x)
    r1 = rng.random(d)
    forced = int(rng.integers(d))
    take = (r1 <= cr) | (np.arange(d) == forced)
    return np.where(take, v, x)


def repair(
    candidate: np.ndarray,
    scenario: DrivingScenario,
    budget: float,
    rng: np.random.Generator,
    features: Sequence[FeatureId] | None = None,
) -> np.ndarray:
    """Wrap the feature coordinate into [0, F); resample an out-of-range delta."""
    features = features or _features(scenario)
    F = len(features)
    k_real = math.fmod(float(candidate[0]), F)
    if k_real < 0:
        k_real += F
    if k_real >= F:  # -tiny + F rounds up to F
        k_real = 0.0
    delta = float(candidate[1])
    lo, hi = delta_bounds(scenario, decode(k_real, features), budget)
    if not lo <= delta <= hi:
        delta = float(rng.uniform(lo, hi))
    return np.array([k_real, delta])


# -- fitness -----------------------------------------------------------------


def displacement(
    trajectory: Sequence[tuple[float, float]], truth: Sequence[tuple[float, float]]
) -> float:
    """Mean Euclidean distance over the four horizon points."""
    return sum(math.hypot(px - tx, py - ty) for (px, py), (tx, ty) in zip(trajectory, truth)) / len(
        truth
    )


def score(
    prediction: PredictionResult | None,
    truth: GroundTruth,
    weights: FitnessWeights,
    clean_displacement: float = 0.0,
) -> float:
    """Prediction loss; ``None`` stands for an unparseable answer."""
    if prediction is None:
        return weights.trajectory * clean_displacement + weights.parse_failure
    return weights.trajectory * displacement(prediction.trajectory, truth.trajectory) + (
        weights.intention * (prediction.intention != truth.intention)
    )


@dataclass(frozen=True)
class Outcome:
    feature: str | None
    delta: float
    fitness: float
    prediction: PredictionResult | None
    failure: str | None = None

    def to_dict(self) -> dict[str, Any]:
        return {
            "feature": self.feature,
            "delta": self.delta,
            "fitness": self.fitness,
            "prediction": None if self.prediction is None else prediction_to_dict(self.prediction),
            "failure": self.failure,
        }

    @classmethod
    def from_dict(cls, d: dict[str, Any]) -> "Outcome":
        p = d.get("prediction")
        return cls(
            d.get("feature"),
            float(d["delta"]),
            float(d["fitness"]),
            None if p is None else prediction_from_dict(p),
            d.get("failure"),
        )


class Objective:
    """Fitness of candidates for one (scenario, truth, predictor) triple.

    Issues exactly one predictor query per evaluated candidate, plus one for
    the clean reference made at construction.
    """

    def __init__(
        self,
        scenario: DrivingScenario,
        truth: GroundTruth,
        predictor: Predictor,
        budget: float = DEFAULT_BUDGET,
        weights: FitnessWeights | None = None,
        workers: int = 1,
    ):
        self.scenario = scenario
        self.truth = truth
        self.predictor = predictor
        self.budget = budget
        self.weights = weights or FitnessWeights()
        self.features = _features(scenario)
        self.workers = max(1, min(workers, predictor.max_concurrency))
        self.queries = 0
        self.clean = self._query(scenario, None, 0.0)

    def _query(self, scenario: DrivingScenario, feature: str | None, delta: float) -> Outcome:
        try:
            pred = self.predictor.predict(scenario)
        except ParseFailure as exc:
            pred, failure = None, exc.category
        else:
            failure = None
        clean_disp = 0.0
        if feature is not None and self.clean.prediction is not None:
            clean_disp = displacement(self.clean.prediction.trajectory, self.truth.trajectory)
        return Outcome(feature, delta, score(pred, self.truth, self.weights, clean_disp), pred, failure)

    def perturbation(self, candidate: np.ndarray) -> Perturbation:
        return Perturbation(decode(candidate[0], self.features), float(candidate[1]))

    def evaluate(self, candidate: np.ndarray) -> Outcome:
        p = self.perturbation(candidate)
        attacked = apply(self.scenario, p, self.budget)
        self.queries += 1
        return self._query(attacked, p.feature.label, p.delta)

    def evaluate_many(self, candidates: Sequence[np.ndarray]) -> list[Outcome]:
        if self.workers == 1 or len(candidates) == 1:
            return [self.evaluate(c) for c in candidates]
        with ThreadPoolExecutor(self.workers) as pool:
            return list(pool.map(self.evaluate, candidates))

    def fallback(self, best: Outcome) -> Outcome:
        """Zero perturbation wins unless ``best`` strictly beats the clean loss."""
        return best if best.fitness > self.clean.fitness else self.clean


def fitness(
    scenario: DrivingScenario,
    truth: GroundTruth,
    candidate: np.ndarray,
    predictor: Predictor,
    budget: float = DEFAULT_BUDGET,
    weights: FitnessWeights | None = None,
) -> float:
    """One-off fitness of a single candidate (costs a clean query plus one more)."""
    return Objective(scenario, truth, predictor, budget, weights).evaluate(candidate).fitness


# -- results -------------------------------------------------------------------


@dataclass(frozen=True)
class AttackResult:
    scenario_id: str
    method: str
    seed: int
    budget: float
    clean: Outcome
    best: Outcome
    trace: tuple[float, ...]
    total_queries: int
    last: Outcome | None = None  # random baseline only: the final single draw
    clean_queries: int = 1

    @property
    def perturbed(self) -> bool:
        return self.best.feature is not None

    @property
    def impact(self) -> float:
        return self.best.fitness - self.clean.fitness

    def to_dict(self) -> dict[str, Any]:
        return {
            "scenario_id": self.scenario_id,
            "method": self.method,
            "seed": self.seed,
            "budget": self.budget,
            "clean": self.clean.to_dict(),
            "best": self.best.to_dict(),
            "last": None if self.last is None else self.last.to_dict(),
            "trace": list(self.trace),
            "total_queries": self.total_queries,
            "clean_queries": self.clean_queries,
        }

    @classmethod
    def from_dict(cls, d: dict[str, Any]) -> "AttackResult":
        return cls(
            scenario_id=d["scenario_id"],
            method=d["method"],
            seed=int(d["seed"]),
            budget=float(d["budget"]),
            clean=Outcome.from_dict(d["clean"]),
            best=Outcome.from_dict(d["best"]),
            trace=tuple(float(x) for x in d["trace"]),
            total_queries=int(d["total_queries"]),
            last=None if d.get("last") is None else Outcome.from_dict(d["last"]),
            clean_queries=int(d.get("clean_queries", 1)),
        )


# -- drivers -------------------------------------------------------------------


def run_attack(
    scenario: DrivingScenario,
    truth: GroundTruth,
    predictor: Predictor,
    params: DEParams | None = None,
    weights: FitnessWeights | None = None,
    rng: np.random.Generator | None = None,
    seed: int = 0,
    workers: int = 1,
) -> AttackResult:
    """Run the one-feature DE attack for ``params.generations`` generations.

    A trial replaces its parent only when its loss is strictly higher.
    Survivor losses are kept, so each generation costs exactly
    ``params.population`` queries.
    """
    params = params or DEParams()
    rng = rng if rng is not None else rng_for(seed, scenario.id)
    obj = Objective(scenario, truth, predictor, params.budget, weights, workers)
    features = obj.features
    n = params.population

    pop = init_population(scenario, params, rng, features)
    outcomes = obj.evaluate_many(list(pop))
    fit = np.array([o.fitness for o in outcomes])
    trace = [float(fit.max())]

    for _ in range(params.generations):
        trials = []
        for i in range(n):
            v = mutate(pop, i, params.alpha, rng)
            u = crossover(pop[i], v, params.cr, rng)
            trials.append(repair(u, scenario, params.budget, rng, features))
        trial_outcomes = obj.evaluate_many(trials)
        for i, o in enumerate(trial_outcomes):
            if o.fitness > fit[i]:
                pop[i], fit[i], outcomes[i] = trials[i], o.fitness, o
        trace.append(float(fit.max()))

    best = outcomes[int(np.argmax(fit))]
    return AttackResult(
        scenario_id=scenario.id,
        method="de",
        seed=seed,
        budget=params.budget,
        clean=obj.clean,
        best=obj.fallback(best),
        trace=tuple(trace),
        total_queries=obj.queries,
    )


def random_attack(
    scenario: DrivingScenario,
    truth: GroundTruth,
    predictor: Predictor,
    query_budget: int,
    budget: float = DEFAULT_BUDGET,
    rng: np.random.Generator | None = None,
    weights: FitnessWeights | None = None,
    seed: int = 0,
) -> AttackResult:
    """Unoptimized baseline: i.i.d. uniform feature and uniform in-range delta.

    ``last`` is the final draw (the single-shot random attack); ``best`` is the
    best of all draws, for a like-for-like comparison with DE.
    """
    if query_budget < 1:
        raise ValueError("query_budget must be >= 1")
    rng = rng if rng is not None else rng_for(seed, scenario.id)
    obj = Objective(scenario, truth, predictor, budget, weights)
    F = len(obj.features)
    best: Outcome | None = None
    last: Outcome | None = None
    trace = []
    for _ in range(query_budget):
        k = int(rng.integers(F))
        lo, hi = delta_bounds(scenario, obj.features[k], budget)
        last = obj.evaluate(np.array([k + 0.5, rng.uniform(lo, hi)]))
        if best is None or last.fitness > best.fitness:
            best = last
        trace.append(best.fitness)
    return AttackResult(
        scenario_id=scenario.id,
        method="random",
        seed=seed,
        budget=budget,
        clean=obj.clean,
        best=obj.fallback(best),
        trace=tuple(trace),
        total_queries=obj.queries,
        last=last,
    )


# -- exhaustive reference ---------------------------------------------------------


@dataclass(frozen=True)
class GridResult:
    clean_fitness: float
    best_fitness: float
    feature: FeatureId | None
    value: float | None
    step: float
    fitness: dict[str, list[float]] = field(repr=False, default_factory=dict)


def grid_oracle(
    scenario: DrivingScenario,
    truth: GroundTruth,
    predictor: Predictor,
    budget: float = DEFAULT_BUDGET,
    steps: int = 41,
    weights: FitnessWeights | None = None,
) -> GridResult:
    """Evaluate ``steps`` evenly spaced values (endpoints included) for every feature."""
    obj = Objective(scenario, truth, predictor, budget, weights)
    best_f, best_feat, best_val, best_step = obj.clean.fitness, None, None, 0.0
    table: dict[str, list[float]] = {}
    for feat in obj.features:
        lo, hi = bounds_for(scenario, feat, budget)
        lo_d, hi_d = delta_bounds(scenario, feat, budget)
        row = []
        for j in range(steps):
            d = lo_d + (hi_d - lo_d) * j / (steps - 1)
            f = obj.evaluate(np.array([feat.ordinal + 0.5, d])).fitness
            row.append(f)
            if f > best_f:
                best_f, best_feat, best_val = f, feat, d
                best_step = (hi - lo) / (steps - 1)
        table[feat.label] = row
    return GridResult(obj.clean.fitness, best_f, best_feat, best_val, best_step, table)


def refined_optimum(
    scenario: DrivingScenario,
    truth: GroundTruth,
    predictor: Predictor,
    grid: GridResult,
    budget: float = DEFAULT_BUDGET,
    factor: int = 10,
    weights: FitnessWeights | None = None,
) -> float:
    """Grid optimum refined at ``factor`` times the resolution within one step of the argmax."""
    if grid.feature is None:
        return grid.best_fitness
    obj = Objective(scenario, truth, predictor, budget, weights)
    lo_d, hi_d = delta_bounds(scenario, grid.feature, budget)
    best = grid.best_fitness
    for j in range(-factor, factor + 1):
        d = grid.value + grid.step * j / factor
        d = min(max(d, lo_d), hi_d)
        best = max(best, obj.evaluate(np.array([grid.feature.ordinal + 0.5, d])).fitness)
    return best
