"""Black-box tuning of a template's integer slots.

Round one is a Latin-hypercube style stratified sample that always
contains the template defaults. Later rounds spend half the batch on
coordinate perturbations of the best trial so far, with a radius that
shrinks geometrically, and half on fresh stratified draws.
"""

from __future__ import annotations

import json
import random
from dataclasses import dataclass, field
from typing import Callable, Iterable, Mapping, Optional, Sequence

from .dsl.expr import PolicyTemplate

Assignment = dict[str, int]
Score = Optional[float]  # None is the Invalid score

INITIAL_RADIUS = 0.1
RADIUS_DECAY = 0.9
DEDUP_RETRIES = 32


@dataclass(frozen=True)
class Dim:
    name: str
    lo: int
    hi: int

    def clamp(self, v: int) -> int:
        return min(self.hi, max(self.lo, v))


@dataclass(frozen=True)
class ParamSpace:
    dims: tuple[Dim, ...]
    defaults: Mapping[str, int] = field(default_factory=dict)

    @classmethod
    def of(cls, t: PolicyTemplate) -> ParamSpace:
        return cls(tuple(Dim(s.name, s.lo, s.hi) for s in t.slots), t.defaults())

    def contains(self, a: Mapping[str, int]) -> bool:
        return set(a) == {d.name for d in self.dims} and all(d.lo <= a[d.name] <= d.hi for d in self.dims)

    def size(self) -> int:
        n = 1
        for d in self.dims:
            n *= d.hi - d.lo + 1
        return n


@dataclass(frozen=True)
class TuneTrial:
    round: int
    index: int
    assignment: Mapping[str, int]
    score: Score

    def to_json(self) -> dict:
        return {"round": self.round, "index": self.index, "assignment": dict(self.assignment), "score": self.score}


@dataclass(frozen=True)
class TuneBudget:
    batch_size: int = 10
    rounds: int = 1
    rng_seed: int = 0

    def __post_init__(self) -> None:
        if self.batch_size < 1 or self.rounds < 1:
            raise ValueError("batch_size and rounds must be positive")


@dataclass(frozen=True)
class TuneResult:
    best_assignment: Assignment
    best_score: Score
    trials: tuple[TuneTrial, ...]


def _key(space: ParamSpace, a: Mapping[str, int]) -> tuple[int, ...]:
    return tuple(a[d.name] for d in space.dims)


def _stratified(space: ParamSpace, n: int, rng: random.Random) -> list[Assignment]:
    cols = {}
    for d in space.dims:
        width = d.hi - d.lo + 1
        vals = []
        for k in range(n):
            a = d.lo + (k * width) // n
            b = d.lo + ((k + 1) * width) // n - 1
            vals.append(rng.randint(a, max(a, b)))
        rng.shuffle(vals)
        cols[d.name] = vals
    return [{d.name: cols[d.name][k] for d in space.dims} for k in range(n)]


def _uniform(space: ParamSpace, rng: random.Random) -> Assignment:
    return {d.name: rng.randint(d.lo, d.hi) for d in space.dims}


def _best(history: Sequence[TuneTrial]) -> TuneTrial | None:
    best = None
    for t in history:
        if t.score is not None and (best is None or t.score > best.score):
            best = t
    return best


def propose_batch(space: ParamSpace, history: Sequence[TuneTrial], n: int, seed: int) -> list[Assignment]:
    if n < 1:
        raise ValueError("n must be >= 1")
    if not space.dims:
        return [] if history else [{}]
    rnd = 1 + max((t.round for t in history), default=-1)
    rng = random.Random(f"{seed}:{rnd}")
    if not history:
        batch = [dict(space.defaults)] + _stratified(space, n - 1, rng) if n > 1 else [dict(space.defaults)]
    else:
        best = _best(history)
        n_exploit = n // 2 if best is not None else 0
        batch = []
        frac = INITIAL_RADIUS * RADIUS_DECAY ** (rnd - 1)
        for _ in range(n_exploit):
            a = dict(best.assignment)
            moved = [d for d in space.dims if rng.random() < 0.5] or [rng.choice(space.dims)]
            for d in moved:
                r = max(1, round((d.hi - d.lo) * frac))
                a[d.name] = d.clamp(a[d.name] + rng.randint(-r, r))
            batch.append(a)
        batch += _stratified(space, n - n_exploit, rng)

    seen = {_key(space, t.assignment) for t in history}
    out = []
    full = space.size()
    for a in batch:
        k = _key(space, a)
        tries = 0
        while k in seen and tries < DEDUP_RETRIES and len(seen) < full:
            a = _uniform(space, rng)
            k = _key(space, a)
            tries += 1
        seen.add(k)
        out.append(a)
    return out


Evaluator = Callable[[Assignment], Score]
MapFn = Callable[[Evaluator, Iterable[Assignment]], Iterable[Score]]


def tune(t: PolicyTemplate | ParamSpace, evaluate: Evaluator, budget: TuneBudget,
         map_fn: MapFn = map) -> TuneResult:
    """Run ``budget.rounds`` batches and return the best trial.

    ``map_fn`` evaluates a batch and must preserve order; it is the hook
    for parallel evaluation. Ties go to the earliest trial, and an
    all-Invalid log returns the defaults with an Invalid score.
    """
    space = t if isinstance(t, ParamSpace) else ParamSpace.of(t)
    trials: list[TuneTrial] = []
    for r in range(budget.rounds):
        batch = propose_batch(space, trials, budget.batch_size, budget.rng_seed)
        if not batch:
            break
        scores = list(map_fn(evaluate, batch))
        trials += [TuneTrial(r, i, a, s) for i, (a, s) in enumerate(zip(batch, scores))]
    best = _best(trials)
    if best is None:
        return TuneResult(dict(space.defaults), None, tuple(trials))
    return TuneResult(dict(best.assignment), best.score, tuple(trials))


def trials_to_jsonl(trials: Iterable[TuneTrial]) -> str:
    return "".join(json.dumps(t.to_json(), sort_keys=True) + "\n" for t in trials)
