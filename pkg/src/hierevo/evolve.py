"""Outer evolutionary loop over template structure.

Each candidate is a template plus the best slot assignment found for it.
With ``tuning`` on, every template that has slots gets a short autotune
run; with it off, templates are scored at their slot defaults only.
"""

from __future__ import annotations

import json
import logging
import os
import random
import shlex
import subprocess
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field, replace
from functools import cached_property
from typing import Any, Callable, Iterable, Optional, Sequence

import jsonschema

from .autotune import TuneBudget, tune
from .corpus import load_schema
from .dsl.expr import PolicyTemplate, TemplateError
from .dsl.features import CATALOG_VERSION
from .dsl.text import parse_template, print_template
from .dsl.variation import crossover, mutate
from .harness import RewardReport, Task

log = logging.getLogger(__name__)

PROPOSER_CMD_ENV = "HIEREVO_PROPOSER_CMD"
PROPOSER_TIMEOUT_ENV = "HIEREVO_PROPOSER_TIMEOUT"
DEFAULT_PROPOSER_TIMEOUT = 60.0

SEED, MUTATION, CROSSOVER, EXTERNAL = "seed", "mutation", "crossover", "external"


class ProposerError(RuntimeError):
    pass


class ProposerTimeout(ProposerError):
    pass


class ProposerProtocolError(ProposerError):
    pass


@dataclass(frozen=True)
class RunConfig:
    population_size: int = 16
    iterations: int = 20
    proposals_per_iteration: int = 4
    tune_batch: int = 10
    tune_rounds: int = 2
    tournament_k: int = 3
    crossover_rate: float = 0.2
    tuning: bool = True
    seed: int = 0
    task: str = "inline-size"
    proposer_cmd: Optional[str] = None
    proposer_timeout: float = DEFAULT_PROPOSER_TIMEOUT
    workers: int = 1

    def __post_init__(self) -> None:
        for name in ("population_size", "proposals_per_iteration", "tune_batch", "tune_rounds",
                     "tournament_k", "workers"):
            if getattr(self, name) < 1:
                raise ValueError(f"{name} must be positive")
        if self.iterations < 0:
            raise ValueError("iterations must be non-negative")
        if not 0.0 <= self.crossover_rate <= 1.0:
            raise ValueError("crossover_rate must lie in [0, 1]")
        if self.proposer_timeout <= 0:
            raise ValueError("proposer_timeout must be positive")

    def to_json(self) -> dict[str, Any]:
        return asdict(self)


@dataclass(frozen=True)
class Candidate:
    id: int
    template: str
    best_assignment: dict[str, int]
    best_score: Optional[float]
    parent_ids: tuple[int, ...]
    generation: int
    proposer: str
    diagnostics: dict[str, Any] = field(default_factory=dict)

    @property
    def valid(self) -> bool:
        return self.best_score is not None

    @property
    def eval_cost(self) -> int:
        return int(self.diagnostics.get("eval_cost", 0))

    @cached_property
    def _parsed(self) -> PolicyTemplate:
        return parse_template(self.template)

    def parsed(self) -> PolicyTemplate:
        return self._parsed

    def bound(self) -> PolicyTemplate:
        """The template with its best assignment as slot defaults, so
        offspring start tuning where the parent left off."""
        t = self.parsed()
        if not self.best_assignment:
            return t
        slots = tuple(replace(s, default=self.best_assignment.get(s.name, s.default)) for s in t.slots)
        return PolicyTemplate(t.root, slots, t.meta)

    def to_json(self) -> dict[str, Any]:
        d = asdict(self)
        d["parent_ids"] = list(self.parent_ids)
        return d


@dataclass(frozen=True)
class IterationStats:
    iteration: int
    best: Optional[float]
    mean_valid: Optional[float]
    invalid_rate: float
    evals_cumulative: int


@dataclass
class EvolutionDb:
    config: RunConfig
    candidates: list[Candidate] = field(default_factory=list)
    population: list[int] = field(default_factory=list)
    curve: list[IterationStats] = field(default_factory=list)
    generation: int = 0
    evals: int = 0
    _best: Optional[Candidate] = field(default=None, repr=False)

    def add(self, c: Candidate) -> None:
        self.candidates.append(c)
        self.evals += c.eval_cost
        if self._best is None or _rank(c) < _rank(self._best):
            self._best = c

    def best(self) -> Candidate:
        if self._best is None:
            raise ValueError("empty database")
        return self._best


def _rank(c: Candidate) -> tuple:
    # valid before invalid, higher score first, older first
    return (not c.valid, -(c.best_score or 0.0) if c.valid else 0.0, c.id)


# --------------------------------------------------------------------------
# Evaluation


@dataclass(frozen=True)
class _Outcome:
    assignment: dict[str, int]
    score: Optional[float]
    eval_cost: int
    trials: int
    message: str


def evaluate_template(task: Task, t: PolicyTemplate, config: RunConfig, seed: int) -> _Outcome:
    verdict = task.validate(t)
    if not verdict.ok:
        return _Outcome(t.defaults(), None, 0, 0, f"{verdict.reason.value}: {verdict.message}")
    if not config.tuning or not t.slots:
        r = task.evaluate(t)
        return _Outcome(t.defaults(), r.score, r.eval_cost, 1, r.diagnostics)
    reports: list[RewardReport] = []

    def score(a: dict[str, int]) -> Optional[float]:
        r = task.evaluate(t, a)
        reports.append(r)
        return r.score

    res = tune(t, score, TuneBudget(config.tune_batch, config.tune_rounds, seed))
    msg = next((r.diagnostics for r in reports if not r.valid), "") if res.best_score is None else ""
    return _Outcome(res.best_assignment, res.best_score, sum(r.eval_cost for r in reports), len(reports), msg)


_WORKER: dict[str, Any] = {}


def _init_worker(task: Task, config: RunConfig) -> None:
    _WORKER["task"] = task
    _WORKER["config"] = config


def _eval_job(job: tuple[str, int]) -> _Outcome:
    text, seed = job
    return evaluate_template(_WORKER["task"], parse_template(text), _WORKER["config"], seed)


def _evaluate_all(task: Task, config: RunConfig, jobs: list[tuple[str, int]]) -> list[_Outcome]:
    """Evaluate in child order; parallel workers do not change results."""
    if config.workers <= 1 or len(jobs) <= 1:
        return [evaluate_template(task, parse_template(text), config, seed) for text, seed in jobs]
    with ProcessPoolExecutor(config.workers, initializer=_init_worker, initargs=(task, config)) as ex:
        return list(ex.map(_eval_job, jobs))


# --------------------------------------------------------------------------
# Proposers


def proposer_command(config: RunConfig) -> Optional[list[str]]:
    cmd = config.proposer_cmd or os.environ.get(PROPOSER_CMD_ENV)
    return shlex.split(cmd) if cmd else None


def proposer_timeout(config: RunConfig) -> float:
    env = os.environ.get(PROPOSER_TIMEOUT_ENV)
    if env:
        try:
            return float(env)
        except ValueError:
            log.warning("ignoring non-numeric %s=%r", PROPOSER_TIMEOUT_ENV, env)
    return config.proposer_timeout


def external_propose(cmd: list[str], request: dict[str, Any], timeout: float) -> str:
    """One request line in, one response line out. Returns the template text."""
    line = json.dumps(request, sort_keys=True) + "\n"
    try:
        proc = subprocess.run(cmd, input=line, capture_output=True, text=True, timeout=timeout)
    except subprocess.TimeoutExpired as exc:
        raise ProposerTimeout(f"no response within {timeout:g}s") from exc
    except OSError as exc:
        raise ProposerProtocolError(f"cannot start proposer: {exc}") from exc
    if proc.returncode != 0:
        raise ProposerProtocolError(f"proposer exited with status {proc.returncode}")
    first = next((ln for ln in proc.stdout.splitlines() if ln.strip()), "")
    try:
        resp = json.loads(first)
    except json.JSONDecodeError as exc:
        raise ProposerProtocolError(f"response is not JSON: {first[:80]!r}") from exc
    try:
        jsonschema.validate(resp, load_schema("proposer_response"))
    except jsonschema.ValidationError as exc:
        raise ProposerProtocolError(f"bad response: {exc.message}") from exc
    return resp["template"]


def _request(parents: Sequence[Candidate], task: Task) -> dict[str, Any]:
    return {
        "parents": [
            {"template": p.template, "score": p.best_score, "diagnostics": p.diagnostics}
            for p in parents
        ],
        "feature_catalog_version": CATALOG_VERSION,
        "task": task.id,
    }


# --------------------------------------------------------------------------
# Loop


def _new_candidate(db: EvolutionDb, t: PolicyTemplate, outcome: _Outcome, parents: tuple[int, ...],
                   proposer: str, extra: dict[str, Any]) -> Candidate:
    diag = {"eval_cost": outcome.eval_cost, "trials": outcome.trials, **extra}
    if outcome.message:
        diag["message"] = outcome.message
    return Candidate(
        id=len(db.candidates),
        template=print_template(t),
        best_assignment=dict(outcome.assignment),
        best_score=outcome.score,
        parent_ids=parents,
        generation=db.generation,
        proposer=proposer,
        diagnostics=diag,
    )


def _truncate(db: EvolutionDb, ids: Iterable[int]) -> list[int]:
    pool = [db.candidates[i] for i in ids]
    if any(c.valid for c in pool):
        pool = [c for c in pool if c.valid]
    pool.sort(key=_rank)
    # Equal scores almost always mean behaviourally equal variants; keeping
    # only the oldest of each stops one lineage from filling the population.
    seen: set[float] = set()
    kept = []
    for c in pool:
        if c.valid and c.best_score in seen:
            continue
        seen.add(c.best_score)
        kept.append(c)
    pool = kept
    return [c.id for c in pool[: db.config.population_size]]


def seed_db(config: RunConfig, seeds: Sequence[PolicyTemplate], task: Task) -> EvolutionDb:
    if not seeds:
        raise ValueError("at least one seed template is required")
    db = EvolutionDb(config)
    jobs = [(print_template(t), _job_seed(config.seed, 0, i)) for i, t in enumerate(seeds)]
    for t, outcome in zip(seeds, _evaluate_all(task, config, jobs)):
        db.add(_new_candidate(db, t, outcome, (), SEED, {}))
    db.population = _truncate(db, range(len(db.candidates)))
    return db


def _job_seed(seed: int, generation: int, index: int) -> int:
    return random.Random(f"{seed}:job:{generation}:{index}").getrandbits(63)


def _tournament(db: EvolutionDb, rng: random.Random) -> Candidate:
    pool = [db.candidates[i] for i in db.population]
    valid = [c for c in pool if c.valid] or pool
    picks = [valid[rng.randrange(len(valid))] for _ in range(db.config.tournament_k)]
    return min(picks, key=_rank)


def step(db: EvolutionDb, task: Task) -> EvolutionDb:
    """One generation: propose, evaluate, insert, truncate, record stats."""
    cfg = db.config
    db.generation += 1
    rng = random.Random(f"{cfg.seed}:step:{db.generation}")
    cmd = proposer_command(cfg)
    timeout = proposer_timeout(cfg)
    proposals: list[tuple[PolicyTemplate, tuple[int, ...], str, dict[str, Any]]] = []
    for k in range(cfg.proposals_per_iteration):
        a = _tournament(db, rng)
        b = _tournament(db, rng)
        var_seed = rng.getrandbits(63)
        use_cx = rng.random() < cfg.crossover_rate and a.id != b.id
        parent = a.bound()
        extra: dict[str, Any] = {}
        if cmd:
            try:
                text = external_propose(cmd, _request([a, b] if use_cx else [a], task), timeout)
                child = parse_template(text)
                verdict = task.validate(child)
                if not verdict.ok:
                    raise ProposerProtocolError(f"{verdict.reason.value}: {verdict.message}")
                proposals.append((child.with_meta(), (a.id, b.id) if use_cx else (a.id,), EXTERNAL, extra))
                continue
            except (ProposerError, TemplateError) as exc:
                log.warning("external proposer failed (%s); falling back to mutation", exc)
                extra = {"fallback": type(exc).__name__, "fallback_reason": str(exc)[:200]}
        if use_cx and not cmd:
            child = crossover(parent, b.bound(), var_seed, task.catalog)
            proposals.append((child, (a.id, b.id), CROSSOVER, extra))
        else:
            child = mutate(parent, var_seed, task.catalog)
            proposals.append((child, (a.id,), MUTATION, extra))

    jobs = [(print_template(t), _job_seed(cfg.seed, db.generation, i)) for i, (t, *_rest) in enumerate(proposals)]
    outcomes = _evaluate_all(task, cfg, jobs)
    children = []
    for (t, parents, proposer, extra), outcome in zip(proposals, outcomes):
        c = _new_candidate(db, t, outcome, parents, proposer, extra)
        db.add(c)
        children.append(c)
    db.population = _truncate(db, list(db.population) + [c.id for c in children])

    valid = [c.best_score for c in children if c.valid]
    best = db.best()
    db.curve.append(IterationStats(
        iteration=db.generation,
        best=best.best_score,
        mean_valid=sum(valid) / len(valid) if valid else None,
        invalid_rate=(len(children) - len(valid)) / len(children),
        evals_cumulative=db.evals,
    ))
    return db


def run(config: RunConfig, seeds: Sequence[PolicyTemplate], task: Task,
        on_step: Callable[[EvolutionDb], None] | None = None) -> tuple[Candidate, list[IterationStats], EvolutionDb]:
    db = seed_db(config, seeds, task)
    for _ in range(config.iterations):
        step(db, task)
        if on_step:
            on_step(db)
    return db.best(), list(db.curve), db


def evals_to_reach(config: RunConfig, seeds: Sequence[PolicyTemplate], task: Task, target: float,
                   max_evals: int) -> tuple[Optional[int], EvolutionDb]:
    """Elementary evaluations spent up to and including the first candidate
    scoring at least ``target``; None if ``max_evals`` runs out first.

    Ignores ``config.iterations``: steps until success or the cap.
    """
    db = seed_db(config, seeds, task)
    spent = 0
    seen = 0
    while True:
        for c in db.candidates[seen:]:
            spent += c.eval_cost
            if c.best_score is not None and c.best_score >= target:
                return spent, db
        seen = len(db.candidates)
        if db.evals >= max_evals:
            return None, db
        step(db, task)


def invalid_rate(candidates: Sequence[Candidate]) -> float:
    """Share of non-seed candidates without a valid score."""
    kids = [c for c in candidates if c.proposer != SEED]
    return sum(not c.valid for c in kids) / len(kids) if kids else 0.0


# --------------------------------------------------------------------------
# Artifacts

CURVE_HEADER = "iteration,best,mean_valid,invalid_rate,evals_cumulative"


def _fmt(v: Optional[float]) -> str:
    return "" if v is None else repr(float(v))


def curve_csv(curve: Sequence[IterationStats]) -> str:
    rows = [CURVE_HEADER]
    for s in curve:
        rows.append(f"{s.iteration},{_fmt(s.best)},{_fmt(s.mean_valid)},{_fmt(s.invalid_rate)},{s.evals_cumulative}")
    return "\n".join(rows) + "\n"


def candidates_jsonl(candidates: Sequence[Candidate]) -> str:
    return "".join(json.dumps(c.to_json(), sort_keys=True) + "\n" for c in candidates)


def candidate_from_json(d: dict[str, Any]) -> Candidate:
    return Candidate(
        id=int(d["id"]),
        template=d["template"],
        best_assignment={k: int(v) for k, v in d.get("best_assignment", {}).items()},
        best_score=d.get("best_score"),
        parent_ids=tuple(d.get("parent_ids", ())),
        generation=int(d["generation"]),
        proposer=d["proposer"],
        diagnostics=dict(d.get("diagnostics", {})),
    )


def read_candidates(text: str) -> list[Candidate]:
    return [candidate_from_json(json.loads(ln)) for ln in text.splitlines() if ln.strip()]


def curve_from_candidates(candidates: Sequence[Candidate]) -> list[IterationStats]:
    """Rebuild the per-iteration statistics from a candidate store.

    Gives the same numbers ``step`` recorded, so a store alone is enough
    to redraw the curve.
    """
    cands = sorted(candidates, key=lambda c: c.id)
    out: list[IterationStats] = []
    best: Optional[Candidate] = None
    evals = 0
    i = 0
    while i < len(cands):
        gen = cands[i].generation
        batch = []
        while i < len(cands) and cands[i].generation == gen:
            batch.append(cands[i])
            i += 1
        for c in batch:
            evals += c.eval_cost
            if best is None or _rank(c) < _rank(best):
                best = c
        kids = [c for c in batch if c.proposer != SEED]
        if gen == 0 or not kids:
            continue
        valid = [c.best_score for c in kids if c.valid]
        out.append(IterationStats(
            iteration=gen,
            best=best.best_score,
            mean_valid=sum(valid) / len(valid) if valid else None,
            invalid_rate=(len(kids) - len(valid)) / len(kids),
            evals_cumulative=evals,
        ))
    return out
