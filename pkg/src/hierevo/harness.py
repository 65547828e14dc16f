"""Tasks: corpus plus evaluator, one per problem domain.

Every task turns a (template, slot assignment) pair into a RewardReport.
Scores are mean per-item percentage improvements over the task's fixed
baseline heuristic, so the baseline itself scores exactly 0.0.
"""

from __future__ import annotations

import enum
import random
from dataclasses import dataclass, field
from typing import Any, Callable, Mapping, Optional, Sequence

from . import egraph as eg
from . import shard as sh
from .corpus import gen_inline_corpus
from .dsl.expr import (
    DepthLimit,
    MalformedTemplate,
    NodeLimit,
    PolicyTemplate,
    SlotMissing,
    SlotOutOfBounds,
    check_slots,
    feature_names,
    walk,
    ArgFold,
)
from .dsl.features import EGRAPH, INLINE, SHARD, Catalog, compute_features
from .dsl.text import TemplateSyntaxError, parse_template
from .inline import PERF, SIZE, InlineRun, PolicyEvaluationFailure, inline_all, measure, never_inline, percent_reduction
from .ir import Program

DIAGNOSTICS_LIMIT = 400


class Rejection(str, enum.Enum):
    SYNTAX = "SyntaxError"
    MALFORMED = "Malformed"
    DEPTH_LIMIT = "DepthLimit"
    NODE_LIMIT = "NodeLimit"
    ROOT_TYPE = "RootTypeMismatch"
    FEATURE_UNAVAILABLE = "FeatureUnavailable"
    ARGFOLD_UNAVAILABLE = "ArgFoldUnavailable"


@dataclass(frozen=True)
class Verdict:
    ok: bool
    reason: Rejection | None = None
    message: str = ""


OK = Verdict(True)


@dataclass(frozen=True)
class RewardReport:
    score: Optional[float]
    breakdown: tuple[float, ...]
    diagnostics: str
    eval_cost: int

    @property
    def valid(self) -> bool:
        return self.score is not None

    def to_json(self) -> dict[str, Any]:
        return {
            "score": self.score,
            "valid": self.valid,
            "breakdown": list(self.breakdown),
            "diagnostics": self.diagnostics,
            "eval_cost": self.eval_cost,
        }


def _invalid(msg: str, done: Sequence[float], cost: int) -> RewardReport:
    return RewardReport(None, tuple(done), msg[:DIAGNOSTICS_LIMIT], cost)


class ItemFailure(Exception):
    """An item could not be scored; the candidate is Invalid."""


@dataclass
class Task:
    """Base class. Subclasses implement ``_baseline`` and ``_score_item``."""

    id: str
    catalog: Catalog
    items: Sequence[Any]
    baselines: tuple[int, ...] = field(init=False)

    def __post_init__(self) -> None:
        self.baselines = tuple(self._baseline(x) for x in self.items)

    def _baseline(self, item: Any) -> int:
        raise NotImplementedError

    def _score_item(self, fn: Callable, item: Any, baseline: int) -> float:
        raise NotImplementedError

    def validate(self, t: PolicyTemplate | str) -> Verdict:
        return validate(t, self)

    def evaluate(self, t: PolicyTemplate, slots: Mapping[str, int] | None = None) -> RewardReport:
        """Score ``t`` with ``slots`` (defaults when None) over the corpus.

        Stops at the first failing item; ``eval_cost`` counts items run.
        """
        v = self.validate(t)
        if not v.ok:
            return _invalid(f"{v.reason.value}: {v.message}", (), 0)
        try:
            values = t.defaults() if slots is None else check_slots(t, slots)
        except (SlotMissing, SlotOutOfBounds) as exc:
            return _invalid(f"slots: {exc}", (), 0)
        fn = t.compile(values)
        done: list[float] = []
        for i, (item, base) in enumerate(zip(self.items, self.baselines)):
            try:
                done.append(self._score_item(fn, item, base))
            except ItemFailure as exc:
                return _invalid(f"item {i}: {exc}", done, i + 1)
        score = sum(done) / len(done) if done else 0.0
        return RewardReport(score, tuple(done), "", len(done))


# --------------------------------------------------------------------------
# Validation


def validate(t: PolicyTemplate | str, task: Task) -> Verdict:
    if isinstance(t, str):
        try:
            t = parse_template(t)
        except TemplateSyntaxError as exc:
            return Verdict(False, Rejection.SYNTAX, str(exc))
        except DepthLimit as exc:
            return Verdict(False, Rejection.DEPTH_LIMIT, str(exc))
        except NodeLimit as exc:
            return Verdict(False, Rejection.NODE_LIMIT, str(exc))
        except MalformedTemplate as exc:
            return Verdict(False, Rejection.MALFORMED, str(exc))
    cat = task.catalog
    foreign = sorted(feature_names(t.root) - set(cat.features))
    if foreign:
        return Verdict(False, Rejection.FEATURE_UNAVAILABLE, f"not offered by {cat.name}: {', '.join(foreign)}")
    if not cat.allows_argfold and any(isinstance(n, ArgFold) for n in walk(t.root)):
        return Verdict(False, Rejection.ARGFOLD_UNAVAILABLE, f"{cat.name} has no per-argument features")
    if t.root_type != cat.root_type:
        return Verdict(False, Rejection.ROOT_TYPE, f"{cat.name} needs a {cat.root_type} result, got {t.root_type}")
    return OK


# --------------------------------------------------------------------------
# Concrete tasks


@dataclass
class InlineTask(Task):
    metric: str = SIZE

    def _baseline(self, p: Program) -> int:
        return measure(inline_all(p, never_inline).program, self.metric, p)

    def _score_item(self, fn: Callable, p: Program, baseline: int) -> float:
        run = run_inline(p, fn)
        return percent_reduction(baseline, measure(run.program, self.metric, p))


def run_inline(p: Program, fn: Callable) -> InlineRun:
    try:
        return inline_all(p, lambda prog, cs: fn(compute_features(prog, cs)))
    except PolicyEvaluationFailure as exc:
        raise ItemFailure(str(exc)) from exc


@dataclass
class EGraphTask(Task):
    def _baseline(self, g: eg.EGraph) -> int:
        return eg.extraction_cost(g, eg.greedy_extract(g, eg.neg_cost))

    def _score_item(self, fn: Callable, g: eg.EGraph, baseline: int) -> float:
        try:
            x = eg.greedy_extract(g, fn)
        except eg.NoValidExtraction as exc:
            raise ItemFailure(str(exc)) from exc
        return percent_reduction(baseline, eg.extraction_cost(g, x))


@dataclass
class ShardTask(Task):
    def _baseline(self, p: sh.ShardProblem) -> int:
        return sh.total_cost(p, sh.heuristic_solve(p, sh.neg_strategy_cost))

    def _score_item(self, fn: Callable, p: sh.ShardProblem, baseline: int) -> float:
        try:
            a = sh.heuristic_solve(p, fn)
        except sh.Infeasible as exc:
            raise ItemFailure(str(exc)) from exc
        return percent_reduction(baseline, sh.total_cost(p, a))


TASK_IDS = ("inline-size", "inline-perf", "egraph", "shard")
CORPUS_KIND = {"inline-size": "inline", "inline-perf": "inline", "egraph": "egraph", "shard": "shard"}


def make_task(task_id: str, items: Sequence[Any]) -> Task:
    if task_id == "inline-size":
        return InlineTask(task_id, INLINE, list(items), SIZE)
    if task_id == "inline-perf":
        return InlineTask(task_id, INLINE, list(items), PERF)
    if task_id == "egraph":
        return EGraphTask(task_id, EGRAPH, list(items))
    if task_id == "shard":
        return ShardTask(task_id, SHARD, list(items))
    raise ValueError(f"unknown task {task_id!r}; expected one of {', '.join(TASK_IDS)}")


def generate_items(kind: str, n: int, seed: int, size: int | None = None) -> list[Any]:
    """Seeded corpus items. ``size`` bounds e-graph classes / shard nodes."""
    rng = random.Random(seed)
    if kind == "inline":
        return gen_inline_corpus(n, seed)
    if kind == "egraph":
        hi = size or 200
        return [eg.gen_egraph(rng, rng.randint(min(10, hi), hi)) for _ in range(n)]
    if kind == "shard":
        hi = size or 60
        return [sh.gen_shard(rng, rng.randint(min(5, hi), hi), 4, horizon=max(10, hi)) for _ in range(n)]
    raise ValueError(f"unknown corpus kind {kind!r}")


def items_from_json(kind: str, docs: Sequence[Mapping[str, Any]]) -> list[Any]:
    from .ir import program_from_json

    if kind == "inline":
        return [program_from_json(d, strict=False) for d in docs]
    if kind == "egraph":
        return [eg.egraph_from_json(d) for d in docs]
    if kind == "shard":
        return [sh.shard_from_json(d) for d in docs]
    raise ValueError(kind)


def items_to_json(kind: str, items: Sequence[Any]) -> list[dict[str, Any]]:
    from .ir import program_to_json

    conv = {"inline": program_to_json, "egraph": eg.egraph_to_json, "shard": sh.shard_to_json}[kind]
    return [conv(x) for x in items]
