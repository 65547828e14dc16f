import random

import pytest

from hierevo import egraph as eg
from hierevo import shard as sh
from hierevo.dsl import INLINE, parse_template
from hierevo.harness import (
    DIAGNOSTICS_LIMIT,
    ItemFailure,
    Rejection,
    Task,
    generate_items,
    make_task,
    run_inline,
)
from hierevo.policies import as_template


def _balanced(n):
    level = ["1"] * n
    while len(level) > 1:
        level = [f"(add {level[i]} {level[i + 1]})" if i + 1 < len(level) else level[i]
                 for i in range(0, len(level), 2)]
    return level[0]


# parseable templates that only fail against a particular task
PARSES_FINE = {Rejection.ROOT_TYPE, Rejection.FEATURE_UNAVAILABLE, Rejection.ARGFOLD_UNAVAILABLE}


@pytest.fixture(scope="module")
def tasks():
    return {
        "inline-size": make_task("inline-size", generate_items("inline", 3, 0)),
        "inline-perf": make_task("inline-perf", generate_items("inline", 3, 0)),
        "egraph": make_task("egraph", generate_items("egraph", 5, 0, 30)),
        "shard": make_task("shard", generate_items("shard", 5, 0, 20)),
    }


@pytest.mark.parametrize("task_id, text, reason", [
    ("inline-size", "(lt 1", Rejection.SYNTAX),
    ("inline-size", "(add true 1)", Rejection.MALFORMED),
    ("inline-size", "(not " * 30 + "true" + ")" * 30, Rejection.DEPTH_LIMIT),
    ("egraph", _balanced(600), Rejection.NODE_LIMIT),
    ("inline-size", "(feat callee_raw_count)", Rejection.ROOT_TYPE),
    ("egraph", "(lt 1 2)", Rejection.ROOT_TYPE),
    ("inline-size", "(lt (feat node_cost) 3)", Rejection.FEATURE_UNAVAILABLE),
    ("shard", "(feat callee_users)", Rejection.FEATURE_UNAVAILABLE),
    ("egraph", "(argfold 0 acc)", Rejection.ARGFOLD_UNAVAILABLE),
])
def test_rejections(tasks, task_id, text, reason):
    task = tasks[task_id]
    v = task.validate(text)
    assert not v.ok and v.reason is reason
    if reason in PARSES_FINE:
        r = task.evaluate(parse_template(text))
        assert not r.valid and r.eval_cost == 0 and r.diagnostics.startswith(reason.value)


@pytest.mark.parametrize("task_id, seed", [
    ("inline-size", "never"), ("inline-perf", "never"), ("egraph", "egraph"), ("shard", "shard"),
])
def test_baseline_templates_score_zero(tasks, task_id, seed):
    r = tasks[task_id].evaluate(as_template(seed))
    assert r.score == 0.0 and set(r.breakdown) == {0.0}
    assert r.eval_cost == len(tasks[task_id].items)


def test_evaluation_is_deterministic(tasks):
    t = as_template("perf-b")
    a = tasks["inline-perf"].evaluate(t)
    b = tasks["inline-perf"].evaluate(t)
    assert a == b and a.valid


def test_slot_problems_make_the_candidate_invalid(tasks):
    t = as_template("perf-b")
    r = tasks["inline-size"].evaluate(t, {"ae-inline-base-threshold": 60})
    assert not r.valid and "slots" in r.diagnostics
    bad = dict(t.defaults(), **{"ae-inline-base-threshold": 10**6})
    assert not tasks["inline-size"].evaluate(t, bad).valid


class _Flaky(Task):
    def _baseline(self, item):
        return 1

    def _score_item(self, fn, item, baseline):
        if item == "boom":
            raise ItemFailure("x" * 1000)
        return 5.0


def test_first_failing_item_stops_evaluation():
    task = _Flaky("flaky", INLINE, ["ok", "boom", "ok"])
    r = task.evaluate(as_template("never"))
    assert r.score is None and r.breakdown == (5.0,) and r.eval_cost == 2
    assert len(r.diagnostics) == DIAGNOSTICS_LIMIT
    assert r.to_json()["valid"] is False


def test_egraph_without_extraction_is_an_item_failure(tasks):
    cyclic = eg.EGraph({0: (eg.ENode("a", 1, (1,)),), 1: (eg.ENode("b", 1, (0,)),)}, frozenset({0}))
    with pytest.raises(ItemFailure):
        tasks["egraph"]._score_item(eg.neg_cost, cyclic, 1)


def test_infeasible_shard_is_an_item_failure(tasks):
    p = sh.ShardProblem(1, (sh.ShardNode(0, 1, (sh.Strategy(0, 2),)),))
    with pytest.raises(ItemFailure):
        tasks["shard"]._score_item(sh.neg_strategy_cost, p, 1)


def test_raising_policy_is_an_item_failure():
    p = generate_items("inline", 1, 3)[0]

    def explode(fv):
        raise ZeroDivisionError

    with pytest.raises(ItemFailure):
        run_inline(p, explode)


def test_unknown_task():
    with pytest.raises(ValueError):
        make_task("nope", [])
    with pytest.raises(ValueError):
        generate_items("nope", 1, 0)
