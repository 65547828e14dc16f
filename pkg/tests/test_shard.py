import itertools
import json
import random

import pytest
from hypothesis import given, settings, strategies as st

from hierevo.shard import (
    Edge,
    IncompleteAssignment,
    Infeasible,
    ShardError,
    ShardNode,
    ShardProblem,
    Strategy,
    TooLarge,
    counterexample,
    gen_shard,
    heuristic_solve,
    neg_strategy_cost,
    oracle_solve,
    peak_memory_ok,
    shard_from_json,
    shard_to_json,
    total_cost,
)

SCORES = [
    neg_strategy_cost,
    lambda fv: -fv["strategy_cost"] - fv["edge_cost_assigned"],
    lambda fv: fv["slack"],
    lambda fv: -fv["strategy_memory"],
]


def brute_force(p):
    best = None
    for a in itertools.product(*(range(len(n.strategies)) for n in p.nodes)):
        if peak_memory_ok(p, a)[0]:
            c = total_cost(p, a)
            if best is None or c < best:
                best = c
    return best


def test_counterexample_heuristic_is_strictly_worse():
    p = counterexample()
    a = heuristic_solve(p, neg_strategy_cost)
    _, opt = oracle_solve(p)
    assert total_cost(p, a) == 12 and opt == 4


def test_peak_memory_half_open_intervals():
    s = (Strategy(0, 5),)
    p = ShardProblem(5, (ShardNode(0, 2, s), ShardNode(2, 4, s)))
    assert peak_memory_ok(p, [0, 0]) == (True, None)
    q = ShardProblem(5, (ShardNode(0, 3, s), ShardNode(2, 4, s)))
    assert peak_memory_ok(q, [0, 0]) == (False, 2)


def test_assignment_must_be_total():
    p = counterexample()
    with pytest.raises(IncompleteAssignment):
        total_cost(p, [0])
    with pytest.raises(IncompleteAssignment):
        total_cost(p, [0, 2])


def test_structural_errors():
    with pytest.raises(ShardError):
        ShardNode(3, 3, (Strategy(1, 1),))
    with pytest.raises(ShardError):
        Strategy(-1, 0)
    n = ShardNode(0, 1, (Strategy(1, 1),))
    with pytest.raises(ShardError):
        ShardProblem(1, (n, n), (Edge(0, 1, ((1, 2),)),))
    with pytest.raises(ShardError):
        ShardProblem(1, (n,), (Edge(0, 0, ((1,),)),))


def test_infeasible_instance():
    heavy = (Strategy(0, 5),)
    p = ShardProblem(4, (ShardNode(0, 2, heavy),))
    with pytest.raises(Infeasible):
        oracle_solve(p)
    with pytest.raises(Infeasible):
        heuristic_solve(p, neg_strategy_cost)


def test_repair_recovers_from_greedy_overcommit():
    # the longer node is placed first and fills the budget, leaving nothing
    # for the second; repair has to move it to its small strategy
    p = ShardProblem(5, (
        ShardNode(0, 4, (Strategy(0, 5), Strategy(9, 1))),
        ShardNode(1, 3, (Strategy(0, 1),)),
    ))
    a = heuristic_solve(p, lambda fv: -fv["strategy_cost"])
    assert a == [1, 0] and peak_memory_ok(p, a)[0]


def test_oracle_limit():
    with pytest.raises(TooLarge):
        oracle_solve(gen_shard(random.Random(0), 30, 3), limit=10)


@settings(max_examples=40)
@given(st.integers(0, 2**32))
def test_oracle_matches_brute_force(seed):
    rng = random.Random(seed)
    p = gen_shard(rng, rng.randint(1, 5), 3, tightness=rng.random())
    a, cost = oracle_solve(p)
    assert peak_memory_ok(p, a)[0] and total_cost(p, a) == cost == brute_force(p)


@given(st.integers(0, 2**32), st.sampled_from(SCORES))
def test_heuristic_feasible_and_bounded_by_oracle(seed, score):
    rng = random.Random(seed)
    p = gen_shard(rng, rng.randint(2, 9), 3)
    a = heuristic_solve(p, score)
    assert peak_memory_ok(p, a)[0]
    assert oracle_solve(p)[1] <= total_cost(p, a)


@given(st.integers(0, 2**32))
def test_json_round_trip(seed):
    p = gen_shard(random.Random(seed), 8, 3)
    assert shard_from_json(json.loads(json.dumps(shard_to_json(p)))) == p
