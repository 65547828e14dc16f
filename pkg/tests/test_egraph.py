import itertools
import json
import random

import pytest
from hypothesis import given, settings, strategies as st

from hierevo.egraph import (
    EGraph,
    EGraphError,
    ENode,
    InvalidExtraction,
    NoValidExtraction,
    TooLarge,
    check_extraction,
    counterexample,
    egraph_from_json,
    egraph_to_json,
    extraction_cost,
    gen_egraph,
    gen_tree_egraph,
    greedy_extract,
    is_valid_extraction,
    neg_cost,
    neg_subtree_cost,
    oracle_extract,
)

PRIORITIES = [neg_cost, neg_subtree_cost, lambda fv: fv["node_arity"], lambda fv: -fv["class_size"]]


def brute_force(g):
    """Every partial choice vector, filtered by the validity checker."""
    options = [[-1, *range(len(g.classes[c]))] for c in g.order]
    best = None
    for vec in itertools.product(*options):
        x = {c: i for c, i in zip(g.order, vec) if i >= 0}
        if is_valid_extraction(g, x):
            cost = extraction_cost(g, x)
            if best is None or cost < best:
                best = cost
    return best


def test_counterexample_greedy_is_strictly_worse():
    g = counterexample()
    x = greedy_extract(g, neg_cost)
    _, opt = oracle_extract(g)
    assert extraction_cost(g, x) == 11 and opt == 3


def test_shared_subterm_counted_once():
    g = EGraph({0: (ENode("add", 1, (1, 1)),), 1: (ENode("load", 5),)}, frozenset({0}))
    assert extraction_cost(g, {0: 0, 1: 0}) == 6


@pytest.mark.parametrize("x, kinds", [
    ({}, {"root_unchosen"}),
    ({0: 0}, {"child_unchosen"}),
    ({0: 0, 1: 0, 2: 0}, {"unreachable_choice"}),
    ({0: 5}, {"bad_index"}),
])
def test_violations(x, kinds):
    g = counterexample()
    assert {v.kind for v in check_extraction(g, x)} == kinds
    with pytest.raises(InvalidExtraction):
        extraction_cost(g, x)


def test_cycle_detected_and_no_extraction():
    g = EGraph({0: (ENode("a", 1, (1,)),), 1: (ENode("b", 1, (0,)),)}, frozenset({0}))
    assert {v.kind for v in check_extraction(g, {0: 0, 1: 0})} == {"cycle"}
    with pytest.raises(NoValidExtraction):
        oracle_extract(g)
    with pytest.raises(NoValidExtraction):
        greedy_extract(g, neg_cost)


def test_structural_errors():
    with pytest.raises(EGraphError):
        EGraph({0: ()}, frozenset({0}))
    with pytest.raises(EGraphError):
        EGraph({0: (ENode("a", 1, (7,)),)}, frozenset({0}))
    with pytest.raises(EGraphError):
        ENode("a", -1)
    with pytest.raises(TooLarge):
        oracle_extract(gen_egraph(random.Random(0), 40, 3), limit=10)


@settings(max_examples=40)
@given(st.integers(0, 2**32))
def test_oracle_matches_brute_force(seed):
    rng = random.Random(seed)
    g = gen_egraph(rng, rng.randint(1, 5), 2, back_edges=0.3)
    want = brute_force(g)
    if want is None:
        with pytest.raises(NoValidExtraction):
            oracle_extract(g)
    else:
        x, cost = oracle_extract(g)
        assert is_valid_extraction(g, x) and cost == want == extraction_cost(g, x)


@given(st.integers(0, 2**32), st.sampled_from(PRIORITIES))
def test_oracle_lower_bounds_greedy(seed, priority):
    rng = random.Random(seed)
    g = gen_egraph(rng, rng.randint(2, 9), 3)
    try:
        _, opt = oracle_extract(g)
    except NoValidExtraction:
        with pytest.raises(NoValidExtraction):
            greedy_extract(g, priority)
        return
    x = greedy_extract(g, priority)
    assert is_valid_extraction(g, x)
    assert opt <= extraction_cost(g, x)


@given(st.integers(0, 2**32))
def test_subtree_greedy_is_optimal_on_trees(seed):
    rng = random.Random(seed)
    g = gen_tree_egraph(rng, rng.randint(2, 12))
    assert extraction_cost(g, greedy_extract(g, neg_subtree_cost)) == oracle_extract(g)[1]


@given(st.integers(0, 2**32))
def test_json_round_trip(seed):
    g = gen_egraph(random.Random(seed), 12)
    doc = egraph_to_json(g)
    assert egraph_from_json(json.loads(json.dumps(doc))) == g


def test_duplicate_class_rejected():
    doc = {"classes": [{"id": 0, "nodes": [{"op": "a", "cost": 1, "children": []}]}] * 2, "roots": [0]}
    with pytest.raises(EGraphError):
        egraph_from_json(doc)
