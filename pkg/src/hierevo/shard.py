"""Strategy assignment under a time-varying memory budget."""

from __future__ import annotations

import random
from dataclasses import dataclass
from typing import Any, Callable, Mapping, Sequence

from .dsl.features import FeatureVector

ORACLE_LIMIT = 10**6


class ShardError(ValueError):
    pass


class Infeasible(ShardError):
    pass


class IncompleteAssignment(ShardError):
    pass


class TooLarge(ShardError):
    pass


@dataclass(frozen=True)
class Strategy:
    cost: int
    memory: int

    def __post_init__(self) -> None:
        if self.cost < 0 or self.memory < 0:
            raise ShardError("strategy cost and memory must be non-negative")


@dataclass(frozen=True)
class ShardNode:
    start: int
    end: int
    strategies: tuple[Strategy, ...]

    def __post_init__(self) -> None:
        if not self.start < self.end:
            raise ShardError(f"interval [{self.start}, {self.end}) is empty")
        if not self.strategies:
            raise ShardError("a node needs at least one strategy")

    @property
    def length(self) -> int:
        return self.end - self.start

    @property
    def min_memory(self) -> int:
        return min(s.memory for s in self.strategies)

    @property
    def min_memory_index(self) -> int:
        m = self.min_memory
        return next(i for i, s in enumerate(self.strategies) if s.memory == m)


@dataclass(frozen=True)
class Edge:
    u: int
    v: int
    costs: tuple[tuple[int, ...], ...]

    def cost(self, su: int, sv: int) -> int:
        return self.costs[su][sv]


@dataclass(frozen=True)
class ShardProblem:
    budget: int
    nodes: tuple[ShardNode, ...]
    edges: tuple[Edge, ...] = ()

    def __post_init__(self) -> None:
        if self.budget < 0:
            raise ShardError("budget must be non-negative")
        n = len(self.nodes)
        for e in self.edges:
            if e.u == e.v or not (0 <= e.u < n and 0 <= e.v < n):
                raise ShardError(f"edge {e.u}-{e.v}: bad endpoints")
            rows, cols = len(self.nodes[e.u].strategies), len(self.nodes[e.v].strategies)
            if len(e.costs) != rows or any(len(r) != cols for r in e.costs):
                raise ShardError(f"edge {e.u}-{e.v}: matrix must be {rows}x{cols}")
            if any(c < 0 for r in e.costs for c in r):
                raise ShardError(f"edge {e.u}-{e.v}: negative cost")

    def incident(self) -> list[list[Edge]]:
        out: list[list[Edge]] = [[] for _ in self.nodes]
        for e in self.edges:
            out[e.u].append(e)
            out[e.v].append(e)
        return out


Assignment = Sequence[int]


def _check_total(p: ShardProblem, a: Assignment) -> None:
    if len(a) != len(p.nodes):
        raise IncompleteAssignment(f"{len(a)} choices for {len(p.nodes)} nodes")
    for i, (node, j) in enumerate(zip(p.nodes, a)):
        if not 0 <= j < len(node.strategies):
            raise IncompleteAssignment(f"node {i}: strategy {j} out of range")


def total_cost(p: ShardProblem, a: Assignment) -> int:
    _check_total(p, a)
    node_part = sum(n.strategies[j].cost for n, j in zip(p.nodes, a))
    return node_part + sum(e.cost(a[e.u], a[e.v]) for e in p.edges)


def _sweep(items: Sequence[tuple[int, int, int]], budget: int) -> int | None:
    """First time at which the summed memory of (start, end, mem) items
    exceeds ``budget``, or None."""
    events = []
    for s, e, m in items:
        events.append((s, 1, m))
        events.append((e, 0, m))  # ends sort first: intervals are half-open
    events.sort()
    cur = 0
    i = 0
    while i < len(events):
        t = events[i][0]
        while i < len(events) and events[i][0] == t:
            _, is_start, m = events[i]
            cur += m if is_start else -m
            i += 1
        if cur > budget:
            return t
    return None


def peak_memory_ok(p: ShardProblem, a: Assignment) -> tuple[bool, int | None]:
    _check_total(p, a)
    t = _sweep([(n.start, n.end, n.strategies[j].memory) for n, j in zip(p.nodes, a)], p.budget)
    return t is None, t


def _peak_within(items: Sequence[tuple[int, int, int]], start: int, end: int) -> int:
    """Peak summed memory of ``items`` over [start, end)."""
    events = []
    for s, e, m in items:
        lo, hi = max(s, start), min(e, end)
        if lo < hi:
            events.append((lo, 1, m))
            events.append((hi, 0, m))
    events.sort()
    cur = peak = 0
    for _, is_start, m in events:
        cur += m if is_start else -m
        peak = max(peak, cur)
    return peak


# --------------------------------------------------------------------------
# Constructive heuristic

Score = Callable[[FeatureVector], int]


def node_order(p: ShardProblem) -> list[int]:
    inc = p.incident()
    return sorted(
        range(len(p.nodes)),
        key=lambda i: (-p.nodes[i].min_memory, -p.nodes[i].length, -len(inc[i]), i),
    )


def heuristic_solve(p: ShardProblem, score: Score) -> list[int]:
    """Greedy construction followed by a bounded repair pass.

    Nodes are visited by decreasing minimum memory, interval length and
    degree. Each takes the strategy with the highest score among those
    that keep the partial assignment within budget (lowest index on ties);
    a node with no such strategy takes its smallest-memory one. Repair then
    moves, at each violating time, the active node with the largest
    possible saving to its smallest-memory strategy; every node moves at
    most once. Raises Infeasible if violations remain.
    """
    inc = p.incident()
    a: list[int | None] = [None] * len(p.nodes)
    placed: list[tuple[int, int, int]] = []
    for i in node_order(p):
        node = p.nodes[i]
        used = _peak_within(placed, node.start, node.end)
        best: tuple[int, int] | None = None
        for j, s in enumerate(node.strategies):
            slack = p.budget - used - s.memory
            if slack < 0:
                continue
            assigned = unassigned = 0
            for e in inc[i]:
                other = e.v if e.u == i else e.u
                oj = a[other]
                if oj is not None:
                    assigned += e.cost(j, oj) if e.u == i else e.cost(oj, j)
                else:
                    row = e.costs[j] if e.u == i else [r[j] for r in e.costs]
                    unassigned += min(row)
            fv = FeatureVector({
                "strategy_cost": s.cost,
                "strategy_memory": s.memory,
                "edge_cost_assigned": assigned,
                "edge_cost_unassigned": unassigned,
                "slack": slack,
                "interval_length": node.length,
                "strategy_count": len(node.strategies),
                "degree": len(inc[i]),
                "min_memory": node.min_memory,
            })
            key = (-int(score(fv)), j)
            if best is None or key < best:
                best = key
        j = best[1] if best is not None else node.min_memory_index
        a[i] = j
        placed.append((node.start, node.end, node.strategies[j].memory))

    out = [int(j) for j in a]  # type: ignore[arg-type]
    moved: set[int] = set()
    for _ in range(len(p.nodes) + 1):
        ok, t = peak_memory_ok(p, out)
        if ok:
            return out
        active = [
            i for i, n in enumerate(p.nodes)
            if n.start <= t < n.end and i not in moved and out[i] != n.min_memory_index
        ]
        if not active:
            break
        i = min(active, key=lambda k: (p.nodes[k].min_memory - p.nodes[k].strategies[out[k]].memory, k))
        out[i] = p.nodes[i].min_memory_index
        moved.add(i)
    raise Infeasible(f"memory budget {p.budget} exceeded at time {t}")


def neg_strategy_cost(fv: FeatureVector) -> int:
    return -fv["strategy_cost"]


# --------------------------------------------------------------------------
# Oracle


def oracle_solve(p: ShardProblem, limit: int = ORACLE_LIMIT) -> tuple[list[int], int]:
    """Exhaustive feasible minimum; ties go to the lexicographically smallest assignment."""
    total = 1
    for n in p.nodes:
        total *= len(n.strategies)
        if total > limit:
            raise TooLarge(f"search space exceeds {limit}")
    n = len(p.nodes)
    # edges charged when their later endpoint is fixed
    later: list[list[Edge]] = [[] for _ in range(n)]
    for e in p.edges:
        later[max(e.u, e.v)].append(e)
    best: list[Any] = [None, None]
    a: list[int] = []
    placed: list[tuple[int, int, int]] = []

    def search(i: int, cost: int) -> None:
        if best[0] is not None and cost > best[0]:
            return
        if i == n:
            if best[0] is None or (cost, a) < (best[0], best[1]):
                best[:] = [cost, list(a)]
            return
        node = p.nodes[i]
        used = _peak_within(placed, node.start, node.end)
        for j, s in enumerate(node.strategies):
            if used + s.memory > p.budget:
                continue
            a.append(j)
            extra = s.cost + sum(e.cost(a[e.u], a[e.v]) for e in later[i])
            placed.append((node.start, node.end, s.memory))
            search(i + 1, cost + extra)
            placed.pop()
            a.pop()

    search(0, 0)
    if best[0] is None:
        raise Infeasible("no assignment fits the memory budget")
    return best[1], best[0]


# --------------------------------------------------------------------------
# Generation and JSON


def gen_shard(rng: random.Random, n_nodes: int, max_strategies: int = 3, horizon: int = 20,
              edge_density: float = 0.3, tightness: float | None = None) -> ShardProblem:
    """Random instance that is feasible by construction: the budget is at least
    the peak of the all-smallest-memory assignment."""
    nodes = []
    for _ in range(n_nodes):
        s = rng.randrange(horizon)
        e = rng.randint(s + 1, min(horizon, s + 1 + horizon // 3))
        k = rng.randint(1, max_strategies)
        strats = []
        for _ in range(k):
            mem = rng.randint(1, 12)
            cost = max(0, 30 - 2 * mem + rng.randint(-6, 6))
            strats.append(Strategy(cost, mem))
        nodes.append(ShardNode(s, e, tuple(strats)))
    edges = []
    for u in range(n_nodes):
        for v in range(u + 1, n_nodes):
            if rng.random() < edge_density:
                ku, kv = len(nodes[u].strategies), len(nodes[v].strategies)
                costs = tuple(
                    tuple(0 if (x == y and rng.random() < 0.6) else rng.randint(0, 15) for y in range(kv))
                    for x in range(ku)
                )
                edges.append(Edge(u, v, costs))
    lo_peak = _peak_within([(n.start, n.end, n.min_memory) for n in nodes], 0, horizon)
    hi_peak = _peak_within(
        [(n.start, n.end, max(s.memory for s in n.strategies)) for n in nodes], 0, horizon
    )
    t = rng.random() if tightness is None else tightness
    budget = lo_peak + int(t * (hi_peak - lo_peak))
    return ShardProblem(budget, tuple(nodes), tuple(edges))


def shard_to_json(p: ShardProblem) -> dict[str, Any]:
    return {
        "budget": p.budget,
        "nodes": [
            {"interval": [n.start, n.end], "strategies": [{"cost": s.cost, "memory": s.memory} for s in n.strategies]}
            for n in p.nodes
        ],
        "edges": [{"u": e.u, "v": e.v, "costs": [list(r) for r in e.costs]} for e in p.edges],
    }


def shard_from_json(doc: Mapping[str, Any]) -> ShardProblem:
    nodes = tuple(
        ShardNode(
            int(n["interval"][0]), int(n["interval"][1]),
            tuple(Strategy(int(s["cost"]), int(s["memory"])) for s in n["strategies"]),
        )
        for n in doc["nodes"]
    )
    edges = tuple(
        Edge(int(e["u"]), int(e["v"]), tuple(tuple(int(c) for c in r) for r in e["costs"]))
        for e in doc.get("edges", ())
    )
    return ShardProblem(int(doc["budget"]), nodes, edges)


def counterexample() -> ShardProblem:
    """Cheapest strategies everywhere pay a large resharding cost."""
    two = (Strategy(1, 1), Strategy(2, 1))
    return ShardProblem(
        10,
        (ShardNode(0, 2, two), ShardNode(1, 3, two)),
        (Edge(0, 1, ((10, 10), (10, 0))),),
    )
