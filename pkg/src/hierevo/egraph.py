"""E-graph extraction: validity, DAG cost, a priority-driven greedy extractor
and an exhaustive oracle for small instances."""

from __future__ import annotations

import random
from dataclasses import dataclass, field
from typing import Any, Callable, Mapping

from .dsl.expr import I64_MAX
from .dsl.features import FeatureVector

ORACLE_LIMIT = 10**6


class EGraphError(ValueError):
    pass


class NoValidExtraction(EGraphError):
    pass


class InvalidExtraction(EGraphError):
    pass


class TooLarge(EGraphError):
    pass


@dataclass(frozen=True)
class ENode:
    op: str
    cost: int
    children: tuple[int, ...] = ()

    def __post_init__(self) -> None:
        if self.cost < 0:
            raise EGraphError(f"node {self.op}: negative cost")


@dataclass(frozen=True)
class EGraph:
    classes: Mapping[int, tuple[ENode, ...]]
    roots: frozenset[int]
    order: tuple[int, ...] = field(init=False, repr=False, compare=False)

    def __post_init__(self) -> None:
        if not self.roots:
            raise EGraphError("an e-graph needs at least one root")
        for cid, nodes in self.classes.items():
            if not nodes:
                raise EGraphError(f"class {cid} is empty")
            for n in nodes:
                for ch in n.children:
                    if ch not in self.classes:
                        raise EGraphError(f"class {cid}: child {ch} does not exist")
        missing = self.roots - set(self.classes)
        if missing:
            raise EGraphError(f"roots {sorted(missing)} do not exist")
        object.__setattr__(self, "order", tuple(sorted(self.classes)))

    def reachable_any(self) -> list[int]:
        """Classes reachable from the roots through any node."""
        seen = set(self.roots)
        stack = sorted(self.roots)
        while stack:
            c = stack.pop()
            for n in self.classes[c]:
                for ch in n.children:
                    if ch not in seen:
                        seen.add(ch)
                        stack.append(ch)
        return sorted(seen)


Extraction = Mapping[int, int]


@dataclass(frozen=True)
class Violation:
    kind: str  # root_unchosen | child_unchosen | cycle | unreachable_choice | bad_index
    detail: str


def _reach(g: EGraph, x: Extraction) -> list[int]:
    seen: set[int] = set()
    out = []
    stack = sorted(r for r in g.roots if r in x)
    while stack:
        c = stack.pop()
        if c in seen:
            continue
        seen.add(c)
        out.append(c)
        idx = x[c]
        if not 0 <= idx < len(g.classes[c]):
            continue
        for ch in g.classes[c][idx].children:
            if ch in x and ch not in seen:
                stack.append(ch)
    return out


def _find_cycle(g: EGraph, x: Extraction, within: set[int]) -> list[int] | None:
    color: dict[int, int] = {}
    for start in sorted(within):
        if start in color:
            continue
        path: list[int] = []
        stack = [(start, iter(_kids(g, x, start)))]
        color[start] = 1
        path.append(start)
        while stack:
            c, it = stack[-1]
            nxt = next(it, None)
            if nxt is None:
                color[c] = 2
                path.pop()
                stack.pop()
                continue
            if nxt not in within:
                continue
            if color.get(nxt) == 1:
                return path[path.index(nxt):] + [nxt]
            if nxt not in color:
                color[nxt] = 1
                path.append(nxt)
                stack.append((nxt, iter(_kids(g, x, nxt))))
    return None


def _kids(g: EGraph, x: Extraction, c: int) -> tuple[int, ...]:
    idx = x.get(c)
    if idx is None or not 0 <= idx < len(g.classes[c]):
        return ()
    return g.classes[c][idx].children


def check_extraction(g: EGraph, x: Extraction) -> list[Violation]:
    out: list[Violation] = []
    for c, idx in sorted(x.items()):
        if c not in g.classes or not 0 <= idx < len(g.classes[c]):
            out.append(Violation("bad_index", f"class {c} -> node {idx}"))
    if out:
        return out
    for r in sorted(g.roots):
        if r not in x:
            out.append(Violation("root_unchosen", f"root class {r} has no choice"))
    reach = set(_reach(g, x))
    for c in sorted(reach):
        for ch in g.classes[c][x[c]].children:
            if ch not in x:
                out.append(Violation("child_unchosen", f"class {c} node {x[c]} needs class {ch}"))
    cyc = _find_cycle(g, x, reach)
    if cyc:
        out.append(Violation("cycle", " -> ".join(map(str, cyc))))
    for c in sorted(set(x) - reach):
        out.append(Violation("unreachable_choice", f"class {c} is chosen but unreachable"))
    return out


def is_valid_extraction(g: EGraph, x: Extraction) -> bool:
    return not check_extraction(g, x)


def extraction_cost(g: EGraph, x: Extraction) -> int:
    bad = check_extraction(g, x)
    if bad:
        raise InvalidExtraction("; ".join(f"{v.kind}: {v.detail}" for v in bad))
    return sum(g.classes[c][i].cost for c, i in x.items())


# --------------------------------------------------------------------------
# Greedy

Priority = Callable[[FeatureVector], int]


def _sat(v: int) -> int:
    return v if v < I64_MAX else I64_MAX


def greedy_extract(g: EGraph, priority: Priority) -> dict[int, int]:
    """Bottom-up fixpoint extraction.

    Classes are visited in id order, pass after pass. A node is ready once
    every child class holds a choice; each class takes its highest-priority
    ready node (lowest index on ties), unless that would close a cycle
    through the current choices. ``subtree_cost`` is the node cost plus the
    settled subtree costs of its children, summed as a tree. Stops at a
    fixpoint or after ``len(classes) + 2`` passes.
    """
    choice: dict[int, int] = {}
    sub: dict[int, int] = {}
    sizes = {c: len(ns) for c, ns in g.classes.items()}

    def reaches(start: tuple[int, ...], target: int) -> bool:
        seen: set[int] = set()
        stack = list(start)
        while stack:
            c = stack.pop()
            if c == target:
                return True
            if c in seen or c not in choice:
                continue
            seen.add(c)
            stack.extend(g.classes[c][choice[c]].children)
        return False

    for _ in range(len(g.classes) + 2):
        changed = False
        for c in g.order:
            for i, st in _ranked(g, c, choice, sub, sizes, priority):
                if choice.get(c) == i:
                    if sub[c] != st:
                        sub[c] = st
                        changed = True
                    break
                if c in choice and reaches(g.classes[c][i].children, c):
                    continue
                choice[c] = i
                sub[c] = st
                changed = True
                break
        if not changed:
            break

    if not all(r in choice for r in g.roots):
        raise NoValidExtraction("no acyclic extraction covers every root")
    return {c: choice[c] for c in sorted(_reach(g, choice))}


def _ranked(g: EGraph, c: int, choice: dict[int, int], sub: dict[int, int],
            sizes: dict[int, int], priority: Priority) -> list[tuple[int, int]]:
    """Ready nodes of class ``c`` as (index, subtree cost), best first."""
    scored = []
    for i, n in enumerate(g.classes[c]):
        if any(ch not in choice for ch in n.children):
            continue
        st = _sat(n.cost + sum(sub[ch] for ch in n.children))
        fv = FeatureVector({
            "node_cost": n.cost,
            "node_arity": len(n.children),
            "subtree_cost": st,
            "class_size": sizes[c],
        })
        scored.append((-int(priority(fv)), i, st))
    scored.sort()
    return [(i, st) for _, i, st in scored]


def neg_cost(fv: FeatureVector) -> int:
    return -fv["node_cost"]


def neg_subtree_cost(fv: FeatureVector) -> int:
    return -fv["subtree_cost"]


# --------------------------------------------------------------------------
# Oracle


def oracle_extract(g: EGraph, limit: int = ORACLE_LIMIT) -> tuple[dict[int, int], int]:
    """Exhaustive minimum-cost extraction.

    Ties go to the lexicographically smallest choice vector, listing every
    class in id order with -1 for unchosen classes.
    """
    space = g.reachable_any()
    total = 1
    for c in space:
        total *= len(g.classes[c])
        if total > limit:
            raise TooLarge(f"search space exceeds {limit}")

    best: list[Any] = [None, None, None]  # cost, vector, extraction
    x: dict[int, int] = {}

    def vector(ext: Mapping[int, int]) -> tuple[int, ...]:
        return tuple(ext.get(c, -1) for c in g.order)

    def search(pending: list[int], cost: int) -> None:
        if best[0] is not None and cost > best[0]:
            return
        todo = sorted(c for c in set(pending) if c not in x)
        if not todo:
            if _find_cycle(g, x, set(_reach(g, x))) is not None:
                return
            ext = dict(x)
            vec = vector(ext)
            if best[0] is None or (cost, vec) < (best[0], best[1]):
                best[:] = [cost, vec, ext]
            return
        c, rest = todo[0], todo[1:]
        for i, n in enumerate(g.classes[c]):
            x[c] = i
            search(rest + [ch for ch in n.children if ch not in x], cost + n.cost)
            del x[c]

    search(sorted(g.roots), 0)
    if best[0] is None:
        raise NoValidExtraction("no acyclic extraction exists")
    return best[2], best[0]


# --------------------------------------------------------------------------
# Generation and JSON

OPS = ("add", "mul", "sub", "shl", "load", "const", "var", "fma", "dot", "neg")


def gen_egraph(rng: random.Random, n_classes: int, max_nodes: int = 3, back_edges: float = 0.05) -> EGraph:
    """Random DAG-like e-graph rooted at class 0.

    Children point to higher class ids, except for occasional back edges
    that can only be used cyclically or through a detour. One node per
    class is planted cheap, with children concentrated on a few shared
    classes.
    """
    classes: dict[int, tuple[ENode, ...]] = {}
    for c in range(n_classes):
        later = list(range(c + 1, n_classes))
        nodes = []
        for i in range(rng.randint(1, max_nodes)):
            if i == 0 and later:
                share = later[: max(1, len(later) // 4)]
                kids = sorted({rng.choice(share) for _ in range(rng.randint(1, 2))})
                cost = rng.randint(0, 4)
            else:
                arity = rng.randint(0, min(3, len(later)))
                kids = rng.sample(later, arity)
                cost = rng.randint(1, 20)
                if c > 0 and rng.random() < back_edges:
                    kids.append(rng.randrange(0, c + 1))
            nodes.append(ENode(rng.choice(OPS), cost, tuple(kids)))
        rng.shuffle(nodes)
        classes[c] = tuple(nodes)
    return EGraph(classes, frozenset({0}))


def gen_tree_egraph(rng: random.Random, n_classes: int, max_nodes: int = 3) -> EGraph:
    """E-graph in which every non-root class is the child of exactly one node,
    so no extraction can share a subterm."""
    classes: dict[int, list[ENode]] = {}
    frontier = [0]
    next_id = 1
    while frontier:
        c = frontier.pop(0)
        nodes = []
        for _ in range(rng.randint(1, max_nodes)):
            arity = min(rng.randint(0, 2), n_classes - next_id)
            kids = tuple(range(next_id, next_id + arity))
            next_id += arity
            frontier.extend(kids)
            nodes.append(ENode(rng.choice(OPS), rng.randint(0, 20), kids))
        classes[c] = nodes
    return EGraph({c: tuple(ns) for c, ns in classes.items()}, frozenset({0}))


def egraph_to_json(g: EGraph) -> dict[str, Any]:
    return {
        "classes": [
            {"id": c, "nodes": [{"op": n.op, "cost": n.cost, "children": list(n.children)} for n in g.classes[c]]}
            for c in g.order
        ],
        "roots": sorted(g.roots),
    }


def egraph_from_json(doc: Mapping[str, Any]) -> EGraph:
    classes = {}
    for cl in doc["classes"]:
        cid = int(cl["id"])
        if cid in classes:
            raise EGraphError(f"class {cid} declared twice")
        classes[cid] = tuple(ENode(n["op"], int(n["cost"]), tuple(int(k) for k in n["children"])) for n in cl["nodes"])
    return EGraph(classes, frozenset(int(r) for r in doc["roots"]))


def counterexample() -> EGraph:
    """Locally cheapest root node drags in an expensive subterm."""
    return EGraph(
        {
            0: (ENode("mul", 1, (1,)), ENode("shl", 3, (2,))),
            1: (ENode("load", 10, ()),),
            2: (ENode("const", 0, ()),),
        },
        frozenset({0}),
    )
