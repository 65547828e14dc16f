"""Built-in proposers: seeded mutation and crossover of templates."""

from __future__ import annotations

import random
from dataclasses import dataclass

from .expr import (
    ARITH_OPS,
    BINARY_OPS,
    COMPARE_OPS,
    LOGIC_OPS,
    Acc,
    ArgFeat,
    ArgFold,
    Binary,
    BoolConst,
    Const,
    Expr,
    Feat,
    HyperParamSlot,
    If,
    MalformedTemplate,
    Param,
    PolicyTemplate,
    Unary,
    children,
    feature_names,
    node_type,
    param_names,
    walk,
    with_children,
)
from .features import BOOL, INT, INLINE, Catalog

MAX_ATTEMPTS = 64
SUBTREE_DEPTH = 4
CONSTANTS = (0, 1, 2, 3, 4, 5, 8, 10, 16, 20, 25, 32, 50, 64, 75, 100, 128, 150, 200, 256)
# share of freshly generated constants declared as tunable slots
NEW_SLOT_RATE = 0.5

OPERATORS = (
    ("point", 0.25),
    ("subtree", 0.2),
    ("swap_feature", 0.15),
    ("promote_const", 0.15),
    ("insert_if", 0.125),
    ("delete_if", 0.125),
)


@dataclass(frozen=True)
class Site:
    path: tuple[int, ...]
    node: Expr
    type: str
    in_fold: bool


def sites(root: Expr) -> list[Site]:
    out: list[Site] = []

    def visit(e: Expr, path: tuple[int, ...], in_fold: bool) -> None:
        out.append(Site(path, e, node_type(e), in_fold))
        for i, k in enumerate(children(e)):
            visit(k, path + (i,), in_fold or (isinstance(e, ArgFold) and i == 1))

    visit(root, (), False)
    return out


def replace_at(root: Expr, path: tuple[int, ...], new: Expr) -> Expr:
    if not path:
        return new
    kids = list(children(root))
    kids[path[0]] = replace_at(kids[path[0]], path[1:], new)
    return with_children(root, tuple(kids))


def _needs_fold(e: Expr) -> bool:
    if isinstance(e, ArgFold):
        return _needs_fold(e.init)
    if isinstance(e, (Acc, ArgFeat)):
        return True
    return any(_needs_fold(k) for k in children(e))


def _has_fold(e: Expr) -> bool:
    return any(isinstance(n, ArgFold) for n in walk(e))


# --------------------------------------------------------------------------
# Random subtrees


class _Gen:
    def __init__(self, rng: random.Random, catalog: Catalog, slots: tuple[HyperParamSlot, ...]):
        self.rng = rng
        self.catalog = catalog
        self.slots = slots
        self.new_slots: list[HyperParamSlot] = []
        self.int_feats = sorted(n for n, t in catalog.features.items() if t == INT)
        self.bool_feats = sorted(n for n, t in catalog.features.items() if t == BOOL)
        self.int_args = sorted(n for n, t in catalog.arg_features.items() if t == INT)
        self.bool_args = sorted(n for n, t in catalog.arg_features.items() if t == BOOL)

    def const(self) -> Expr:
        v = self.rng.choice(CONSTANTS) if self.rng.random() < 0.7 else self.rng.randint(0, 300)
        if v > 0 and self.rng.random() < NEW_SLOT_RATE:
            s = _slot_for(_fresh_name({x.name for x in (*self.slots, *self.new_slots)}), v)
            self.new_slots.append(s)
            return Param(s.name)
        return Const(v)

    def leaf(self, typ: str, in_fold: bool) -> Expr:
        rng = self.rng
        if typ == INT:
            options: list = [self.const, lambda: Feat(rng.choice(self.int_feats))]
            if self.slots:
                options.append(lambda: Param(rng.choice(self.slots).name))
            if in_fold:
                options.append(Acc)
                if self.int_args:
                    options.append(lambda: ArgFeat(rng.choice(self.int_args)))
            if not self.int_feats:
                options.pop(1)
            return rng.choice(options)()
        options = [lambda: BoolConst(rng.random() < 0.5)]
        if self.bool_feats:
            options += [lambda: Feat(rng.choice(self.bool_feats))] * 2
        if in_fold and self.bool_args:
            options += [lambda: ArgFeat(rng.choice(self.bool_args))] * 2
        return rng.choice(options)()

    def tree(self, typ: str, depth: int, in_fold: bool) -> Expr:
        rng = self.rng
        if depth <= 1 or rng.random() < 0.3:
            if typ == BOOL and depth > 1 and rng.random() < 0.6:
                return Binary(rng.choice(COMPARE_OPS), self.leaf(INT, in_fold), self.leaf(INT, in_fold))
            return self.leaf(typ, in_fold)
        d = depth - 1
        r = rng.random()
        if typ == INT:
            if r < 0.65:
                return Binary(rng.choice(ARITH_OPS), self.tree(INT, d, in_fold), self.tree(INT, d, in_fold))
            if r < 0.75:
                return Unary("neg", self.tree(INT, d, in_fold))
            if r < 0.97 or in_fold or not self.catalog.allows_argfold or d < 2:
                return If(self.tree(BOOL, d, in_fold), self.tree(INT, d, in_fold), self.tree(INT, d, in_fold))
            return ArgFold(self.tree(INT, d, False), self.tree(INT, d, True))
        if r < 0.55:
            return Binary(rng.choice(COMPARE_OPS), self.tree(INT, d, in_fold), self.tree(INT, d, in_fold))
        if r < 0.85:
            return Binary(rng.choice(LOGIC_OPS), self.tree(BOOL, d, in_fold), self.tree(BOOL, d, in_fold))
        return Unary("not", self.tree(BOOL, d, in_fold))


# --------------------------------------------------------------------------
# Mutation


def _fresh_name(taken: set[str], stem: str = "k") -> str:
    i = 0
    while f"{stem}{i}" in taken:
        i += 1
    return f"{stem}{i}"


def _slot_for(name: str, v: int) -> HyperParamSlot:
    return HyperParamSlot(name, max(0, v // 4), 4 * v + 1, v)


def _perturb(rng: random.Random, v: int) -> int:
    span = max(1, abs(v) // 2)
    return v + rng.randint(-span, span)


def _prune(root: Expr, slots: list[HyperParamSlot]) -> tuple[HyperParamSlot, ...]:
    used = param_names(root)
    return tuple(s for s in slots if s.name in used)


def _pick(rng: random.Random, items: list):
    return items[rng.randrange(len(items))] if items else None


def _apply(op: str, t: PolicyTemplate, rng: random.Random, gen: _Gen) -> tuple[Expr, list[HyperParamSlot]] | None:
    all_sites = sites(t.root)
    slots = list(t.slots)
    root = t.root
    if op == "point":
        cands = [s for s in all_sites if isinstance(s.node, (Binary, Const))]
        s = _pick(rng, cands)
        if s is None:
            return None
        if isinstance(s.node, Const):
            v = s.node.value
            if rng.random() < 0.5:
                new: Expr = Const(max(0, _perturb(rng, v)) if v >= 0 else _perturb(rng, v))
            else:
                new = gen.const()
        else:
            sig = BINARY_OPS[s.node.op]
            peers = [o for o, g in BINARY_OPS.items() if g == sig and o != s.node.op]
            new = Binary(rng.choice(peers), s.node.a, s.node.b)
        if new == s.node:
            return None
        return replace_at(root, s.path, new), slots
    if op == "subtree":
        s = _pick(rng, all_sites)
        new = gen.tree(s.type, rng.randint(1, SUBTREE_DEPTH), s.in_fold)
        return replace_at(root, s.path, new), slots
    if op == "swap_feature":
        cands = [s for s in all_sites if isinstance(s.node, (Feat, ArgFeat))]
        s = _pick(rng, cands)
        if s is None:
            return None
        pool = gen.catalog.features if isinstance(s.node, Feat) else gen.catalog.arg_features
        peers = sorted(n for n, ty in pool.items() if ty == s.type and n != s.node.name)
        if not peers:
            return None
        return replace_at(root, s.path, type(s.node)(rng.choice(peers))), slots
    if op == "promote_const":
        cands = [s for s in all_sites if isinstance(s.node, Const) and s.node.value >= 0]
        s = _pick(rng, cands)
        if s is None:
            return None
        v = s.node.value
        name = _fresh_name({x.name for x in slots})
        slots.append(_slot_for(name, v))
        return replace_at(root, s.path, Param(name)), slots
    if op == "insert_if":
        s = _pick(rng, all_sites)
        cond = gen.tree(BOOL, 2, s.in_fold)
        alt = gen.tree(s.type, 2, s.in_fold)
        new = If(cond, s.node, alt) if rng.random() < 0.5 else If(cond, alt, s.node)
        return replace_at(root, s.path, new), slots
    if op == "delete_if":
        cands = [s for s in all_sites if isinstance(s.node, If)]
        s = _pick(rng, cands)
        if s is None:
            return None
        keep = s.node.then if rng.random() < 0.5 else s.node.other
        return replace_at(root, s.path, keep), slots
    raise ValueError(op)


def _valid_for(t: PolicyTemplate, catalog: Catalog) -> bool:
    if t.root_type != catalog.root_type:
        return False
    if not feature_names(t.root) <= set(catalog.features):
        return False
    return catalog.allows_argfold or not _has_fold(t.root)


def mutate(t: PolicyTemplate, rng_seed: int, catalog: Catalog = INLINE) -> PolicyTemplate:
    """Apply one random variation operator.

    The result always satisfies the template invariants. After
    ``MAX_ATTEMPTS`` failed tries, ``t`` is returned with
    ``meta["variation"] == "unchanged"``.
    """
    rng = random.Random(rng_seed)
    names = [n for n, _ in OPERATORS]
    weights = [w for _, w in OPERATORS]
    for _ in range(MAX_ATTEMPTS):
        op = rng.choices(names, weights)[0]
        gen = _Gen(rng, catalog, t.slots)
        try:
            result = _apply(op, t, rng, gen)
            if result is None:
                continue
            root, slots = result
            slots = [*slots, *gen.new_slots]
            if root == t.root and tuple(slots) == t.slots:
                continue
            child = PolicyTemplate(root, _prune(root, slots), {"variation": op})
        except (MalformedTemplate, RecursionError):
            continue
        if _valid_for(child, catalog):
            return child
    return t.with_meta(variation="unchanged")


def crossover(a: PolicyTemplate, b: PolicyTemplate, rng_seed: int, catalog: Catalog = INLINE) -> PolicyTemplate:
    """Graft a type-compatible subtree of ``b`` into ``a``.

    Slots the graft brings along are merged into ``a``'s table; a name that
    clashes with a different declaration is renamed. Falls back to ``a``.
    """
    rng = random.Random(rng_seed)
    a_sites = sites(a.root)
    b_sites = sites(b.root)
    for _ in range(MAX_ATTEMPTS // 4):
        target = rng.choice(a_sites)
        donors = [
            s for s in b_sites
            if s.type == target.type
            and (not _has_fold(s.node) if target.in_fold else not _needs_fold(s.node))
        ]
        if not donors:
            continue
        graft = rng.choice(donors).node
        slots = list(a.slots)
        taken = {s.name for s in slots}
        renames: dict[str, str] = {}
        for name in sorted(param_names(graft)):
            theirs = b.slot(name)
            mine = next((s for s in slots if s.name == name), None)
            if mine == theirs:
                continue
            new_name = name if mine is None else _fresh_name(taken, f"{name}_x")
            taken.add(new_name)
            renames[name] = new_name
            slots.append(HyperParamSlot(new_name, theirs.lo, theirs.hi, theirs.default))
        graft = _rename(graft, renames)
        root = replace_at(a.root, target.path, graft)
        try:
            child = PolicyTemplate(root, _prune(root, slots), {"variation": "crossover"})
        except (MalformedTemplate, RecursionError):
            continue
        if _valid_for(child, catalog):
            return child
    return a.with_meta(variation="unchanged")


def _rename(e: Expr, renames: dict[str, str]) -> Expr:
    if not renames:
        return e
    if isinstance(e, Param):
        return Param(renames.get(e.name, e.name))
    kids = children(e)
    if not kids:
        return e
    return with_children(e, tuple(_rename(k, renames) for k in kids))


