"""Typed expression trees with named hyperparameter slots.

Arithmetic is integer-only and saturates at the signed 64-bit range.
``sub`` additionally saturates at zero, which is how threshold arithmetic
is written in the reference policies; use ``neg``/``add`` for signed
differences. Division truncates toward zero and yields 0 for a zero
divisor; shift amounts are clamped to [0, 63].
"""

from __future__ import annotations

import hashlib
from dataclasses import dataclass, field
from typing import Any, Callable, Iterator, Mapping, Union

from .features import ALL_FEATURES, ARG_FEATURES, BOOL, INT, FeatureVector

MAX_DEPTH = 24
MAX_NODES = 512
I64_MIN = -(1 << 63)
I64_MAX = (1 << 63) - 1


class TemplateError(ValueError):
    pass


class MalformedTemplate(TemplateError):
    pass


class DepthLimit(MalformedTemplate):
    pass


class NodeLimit(MalformedTemplate):
    pass


class SlotMissing(TemplateError):
    pass


class SlotOutOfBounds(TemplateError):
    pass


# --------------------------------------------------------------------------
# Nodes


@dataclass(frozen=True)
class Const:
    value: int


@dataclass(frozen=True)
class BoolConst:
    value: bool


@dataclass(frozen=True)
class Param:
    name: str


@dataclass(frozen=True)
class Feat:
    name: str


@dataclass(frozen=True)
class ArgFeat:
    name: str


@dataclass(frozen=True)
class Acc:
    pass


@dataclass(frozen=True)
class Unary:
    op: str
    x: Expr


@dataclass(frozen=True)
class Binary:
    op: str
    a: Expr
    b: Expr


@dataclass(frozen=True)
class If:
    cond: Expr
    then: Expr
    other: Expr


@dataclass(frozen=True)
class ArgFold:
    """Fold ``step`` over the call's arguments, starting from ``init``.

    Inside ``step``, ``acc`` is the running value and ``(arg ...)`` reads the
    current argument's features.
    """

    init: Expr
    step: Expr


Expr = Union[Const, BoolConst, Param, Feat, ArgFeat, Acc, Unary, Binary, If, ArgFold]

UNARY_OPS = {"neg": (INT, INT), "not": (BOOL, BOOL)}
ARITH_OPS = ("add", "sub", "mul", "div", "shr", "min", "max")
COMPARE_OPS = ("lt", "le", "eq")
LOGIC_OPS = ("and", "or")
BINARY_OPS: dict[str, tuple[str, str]] = {
    **{op: (INT, INT) for op in ARITH_OPS},
    **{op: (INT, BOOL) for op in COMPARE_OPS},
    **{op: (BOOL, BOOL) for op in LOGIC_OPS},
}


def children(e: Expr) -> tuple[Expr, ...]:
    if isinstance(e, Unary):
        return (e.x,)
    if isinstance(e, Binary):
        return (e.a, e.b)
    if isinstance(e, If):
        return (e.cond, e.then, e.other)
    if isinstance(e, ArgFold):
        return (e.init, e.step)
    return ()


def with_children(e: Expr, kids: tuple[Expr, ...]) -> Expr:
    if isinstance(e, Unary):
        return Unary(e.op, *kids)
    if isinstance(e, Binary):
        return Binary(e.op, *kids)
    if isinstance(e, If):
        return If(*kids)
    if isinstance(e, ArgFold):
        return ArgFold(*kids)
    return e


def walk(e: Expr) -> Iterator[Expr]:
    stack = [e]
    while stack:
        n = stack.pop()
        yield n
        stack.extend(reversed(children(n)))


def node_count(e: Expr) -> int:
    return sum(1 for _ in walk(e))


def depth(e: Expr) -> int:
    kids = children(e)
    return 1 + (max(depth(k) for k in kids) if kids else 0)


def param_names(e: Expr) -> set[str]:
    return {n.name for n in walk(e) if isinstance(n, Param)}


def feature_names(e: Expr) -> set[str]:
    return {n.name for n in walk(e) if isinstance(n, Feat)}


def type_of(e: Expr, in_fold: bool = False, features: Mapping[str, str] = ALL_FEATURES) -> str:
    """Infer the type of ``e``; raise MalformedTemplate when ill-typed."""
    if isinstance(e, Const):
        if not I64_MIN <= e.value <= I64_MAX:
            raise MalformedTemplate(f"constant {e.value} exceeds 64 bits")
        return INT
    if isinstance(e, BoolConst):
        return BOOL
    if isinstance(e, Param):
        return INT
    if isinstance(e, Feat):
        if e.name not in features:
            raise MalformedTemplate(f"unknown feature {e.name!r}")
        return features[e.name]
    if isinstance(e, ArgFeat):
        if not in_fold:
            raise MalformedTemplate(f"(arg {e.name}) outside argfold")
        if e.name not in ARG_FEATURES:
            raise MalformedTemplate(f"unknown argument feature {e.name!r}")
        return ARG_FEATURES[e.name]
    if isinstance(e, Acc):
        if not in_fold:
            raise MalformedTemplate("acc outside argfold")
        return INT
    if isinstance(e, Unary):
        if e.op not in UNARY_OPS:
            raise MalformedTemplate(f"unknown unary op {e.op!r}")
        want, out = UNARY_OPS[e.op]
        _expect(e.x, want, in_fold, features, e.op)
        return out
    if isinstance(e, Binary):
        if e.op not in BINARY_OPS:
            raise MalformedTemplate(f"unknown binary op {e.op!r}")
        want, out = BINARY_OPS[e.op]
        _expect(e.a, want, in_fold, features, e.op)
        _expect(e.b, want, in_fold, features, e.op)
        return out
    if isinstance(e, If):
        _expect(e.cond, BOOL, in_fold, features, "if")
        t = type_of(e.then, in_fold, features)
        _expect(e.other, t, in_fold, features, "if")
        return t
    if isinstance(e, ArgFold):
        if in_fold:
            raise MalformedTemplate("nested argfold")
        _expect(e.init, INT, False, features, "argfold")
        _expect(e.step, INT, True, features, "argfold")
        return INT
    raise MalformedTemplate(f"not an expression: {e!r}")


def node_type(e: Expr, in_fold: bool = False) -> str:
    """Type of a node already known to be well-typed, without re-checking
    the subtree."""
    while isinstance(e, If):
        e = e.then
    if isinstance(e, (Binary, Unary)):
        return (BINARY_OPS if isinstance(e, Binary) else UNARY_OPS)[e.op][1]
    if isinstance(e, Feat):
        return ALL_FEATURES[e.name]
    if isinstance(e, ArgFeat):
        return ARG_FEATURES[e.name]
    if isinstance(e, BoolConst):
        return BOOL
    return INT


def _expect(e: Expr, want: str, in_fold: bool, features: Mapping[str, str], where: str) -> None:
    got = type_of(e, in_fold, features)
    if got != want:
        raise MalformedTemplate(f"{where}: expected {want}, got {got}")


# --------------------------------------------------------------------------
# Templates


@dataclass(frozen=True)
class HyperParamSlot:
    name: str
    lo: int
    hi: int
    default: int
    kind: str = "int"

    def __post_init__(self) -> None:
        if self.kind != "int":
            raise MalformedTemplate(f"slot {self.name}: only int slots are supported")
        if not self.lo <= self.default <= self.hi:
            raise MalformedTemplate(f"slot {self.name}: need lo <= default <= hi")


@dataclass(frozen=True)
class PolicyTemplate:
    root: Expr
    slots: tuple[HyperParamSlot, ...] = ()
    meta: Mapping[str, Any] = field(default_factory=dict, compare=False, hash=False)

    def __post_init__(self) -> None:
        names = [s.name for s in self.slots]
        if len(set(names)) != len(names):
            raise MalformedTemplate("duplicate slot names")
        missing = param_names(self.root) - set(names)
        if missing:
            raise MalformedTemplate(f"undeclared slots: {sorted(missing)}")
        n = node_count(self.root)
        if n > MAX_NODES:
            raise NodeLimit(f"node count {n} exceeds {MAX_NODES}")
        d = depth(self.root)
        if d > MAX_DEPTH:
            raise DepthLimit(f"depth {d} exceeds {MAX_DEPTH}")
        object.__setattr__(self, "_root_type", type_of(self.root))

    @property
    def root_type(self) -> str:
        return self._root_type

    def slot(self, name: str) -> HyperParamSlot:
        for s in self.slots:
            if s.name == name:
                return s
        raise SlotMissing(name)

    def defaults(self) -> dict[str, int]:
        return {s.name: s.default for s in self.slots}

    def structure_hash(self) -> str:
        from .text import print_template

        return hashlib.sha256(print_template(self).encode()).hexdigest()

    def compile(self, slots: Mapping[str, int] | None = None) -> Callable[[FeatureVector], Any]:
        values = self.defaults() if slots is None else check_slots(self, slots)
        return _compile(self.root, values)

    def with_meta(self, **meta: Any) -> PolicyTemplate:
        return PolicyTemplate(self.root, self.slots, {**self.meta, **meta})


def check_slots(t: PolicyTemplate, slots: Mapping[str, int]) -> dict[str, int]:
    out = {}
    for s in t.slots:
        if s.name not in slots:
            raise SlotMissing(s.name)
        v = slots[s.name]
        if not s.lo <= v <= s.hi:
            raise SlotOutOfBounds(f"{s.name}={v} outside [{s.lo}, {s.hi}]")
        out[s.name] = v
    return out


def eval_template(t: PolicyTemplate, slots: Mapping[str, int], features: FeatureVector) -> Any:
    return t.compile(slots)(features)


# --------------------------------------------------------------------------
# Compilation to closures


def _clamp(v: int) -> int:
    if v > I64_MAX:
        return I64_MAX
    if v < I64_MIN:
        return I64_MIN
    return v


def _div(a: int, b: int) -> int:
    if b == 0:
        return 0
    q = abs(a) // abs(b)
    return _clamp(q if (a >= 0) == (b >= 0) else -q)


def _shr(a: int, b: int) -> int:
    return a >> min(max(b, 0), 63)


_ARITH: dict[str, Callable[[int, int], int]] = {
    "add": lambda a, b: _clamp(a + b),
    "sub": lambda a, b: _clamp(max(0, a - b)),
    "mul": lambda a, b: _clamp(a * b),
    "div": _div,
    "shr": _shr,
    "min": min,
    "max": max,
    "lt": lambda a, b: a < b,
    "le": lambda a, b: a <= b,
    "eq": lambda a, b: a == b,
}

# Closures take (features, arg_row, acc).
_Fn = Callable[[FeatureVector, Any, int], Any]


def _compile(e: Expr, slots: Mapping[str, int]) -> Callable[[FeatureVector], Any]:
    fn = _c(e, slots)
    return lambda fv: fn(fv, None, 0)


def _c(e: Expr, slots: Mapping[str, int]) -> _Fn:
    if isinstance(e, Const):
        v = e.value
        return lambda fv, row, acc: v
    if isinstance(e, BoolConst):
        b = e.value
        return lambda fv, row, acc: b
    if isinstance(e, Param):
        pv = slots[e.name]
        return lambda fv, row, acc: pv
    if isinstance(e, Feat):
        name = e.name
        if ALL_FEATURES.get(name) == BOOL:
            return lambda fv, row, acc: bool(fv.values[name])
        return lambda fv, row, acc: fv.values[name]
    if isinstance(e, ArgFeat):
        name = e.name
        if ARG_FEATURES[name] == BOOL:
            return lambda fv, row, acc: bool(row[name])
        return lambda fv, row, acc: row[name]
    if isinstance(e, Acc):
        return lambda fv, row, acc: acc
    if isinstance(e, Unary):
        x = _c(e.x, slots)
        if e.op == "neg":
            return lambda fv, row, acc: _clamp(-x(fv, row, acc))
        return lambda fv, row, acc: not x(fv, row, acc)
    if isinstance(e, Binary):
        a, b = _c(e.a, slots), _c(e.b, slots)
        if e.op == "and":
            return lambda fv, row, acc: a(fv, row, acc) and b(fv, row, acc)
        if e.op == "or":
            return lambda fv, row, acc: a(fv, row, acc) or b(fv, row, acc)
        op = _ARITH[e.op]
        return lambda fv, row, acc: op(a(fv, row, acc), b(fv, row, acc))
    if isinstance(e, If):
        c, t, o = _c(e.cond, slots), _c(e.then, slots), _c(e.other, slots)
        return lambda fv, row, acc: t(fv, row, acc) if c(fv, row, acc) else o(fv, row, acc)
    if isinstance(e, ArgFold):
        init, step = _c(e.init, slots), _c(e.step, slots)

        def fold(fv: FeatureVector, row: Any, acc: int) -> int:
            value = init(fv, row, acc)
            for arg_row in fv.args:
                value = step(fv, arg_row, value)
            return value

        return fold
    raise MalformedTemplate(f"not an expression: {e!r}")
