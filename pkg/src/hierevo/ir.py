"""Miniature program representation used by the inlining environments.

Programs are immutable values. The only way to derive a new program is
through :func:`hierevo.inline.apply_inline`, which copies what it changes
and shares the rest.
"""

from __future__ import annotations

import enum
import re
from collections import Counter
from dataclasses import dataclass, field
from functools import cached_property
from typing import Any, Iterable, Mapping

POINTER_BITS = 64


class IRError(ValueError):
    """Raised when a program violates a structural invariant."""


class DeclarationHasNoBody(IRError):
    pass


# --------------------------------------------------------------------------
# Types


class TypeKind(str, enum.Enum):
    INT = "int"
    FLOAT = "float"
    POINTER = "ptr"
    VECTOR = "vector"
    VOID = "void"


@dataclass(frozen=True)
class TypeTag:
    kind: TypeKind
    width: int = 0
    elem: TypeTag | None = None
    lanes: int = 0

    def __post_init__(self) -> None:
        if self.kind in (TypeKind.INT, TypeKind.FLOAT) and self.width <= 0:
            raise IRError(f"{self.kind.value} type needs a positive width")
        if self.kind is TypeKind.VECTOR:
            if self.lanes <= 0 or self.elem is None:
                raise IRError("vector type needs lanes > 0 and an element type")
            if self.elem.kind in (TypeKind.VECTOR, TypeKind.VOID):
                raise IRError("vector element must be a scalar type")

    @classmethod
    def int(cls, width: int) -> TypeTag:
        return cls(TypeKind.INT, width)

    @classmethod
    def float(cls, width: int) -> TypeTag:
        return cls(TypeKind.FLOAT, width)

    @classmethod
    def vector(cls, elem: TypeTag, lanes: int) -> TypeTag:
        return cls(TypeKind.VECTOR, elem=elem, lanes=lanes)

    @property
    def is_int(self) -> bool:
        return self.kind is TypeKind.INT

    @property
    def is_float(self) -> bool:
        return self.kind is TypeKind.FLOAT

    @property
    def is_pointer(self) -> bool:
        return self.kind is TypeKind.POINTER

    @property
    def is_vector(self) -> bool:
        return self.kind is TypeKind.VECTOR

    @property
    def is_void(self) -> bool:
        return self.kind is TypeKind.VOID

    def __str__(self) -> str:
        if self.kind is TypeKind.INT:
            return f"i{self.width}"
        if self.kind is TypeKind.FLOAT:
            return f"f{self.width}"
        if self.kind is TypeKind.VECTOR:
            return f"<{self.lanes} x {self.elem}>"
        return self.kind.value

    @classmethod
    def parse(cls, text: str) -> TypeTag:
        text = text.strip()
        if text == "ptr":
            return PTR
        if text == "void":
            return VOID
        m = re.fullmatch(r"([if])(\d+)", text)
        if m:
            kind = TypeKind.INT if m.group(1) == "i" else TypeKind.FLOAT
            return cls(kind, int(m.group(2)))
        m = re.fullmatch(r"<\s*(\d+)\s*x\s*(.+?)\s*>", text)
        if m:
            return cls.vector(cls.parse(m.group(2)), int(m.group(1)))
        raise IRError(f"unknown type {text!r}")


PTR = TypeTag(TypeKind.POINTER)
VOID = TypeTag(TypeKind.VOID)
I1, I8, I32, I64 = (TypeTag.int(w) for w in (1, 8, 32, 64))
F32, F64 = TypeTag.float(32), TypeTag.float(64)


class CastClass(enum.Enum):
    EXACT = "exact"
    NOOP_PTR_INT = "noop_ptr_int"
    NONTRIVIAL = "nontrivial"
    OTHER_NOOP = "other_noop"


def cast_class(arg: TypeTag, param: TypeTag) -> CastClass:
    """Classify the conversion needed to pass a value of type ``arg`` to ``param``.

    Mirrors the decision chain of the size policy: pointer/integer pairs are
    free only at pointer width; same-family integer or float pairs of different
    widths need a real conversion; every other mismatch would be a plain
    bitcast, which is a no-op.
    """
    if arg == param:
        return CastClass.EXACT
    if (arg.is_pointer and param.is_int) or (arg.is_int and param.is_pointer):
        width = param.width if param.is_int else arg.width
        return CastClass.NOOP_PTR_INT if width == POINTER_BITS else CastClass.NONTRIVIAL
    if arg.is_void:
        return CastClass.OTHER_NOOP
    if (arg.is_int and param.is_int) or (arg.is_float and param.is_float):
        # widths differ here, so this is trunc/ext or fptrunc/fpext
        return CastClass.NONTRIVIAL
    return CastClass.OTHER_NOOP


# --------------------------------------------------------------------------
# Instructions


class Opcode(str, enum.Enum):
    CALL = "call"
    INVOKE = "invoke"
    RET = "ret"
    BR = "br"
    SWITCH = "switch"
    INDIRECTBR = "indirectbr"
    LOAD = "load"
    STORE = "store"
    ALLOCA = "alloca"
    GEP = "gep"
    ATOMICRMW = "atomicrmw"
    CMPXCHG = "cmpxchg"
    FENCE = "fence"
    FADD = "fadd"
    FSUB = "fsub"
    FMUL = "fmul"
    FDIV = "fdiv"
    FREM = "frem"
    FNEG = "fneg"
    FCMP = "fcmp"
    SDIV = "sdiv"
    UDIV = "udiv"
    SREM = "srem"
    UREM = "urem"
    INSERTELEMENT = "insertelement"
    EXTRACTELEMENT = "extractelement"
    SHUFFLEVECTOR = "shufflevector"
    INSERTVALUE = "insertvalue"
    EXTRACTVALUE = "extractvalue"
    PHI = "phi"
    BITCAST = "bitcast"
    PTRTOINT = "ptrtoint"
    INTTOPTR = "inttoptr"
    ADD = "add"
    SUB = "sub"
    MUL = "mul"
    ICMP = "icmp"
    SELECT = "select"
    OTHER = "other"


CALL_OPCODES = frozenset({Opcode.CALL, Opcode.INVOKE})
TERMINATORS = frozenset({Opcode.RET, Opcode.BR, Opcode.SWITCH, Opcode.INDIRECTBR})


class OpClass(enum.Enum):
    CONTROL_OR_CALL = "control_or_call"
    MEMORY_OR_ARITH = "memory_or_arith"
    SIMPLE = "simple"
    ZERO_COST = "zero_cost"


_SIZE_HIGH = CALL_OPCODES | TERMINATORS
_SIZE_MEDIUM = frozenset({
    Opcode.LOAD, Opcode.STORE, Opcode.ALLOCA, Opcode.GEP, Opcode.CMPXCHG,
    Opcode.ATOMICRMW, Opcode.FENCE, Opcode.FNEG, Opcode.FADD, Opcode.FSUB,
    Opcode.FMUL, Opcode.FDIV, Opcode.FREM, Opcode.FCMP, Opcode.SDIV,
    Opcode.UDIV, Opcode.SREM, Opcode.UREM, Opcode.INSERTELEMENT,
    Opcode.EXTRACTELEMENT, Opcode.SHUFFLEVECTOR, Opcode.EXTRACTVALUE,
    Opcode.INSERTVALUE,
})
ZERO_COST_OPCODES = frozenset({
    Opcode.ALLOCA, Opcode.PHI, Opcode.BITCAST, Opcode.PTRTOINT, Opcode.INTTOPTR,
})

SIZE_WEIGHTS = {OpClass.CONTROL_OR_CALL: 3, OpClass.MEMORY_OR_ARITH: 2, OpClass.SIMPLE: 1}


def size_class(op: Opcode) -> OpClass:
    if op in _SIZE_HIGH:
        return OpClass.CONTROL_OR_CALL
    if op in _SIZE_MEDIUM:
        return OpClass.MEMORY_OR_ARITH
    return OpClass.SIMPLE


def cost_class(op: Opcode) -> OpClass:
    if op in ZERO_COST_OPCODES:
        return OpClass.ZERO_COST
    if op in CALL_OPCODES:
        return OpClass.CONTROL_OR_CALL
    return OpClass.SIMPLE


_SIZE_WEIGHT_OF = {op: SIZE_WEIGHTS[size_class(op)] for op in Opcode}


@dataclass(frozen=True)
class Instruction:
    opcode: Opcode
    result_type: TypeTag = VOID
    callsite: int | None = None
    indirect: bool = False

    def __post_init__(self) -> None:
        is_call = self.opcode in CALL_OPCODES
        if is_call != (self.callsite is not None):
            raise IRError(f"{self.opcode.value}: callsite id must be present iff call/invoke")
        if self.indirect and not is_call:
            raise IRError("only calls can be indirect")

    @cached_property
    def stat_row(self) -> tuple[int, int, int, int, bool]:
        """(weighted size, is ret, perf base, call weight, vector) of this one instruction."""
        op = self.opcode
        rets = int(op is Opcode.RET)
        if op in ZERO_COST_OPCODES:
            return _SIZE_WEIGHT_OF[op], rets, 0, 0, False
        if op in CALL_OPCODES:
            return _SIZE_WEIGHT_OF[op], rets, 0, 2 if self.indirect else 1, self.result_type.is_vector
        return _SIZE_WEIGHT_OF[op], rets, 1, 0, self.result_type.is_vector


@dataclass(frozen=True)
class BasicBlock:
    id: int
    instructions: tuple[Instruction, ...]
    loop_depth: int = 0
    frequency: int = 1

    def __post_init__(self) -> None:
        if self.loop_depth < 0 or self.frequency < 0:
            raise IRError("loop depth and frequency must be non-negative")

    @property
    def terminated(self) -> bool:
        return bool(self.instructions) and self.instructions[-1].opcode in TERMINATORS

    @cached_property
    def stat_totals(self) -> tuple[int, int, int, int, bool, int]:
        # Blocks are shared between a program and its inlined successors,
        # so per-block sums are computed once.
        weighted = base = calls = rets = 0
        vector = False
        for inst in self.instructions:
            w, r, b, c, v = inst.stat_row
            weighted += w
            rets += r
            base += b
            calls += c
            vector = vector or v
        return len(self.instructions), weighted, base, calls, vector, rets


# --------------------------------------------------------------------------
# Functions


ATTR_NAMES = (
    "no_inline", "always_inline", "optimize_for_size", "min_size", "hot",
    "is_declaration", "is_optimized_libfunc", "externally_visible",
)


@dataclass(frozen=True)
class FunctionAttrs:
    no_inline: bool = False
    always_inline: bool = False
    optimize_for_size: bool = False
    min_size: bool = False
    hot: bool = False
    is_declaration: bool = False
    is_optimized_libfunc: bool = False
    externally_visible: bool = False

    def __post_init__(self) -> None:
        if self.no_inline and self.always_inline:
            raise IRError("a function cannot be both no_inline and always_inline")

    def names(self) -> list[str]:
        return [n for n in ATTR_NAMES if getattr(self, n)]


class MemoryEffect(str, enum.Enum):
    NONE = "none"
    READ_ONLY = "readonly"
    READ_WRITE = "readwrite"

    @property
    def does_not_access_memory(self) -> bool:
        return self is MemoryEffect.NONE

    @property
    def only_reads_memory(self) -> bool:
        return self is not MemoryEffect.READ_WRITE


@dataclass(frozen=True)
class BodyStats:
    raw_count: int
    weighted_size: int
    perf_base: int
    call_weight: int
    has_vector: bool
    ret_count: int


@dataclass(frozen=True)
class Function:
    id: str
    params: tuple[TypeTag, ...] = ()
    attrs: FunctionAttrs = field(default_factory=FunctionAttrs)
    mem: MemoryEffect = MemoryEffect.READ_WRITE
    blocks: tuple[BasicBlock, ...] = ()
    entry_frequency: int = 1
    # Constant arguments of callsites already inlined into this function.
    inlined_const_args: int = 0

    def __post_init__(self) -> None:
        if self.entry_frequency < 1:
            raise IRError(f"{self.id}: entry frequency must be >= 1")
        if self.attrs.is_declaration and self.blocks:
            raise IRError(f"{self.id}: declarations have no body")
        if not self.attrs.is_declaration and not self.blocks:
            raise IRError(f"{self.id}: defined function needs at least one block")

    @property
    def is_declaration(self) -> bool:
        return self.attrs.is_declaration

    @cached_property
    def stats(self) -> BodyStats:
        if self.is_declaration:
            raise DeclarationHasNoBody(self.id)
        raw = weighted = base = calls = rets = 0
        vector = False
        for bb in self.blocks:
            n, w, b, c, v, r = bb.stat_totals
            raw += n
            weighted += w
            base += b
            calls += c
            vector = vector or v
            rets += r
        return BodyStats(raw, weighted, base, calls, vector, rets)

    def block(self, block_id: int) -> BasicBlock:
        for bb in self.blocks:
            if bb.id == block_id:
                return bb
        raise IRError(f"{self.id}: no block {block_id}")


def instruction_count(f: Function) -> int:
    return f.stats.raw_count


def weighted_size_cost(f: Function) -> int:
    """Complexity-weighted size: 3 for calls and terminators, 2 for memory and
    heavier arithmetic, 1 for everything else."""
    return f.stats.weighted_size


def perf_cost(f: Function, call_penalty: int) -> tuple[int, bool]:
    """Cost model of the performance policy.

    Zero-cost opcodes are skipped entirely, so they also never set the vector
    flag. Direct calls cost ``call_penalty``, indirect calls twice that.
    """
    s = f.stats
    return s.perf_base + call_penalty * s.call_weight, s.has_vector


# --------------------------------------------------------------------------
# Call sites and programs


class ArgKind(str, enum.Enum):
    CONSTANT = "constant"
    UNDEF = "undef"
    RUNTIME = "runtime"


@dataclass(frozen=True)
class ArgValue:
    kind: ArgKind
    type: TypeTag


@dataclass(frozen=True)
class CallSite:
    id: int
    caller: str
    callee: str | None  # None for an indirect call
    args: tuple[ArgValue, ...]
    block: int

    @property
    def is_indirect(self) -> bool:
        return self.callee is None


@dataclass(frozen=True, eq=False)
class Program:
    functions: Mapping[str, Function]
    callsites: Mapping[int, CallSite]
    roots: frozenset[str]
    next_callsite_id: int = 0

    def __post_init__(self) -> None:
        if self.callsites:
            top = max(self.callsites) + 1
            if self.next_callsite_id < top:
                object.__setattr__(self, "next_callsite_id", top)

    @cached_property
    def _users(self) -> Counter[str]:
        return Counter(cs.callee for cs in self.callsites.values() if cs.callee is not None)

    def users(self, fid: str) -> int:
        return self._users.get(fid, 0)

    @cached_property
    def callsites_by_caller(self) -> dict[str, list[int]]:
        out: dict[str, list[int]] = {}
        for cid in sorted(self.callsites):
            out.setdefault(self.callsites[cid].caller, []).append(cid)
        return out

    @cached_property
    def reachable(self) -> frozenset[str]:
        """Functions reachable from the roots through direct calls."""
        by_caller = self.callsites_by_caller
        seen: set[str] = set()
        stack = [r for r in self.roots if r in self.functions]
        while stack:
            fid = stack.pop()
            if fid in seen:
                continue
            seen.add(fid)
            for cid in by_caller.get(fid, ()):
                callee = self.callsites[cid].callee
                if callee is not None and callee not in seen:
                    stack.append(callee)
        return frozenset(seen)

    def site_block(self, cs: CallSite) -> BasicBlock:
        return self.functions[cs.caller].block(cs.block)

    def site_frequency(self, cs: CallSite) -> int:
        return self.site_block(cs).frequency

    def validate(self, strict: bool = True) -> None:
        """Check referential integrity.

        ``strict`` additionally requires every block to end in a terminator;
        blocks spliced in by inlining lose their ``ret`` and fall through.
        """
        for fid in self.roots:
            if fid not in self.functions:
                raise IRError(f"root {fid!r} is not a function")
        seen_ids: dict[int, tuple[str, int]] = {}
        for fid, f in self.functions.items():
            if f.id != fid:
                raise IRError(f"function keyed {fid!r} has id {f.id!r}")
            block_ids = [bb.id for bb in f.blocks]
            if len(set(block_ids)) != len(block_ids):
                raise IRError(f"{fid}: duplicate block ids")
            for bb in f.blocks:
                if strict and not bb.terminated:
                    raise IRError(f"{fid}: block {bb.id} does not end in a terminator")
                for inst in bb.instructions:
                    if inst.callsite is None:
                        continue
                    if inst.callsite in seen_ids:
                        raise IRError(f"callsite {inst.callsite} appears twice")
                    seen_ids[inst.callsite] = (fid, bb.id)
        if set(seen_ids) != set(self.callsites):
            raise IRError("call instructions and callsite table disagree")
        for cid, cs in self.callsites.items():
            if cs.id != cid:
                raise IRError(f"callsite keyed {cid} has id {cs.id}")
            if seen_ids[cid] != (cs.caller, cs.block):
                raise IRError(f"callsite {cid} is not located where its record says")
            if cs.callee is not None and cs.callee not in self.functions:
                raise IRError(f"callsite {cid} targets unknown function {cs.callee!r}")
            inst = _find_call(self.functions[cs.caller].block(cs.block), cid)
            if inst.indirect != cs.is_indirect:
                raise IRError(f"callsite {cid}: indirect flag mismatch")


def _find_call(bb: BasicBlock, cid: int) -> Instruction:
    for inst in bb.instructions:
        if inst.callsite == cid:
            return inst
    raise IRError(f"callsite {cid} not in block {bb.id}")


def user_count(p: Program, f: Function | str) -> int:
    fid = f if isinstance(f, str) else f.id
    return p.users(fid)


# --------------------------------------------------------------------------
# JSON form


def program_to_json(p: Program) -> dict[str, Any]:
    funcs = []
    for fid in sorted(p.functions):
        f = p.functions[fid]
        funcs.append({
            "id": f.id,
            "params": [str(t) for t in f.params],
            "attrs": f.attrs.names(),
            "mem": f.mem.value,
            "entry_frequency": f.entry_frequency,
            "inlined_const_args": f.inlined_const_args,
            "blocks": [
                {
                    "id": bb.id,
                    "loop_depth": bb.loop_depth,
                    "frequency": bb.frequency,
                    "instructions": [_inst_to_json(i) for i in bb.instructions],
                }
                for bb in f.blocks
            ],
        })
    sites = []
    for cid in sorted(p.callsites):
        cs = p.callsites[cid]
        sites.append({
            "id": cs.id,
            "caller": cs.caller,
            "callee": cs.callee,
            "block": cs.block,
            "args": [{"kind": a.kind.value, "type": str(a.type)} for a in cs.args],
        })
    return {
        "functions": funcs,
        "callsites": sites,
        "roots": sorted(p.roots),
        "next_callsite_id": p.next_callsite_id,
    }


def _inst_to_json(inst: Instruction) -> dict[str, Any]:
    out: dict[str, Any] = {"op": inst.opcode.value, "type": str(inst.result_type)}
    if inst.callsite is not None:
        out["callsite"] = inst.callsite
    return out


def program_from_json(doc: Mapping[str, Any], strict: bool = True) -> Program:
    indirect = {s["id"] for s in doc.get("callsites", []) if s.get("callee") is None}
    functions: dict[str, Function] = {}
    for fd in doc.get("functions", []):
        unknown = set(fd.get("attrs", [])) - set(ATTR_NAMES)
        if unknown:
            raise IRError(f"{fd['id']}: unknown attributes {sorted(unknown)}")
        attrs = FunctionAttrs(**{n: True for n in fd.get("attrs", [])})
        blocks = tuple(
            BasicBlock(
                id=bd["id"],
                loop_depth=bd.get("loop_depth", 0),
                frequency=bd.get("frequency", 1),
                instructions=tuple(
                    Instruction(
                        Opcode(i["op"]),
                        TypeTag.parse(i.get("type", "void")),
                        i.get("callsite"),
                        i.get("callsite") in indirect,
                    )
                    for i in bd["instructions"]
                ),
            )
            for bd in fd.get("blocks", [])
        )
        if fd["id"] in functions:
            raise IRError(f"duplicate function {fd['id']!r}")
        functions[fd["id"]] = Function(
            id=fd["id"],
            params=tuple(TypeTag.parse(t) for t in fd.get("params", [])),
            attrs=attrs,
            mem=MemoryEffect(fd.get("mem", "readwrite")),
            blocks=blocks,
            entry_frequency=fd.get("entry_frequency", 1),
            inlined_const_args=fd.get("inlined_const_args", 0),
        )
    callsites: dict[int, CallSite] = {}
    for sd in doc.get("callsites", []):
        cs = CallSite(
            id=sd["id"],
            caller=sd["caller"],
            callee=sd.get("callee"),
            args=tuple(ArgValue(ArgKind(a["kind"]), TypeTag.parse(a["type"])) for a in sd.get("args", [])),
            block=sd["block"],
        )
        if cs.id in callsites:
            raise IRError(f"duplicate callsite {cs.id}")
        if cs.caller not in functions:
            raise IRError(f"callsite {cs.id} has unknown caller {cs.caller!r}")
        callsites[cs.id] = cs
    p = Program(functions, callsites, frozenset(doc.get("roots", [])), doc.get("next_callsite_id", 0))
    p.validate(strict=strict)
    return p


def make_program(functions: Iterable[Function], callsites: Iterable[CallSite], roots: Iterable[str]) -> Program:
    """Build and validate a program from loose parts (non-strict blocks allowed)."""
    p = Program({f.id: f for f in functions}, {c.id: c for c in callsites}, frozenset(roots))
    p.validate(strict=False)
    return p
