"""Seeded generation of inlining corpora and corpus file I/O."""

from __future__ import annotations

import hashlib
import json
import random
from importlib import resources
from pathlib import Path
from typing import Any

import jsonschema

from .ir import (
    F32,
    F64,
    I8,
    I32,
    I64,
    PTR,
    VOID,
    ArgKind,
    ArgValue,
    BasicBlock,
    CallSite,
    Function,
    FunctionAttrs,
    Instruction,
    MemoryEffect,
    Opcode,
    Program,
    TypeTag,
    program_from_json,
    program_to_json,
)

TYPE_PALETTE = (I32, I64, PTR, F32, F64, I8, TypeTag.vector(F32, 4))
BODY_OPCODES = (
    (Opcode.ADD, 8), (Opcode.SUB, 4), (Opcode.MUL, 3), (Opcode.ICMP, 4),
    (Opcode.SELECT, 2), (Opcode.LOAD, 8), (Opcode.STORE, 6), (Opcode.GEP, 5),
    (Opcode.ALLOCA, 2), (Opcode.PHI, 3), (Opcode.BITCAST, 2), (Opcode.PTRTOINT, 1),
    (Opcode.INTTOPTR, 1), (Opcode.FADD, 2), (Opcode.FMUL, 2), (Opcode.FDIV, 1),
    (Opcode.FCMP, 1), (Opcode.FNEG, 1), (Opcode.SDIV, 1), (Opcode.UREM, 1),
    (Opcode.EXTRACTELEMENT, 1), (Opcode.INSERTELEMENT, 1), (Opcode.SHUFFLEVECTOR, 1),
    (Opcode.EXTRACTVALUE, 1), (Opcode.ATOMICRMW, 1), (Opcode.FENCE, 1), (Opcode.OTHER, 2),
)
_OPS = [op for op, _ in BODY_OPCODES]
_OP_WEIGHTS = [w for _, w in BODY_OPCODES]
_FREQS = (1, 16, 64, 100, 256, 1024)


_BODY_TYPES = (I32, I64, PTR, VOID, TYPE_PALETTE[-1])
_BODY_TYPE_WEIGHTS = (24, 24, 24, 24, 4)
# Instructions are immutable, so bodies share interned instances.
_POOL = {(op, ty): Instruction(op, ty) for op in _OPS for ty in _BODY_TYPES}


def _body(rng: random.Random, n: int) -> list[Instruction]:
    ops = rng.choices(_OPS, _OP_WEIGHTS, k=n)
    tys = rng.choices(_BODY_TYPES, _BODY_TYPE_WEIGHTS, k=n)
    return [_POOL[k] for k in zip(ops, tys)]


def gen_program(rng: random.Random) -> Program:
    """One random program: a call DAG rooted at ``main`` with the occasional
    self-recursive call, indirect call and external declaration."""
    n_def = rng.randint(3, 12)
    ids = ["main"] + [f"f{i:02d}" for i in range(1, n_def)]
    decls = [f"ext{i}" for i in range(rng.randint(0, 2))]
    next_cs = 0
    functions: dict[str, Function] = {}
    callsites: dict[int, CallSite] = {}
    params_of = {fid: tuple(rng.choice(TYPE_PALETTE) for _ in range(rng.randint(0, 4))) for fid in ids + decls}

    for fid in decls:
        functions[fid] = Function(
            fid, params_of[fid],
            FunctionAttrs(is_declaration=True, is_optimized_libfunc=rng.random() < 0.3),
            rng.choice(list(MemoryEffect)),
        )

    for idx, fid in enumerate(ids):
        entry = rng.choice(_FREQS)
        huge = rng.random() < 0.03
        n_blocks = rng.randint(12, 24) if huge else rng.choice((1, 1, 2, 2, 3, 4, 5, 6, 7, 8))
        blocks = []
        first_cs = next_cs
        n_calls = rng.choice((0, 0, 1, 1, 1, 2, 2, 3, 5))
        call_blocks = [rng.randrange(n_blocks) for _ in range(n_calls)]
        for b in range(n_blocks):
            size = rng.randint(300, 600) if huge else rng.choice((0, 1, 2, 3, 4, 6, 8, 12, 20))
            insts = _body(rng, size)
            for _ in range(call_blocks.count(b)):
                cid = next_cs
                next_cs += 1
                callee = _pick_callee(rng, fid, ids[idx + 1:], decls)
                callsites[cid] = CallSite(cid, fid, callee, _args(rng, params_of.get(callee, ())), b)
                ret_ty = TYPE_PALETTE[-1] if rng.random() < 0.05 else rng.choice((VOID, I32, PTR))
                op = rng.choice((Opcode.CALL, Opcode.CALL, Opcode.INVOKE))
                insts.insert(rng.randint(0, len(insts)), Instruction(op, ret_ty, cid, callee is None))
            if b == n_blocks - 1 or rng.random() < 0.15:
                insts.append(Instruction(Opcode.RET, rng.choice((VOID, I32, PTR))))
            else:
                insts.append(Instruction(rng.choice((Opcode.BR, Opcode.BR, Opcode.BR, Opcode.SWITCH, Opcode.INDIRECTBR))))
            depth = 0 if b == 0 else rng.choice((0, 0, 0, 1, 1, 2, 3, 4))
            freq = entry * (2 ** min(depth, 3)) // rng.choice((1, 1, 2, 4, 8, 64))
            blocks.append(BasicBlock(b, tuple(insts), depth, freq))
        bbs = tuple(blocks)

        # Unbounded unrolling of self-recursion would only exercise the budget.
        self_recursive = any(callsites[c].callee == fid for c in range(first_cs, next_cs))
        small_leaf = not call_blocks and sum(len(bb.instructions) for bb in bbs) < 40
        always = small_leaf and idx > 0 and rng.random() < 0.15
        attrs = FunctionAttrs(
            no_inline=self_recursive or (not always and rng.random() < 0.05),
            always_inline=always,
            optimize_for_size=rng.random() < 0.15,
            min_size=rng.random() < 0.05,
            hot=rng.random() < 0.1,
            is_optimized_libfunc=rng.random() < 0.04,
            externally_visible=idx == 0 or rng.random() < 0.2,
        )
        mem = rng.choices(list(MemoryEffect), (20, 25, 55))[0]
        functions[fid] = Function(fid, params_of[fid], attrs, mem, bbs, entry)

    roots = {"main"} | {f for f in ids[1:] if rng.random() < 0.1}
    p = Program(functions, callsites, frozenset(roots), next_cs)
    p.validate()
    return p


def _pick_callee(rng: random.Random, fid: str, later: list[str], decls: list[str]) -> str | None:
    r = rng.random()
    if r < 0.08:
        return None
    if r < 0.13:
        return fid
    if decls and r < 0.22:
        return rng.choice(decls)
    if later:
        return rng.choice(later)
    return rng.choice(decls) if decls else None


def _args(rng: random.Random, params: tuple[TypeTag, ...]) -> tuple[ArgValue, ...]:
    n = len(params)
    r = rng.random()
    if r < 0.08:
        n += 1
    elif r < 0.15 and n:
        n -= 1
    elif not params:
        n = rng.randint(0, 3)
    out = []
    for i in range(n):
        k = rng.random()
        kind = ArgKind.CONSTANT if k < 0.35 else ArgKind.UNDEF if k < 0.42 else ArgKind.RUNTIME
        if i < len(params) and rng.random() < 0.55:
            ty = params[i]
        else:
            ty = rng.choice(TYPE_PALETTE)
        out.append(ArgValue(kind, ty))
    return tuple(out)


def gen_inline_corpus(n: int, seed: int) -> list[Program]:
    rng = random.Random(seed)
    return [gen_program(rng) for _ in range(n)]


# --------------------------------------------------------------------------
# Planted corpus

PLANTED_CONST_ARGS = 17
PLANTED_THRESHOLD = 6 + 2 * PLANTED_CONST_ARGS
PLANTED_TEXT = """\
[hyperparam]: k, int, 0, 200
[init]: k, {k}
; EVOLVE-BLOCK-START
(lt (feat callee_weighted_size) (param k))
; EVOLVE-BLOCK-END
"""
# (weight offset from the threshold, number of helpers) per program.
# One helper per offset gives a smooth slope towards the threshold; the
# crowds at -1 and +1 make every cut-off but the best two lose >10%, and
# the two far-off helpers make "inline everything" a net loss.
PLANTED_LAYOUT = tuple((d, 1) for d in range(-12, 13) if d) + ((-1, 10), (1, 10), (30, 2))


def _sized_body(rng: random.Random, weight: int) -> tuple[Instruction, ...]:
    """Straight-line body of exactly ``weight`` size units, ending in ret."""
    rest = weight - 3
    medium = rng.randint(0, rest // 2)
    ops = [Opcode.LOAD] * medium + [Opcode.ADD] * (rest - 2 * medium)
    rng.shuffle(ops)
    return tuple(Instruction(op, I32) for op in ops) + (Instruction(Opcode.RET, I32),)


def gen_planted_program(rng: random.Random, uses: int = 1) -> Program:
    """``main`` calling exported leaf helpers with ``PLANTED_CONST_ARGS``
    constant arguments each.

    A helper is not deleted after inlining, so inlining one copy changes
    the size by its weighted size minus ``PLANTED_THRESHOLD``. Sizes follow
    ``PLANTED_LAYOUT``, so the best policy is ``PLANTED_TEXT`` with ``k`` at
    the threshold or one above it.
    """
    functions: dict[str, Function] = {}
    callsites: dict[int, CallSite] = {}
    params = (I32,) * PLANTED_CONST_ARGS
    shared = []
    for offset, count in PLANTED_LAYOUT:
        for _ in range(count):
            fid = f"s{len(shared)}"
            shared.append(fid)
            functions[fid] = Function(fid, params, FunctionAttrs(externally_visible=True), MemoryEffect.READ_WRITE,
                                      (BasicBlock(0, _sized_body(rng, PLANTED_THRESHOLD + offset)),))
    # ids in random order so that visiting order says nothing about size
    targets = [fid for fid in shared for _ in range(uses)]
    rng.shuffle(targets)
    for cid, fid in enumerate(targets):
        callsites[cid] = CallSite(cid, "main", fid, tuple(ArgValue(ArgKind.CONSTANT, I32) for _ in params), 0)
    cid = len(targets)
    main_insts = list(_sized_body(rng, 60))[:-1]
    order = list(callsites)
    rng.shuffle(order)
    for c in order:
        main_insts.insert(rng.randint(0, len(main_insts)), Instruction(Opcode.CALL, VOID, c))
    main_insts.append(Instruction(Opcode.RET, VOID))
    functions["main"] = Function("main", (), FunctionAttrs(externally_visible=True), MemoryEffect.READ_WRITE,
                                 (BasicBlock(0, tuple(main_insts)),))
    # exported helpers stay in the binary whether or not main still calls them
    p = Program(functions, callsites, frozenset({"main", *shared}), cid)
    p.validate()
    return p


def gen_planted_corpus(n: int, seed: int) -> list[Program]:
    rng = random.Random(seed)
    return [gen_planted_program(rng) for _ in range(n)]


# --------------------------------------------------------------------------
# Files

FORMATS = {
    "inline": "hierevo-inline-corpus/1",
    "egraph": "hierevo-egraph-corpus/1",
    "shard": "hierevo-shard-corpus/1",
}


def load_schema(name: str) -> dict[str, Any]:
    return json.loads(resources.files("hierevo.schemas").joinpath(f"{name}.schema.json").read_text())


def dump_json(doc: Any) -> str:
    """Deterministic serialisation used for every artifact."""
    return json.dumps(doc, sort_keys=True, separators=(",", ":")) + "\n"


def write_corpus(path: str | Path, kind: str, items: list[dict[str, Any]]) -> None:
    Path(path).write_text(dump_json({"format": FORMATS[kind], "items": items}))


def read_corpus(path: str | Path) -> tuple[str, list[dict[str, Any]]]:
    """Return ``(kind, item documents)``; a bare single-item document is accepted."""
    doc = json.loads(Path(path).read_text())
    kind = next((k for k, f in FORMATS.items() if doc.get("format") == f), None)
    if kind is None:
        if "functions" in doc:
            kind, doc = "inline", {"format": FORMATS["inline"], "items": [doc]}
        elif "classes" in doc:
            kind, doc = "egraph", {"format": FORMATS["egraph"], "items": [doc]}
        elif "nodes" in doc:
            kind, doc = "shard", {"format": FORMATS["shard"], "items": [doc]}
        else:
            raise ValueError(f"{path}: unrecognised corpus document")
    jsonschema.validate(doc, load_schema(kind))
    return kind, doc["items"]


def corpus_hash(path: str | Path) -> str:
    return hashlib.sha256(Path(path).read_bytes()).hexdigest()


def programs_from_items(items: list[dict[str, Any]]) -> list[Program]:
    return [program_from_json(d, strict=False) for d in items]


def programs_to_items(programs: list[Program]) -> list[dict[str, Any]]:
    return [program_to_json(p) for p in programs]
