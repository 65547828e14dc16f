import os

from hypothesis import HealthCheck, settings

from hierevo.ir import (
    I32,
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
)

settings.register_profile("default", max_examples=60, deadline=None,
                          suppress_health_check=[HealthCheck.too_slow])
settings.register_profile("thorough", max_examples=500, deadline=None,
                          suppress_health_check=[HealthCheck.too_slow])
settings.load_profile(os.environ.get("HYPOTHESIS_PROFILE", "default"))


def inst(op, ty=I32, cs=None, indirect=False):
    return Instruction(Opcode(op) if isinstance(op, str) else op, ty, cs, indirect)


def func(fid, *blocks, params=(), mem=MemoryEffect.READ_WRITE, freq=1, **attrs):
    """``blocks`` are lists of instructions; an empty call makes a declaration."""
    bbs = tuple(BasicBlock(i, tuple(b)) for i, b in enumerate(blocks))
    return Function(fid, tuple(params), FunctionAttrs(**attrs), mem, bbs, freq)


def call(cid, ty=VOID):
    return inst(Opcode.CALL, ty, cid)


def site(cid, caller, callee, nargs=0, kind=ArgKind.RUNTIME, block=0):
    return CallSite(cid, caller, callee, tuple(ArgValue(kind, I32) for _ in range(nargs)), block)


def program(functions, callsites=(), roots=("main",)):
    p = Program({f.id: f for f in functions}, {c.id: c for c in callsites}, frozenset(roots))
    p.validate(strict=False)
    return p
