"""Legality, the inlining transform, and the two whole-program reward models."""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass, replace
from typing import Callable, Iterable

from .ir import (
    ArgKind,
    BasicBlock,
    CallSite,
    Function,
    Instruction,
    IRError,
    Opcode,
    Program,
    weighted_size_cost,
)

BUDGET_FACTOR = 8


class IllegalInline(IRError):
    pass


class PolicyEvaluationFailure(RuntimeError):
    """A policy raised while deciding; the candidate is invalid, the run is not."""


@dataclass(frozen=True)
class SizeModelParams:
    per_function_overhead: int = 4
    call_inst_size: int = 1
    const_arg_simplification_credit: int = 2

    def __post_init__(self) -> None:
        if min(self.per_function_overhead, self.call_inst_size, self.const_arg_simplification_credit) < 0:
            raise ValueError("size model parameters must be non-negative")


@dataclass(frozen=True)
class PerfModelParams:
    call_overhead_weight: int = 2
    icache_budget: int = 0
    icache_penalty_per_unit: int = 3

    def __post_init__(self) -> None:
        if min(self.call_overhead_weight, self.icache_budget, self.icache_penalty_per_unit) < 0:
            raise ValueError("perf model parameters must be non-negative")

    @classmethod
    def for_program(cls, p: Program, size: SizeModelParams | None = None) -> PerfModelParams:
        """Defaults with the icache budget at 1.25x the program's initial size."""
        return cls(icache_budget=binary_size(p, size or SizeModelParams()) * 5 // 4)


@dataclass(frozen=True)
class DecisionRecord:
    callsite: int
    legal: bool
    policy: bool | None  # None when the policy was not consulted
    mandatory: bool
    applied: bool


def is_legal(p: Program, cs: CallSite) -> bool:
    if cs.callee is None or cs.callee == cs.caller:
        return False
    callee = p.functions[cs.callee]
    return not (callee.is_declaration or callee.attrs.no_inline)


def is_mandatory(p: Program, cs: CallSite) -> bool:
    return is_legal(p, cs) and p.functions[cs.callee].attrs.always_inline


def apply_inline(p: Program, cs: CallSite) -> Program:
    """Inline ``cs`` and return the new program.

    The call is removed from its block; the callee's blocks, minus ``ret``
    instructions, are copied in right after that block with loop depth
    offset by the site's depth and frequencies rescaled to the site. Nested
    calls get fresh callsite ids. A callee left without users is deleted
    unless it is a root or externally visible.
    """
    if cs.id not in p.callsites or not is_legal(p, cs):
        raise IllegalInline(f"callsite {cs.id} cannot be inlined")
    caller = p.functions[cs.caller]
    callee = p.functions[cs.callee]
    site = caller.block(cs.block)
    site_freq = site.frequency

    callsites = dict(p.callsites)
    del callsites[cs.id]
    next_id = p.next_callsite_id
    next_block = max(bb.id for bb in caller.blocks) + 1
    own_sites = p.callsites_by_caller.get(callee.id, ())

    copied: list[BasicBlock] = []
    renumber: dict[int, int] = {}
    for bb in callee.blocks:
        insts = []
        for inst in bb.instructions:
            if inst.opcode is Opcode.RET:
                continue
            if inst.callsite is not None:
                renumber[inst.callsite] = next_id
                inst = replace(inst, callsite=next_id)
                next_id += 1
            insts.append(inst)
        if not insts:
            continue
        freq = max(1, bb.frequency * site_freq // callee.entry_frequency)
        copied.append(BasicBlock(next_block, tuple(insts), site.loop_depth + bb.loop_depth, freq))
        for old in own_sites:
            if p.callsites[old].block == bb.id:
                ocs = p.callsites[old]
                new_id = renumber[old]
                callsites[new_id] = CallSite(new_id, caller.id, ocs.callee, ocs.args, next_block)
        next_block += 1

    blocks: list[BasicBlock] = []
    for bb in caller.blocks:
        if bb.id == site.id:
            kept = tuple(i for i in bb.instructions if i.callsite != cs.id)
            blocks.append(replace(bb, instructions=kept))
            blocks.extend(copied)
        else:
            blocks.append(bb)
    n_const = sum(1 for a in cs.args if a.kind is ArgKind.CONSTANT)
    functions = dict(p.functions)
    functions[caller.id] = replace(
        caller, blocks=tuple(blocks), inlined_const_args=caller.inlined_const_args + n_const
    )

    remaining_users = sum(1 for c in callsites.values() if c.callee == callee.id)
    if remaining_users == 0 and not callee.attrs.externally_visible and callee.id not in p.roots:
        del functions[callee.id]
        for old in own_sites:
            callsites.pop(old, None)
    return Program(functions, callsites, p.roots, next_id)


def _function_size(f: Function, m: SizeModelParams) -> int:
    credit = m.const_arg_simplification_credit * f.inlined_const_args
    return max(m.per_function_overhead, m.per_function_overhead + weighted_size_cost(f) - credit)


def binary_size(p: Program, m: SizeModelParams | None = None) -> int:
    m = m or SizeModelParams()
    total = 0
    for fid in p.reachable:
        f = p.functions[fid]
        if not f.is_declaration:
            total += _function_size(f, m)
    return total


def perf_proxy(p: Program, m: PerfModelParams, size: SizeModelParams | None = None) -> int:
    """Call overhead weighted by block frequency plus an icache overflow term.

    Only callsites inside reachable functions count.
    """
    live = p.reachable
    calls = sum(p.site_frequency(cs) for cs in p.callsites.values() if cs.caller in live)
    overflow = max(0, binary_size(p, size) - m.icache_budget)
    return m.call_overhead_weight * calls + m.icache_penalty_per_unit * overflow


# --------------------------------------------------------------------------
# Running a policy over a whole program


def call_graph_postorder(p: Program) -> list[str]:
    """Callee-first DFS post-order; roots of the walk and successors in id order."""
    succ: dict[str, list[str]] = {fid: [] for fid in p.functions}
    for cid in sorted(p.callsites):
        cs = p.callsites[cid]
        if cs.callee is not None and cs.callee != cs.caller and cs.callee not in succ[cs.caller]:
            succ[cs.caller].append(cs.callee)
    for fid in succ:
        succ[fid].sort()
    order: list[str] = []
    seen: set[str] = set()
    for start in sorted(p.functions):
        if start in seen:
            continue
        seen.add(start)
        stack = [(start, iter(succ[start]))]
        while stack:
            fid, it = stack[-1]
            nxt = next((s for s in it if s not in seen), None)
            if nxt is None:
                stack.pop()
                order.append(fid)
            else:
                seen.add(nxt)
                stack.append((nxt, iter(succ[nxt])))
    return order


def initial_worklist(p: Program) -> list[int]:
    rank = {fid: i for i, fid in enumerate(call_graph_postorder(p))}
    return sorted(p.callsites, key=lambda cid: (rank[p.callsites[cid].caller], p.callsites[cid].caller, cid))


Policy = Callable[[Program, CallSite], bool]


@dataclass(frozen=True)
class InlineRun:
    program: Program
    trace: list[DecisionRecord]
    applied: int
    budget_hit: bool


def inline_all(p: Program, policy: Policy) -> InlineRun:
    """Drive ``policy`` over every callsite bottom-up, applying legal yes-votes."""
    worklist = initial_worklist(p)
    budget = BUDGET_FACTOR * len(p.callsites)
    trace: list[DecisionRecord] = []
    applied = 0
    budget_hit = False
    i = 0
    while i < len(worklist):
        cid = worklist[i]
        i += 1
        cs = p.callsites.get(cid)
        if cs is None:
            continue
        legal = is_legal(p, cs)
        mandatory = legal and p.functions[cs.callee].attrs.always_inline
        verdict: bool | None = None
        if mandatory:
            verdict = True
        elif legal:
            try:
                verdict = bool(policy(p, cs))
            except Exception as exc:
                raise PolicyEvaluationFailure(f"policy failed on callsite {cid}: {exc}") from exc
        apply = legal and bool(verdict)
        if apply and applied >= budget:
            budget_hit = True
            apply = False
        if apply:
            before = p.next_callsite_id
            p = apply_inline(p, cs)
            applied += 1
            worklist.extend(c for c in range(before, p.next_callsite_id) if c in p.callsites)
        trace.append(DecisionRecord(cid, legal, verdict, mandatory, apply))
    return InlineRun(p, trace, applied, budget_hit)


def never_inline(p: Program, cs: CallSite) -> bool:
    return False


def always_inline(p: Program, cs: CallSite) -> bool:
    return True


@dataclass(frozen=True)
class InlineReward:
    reward: float
    baseline_metric: int
    metric: int
    applied_count: int
    budget_hit: bool

    def to_json(self) -> dict:
        return asdict(self)


# Runaway policies can blow metrics far past float range; rewards are floored.
REWARD_FLOOR = -1e9


def percent_reduction(baseline: int, value: int) -> float:
    if baseline == 0:
        return 0.0
    try:
        r = 100 * (baseline - value) / baseline
    except OverflowError:
        return REWARD_FLOOR
    return max(r, REWARD_FLOOR)


SIZE = "size"
PERF = "perf"


def measure(p: Program, metric: str, original: Program, size_params: SizeModelParams | None = None) -> int:
    if metric == SIZE:
        return binary_size(p, size_params)
    if metric == PERF:
        return perf_proxy(p, PerfModelParams.for_program(original, size_params), size_params)
    raise ValueError(f"unknown metric {metric!r}")


def run_policy(
    p: Program,
    policy: Policy,
    metric: str = SIZE,
    size_params: SizeModelParams | None = None,
    baseline_metric: int | None = None,
) -> tuple[Program, list[DecisionRecord], InlineReward]:
    """Run ``policy`` and score it against the never-inline baseline.

    ``baseline_metric`` may be passed in when the caller already knows it.
    """
    if baseline_metric is None:
        base = inline_all(p, never_inline)
        baseline_metric = measure(base.program, metric, p, size_params)
    run = inline_all(p, policy)
    value = measure(run.program, metric, p, size_params)
    report = InlineReward(
        reward=percent_reduction(baseline_metric, value),
        baseline_metric=baseline_metric,
        metric=value,
        applied_count=run.applied,
        budget_hit=run.budget_hit,
    )
    return run.program, run.trace, report


def trace_to_jsonl(trace: Iterable[DecisionRecord]) -> str:
    return "".join(json.dumps(asdict(r), sort_keys=True) + "\n" for r in trace)
