"""Feature catalogs and the inlining feature extractor.

Each task domain exposes a closed set of named features. Boolean features
are typed ``bool`` inside expressions and stored as 0/1 in vectors.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Mapping

from ..ir import ArgKind, CallSite, CastClass, Program, cast_class

CATALOG_VERSION = 2

INT = "int"
BOOL = "bool"

INLINE_FEATURES: dict[str, str] = {
    "callee_raw_count": INT,
    "callee_weighted_size": INT,
    # perf cost with the call penalty factored out:
    # cost(P) = callee_perf_cost + P * callee_call_weight
    "callee_perf_cost": INT,
    "callee_call_weight": INT,
    "callee_block_count": INT,
    "callee_users": INT,
    "caller_users": INT,
    "caller_size": INT,
    "loop_depth": INT,
    "site_frequency": INT,
    "entry_frequency": INT,
    "num_constant_args": INT,
    "num_undef_args": INT,
    "num_exact_type_matches": INT,
    "num_noop_ptr_casts": INT,
    "num_nontrivial_casts": INT,
    "is_recursive": BOOL,
    "callee_has_vector": BOOL,
    "no_inline": BOOL,
    "always_inline": BOOL,
    "optimize_for_size": BOOL,
    "min_size": BOOL,
    "hot": BOOL,
    "is_declaration": BOOL,
    "is_optimized_libfunc": BOOL,
    "mem_none": BOOL,
    # true for read-only and for no-memory-access callees
    "mem_readonly": BOOL,
}

# Per-argument features, visible only inside an ``argfold`` step.
ARG_FEATURES: dict[str, str] = {
    "arg_index": INT,
    "arg_is_constant": BOOL,
    "arg_is_undef": BOOL,
    "arg_has_param": BOOL,
    "arg_exact_type": BOOL,
    "arg_noop_ptr_cast": BOOL,
    "arg_nontrivial_cast": BOOL,
}

EGRAPH_FEATURES: dict[str, str] = {
    "node_cost": INT,
    "node_arity": INT,
    "subtree_cost": INT,
    "class_size": INT,
}

SHARD_FEATURES: dict[str, str] = {
    "strategy_cost": INT,
    "strategy_memory": INT,
    "edge_cost_assigned": INT,
    "edge_cost_unassigned": INT,
    "slack": INT,
    "interval_length": INT,
    "strategy_count": INT,
    "degree": INT,
    "min_memory": INT,
}

ALL_FEATURES: dict[str, str] = {**INLINE_FEATURES, **EGRAPH_FEATURES, **SHARD_FEATURES}


@dataclass(frozen=True)
class Catalog:
    """What a task domain offers to templates."""

    name: str
    features: Mapping[str, str]
    root_type: str
    arg_features: Mapping[str, str]

    @property
    def allows_argfold(self) -> bool:
        return bool(self.arg_features)


INLINE = Catalog("inline", INLINE_FEATURES, BOOL, ARG_FEATURES)
EGRAPH = Catalog("egraph", EGRAPH_FEATURES, INT, {})
SHARD = Catalog("shard", SHARD_FEATURES, INT, {})
CATALOGS = {c.name: c for c in (INLINE, EGRAPH, SHARD)}


@dataclass(frozen=True)
class FeatureVector:
    values: Mapping[str, int]
    args: tuple[Mapping[str, int], ...] = ()

    def __getitem__(self, name: str) -> int:
        return self.values[name]


def _zero_callee() -> dict[str, int]:
    return {
        "callee_raw_count": 0, "callee_weighted_size": 0, "callee_perf_cost": 0,
        "callee_call_weight": 0, "callee_block_count": 0, "callee_users": 0,
        "callee_has_vector": 0, "no_inline": 0, "always_inline": 0,
        "optimize_for_size": 0, "min_size": 0, "hot": 0, "is_declaration": 1,
        "is_optimized_libfunc": 0, "mem_none": 0, "mem_readonly": 0,
    }


def compute_features(p: Program, cs: CallSite) -> FeatureVector:
    caller = p.functions[cs.caller]
    block = caller.block(cs.block)
    callee = p.functions.get(cs.callee) if cs.callee is not None else None
    v: dict[str, int] = {
        "caller_users": p.users(caller.id),
        "caller_size": caller.stats.raw_count,
        "loop_depth": block.loop_depth,
        "site_frequency": block.frequency,
        "entry_frequency": caller.entry_frequency,
        "is_recursive": int(cs.callee == cs.caller),
    }
    params: tuple = ()
    if callee is None or callee.is_declaration:
        v.update(_zero_callee())
    else:
        s = callee.stats
        a = callee.attrs
        params = callee.params
        v.update({
            "callee_raw_count": s.raw_count,
            "callee_weighted_size": s.weighted_size,
            "callee_perf_cost": s.perf_base,
            "callee_call_weight": s.call_weight,
            "callee_block_count": len(callee.blocks),
            "callee_users": p.users(callee.id),
            "callee_has_vector": int(s.has_vector),
            "no_inline": int(a.no_inline),
            "always_inline": int(a.always_inline),
            "optimize_for_size": int(a.optimize_for_size),
            "min_size": int(a.min_size),
            "hot": int(a.hot),
            "is_declaration": 0,
            "is_optimized_libfunc": int(a.is_optimized_libfunc),
            "mem_none": int(callee.mem.does_not_access_memory),
            "mem_readonly": int(callee.mem.only_reads_memory),
        })
    rows, counts = _arg_features(cs, params)
    v.update(zip(_ARG_COUNTS, counts))
    return FeatureVector(v, rows)


_ARG_COUNTS = ("num_constant_args", "num_undef_args", "num_exact_type_matches", "num_noop_ptr_casts",
               "num_nontrivial_casts")


def _arg_features(cs: CallSite, params: tuple) -> tuple[tuple[dict[str, int], ...], tuple[int, ...]]:
    # Depends only on the callsite's arguments and the callee's parameter
    # types, so it is memoised on the (immutable) callsite object.
    hit = cs.__dict__.get("_arg_features")
    if hit is not None and hit[0] == params:
        return hit[1]
    rows = []
    const = undef = exact = noop = nontrivial = 0
    for i, arg in enumerate(cs.args):
        kind = cast_class(arg.type, params[i]) if i < len(params) else None
        is_exact = kind is CastClass.EXACT
        is_noop = kind is CastClass.NOOP_PTR_INT
        is_nontrivial = kind is CastClass.NONTRIVIAL
        exact += is_exact
        noop += is_noop
        nontrivial += is_nontrivial
        const += arg.kind is ArgKind.CONSTANT
        undef += arg.kind is ArgKind.UNDEF
        rows.append({
            "arg_index": i,
            "arg_is_constant": int(arg.kind is ArgKind.CONSTANT),
            "arg_is_undef": int(arg.kind is ArgKind.UNDEF),
            "arg_has_param": int(kind is not None),
            "arg_exact_type": int(is_exact),
            "arg_noop_ptr_cast": int(is_noop),
            "arg_nontrivial_cast": int(is_nontrivial),
        })
    out = (tuple(rows), (const, undef, exact, noop, nontrivial))
    cs.__dict__["_arg_features"] = (params, out)
    return out
