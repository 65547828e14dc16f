"""Native implementations of the two reference inlining policies.

``size_policy_decide`` is the binary-size policy; ``perf_policy_decide`` is
the performance policy together with its legality wrapper. Both follow the
original decision order literally, including branches that are unreachable
in practice, so they can serve as regression anchors for the DSL versions built by
:func:`as_template`.
"""

from __future__ import annotations

from dataclasses import dataclass, fields

from .ir import ArgKind, CallSite, CastClass, Program, cast_class, perf_cost


@dataclass(frozen=True)
class SizePolicyConstants:
    tiny_function_threshold: int = 10
    small_function_threshold: int = 25
    single_use_inline_bonus: int = 80
    many_basic_blocks_threshold: int = 5
    basic_block_penalty: int = 5
    conservative_inline_penalty: int = 20
    hot_function_bonus: int = 50
    aggressive_special_case_threshold: int = 150
    aggressive_readonly_threshold: int = 75
    weight_high: int = 3
    weight_medium: int = 2
    weight_low: int = 1
    constant_arg_bonus: int = 10
    undef_arg_bonus: int = 5
    exact_type_match_bonus: int = 7
    pointer_castable_bonus: int = 3
    nontrivial_cast_penalty: int = 5
    verbatim: bool = True

    def __post_init__(self) -> None:
        if not self.verbatim:
            return
        for f in fields(self):
            if f.name != "verbatim" and getattr(self, f.name) != f.default:
                raise ValueError(f"verbatim constants cannot override {f.name}")


VERBATIM_SIZE = SizePolicyConstants()


def _sat_sub(a: int, b: int) -> int:
    return max(0, a - b)


def size_policy_decide(p: Program, cs: CallSite, c: SizePolicyConstants = VERBATIM_SIZE) -> bool:
    if cs.callee is None:
        return False
    callee = p.functions[cs.callee]
    if callee.is_declaration:
        return False
    attrs = callee.attrs
    if attrs.no_inline:
        return False
    if attrs.always_inline:
        return True

    # The weighted count is fixed to the 3/2/1 table of the IR module; the
    # weight constants are carried for completeness only.
    stats = callee.stats
    raw, weighted = stats.raw_count, stats.weighted_size
    if raw < c.tiny_function_threshold:
        return True

    one_use = p.users(callee.id) == 1
    if (
        (one_use and raw < c.aggressive_special_case_threshold)
        or (callee.mem.does_not_access_memory and weighted < c.aggressive_special_case_threshold)
        or (callee.mem.only_reads_memory and weighted < c.aggressive_readonly_threshold)
    ):
        return True

    threshold = c.small_function_threshold
    if attrs.optimize_for_size or attrs.min_size:
        threshold = _sat_sub(threshold, c.conservative_inline_penalty)
    elif attrs.hot:
        threshold += c.hot_function_bonus
    if one_use:
        threshold += c.single_use_inline_bonus
    if len(callee.blocks) > c.many_basic_blocks_threshold:
        threshold = _sat_sub(threshold, c.basic_block_penalty)

    for i, arg in enumerate(cs.args):
        if arg.kind is ArgKind.CONSTANT:
            threshold += c.constant_arg_bonus
        elif arg.kind is ArgKind.UNDEF:
            threshold += c.undef_arg_bonus
        if i < len(callee.params):
            kind = cast_class(arg.type, callee.params[i])
            if kind is CastClass.EXACT:
                threshold += c.exact_type_match_bonus
            elif kind is CastClass.NOOP_PTR_INT:
                threshold += c.pointer_castable_bonus
            elif kind is CastClass.NONTRIVIAL:
                threshold = _sat_sub(threshold, c.nontrivial_cast_penalty)

    return weighted < threshold


# name, default, lo, hi -- in declaration order of the tuned policy's flags
PERF_PARAM_TABLE = (
    ("base_threshold", "ae-inline-base-threshold", 60, 10, 200),
    ("call_penalty", "ae-inline-call-penalty", 15, 5, 50),
    ("const_arg_bonus", "ae-inline-const-arg-bonus", 40, 0, 100),
    ("loop_bonus", "ae-inline-loop-bonus", 40, 0, 100),
    ("vector_bonus", "ae-inline-vector-bonus", 30, 0, 100),
    ("hotness_multiplier", "ae-inline-hotness-mul", 3, 1, 10),
    ("hotness_shift", "ae-inline-hotness-shift", 8, 0, 15),
    ("recursion_penalty", "ae-inline-recursion-penalty", 50, 0, 100),
    ("large_caller_threshold", "ae-inline-large-caller-threshold", 4000, 1000, 10000),
    ("large_caller_reduction", "ae-inline-large-caller-reduction", 20, 0, 90),
)

FLAG_NAMES = {field: flag for field, flag, *_ in PERF_PARAM_TABLE}
PERF_BOUNDS = {field: (lo, hi) for field, _, _, lo, hi in PERF_PARAM_TABLE}

# Best configuration reported by the autotuner, keyed by flag name.
TUNED_FLAGS = {
    "ae-inline-base-threshold": 200,
    "ae-inline-call-penalty": 13,
    "ae-inline-const-arg-bonus": 68,
    "ae-inline-hotness-mul": 10,
    "ae-inline-hotness-shift": 3,
    "ae-inline-large-caller-reduction": 21,
    "ae-inline-large-caller-threshold": 9207,
    "ae-inline-loop-bonus": 12,
    "ae-inline-recursion-penalty": 22,
    "ae-inline-vector-bonus": 97,
}


@dataclass(frozen=True)
class PerfPolicyParams:
    base_threshold: int = 60
    call_penalty: int = 15
    const_arg_bonus: int = 40
    loop_bonus: int = 40
    vector_bonus: int = 30
    hotness_multiplier: int = 3
    hotness_shift: int = 8
    recursion_penalty: int = 50
    large_caller_threshold: int = 4000
    large_caller_reduction: int = 20

    def __post_init__(self) -> None:
        for name, (lo, hi) in PERF_BOUNDS.items():
            v = getattr(self, name)
            if not lo <= v <= hi:
                raise ValueError(f"{name}={v} outside [{lo}, {hi}]")

    @classmethod
    def tuned(cls) -> PerfPolicyParams:
        return cls.from_flags(TUNED_FLAGS)

    @classmethod
    def from_flags(cls, flags: dict[str, int]) -> PerfPolicyParams:
        return cls(**{field: flags[flag] for field, flag in FLAG_NAMES.items() if flag in flags})

    def as_flags(self) -> dict[str, int]:
        return {flag: getattr(self, field) for field, flag in FLAG_NAMES.items()}


def _c_div(a: int, b: int) -> int:
    """Integer division truncating toward zero, as in C."""
    q = abs(a) // abs(b)
    return q if (a >= 0) == (b >= 0) else -q


def _perf_inner(p: Program, cs: CallSite, k: PerfPolicyParams) -> bool:
    if cs.callee is None:
        return False
    callee = p.functions[cs.callee]
    if callee.is_declaration:
        return False
    if callee.attrs.always_inline:
        return True
    if callee.attrs.is_optimized_libfunc:
        return True

    cost, has_vector = perf_cost(callee, k.call_penalty)
    threshold = k.base_threshold
    for arg in cs.args:
        if arg.kind is ArgKind.CONSTANT:
            threshold += k.const_arg_bonus
    block = p.site_block(cs)
    if block.loop_depth > 0:
        threshold += k.loop_bonus * min(block.loop_depth, 3)
    if has_vector:
        threshold += k.vector_bonus

    caller = p.functions[cs.caller]
    entry = caller.entry_frequency
    if entry > 0 and block.frequency > (entry >> k.hotness_shift):
        threshold *= k.hotness_multiplier
    if caller.id == callee.id:
        threshold -= k.recursion_penalty

    caller_size = 0
    for bb in caller.blocks:
        caller_size += len(bb.instructions)
        if caller_size > k.large_caller_threshold:
            break
    if caller_size > k.large_caller_threshold:
        threshold = _c_div(threshold * (100 - k.large_caller_reduction), 100)
    return cost < threshold


def perf_policy_decide(p: Program, cs: CallSite, params: PerfPolicyParams | None = None) -> bool:
    """Legality wrapper, then the tuned cost/threshold comparison."""
    params = params or PerfPolicyParams.tuned()
    if cs.callee is None:
        return False
    callee = p.functions[cs.callee]
    if callee.is_declaration:
        return False
    # "never inline" and recursive sites short-circuit before the inner policy,
    # which makes its recursion penalty unreachable.
    if callee.attrs.no_inline or cs.caller == cs.callee:
        return False
    if callee.attrs.always_inline:
        return True
    return _perf_inner(p, cs, params)


def never(p: Program, cs: CallSite) -> bool:
    return False


def always(p: Program, cs: CallSite) -> bool:
    return True


# --------------------------------------------------------------------------
# DSL renditions

SIZE_A_TEXT = """\
; EVOLVE-BLOCK-START
(if (feat is_declaration) false
 (if (feat no_inline) false
  (if (feat always_inline) true
   (if (lt (feat callee_raw_count) 10) true
    (if (or (and (eq (feat callee_users) 1) (lt (feat callee_raw_count) 150))
            (or (and (feat mem_none) (lt (feat callee_weighted_size) 150))
                (and (feat mem_readonly) (lt (feat callee_weighted_size) 75))))
     true
     (lt (feat callee_weighted_size)
         (argfold
          (sub (add (if (or (feat optimize_for_size) (feat min_size))
                        (sub 25 20)
                        (if (feat hot) (add 25 50) 25))
                    (if (eq (feat callee_users) 1) 80 0))
               (if (lt 5 (feat callee_block_count)) 5 0))
          (sub (add acc
                    (add (if (arg arg_is_constant) 10 (if (arg arg_is_undef) 5 0))
                         (if (arg arg_exact_type) 7 (if (arg arg_noop_ptr_cast) 3 0))))
               (if (arg arg_nontrivial_cast) 5 0)))))))))
; EVOLVE-BLOCK-END
"""

_PERF_B_BODY = """\
; EVOLVE-BLOCK-START
(if (feat is_declaration) false
 (if (or (feat no_inline) (feat is_recursive)) false
  (if (feat always_inline) true
   (if (feat is_optimized_libfunc) true
    (lt (add (feat callee_perf_cost)
             (mul (param ae-inline-call-penalty) (feat callee_call_weight)))
        (div (mul (add (mul (add (add (add (param ae-inline-base-threshold)
                                           (mul (param ae-inline-const-arg-bonus)
                                                (feat num_constant_args)))
                                      (if (lt 0 (feat loop_depth))
                                          (mul (param ae-inline-loop-bonus)
                                               (min (feat loop_depth) 3))
                                          0))
                                 (if (feat callee_has_vector) (param ae-inline-vector-bonus) 0))
                            (if (and (lt 0 (feat entry_frequency))
                                     (lt (shr (feat entry_frequency) (param ae-inline-hotness-shift))
                                         (feat site_frequency)))
                                (param ae-inline-hotness-mul)
                                1))
                       (if (feat is_recursive) (neg (param ae-inline-recursion-penalty)) 0))
                  (if (lt (param ae-inline-large-caller-threshold) (feat caller_size))
                      (sub 100 (param ae-inline-large-caller-reduction))
                      100))
             100))))))
; EVOLVE-BLOCK-END
"""


def _perf_b_text() -> str:
    header = []
    for _, flag, default, lo, hi in PERF_PARAM_TABLE:
        header.append(f"[hyperparam]: {flag}, int, {lo}, {hi}")
        header.append(f"[init]: {flag}, {default}")
    return "\n".join(header) + "\n" + _PERF_B_BODY


PERF_B_TEXT = _perf_b_text()

BASELINE_TEXT = {
    "never": "; EVOLVE-BLOCK-START\nfalse\n; EVOLVE-BLOCK-END\n",
    "always": "; EVOLVE-BLOCK-START\ntrue\n; EVOLVE-BLOCK-END\n",
    "egraph": "; EVOLVE-BLOCK-START\n(neg (feat node_cost))\n; EVOLVE-BLOCK-END\n",
    "shard": "; EVOLVE-BLOCK-START\n(neg (feat strategy_cost))\n; EVOLVE-BLOCK-END\n",
}


def as_template(which: str):
    """The named reference policy as a :class:`~hierevo.dsl.PolicyTemplate`.

    ``which`` is ``"size-a"``, ``"perf-b"`` or one of the baseline names
    ``never``, ``always``, ``egraph``, ``shard``. The performance policy's
    flags become slots carrying their declared bounds and initial values.
    """
    from .dsl import parse_template

    texts = {"size-a": SIZE_A_TEXT, "perf-b": PERF_B_TEXT, **BASELINE_TEXT}
    if which not in texts:
        raise ValueError(f"unknown reference policy {which!r}")
    return parse_template(texts[which]).with_meta(proposer="seed", name=which)
