import random

import pytest
from hypothesis import given, strategies as st

from hierevo.autotune import ParamSpace, propose_batch
from hierevo.corpus import gen_inline_corpus, gen_program
from hierevo.dsl import compute_features, parse_template, print_template
from hierevo.policies import (
    FLAG_NAMES,
    PERF_BOUNDS,
    TUNED_FLAGS,
    PerfPolicyParams,
    SizePolicyConstants,
    as_template,
    perf_policy_decide,
    size_policy_decide,
)


def _disagreements(programs, flags):
    a = as_template("size-a").compile()
    b = as_template("perf-b").compile(flags)
    params = PerfPolicyParams.from_flags(flags)
    bad = []
    for p in programs:
        for cs in p.callsites.values():
            fv = compute_features(p, cs)
            if size_policy_decide(p, cs) != a(fv):
                bad.append(("size", cs))
            if perf_policy_decide(p, cs, params) != b(fv):
                bad.append(("perf", cs))
    return bad


def test_dsl_matches_native_on_corpus():
    assert _disagreements(gen_inline_corpus(6, 11), TUNED_FLAGS) == []


@given(st.integers(0, 2**32))
def test_dsl_matches_native_under_random_flags(seed):
    rng = random.Random(seed)
    t = as_template("perf-b")
    flags = {s.name: rng.randint(s.lo, s.hi) for s in t.slots}
    assert _disagreements([gen_program(rng)], flags) == []


def test_tuned_preset_is_verbatim():
    assert PerfPolicyParams.tuned().as_flags() == TUNED_FLAGS
    assert perf_policy_decide.__defaults__ == (None,)


def test_perf_slots_carry_bounds_and_defaults():
    t = as_template("perf-b")
    got = {s.name: (s.lo, s.hi, s.default) for s in t.slots}
    want = {FLAG_NAMES[f]: (*PERF_BOUNDS[f], getattr(PerfPolicyParams(), f)) for f in FLAG_NAMES}
    assert got == want


def test_defaults_lead_the_first_tuning_batch():
    t = as_template("perf-b")
    batch = propose_batch(ParamSpace.of(t), [], 10, seed=3)
    assert batch[0] == t.defaults()
    assert all(ParamSpace.of(t).contains(a) for a in batch)


def test_size_constants_are_locked_unless_opted_out():
    with pytest.raises(ValueError):
        SizePolicyConstants(tiny_function_threshold=11)
    assert SizePolicyConstants(tiny_function_threshold=11, verbatim=False).tiny_function_threshold == 11


def test_perf_params_reject_out_of_bounds():
    with pytest.raises(ValueError):
        PerfPolicyParams(base_threshold=5)


@pytest.mark.parametrize("name", ["size-a", "perf-b", "never", "always", "egraph", "shard"])
def test_reference_templates_round_trip(name):
    t = as_template(name)
    assert parse_template(print_template(t)) == t


def test_unknown_reference_name():
    with pytest.raises(ValueError):
        as_template("nope")
