"""End-to-end acceptance checks, one test per criterion.

Each test prints a single ``PASS``/``FAIL`` line with its measurements and
then asserts. Thresholds and time limits are pinned below.
"""

import itertools
import logging
import random
import statistics
import sys
import textwrap
import time

import pytest

from hierevo import cli
from hierevo import egraph as eg
from hierevo import shard as sh
from hierevo.autotune import Dim, ParamSpace, TuneBudget, tune
from hierevo.corpus import PLANTED_TEXT, PLANTED_THRESHOLD, gen_inline_corpus, gen_planted_corpus, gen_program
from hierevo.dsl import compute_features, parse_template
from hierevo.evolve import RunConfig, evals_to_reach, invalid_rate, run
from hierevo.harness import generate_items, make_task
from hierevo.inline import IllegalInline, apply_inline, is_legal
from hierevo.ir import Opcode, instruction_count
from hierevo.policies import (
    TUNED_FLAGS,
    PerfPolicyParams,
    as_template,
    perf_policy_decide,
    size_policy_decide,
)

AC1_MIN_CALLSITES = 10_000
AC1_SECONDS = 10
AC1_TUNED = (200, 13, 68, 12, 97, 10, 3, 22, 9207, 21)
AC1_TUNED_ORDER = (
    "ae-inline-base-threshold", "ae-inline-call-penalty", "ae-inline-const-arg-bonus", "ae-inline-loop-bonus",
    "ae-inline-vector-bonus", "ae-inline-hotness-mul", "ae-inline-hotness-shift", "ae-inline-recursion-penalty",
    "ae-inline-large-caller-threshold", "ae-inline-large-caller-reduction",
)
AC2_OPERATIONS = 100_000
AC2_SEQUENCES_PER_PROGRAM = 5
AC2_SECONDS = 60
AC4_INSTANCES = 500
AC4_SECONDS = 300
AC5_SEEDS = 100
AC5_REQUIRED = 95
AC5_TOLERANCE = 0.05
AC5_SECONDS = 30
AC6_SEEDS = 20
AC6_TARGET_FRACTION = 0.9
AC6_MAX_EVALS = 10_000
AC6_SECONDS = 15 * 60
AC7_SECONDS = 300
AC8_ITERATIONS = 20


def report(capsys, name, ok, detail):
    with capsys.disabled():
        print(f"\n{'PASS' if ok else 'FAIL'} {name}: {detail}")


# --------------------------------------------------------------------------


def test_ac1_reference_policies_bit_exact(capsys):
    t0 = time.perf_counter()
    tuned_table = as_template("perf-b")
    preset = tuple(TUNED_FLAGS[f] for f in AC1_TUNED_ORDER)
    bounds_ok = all(tuned_table.slot(f).lo <= v <= tuned_table.slot(f).hi for f, v in TUNED_FLAGS.items())
    size_dsl = as_template("size-a").compile()
    perf_dsl = tuned_table.compile(TUNED_FLAGS)
    params = PerfPolicyParams.tuned()
    rng = random.Random(20240601)
    sites = disagree = 0
    while sites < AC1_MIN_CALLSITES:
        p = gen_program(rng)
        for cs in p.callsites.values():
            fv = compute_features(p, cs)
            disagree += size_policy_decide(p, cs) != size_dsl(fv)
            disagree += perf_policy_decide(p, cs, params) != perf_dsl(fv)
            sites += 1
    elapsed = time.perf_counter() - t0
    ok = disagree == 0 and preset == AC1_TUNED and bounds_ok and elapsed < AC1_SECONDS
    report(capsys, "AC1", ok, f"{sites} callsites, {disagree} disagreements, preset {preset}, {elapsed:.1f}s")
    assert ok


def test_ac2_inliner_invariants(capsys):
    t0 = time.perf_counter()
    rng = random.Random(7)
    ops = violations = refused = 0
    while ops < AC2_OPERATIONS:
        original = gen_program(rng)
        for _ in range(AC2_SEQUENCES_PER_PROGRAM):
            p = original
            while ops < AC2_OPERATIONS:
                legal, illegal = [], []
                for cs in p.callsites.values():
                    (legal if is_legal(p, cs) else illegal).append(cs)
                if illegal and rng.random() < 0.1:
                    try:
                        apply_inline(p, rng.choice(illegal))
                        violations += 1
                    except IllegalInline:
                        refused += 1
                if not legal:
                    break
                cs = rng.choice(legal)
                caller, callee = p.functions[cs.caller], p.functions[cs.callee]
                rets = sum(i.opcode is Opcode.RET for b in callee.blocks for i in b.instructions)
                want = instruction_count(caller) - 1 + instruction_count(callee) - rets
                p = apply_inline(p, cs)
                ops += 1
                if instruction_count(p.functions[cs.caller]) != want:
                    violations += 1
                if cs.id in p.callsites:
                    violations += 1
                if callee.id in p.functions and p.users(callee.id) != sum(
                        c.callee == callee.id for c in p.callsites.values()):
                    violations += 1
            p.validate(strict=False)

    # single-use internal callee disappears entirely
    from conftest import call, func, inst, program, site

    main = func("main", [call(0), inst("ret")])
    helper = func("h", [inst("add"), inst("load"), inst("ret")])
    single = apply_inline(program([main, helper], [site(0, "main", "h")]), site(0, "main", "h"))
    kept = apply_inline(
        program([main, func("h", [inst("add"), inst("ret")], externally_visible=True)], [site(0, "main", "h")]),
        site(0, "main", "h"))
    deletion_ok = "h" not in single.functions and "h" in kept.functions
    elapsed = time.perf_counter() - t0
    ok = violations == 0 and deletion_ok and elapsed < AC2_SECONDS
    report(capsys, "AC2", ok, f"{ops} inlines, {refused} illegal attempts refused, {violations} violations, "
                              f"single-use deletion {'ok' if deletion_ok else 'broken'}, {elapsed:.1f}s")
    assert ok


def test_ac3_reward_zero_points(capsys):
    inline_items = gen_inline_corpus(8, 3)
    scores = {
        "inline-size/never": make_task("inline-size", inline_items).evaluate(as_template("never")).score,
        "inline-perf/never": make_task("inline-perf", inline_items).evaluate(as_template("never")).score,
        "planted/never": make_task("inline-size", gen_planted_corpus(2, 0)).evaluate(as_template("never")).score,
        "egraph/greedy(-cost)": make_task("egraph", generate_items("egraph", 20, 3)).evaluate(
            as_template("egraph")).score,
        "shard/cheapest": make_task("shard", generate_items("shard", 20, 3)).evaluate(as_template("shard")).score,
    }
    ok = all(s == 0.0 for s in scores.values())
    report(capsys, "AC3", ok, ", ".join(f"{k}={v!r}" for k, v in scores.items()))
    assert ok


def _enumerate_egraph(g):
    options = [[-1, *range(len(g.classes[c]))] for c in g.order]
    costs = []
    for vec in itertools.product(*options):
        x = {c: i for c, i in zip(g.order, vec) if i >= 0}
        if eg.is_valid_extraction(g, x):
            costs.append(eg.extraction_cost(g, x))
    return min(costs)


def _enumerate_shard(p):
    return min(sh.total_cost(p, a) for a in itertools.product(*(range(len(n.strategies)) for n in p.nodes))
               if sh.peak_memory_ok(p, a)[0])


def test_ac4_oracle_dominance(capsys):
    t0 = time.perf_counter()
    rng = random.Random(11)
    evolved = [parse_template(t).compile() for t in (
        "(neg (add (feat node_cost) (feat subtree_cost)))",
        "(sub (feat class_size) (feat node_arity))",
        "(if (lt (feat node_arity) 2) (neg (feat node_cost)) (neg (feat subtree_cost)))",
    )]
    eg_heuristics = [eg.neg_cost, eg.neg_subtree_cost, *evolved]
    eg_done = eg_bad = 0
    while eg_done < AC4_INSTANCES:
        g = eg.gen_egraph(rng, rng.randint(2, 10), 3)
        try:
            _, opt = eg.oracle_extract(g)
        except (eg.TooLarge, eg.NoValidExtraction):
            continue
        eg_done += 1
        eg_bad += any(opt > eg.extraction_cost(g, eg.greedy_extract(g, h)) for h in eg_heuristics)

    sh_heuristics = [sh.neg_strategy_cost, *(parse_template(t).compile() for t in (
        "(neg (add (feat strategy_cost) (feat edge_cost_assigned)))",
        "(feat slack)",
        "(neg (add (feat strategy_cost) (add (feat edge_cost_assigned) (feat edge_cost_unassigned))))",
    ))]
    sh_done = sh_bad = 0
    while sh_done < AC4_INSTANCES:
        p = sh.gen_shard(rng, rng.randint(2, 9), 3)
        try:
            _, opt = sh.oracle_solve(p)
        except sh.TooLarge:
            continue
        sh_done += 1
        sh_bad += any(opt > sh.total_cost(p, sh.heuristic_solve(p, h)) for h in sh_heuristics)

    g = eg.counterexample()
    eg_gap = (eg.extraction_cost(g, eg.greedy_extract(g, eg.neg_cost)), _enumerate_egraph(g))
    p = sh.counterexample()
    sh_gap = (sh.total_cost(p, sh.heuristic_solve(p, sh.neg_strategy_cost)), _enumerate_shard(p))
    elapsed = time.perf_counter() - t0
    ok = (eg_bad == 0 and sh_bad == 0 and eg_gap[0] > eg_gap[1] and sh_gap[0] > sh_gap[1]
          and eg_gap[1] == eg.oracle_extract(g)[1] and sh_gap[1] == sh.oracle_solve(p)[1]
          and elapsed < AC4_SECONDS)
    report(capsys, "AC4", ok, f"e-graph {eg_done} instances x {len(eg_heuristics)} heuristics, {eg_bad} beat oracle; "
                              f"shard {sh_done} x {len(sh_heuristics)}, {sh_bad} beat oracle; "
                              f"counterexamples greedy/optimum e-graph {eg_gap}, shard {sh_gap}; {elapsed:.1f}s")
    assert ok


def test_ac5_autotuner_sanity(capsys):
    t0 = time.perf_counter()
    hits = 0
    for seed in range(AC5_SEEDS):
        r = random.Random(seed)
        his = (100, 100, 100) if seed % 2 else (200, 50, 10_000)
        dims = tuple(Dim(f"x{i}", 0, h) for i, h in enumerate(his))
        centre = {d.name: r.randint(d.lo, d.hi) for d in dims}
        space = ParamSpace(dims, {d.name: d.hi // 2 for d in dims})

        def objective(a):
            return -sum(((a[d.name] - centre[d.name]) / (d.hi - d.lo)) ** 2 for d in dims)

        res = tune(space, objective, TuneBudget(10, 20, seed))
        hits += all(abs(res.best_assignment[d.name] - centre[d.name]) <= AC5_TOLERANCE * (d.hi - d.lo)
                    for d in dims)
    elapsed = time.perf_counter() - t0
    ok = hits >= AC5_REQUIRED and elapsed < AC5_SECONDS
    report(capsys, "AC5", ok, f"{hits}/{AC5_SEEDS} seeds within {AC5_TOLERANCE:.0%} of range, {elapsed:.1f}s")
    assert ok


def _median(xs):
    return statistics.median(float("inf") if x is None else x for x in xs)


@pytest.mark.slow
def test_ac6_hierarchical_search(capsys):
    t0 = time.perf_counter()
    task = make_task("inline-size", gen_planted_corpus(1, 0))
    optimum = task.evaluate(parse_template(PLANTED_TEXT.format(k=PLANTED_THRESHOLD))).score
    target = AC6_TARGET_FRACTION * optimum
    seeds = [as_template("never")]
    hier, frozen, rows = [], [], []
    hier_kids, frozen_kids = [], []
    for s in range(AC6_SEEDS):
        h, hdb = evals_to_reach(RunConfig(seed=s, tuning=True, tune_batch=5, tune_rounds=2), seeds, task,
                                target, AC6_MAX_EVALS)
        f, fdb = evals_to_reach(RunConfig(seed=s, tuning=False, tune_batch=5, tune_rounds=2), seeds, task,
                                target, AC6_MAX_EVALS)
        hier.append(h)
        frozen.append(f)
        hier_kids += hdb.candidates
        frozen_kids += fdb.candidates
        rows.append(f"{s}:{h}/{f}")
    mh, mf = _median(hier), _median(frozen)
    ir_h, ir_f = invalid_rate(hier_kids), invalid_rate(frozen_kids)
    elapsed = time.perf_counter() - t0
    ok = mh < mf and ir_h <= ir_f and elapsed < AC6_SECONDS
    wins = sum((h or float("inf")) < (f or float("inf")) for h, f in zip(hier, frozen))
    report(capsys, "AC6", ok,
           f"optimum {optimum:.4f}, target {target:.4f}; median evals hierarchical {mh} vs frozen {mf} "
           f"(reached {sum(h is not None for h in hier)}/{AC6_SEEDS} vs {sum(f is not None for f in frozen)}"
           f"/{AC6_SEEDS}, paired wins {wins}); invalid_rate {ir_h:.3f} vs {ir_f:.3f}; {elapsed:.0f}s; "
           f"per seed hier/frozen {' '.join(rows)}")
    assert ok


def test_ac7_manifest_rerun_is_byte_identical(capsys, tmp_path):
    t0 = time.perf_counter()
    corpus = tmp_path / "corpus.json"
    assert cli.main(["gen", "--task", "inline", "--size", "3", "--seed", "5", "--out", str(corpus)]) == 0
    cfg = tmp_path / "run.toml"
    cfg.write_text('task = "inline-size"\niterations = 6\nseed = 3\ntune_batch = 4\n'
                   'seed_templates = ["never", "size-a", "perf-b"]\n')
    first = tmp_path / "first"
    assert cli.main(["run", "--config", str(cfg), "--corpus", str(corpus), "--out", str(first), "--workers", "1"]) == 0
    same = []
    for workers in ("1", "2"):
        out = tmp_path / f"w{workers}"
        assert cli.main(["run", "--manifest", str(first / "manifest.json"), "--out", str(out),
                         "--workers", workers]) == 0
        same += [(first / n).read_bytes() == (out / n).read_bytes()
                 for n in ("curve.csv", "best.template", "candidates.jsonl")]
    elapsed = time.perf_counter() - t0
    ok = all(same) and elapsed < AC7_SECONDS
    report(capsys, "AC7", ok, f"{sum(same)}/{len(same)} artifacts identical across workers 1 and 2, {elapsed:.1f}s")
    assert ok


STUBS = {
    "garbage": "print('%%% not a template %%%')",
    "timeout": "import time; time.sleep(30)",
}


def test_ac8_external_proposer_robustness(capsys, caplog, tmp_path):
    task = make_task("egraph", generate_items("egraph", 6, 2, 25))
    results = []
    for name, body in STUBS.items():
        script = tmp_path / f"{name}.py"
        script.write_text(textwrap.dedent(body))
        cfg = RunConfig(iterations=AC8_ITERATIONS, proposals_per_iteration=2, population_size=8, tune_batch=4,
                        task="egraph", proposer_cmd=f"{sys.executable} {script}", proposer_timeout=0.3)
        caplog.clear()
        with caplog.at_level(logging.WARNING, logger="hierevo.evolve"):
            best, curve, db = run(cfg, [as_template("egraph")], task)
        logged = sum("falling back" in r.message for r in caplog.records)
        bests = [s.best for s in curve]
        monotone = all(a <= b for a, b in zip(bests, bests[1:]))
        kids = len(db.candidates) - 1
        results.append((name, len(curve), logged, kids, monotone, bests[-1]))
    ok = all(n == AC8_ITERATIONS and logged == kids and mono for _, n, logged, kids, mono, _ in results)
    report(capsys, "AC8", ok, "; ".join(f"{name}: {n} iterations, {logged}/{kids} fallbacks logged, "
                                        f"curve {'non-decreasing' if mono else 'DECREASES'}, best {b:.3f}"
                                        for name, n, logged, kids, mono, b in results))
    assert ok
