import json
import logging
import sys
import textwrap

import jsonschema
import pytest

from hierevo.corpus import load_schema
from hierevo.dsl import parse_template
from hierevo.evolve import (
    CROSSOVER,
    EXTERNAL,
    MUTATION,
    SEED,
    ProposerProtocolError,
    ProposerTimeout,
    RunConfig,
    candidates_jsonl,
    curve_csv,
    curve_from_candidates,
    evals_to_reach,
    external_propose,
    invalid_rate,
    read_candidates,
    run,
    seed_db,
    step,
)
from hierevo.harness import generate_items, make_task
from hierevo.policies import as_template


@pytest.fixture(scope="module")
def egraph_task():
    return make_task("egraph", generate_items("egraph", 6, 1, 25))


@pytest.fixture(scope="module")
def inline_task():
    return make_task("inline-size", generate_items("inline", 2, 1))


def _stub(tmp_path, body):
    path = tmp_path / "proposer.py"
    path.write_text(textwrap.dedent(body))
    return f"{sys.executable} {path}"


ECHO = """\
    import json, sys
    req = json.loads(sys.stdin.readline())
    with open(sys.argv[0] + ".log", "a") as f:
        f.write(json.dumps(req) + "\\n")
    print(json.dumps({"template": req["parents"][0]["template"]}))
"""


def _cfg(**kw):
    base = dict(population_size=6, iterations=4, proposals_per_iteration=3, tune_batch=4, tune_rounds=1,
                task="egraph")
    return RunConfig(**{**base, **kw})


def test_seed_candidates_score_zero(egraph_task):
    db = seed_db(_cfg(), [as_template("egraph")], egraph_task)
    (c,) = db.candidates
    assert c.best_score == 0.0 and c.proposer == SEED and c.generation == 0


def test_best_is_never_lost(egraph_task):
    best, curve, db = run(_cfg(iterations=8), [as_template("egraph")], egraph_task)
    bests = [s.best for s in curve]
    assert bests == sorted(bests)
    assert best.best_score == max(c.best_score for c in db.candidates if c.valid)
    assert best.id in db.population
    evals = [s.evals_cumulative for s in curve]
    assert evals == sorted(evals) and evals[-1] == db.evals


def test_population_is_bounded_and_score_distinct(egraph_task):
    _, _, db = run(_cfg(iterations=6), [as_template("egraph")], egraph_task)
    pop = [db.candidates[i] for i in db.population]
    assert len(pop) <= db.config.population_size
    scores = [c.best_score for c in pop if c.valid]
    assert len(scores) == len(set(scores))


def test_run_is_deterministic(egraph_task):
    a = run(_cfg(seed=5), [as_template("egraph")], egraph_task)[2]
    b = run(_cfg(seed=5), [as_template("egraph")], egraph_task)[2]
    assert candidates_jsonl(a.candidates) == candidates_jsonl(b.candidates)
    c = run(_cfg(seed=6), [as_template("egraph")], egraph_task)[2]
    assert candidates_jsonl(a.candidates) != candidates_jsonl(c.candidates)


def test_workers_do_not_change_results(inline_task):
    cfg = _cfg(task="inline-size", iterations=2)
    seeds = [as_template("never"), as_template("perf-b")]
    a = run(cfg, seeds, inline_task)[2]
    b = run(RunConfig(**{**cfg.to_json(), "workers": 2}), seeds, inline_task)[2]
    assert candidates_jsonl(a.candidates) == candidates_jsonl(b.candidates)


def test_frozen_mode_scores_slot_defaults(inline_task):
    cfg = _cfg(task="inline-size", iterations=2, tuning=False)
    _, _, db = run(cfg, [as_template("perf-b")], inline_task)
    for c in db.candidates:
        assert c.best_assignment == c.parsed().defaults()
        assert c.diagnostics["trials"] == 1


def test_tuning_mode_spends_the_budget(inline_task):
    cfg = _cfg(task="inline-size", iterations=0, tune_batch=3, tune_rounds=2)
    db = seed_db(cfg, [as_template("perf-b")], inline_task)
    assert db.candidates[0].diagnostics["trials"] == 6
    assert db.evals == 6 * len(inline_task.items)


def test_children_record_lineage(egraph_task):
    _, _, db = run(_cfg(iterations=6, crossover_rate=0.5), [as_template("egraph")], egraph_task)
    for c in db.candidates[1:]:
        assert c.proposer in (MUTATION, CROSSOVER)
        assert c.parent_ids and all(p < c.id for p in c.parent_ids)
        assert c.generation >= 1


def test_store_rebuilds_the_curve(egraph_task):
    _, curve, db = run(_cfg(iterations=5), [as_template("egraph")], egraph_task)
    cands = read_candidates(candidates_jsonl(db.candidates))
    assert curve_csv(curve_from_candidates(cands)) == curve_csv(curve)


def test_evals_to_reach(egraph_task):
    hit, db = evals_to_reach(_cfg(), [as_template("egraph")], egraph_task, 0.0, 10**6)
    assert hit == db.candidates[0].eval_cost
    miss, db = evals_to_reach(_cfg(), [as_template("egraph")], egraph_task, 1e9, 60)
    assert miss is None and db.evals >= 60


def test_echo_proposer_gets_schema_valid_requests(tmp_path, egraph_task):
    cmd = _stub(tmp_path, ECHO)
    _, curve, db = run(_cfg(proposer_cmd=cmd, iterations=2), [as_template("egraph")], egraph_task)
    kids = db.candidates[1:]
    assert kids and all(c.proposer == EXTERNAL for c in kids)
    schema = load_schema("proposer_request")
    for line in (tmp_path / "proposer.py.log").read_text().splitlines():
        jsonschema.validate(json.loads(line), schema)


@pytest.mark.parametrize("body, exc", [
    ("print('not json')", ProposerProtocolError),
    ("print('{\"nope\": 1}')", ProposerProtocolError),
    ("import sys; sys.exit(3)", ProposerProtocolError),
    ("import time; time.sleep(5)", ProposerTimeout),
])
def test_external_propose_failures(tmp_path, body, exc):
    cmd = _stub(tmp_path, body).split()
    with pytest.raises(exc):
        external_propose(cmd, {"parents": []}, timeout=0.5)


@pytest.mark.parametrize("body", [
    "print('garbage')",
    "import json; print(json.dumps({'template': '(lt 1'}))",
    "import json; print(json.dumps({'template': '(lt 1 2)'}))",
])
def test_bad_proposals_fall_back_to_mutation(tmp_path, egraph_task, caplog, body):
    cmd = _stub(tmp_path, body)
    with caplog.at_level(logging.WARNING, logger="hierevo.evolve"):
        _, curve, db = run(_cfg(proposer_cmd=cmd, iterations=2), [as_template("egraph")], egraph_task)
    kids = db.candidates[1:]
    assert all(c.proposer == MUTATION and "fallback" in c.diagnostics for c in kids)
    assert sum("falling back" in r.message for r in caplog.records) == len(kids)
    assert invalid_rate(db.candidates) == 0.0


def test_config_validation():
    with pytest.raises(ValueError):
        RunConfig(population_size=0)
    with pytest.raises(ValueError):
        RunConfig(crossover_rate=2)
    with pytest.raises(ValueError):
        seed_db(RunConfig(), [], None)


def test_invalid_seed_is_kept_but_ranked_last(egraph_task):
    bad = parse_template("(lt 1 2)")
    db = seed_db(_cfg(), [bad, as_template("egraph")], egraph_task)
    assert db.candidates[0].best_score is None and db.best().id == 1
    step(db, egraph_task)
    assert db.best().valid
