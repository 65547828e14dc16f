"""Command-line entry point: ``hierevo gen | eval | replay | run | curve``.

Exit codes: 0 ok, 1 usage error, 2 bad input, 3 internal invariant broken.

Run configuration is a flat TOML file whose keys are the ``RunConfig``
fields plus ``seed_templates`` (reference policy names or template file
paths). ``--set key=value`` overrides a key. Every run writes a manifest
that ``hierevo run --manifest`` replays byte-for-byte.
"""

from __future__ import annotations

import argparse
import dataclasses
import json
import logging
import os
import sys
from importlib import metadata
from pathlib import Path
from typing import Any, Sequence

import jsonschema

try:
    import tomllib
except ModuleNotFoundError:  # Python < 3.11
    import tomli as tomllib

from . import policies
from .corpus import corpus_hash, dump_json, gen_planted_corpus, read_corpus, write_corpus
from .dsl import PolicyTemplate, TemplateError, TemplateSyntaxError, parse_template, print_template
from .evolve import (
    RunConfig,
    candidates_jsonl,
    curve_csv,
    curve_from_candidates,
    read_candidates,
    run,
)
from .harness import CORPUS_KIND, TASK_IDS, generate_items, items_from_json, items_to_json, make_task, validate
from .inline import PERF, SIZE, run_policy, trace_to_jsonl

log = logging.getLogger("hierevo")

EXIT_OK, EXIT_USAGE, EXIT_INPUT, EXIT_INTERNAL = 0, 1, 2, 3
MANIFEST_FORMAT = "hierevo-run-manifest/1"
GEN_KINDS = ("inline", "planted", *TASK_IDS)
REPLAY_POLICIES = ("size-a", "perf-b", "never", "always")
# each task starts from its own zero-reward baseline unless told otherwise
DEFAULT_SEED = {"inline-size": "never", "inline-perf": "never", "egraph": "egraph", "shard": "shard"}
CONFIG_KEYS = {f.name for f in dataclasses.fields(RunConfig)} | {"seed_templates"}

ARTIFACTS = {
    "curve": "curve.csv",
    "candidates": "candidates.jsonl",
    "best": "best.template",
    "manifest": "manifest.json",
}


class InputError(Exception):
    """Bad user input: missing file, schema violation, unparsable template."""


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message: str) -> None:  # argparse would exit with 2
        raise UsageError(message)


def tool_version() -> str:
    try:
        return metadata.version("artifact")
    except metadata.PackageNotFoundError:
        return "0+unknown"


# --------------------------------------------------------------------------
# Input helpers


def _read_text(path: str) -> str:
    try:
        return Path(path).read_text()
    except OSError as exc:
        raise InputError(f"{path}: {exc.strerror or exc}") from exc


def _load_corpus(path: str) -> tuple[str, list[Any]]:
    try:
        kind, docs = read_corpus(path)
    except OSError as exc:
        raise InputError(f"{path}: {exc.strerror or exc}") from exc
    except json.JSONDecodeError as exc:
        raise InputError(f"{path}: not JSON ({exc.msg})") from exc
    except jsonschema.ValidationError as exc:
        raise InputError(f"{path}: {exc.message}") from exc
    except ValueError as exc:
        raise InputError(str(exc)) from exc
    try:
        return kind, items_from_json(kind, docs)
    except (KeyError, TypeError, ValueError) as exc:
        raise InputError(f"{path}: {type(exc).__name__}: {exc}") from exc


def _task_for(task_id: str, corpus: str):
    kind, items = _load_corpus(corpus)
    if CORPUS_KIND[task_id] != kind:
        raise InputError(f"task {task_id} needs a {CORPUS_KIND[task_id]} corpus, {corpus} holds {kind}")
    return make_task(task_id, items)


def _parse_template_text(text: str, where: str) -> PolicyTemplate:
    try:
        return parse_template(text)
    except TemplateSyntaxError as exc:
        raise InputError(f"SyntaxError: {where}: {exc}") from exc
    except TemplateError as exc:
        raise InputError(f"Malformed: {where}: {exc}") from exc


def _seed_template(ref: str, base: Path | None = None) -> PolicyTemplate:
    try:
        return policies.as_template(ref)
    except ValueError:
        pass
    path = Path(ref)
    if base is not None and not path.is_absolute():
        path = base / path
    return _parse_template_text(_read_text(str(path)), str(path))


def _parse_value(raw: str) -> Any:
    try:
        return tomllib.loads(f"v = {raw}")["v"]
    except tomllib.TOMLDecodeError:
        return raw


def _parse_slots(pairs: Sequence[str]) -> dict[str, int]:
    out = {}
    for p in pairs:
        name, sep, value = p.partition("=")
        if not sep:
            raise UsageError(f"--slot expects name=value, got {p!r}")
        try:
            out[name.strip()] = int(value)
        except ValueError as exc:
            raise UsageError(f"--slot {name}: {value!r} is not an integer") from exc
    return out


def load_config(path: str | None, overrides: Sequence[str]) -> dict[str, Any]:
    cfg: dict[str, Any] = {}
    if path:
        try:
            cfg = tomllib.loads(_read_text(path))
        except tomllib.TOMLDecodeError as exc:
            raise InputError(f"{path}: {exc}") from exc
    for o in overrides:
        key, sep, raw = o.partition("=")
        if not sep:
            raise UsageError(f"--set expects key=value, got {o!r}")
        cfg[key.strip()] = _parse_value(raw.strip())
    unknown = sorted(set(cfg) - CONFIG_KEYS)
    if unknown:
        raise InputError(f"unknown config keys: {', '.join(unknown)}")
    nested = sorted(k for k, v in cfg.items() if isinstance(v, dict))
    if nested:
        raise InputError(f"config must be flat; tables found: {', '.join(nested)}")
    return cfg


# --------------------------------------------------------------------------
# Subcommands


def cmd_gen(args: argparse.Namespace) -> int:
    if args.size < 0:
        raise UsageError("--size must be >= 0")
    if args.task == "planted":
        kind, items = "inline", items_to_json("inline", gen_planted_corpus(args.size, args.seed))
    else:
        kind = CORPUS_KIND.get(args.task, args.task)
        items = items_to_json(kind, generate_items(kind, args.size, args.seed, args.max_size))
    write_corpus(args.out, kind, items)
    return EXIT_OK


def cmd_eval(args: argparse.Namespace) -> int:
    task = _task_for(args.task, args.corpus)
    text = _read_text(args.template)
    verdict = validate(text, task)
    if not verdict.ok:
        print(f"{verdict.reason.value}: {verdict.message}", file=sys.stderr)
        return EXIT_INPUT
    t = parse_template(text)
    slots = _parse_slots(args.slot)
    values = {**t.defaults(), **slots} if slots else None
    report = task.evaluate(t, values)
    sys.stdout.write(dump_json(report.to_json()))
    if not report.valid:
        print(report.diagnostics, file=sys.stderr)
    return EXIT_OK


def _native(name: str):
    return {
        "size-a": policies.size_policy_decide,
        "perf-b": policies.perf_policy_decide,
        "never": policies.never,
        "always": policies.always,
    }[name]


def cmd_replay(args: argparse.Namespace) -> int:
    kind, programs = _load_corpus(args.corpus)
    if kind != "inline":
        raise InputError(f"replay needs an inline corpus, {args.corpus} holds {kind}")
    metric = args.metric or (PERF if args.policy == "perf-b" else SIZE)
    fn = _native(args.policy)
    trace_lines = []
    rows = []
    for i, p in enumerate(programs):
        _, trace, reward = run_policy(p, fn, metric)
        for ln in trace_to_jsonl(trace).splitlines():
            rec = json.loads(ln)
            rec["item"] = i
            trace_lines.append(json.dumps(rec, sort_keys=True))
        rows.append(dataclasses.asdict(reward))
    score = sum(r["reward"] for r in rows) / len(rows) if rows else 0.0
    report = {"policy": args.policy, "metric": metric, "score": score, "items": rows}
    if args.trace:
        Path(args.trace).write_text("".join(ln + "\n" for ln in trace_lines))
    sys.stdout.write(dump_json(report))
    return EXIT_OK


def _run_config(cfg: dict[str, Any], workers: int | None) -> RunConfig:
    fields = {k: v for k, v in cfg.items() if k != "seed_templates"}
    if workers is not None:
        fields["workers"] = workers
    fields.setdefault("workers", os.cpu_count() or 1)
    try:
        return RunConfig(**fields)
    except (TypeError, ValueError) as exc:
        raise InputError(f"config: {exc}") from exc


def cmd_run(args: argparse.Namespace) -> int:
    if args.manifest:
        man = json.loads(_read_text(args.manifest))
        if man.get("format") != MANIFEST_FORMAT:
            raise InputError(f"{args.manifest}: not a run manifest")
        cfg = {k: v for k, v in man["config"].items() if k != "workers"}
        cfg.update(load_config(None, args.set))
        seed_texts = list(man["seed_templates"])
        corpus = args.corpus or man["corpus"]["path"]
        if corpus_hash(corpus) != man["corpus"]["sha256"]:
            raise InputError(f"{corpus}: contents differ from the manifest's corpus")
    else:
        if not args.corpus:
            raise UsageError("run needs --corpus (or --manifest)")
        cfg = load_config(args.config, args.set)
        base = Path(args.config).parent if args.config else None
        refs = cfg.get("seed_templates") or [DEFAULT_SEED.get(cfg.get("task", "inline-size"), "never")]
        seed_texts = [print_template(_seed_template(r, base)) for r in refs]
        corpus = args.corpus
    config = _run_config(cfg, args.workers)
    if config.task not in TASK_IDS:
        raise InputError(f"unknown task {config.task!r}")
    task = _task_for(config.task, corpus)
    seeds = [_parse_template_text(t, "seed template") for t in seed_texts]

    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    best, curve, db = run(config, seeds, task)

    (out / ARTIFACTS["curve"]).write_text(curve_csv(curve))
    (out / ARTIFACTS["candidates"]).write_text(candidates_jsonl(db.candidates))
    (out / ARTIFACTS["best"]).write_text(print_template(best.bound()))
    config_doc = config.to_json()
    manifest = {
        "format": MANIFEST_FORMAT,
        "tool_version": tool_version(),
        "config": config_doc,
        "seed": config.seed,
        "task": config.task,
        "seed_templates": seed_texts,
        "corpus": {"path": str(Path(corpus).resolve()), "sha256": corpus_hash(corpus)},
        "artifacts": dict(ARTIFACTS),
        "best": {"id": best.id, "score": best.best_score, "assignment": best.best_assignment},
    }
    (out / ARTIFACTS["manifest"]).write_text(json.dumps(manifest, indent=2, sort_keys=True) + "\n")
    print(f"best score {best.best_score!r} (candidate {best.id}, {db.evals} evaluations) -> {out}")
    return EXIT_OK


def cmd_curve(args: argparse.Namespace) -> int:
    text = _read_text(args.store)
    try:
        cands = read_candidates(text)
    except (json.JSONDecodeError, KeyError, TypeError, ValueError) as exc:
        raise InputError(f"{args.store}: not a candidate store ({exc})") from exc
    csv = curve_csv(curve_from_candidates(cands))
    if args.out:
        Path(args.out).write_text(csv)
    else:
        sys.stdout.write(csv)
    return EXIT_OK


# --------------------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    ap = _Parser(prog="hierevo", description=__doc__.splitlines()[0])
    ap.add_argument("-v", "--verbose", action="store_true", help="debug logging")
    sub = ap.add_subparsers(dest="command", required=True, parser_class=_Parser)

    g = sub.add_parser("gen", help="generate a seeded corpus")
    g.add_argument("--task", required=True, choices=GEN_KINDS)
    g.add_argument("--size", type=int, required=True, help="number of items")
    g.add_argument("--seed", type=int, default=0)
    g.add_argument("--max-size", type=int, default=None, help="largest e-graph / shard instance")
    g.add_argument("--out", required=True)
    g.set_defaults(fn=cmd_gen)

    e = sub.add_parser("eval", help="score a template on a corpus")
    e.add_argument("--task", required=True, choices=TASK_IDS)
    e.add_argument("--corpus", required=True)
    e.add_argument("--template", required=True)
    e.add_argument("--slot", action="append", default=[], metavar="NAME=VALUE")
    e.set_defaults(fn=cmd_eval)

    r = sub.add_parser("replay", help="run a native reference policy and dump its decision trace")
    r.add_argument("--policy", required=True, choices=REPLAY_POLICIES)
    r.add_argument("--corpus", required=True)
    r.add_argument("--metric", choices=(SIZE, PERF), default=None)
    r.add_argument("--trace", default=None, help="write the decision trace here (JSON lines)")
    r.set_defaults(fn=cmd_replay)

    n = sub.add_parser("run", help="evolve templates; writes curve.csv, candidates.jsonl, best.template, manifest.json")
    n.add_argument("--config", default=None)
    n.add_argument("--manifest", default=None, help="replay the run recorded in this manifest")
    n.add_argument("--corpus", default=None)
    n.add_argument("--out", required=True)
    n.add_argument("--set", action="append", default=[], metavar="KEY=VALUE")
    n.add_argument("--workers", type=int, default=None)
    n.set_defaults(fn=cmd_run)

    c = sub.add_parser("curve", help="recompute the curve CSV from a candidate store")
    c.add_argument("--store", required=True)
    c.add_argument("--out", default=None)
    c.set_defaults(fn=cmd_curve)
    return ap


def main(argv: Sequence[str] | None = None) -> int:
    try:
        args = build_parser().parse_args(argv)
    except UsageError as exc:
        print(f"usage error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.INFO,
                        format="%(levelname)s %(name)s: %(message)s", stream=sys.stderr)
    try:
        return args.fn(args)
    except UsageError as exc:
        print(f"usage error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except InputError as exc:
        print(str(exc), file=sys.stderr)
        return EXIT_INPUT
    except Exception as exc:  # anything else means a bug in here
        log.exception("internal error")
        print(f"internal error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_INTERNAL


if __name__ == "__main__":
    sys.exit(main())
