"""Single executable exposing the full pipeline as subcommands.

Exit codes: 0 success, 2 input parse, 3 gateway, 4 config/variant, 5 internal.
All randomness derives from the run seed, so any subcommand with a mock
gateway and a fixed --seed is byte-reproducible.
"""

from __future__ import annotations

import argparse
import json
import sys
import traceback
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field, fields, replace
from pathlib import Path

from . import paths as pathmod
from .evaluation import evaluate_qa, judge_medical
from .gateway import Gateway, GatewayConfig, GatewayError, GenParams, GenerationTrace, build_gateway
from .io_utils import read_jsonl, write_json, write_jsonl
from .kg import KGStore, TSVParseError, load_kg_file, normalize_surface
from .parsing import ProcessParseError, parse_process, split_answer_list
from .prompts import render_inference_prompt, render_relation_prompt, render_triple_prompt
from .supervision import (
    BuildConfig,
    INFERRED_SOURCE,
    KG_SOURCE,
    QAInstance,
    TASK_PROCESS,
    annotate_path,
    build_dataset,
    qa_from_json,
    records_by_task,
)
from .trajectory import aggregate_runs, emit_stage_csv, run_stage_metrics

EXIT_OK = 0
EXIT_INPUT = 2
EXIT_GATEWAY = 3
EXIT_CONFIG = 4
EXIT_INTERNAL = 5

VARIANTS = ("no-kg", "no-kg-triple", "kg-rel", "kg-rel-triple", "kg-entity")
KG_VARIANTS = ("kg-rel", "kg-rel-triple", "kg-entity")


class InputError(Exception):
    """Unreadable or malformed input file."""


class ConfigError(Exception):
    """Bad run configuration or variant/input combination."""


@dataclass
class RunConfig:
    kg: str = ""
    qa: str = ""
    out: str = ""
    variant: str = "no-kg"
    max_hops: int = 2
    beam_k: int = 3
    stages: int = 5
    sample_n: int = 30
    seed: int = 0
    jobs: int = 1
    max_tokens: int = 128
    hits1_mode: str = "any_match"
    stage_mode: str = "tokens"
    gateway: GatewayConfig = field(default_factory=lambda: GatewayConfig(backend="mock"))

    def __post_init__(self):
        self.validate()

    def validate(self) -> None:
        if self.beam_k < 1:
            raise ConfigError("beam_k must be >= 1")
        if self.max_hops < 1:
            raise ConfigError("max_hops must be >= 1")
        if self.stages < 1:
            raise ConfigError("stages must be >= 1")
        if self.hits1_mode not in ("any_match", "first_only"):
            raise ConfigError(f"unknown hits1_mode {self.hits1_mode!r}")
        if self.stage_mode not in ("tokens", "chars"):
            raise ConfigError(f"unknown stage_mode {self.stage_mode!r}")


def load_run_config(path: str) -> RunConfig:
    p = Path(path)
    try:
        if p.suffix == ".toml":
            try:
                import tomllib
            except ModuleNotFoundError:
                import tomli as tomllib
            data = tomllib.loads(p.read_text(encoding="utf-8"))
        else:
            data = json.loads(p.read_text(encoding="utf-8"))
    except (OSError, ValueError) as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from exc
    gateway_data = data.pop("gateway", {})
    known = {f.name for f in fields(RunConfig) if f.name != "gateway"}
    unknown = set(data) - known
    if unknown:
        raise ConfigError(f"unknown config keys: {sorted(unknown)}")
    gw_known = set(GatewayConfig.__dataclass_fields__) - {"extra"}
    gw_unknown = set(gateway_data) - gw_known
    if gw_unknown:
        raise ConfigError(f"unknown gateway config keys: {sorted(gw_unknown)}")
    gw_kwargs = dict(gateway_data)
    if "vocab" in gw_kwargs:
        gw_kwargs["vocab"] = tuple(gw_kwargs["vocab"])
    gw_kwargs.setdefault("backend", "mock")
    return RunConfig(**data, gateway=GatewayConfig(**gw_kwargs))


def _apply_overrides(config: RunConfig, args: argparse.Namespace) -> RunConfig:
    for name in ("kg", "qa", "out", "variant", "max_hops", "stages", "sample_n", "seed", "jobs", "hits1_mode"):
        value = getattr(args, name.replace("-", "_"), None)
        if value is not None:
            setattr(config, name, value)
    beam = getattr(args, "beam_k", None)
    if beam is not None and not isinstance(beam, str):
        config.beam_k = beam
    return config


def _config_from_args(args: argparse.Namespace) -> RunConfig:
    config = load_run_config(args.config) if getattr(args, "config", None) else RunConfig()
    config = _apply_overrides(config, args)
    config.validate()
    return config


def _load_store(path: str) -> KGStore:
    if not path:
        raise ConfigError("a KG file is required (--kg)")
    try:
        return load_kg_file(path)
    except OSError as exc:
        raise InputError(f"cannot read KG file {path}: {exc}") from exc


def _load_qa(path: str) -> list[QAInstance]:
    if not path:
        raise ConfigError("a QA file is required (--qa)")
    instances = []
    try:
        for row in read_jsonl(path):
            instances.append(qa_from_json(row))
    except OSError as exc:
        raise InputError(f"cannot read QA file {path}: {exc}") from exc
    except (KeyError, ValueError) as exc:
        raise InputError(f"malformed QA file {path}: {exc}") from exc
    return instances


def _gateway(config: RunConfig) -> Gateway:
    try:
        return build_gateway(config.gateway)
    except (OSError, ValueError) as exc:
        raise ConfigError(f"cannot build gateway: {exc}") from exc


def _resolve_sources(store: KGStore, entities) -> set[str]:
    sources: set[str] = set()
    for entity in entities:
        if entity in store.entities:
            sources.add(entity)
        else:
            sources |= store.resolve_entity(entity)
    return sources


def cmd_index(args: argparse.Namespace) -> int:
    config = _config_from_args(args)
    store = _load_store(config.kg)
    stats = store.stats()
    if config.out:
        write_json(config.out, stats)
    print(json.dumps(stats, sort_keys=True))
    return EXIT_OK


def cmd_build_dataset(args: argparse.Namespace) -> int:
    config = _config_from_args(args)
    store = _load_store(config.kg)
    instances = _load_qa(config.qa)
    gateway = _gateway(config)
    build_config = BuildConfig(
        max_hops=config.max_hops,
        jobs=config.jobs,
        seed=config.seed,
        samples_per_instance=getattr(args, "samples", 1) or 1,
        retry_backoff_s=0.0 if config.gateway.backend == "mock" else 0.5,
        gen_params=GenParams(max_tokens=config.max_tokens, seed=config.seed),
    )
    records, failures = build_dataset(instances, store, gateway, build_config)
    out_dir = Path(config.out or ".")
    grouped = records_by_task(records)
    for task, task_records in grouped.items():
        write_jsonl(out_dir / f"{task}.jsonl", (r.to_json() for r in task_records))
    write_jsonl(out_dir / "failures.jsonl", failures)
    attempted = len(instances) * build_config.samples_per_instance
    if attempted and not grouped[TASK_PROCESS] and len(failures) == attempted:
        print("error: gateway unreachable for every reasoning-process generation", file=sys.stderr)
        return EXIT_GATEWAY
    print(
        json.dumps(
            {task: len(task_records) for task, task_records in grouped.items()}
            | {"failures": len(failures)},
            sort_keys=True,
        )
    )
    return EXIT_OK


def _predict_relation_paths(question: str, gateway: Gateway, config: RunConfig) -> list[pathmod.RelationPath]:
    prompt = render_relation_prompt(question)
    params = GenParams(max_tokens=config.max_tokens, seed=config.seed)
    predictions = []
    for trace in gateway.generate_topk(prompt, config.beam_k, params):
        try:
            predictions.append(pathmod.parse_relation_path_text(trace.text.strip().splitlines()[0]))
        except (ValueError, IndexError):
            continue
    return list(dict.fromkeys(predictions))


def _predict_triple_paths(question: str, gateway: Gateway, config: RunConfig) -> list[pathmod.ReasoningPath]:
    prompt = render_triple_prompt(question)
    params = GenParams(max_tokens=config.max_tokens, seed=config.seed)
    predictions = []
    for trace in gateway.generate_topk(prompt, config.beam_k, params):
        try:
            predictions.append(pathmod.parse_reasoning_path_text(trace.text.strip().splitlines()[0]))
        except ValueError:
            continue
    return list(dict.fromkeys(predictions))


def _paths_for_variant(
    instance: QAInstance,
    index: int,
    variant: str,
    store: KGStore | None,
    gateway: Gateway,
    config: RunConfig,
) -> list[tuple[str, str]]:
    """(rendered path, provenance) pairs feeding the inference prompt."""
    collected: list[tuple[str, str]] = []
    if variant in ("kg-rel", "kg-rel-triple"):
        assert store is not None
        sources = _resolve_sources(store, instance.question_entities)
        for rel_path in _predict_relation_paths(instance.question, gateway, config):
            for reasoning_path in pathmod.execute_relation_path(store, sources, rel_path):
                collected.append((reasoning_path.render(), KG_SOURCE))
    if variant in ("no-kg-triple", "kg-rel-triple"):
        for reasoning_path in _predict_triple_paths(instance.question, gateway, config):
            collected.append((reasoning_path.render(), INFERRED_SOURCE))
    if variant == "kg-entity":
        assert store is not None
        sources = _resolve_sources(store, instance.question_entities)
        walks = pathmod.walk_paths(store, sources, config.max_hops)
        sampled = pathmod.sample_paths(walks, config.sample_n, config.seed + index)
        collected.extend((p.render(), KG_SOURCE) for p in sampled)
    return list(dict.fromkeys(collected))


def _infer_one(
    instance: QAInstance,
    index: int,
    variant: str,
    store: KGStore | None,
    gateway: Gateway,
    config: RunConfig,
) -> dict:
    if variant == "no-kg":
        paths: list[tuple[str, str]] = []
        prompt = render_inference_prompt(instance.question)
    else:
        paths = _paths_for_variant(instance, index, variant, store, gateway, config)
        prompt = render_inference_prompt(instance.question, [annotate_path(p, src) for p, src in paths])
    trace = gateway.generate(prompt, GenParams(max_tokens=config.max_tokens, seed=config.seed))
    parse_error = False
    try:
        answers = list(parse_process(trace.text).final_answers)
    except ProcessParseError:
        parse_error = True
        answers = split_answer_list(trace.text)
    return {
        "id": instance.id,
        "variant": variant,
        "prompt": prompt,
        "raw_output": trace.text,
        "answers": answers,
        "paths": [{"path": p, "provenance": src} for p, src in paths],
        "parse_error": parse_error,
    }


def run_inference(
    instances: list[QAInstance], variant: str, store: KGStore | None, gateway: Gateway, config: RunConfig
) -> list[dict]:
    if variant not in VARIANTS:
        raise ConfigError(f"unknown variant {variant!r}; expected one of {VARIANTS}")
    if variant in KG_VARIANTS and store is None:
        raise ConfigError(f"variant {variant!r} requires a KG (--kg)")

    def job(pair):
        idx, instance = pair
        return _infer_one(instance, idx, variant, store, gateway, config)

    numbered = list(enumerate(instances))
    if config.jobs > 1:
        with ThreadPoolExecutor(max_workers=config.jobs) as pool:
            return list(pool.map(job, numbered))
    return [job(pair) for pair in numbered]


def cmd_infer(args: argparse.Namespace) -> int:
    config = _config_from_args(args)
    instances = _load_qa(config.qa)
    store = _load_store(config.kg) if config.variant in KG_VARIANTS else None
    gateway = _gateway(config)
    rows = run_inference(instances, config.variant, store, gateway, config)
    out = Path(config.out or "predictions.jsonl")
    if out.is_dir():
        out = out / "predictions.jsonl"
    write_jsonl(out, rows)
    print(f"wrote {len(rows)} predictions to {out}")
    return EXIT_OK


def _eval_items(pred_path: str, qa_path: str | None):
    gold_by_id = {}
    if qa_path:
        gold_by_id = {inst.id: list(inst.answers) for inst in _load_qa(qa_path)}
    items = []
    try:
        for row in read_jsonl(pred_path):
            predicted = row.get("predicted", row.get("answers"))
            if predicted is None:
                raise InputError(f"prediction row {row.get('id')!r} has neither 'predicted' nor 'answers'")
            gold = row.get("gold", gold_by_id.get(str(row.get("id"))))
            if gold is None:
                raise InputError(f"no gold answers for row {row.get('id')!r} (supply 'gold' or --qa)")
            items.append((str(row["id"]), [str(p) for p in predicted], [str(g) for g in gold]))
    except OSError as exc:
        raise InputError(f"cannot read predictions {pred_path}: {exc}") from exc
    except (KeyError, ValueError) as exc:
        raise InputError(f"malformed predictions {pred_path}: {exc}") from exc
    return items


def cmd_eval(args: argparse.Namespace) -> int:
    config = _config_from_args(args)
    if args.mode == "medical":
        gateway = _gateway(config)
        rows = []
        try:
            pairs = list(read_jsonl(args.pred))
        except (OSError, ValueError) as exc:
            raise InputError(f"cannot read {args.pred}: {exc}") from exc
        for row in pairs:
            if "reference" not in row or "answer" not in row:
                raise InputError(f"medical row {row.get('id')!r} needs 'reference' and 'answer'")
            scores = judge_medical(
                row["reference"], row["answer"], gateway, runs=args.runs,
                params=GenParams(max_tokens=config.max_tokens, seed=config.seed),
            )
            rows.append({"id": str(row.get("id", len(rows)))} | scores.to_json())
        report = {"count": len(rows), "per_instance": rows}
        if rows:
            report["aggregate"] = {
                key: sum(r[key] for r in rows) / len(rows)
                for key in ("relevance", "accuracy", "completeness", "clarity", "conciseness", "average")
            }
    else:
        items = _eval_items(args.pred, config.qa or None)
        report = evaluate_qa(items, hits1_mode=config.hits1_mode).to_json()
    out = Path(config.out or "eval_report.json")
    if out.is_dir():
        out = out / "eval_report.json"
    write_json(out, report)
    print(json.dumps(report.get("aggregate", {}), sort_keys=True))
    return EXIT_OK


def cmd_trajectory(args: argparse.Namespace) -> int:
    config = _config_from_args(args)
    gateway = _gateway(config)
    qa_by_id: dict[str, QAInstance] = {}
    if config.qa:
        qa_by_id = {inst.id: inst for inst in _load_qa(config.qa)}
    try:
        trace_rows = list(read_jsonl(args.traces))
    except (OSError, ValueError) as exc:
        raise InputError(f"cannot read traces {args.traces}: {exc}") from exc

    traces: list[tuple[str, str, GenerationTrace]] = []
    answers_by_id: dict[str, list[str]] = {}
    for row in trace_rows:
        trace = GenerationTrace(
            text="".join(t for t, _ in row["tokens"]), tokens=tuple((t, float(lp)) for t, lp in row["tokens"])
        )
        qid = str(row["id"])
        traces.append((qid, str(row.get("run", len(traces))), trace))
        bucket = answers_by_id.setdefault(qid, [])
        inst = qa_by_id.get(qid)
        if inst and not bucket:
            bucket.extend(dict.fromkeys(normalize_surface(a) for a in inst.answers))
        try:
            for answer in parse_process(trace.text).final_answers:
                if answer not in bucket:
                    bucket.append(answer)
        except ProcessParseError:
            pass

    runs = []
    per_case = []
    for qid, run_id, trace in traces:
        inst = qa_by_id.get(qid)
        context = (inst.question + "\n") if inst else ""
        metrics = run_stage_metrics(
            trace, answers_by_id[qid], gateway, config.stages, context, config.stage_mode
        )
        runs.append(metrics)
        per_case.append(
            {
                "id": qid,
                "run": run_id,
                "consistency": list(metrics.consistency),
                "uncertainty": list(metrics.uncertainty),
                "perplexity": list(metrics.perplexity),
            }
        )
    if not runs:
        raise InputError(f"no traces found in {args.traces}")
    report = aggregate_runs(runs)
    out_dir = Path(config.out or ".")
    emit_stage_csv(report, out_dir / "stage_metrics.csv")
    write_json(out_dir / "trajectory_report.json", report.to_json())
    write_jsonl(out_dir / "per_case.jsonl", per_case)
    print(f"aggregated {len(runs)} runs over {report.n_stages} stages")
    return EXIT_OK


def cmd_sweep_beam(args: argparse.Namespace) -> int:
    config = _config_from_args(args)
    beams = [int(b) for b in str(args.beam_k or "1,2,3,4,5").split(",")]
    if any(b < 1 for b in beams):
        raise ConfigError("beam values must be >= 1")
    variant = config.variant if config.variant != "no-kg" else "kg-rel"
    instances = _load_qa(config.qa)
    store = _load_store(config.kg) if variant in KG_VARIANTS else None
    gateway = _gateway(config)
    out_dir = Path(config.out or ".")
    sweep_rows = []
    for beam in beams:
        run_config = replace(config, beam_k=beam)
        rows = run_inference(instances, variant, store, gateway, run_config)
        write_jsonl(out_dir / f"k={beam}" / "predictions.jsonl", rows)
        report = evaluate_qa(
            [(r["id"], r["answers"], list(inst.answers)) for r, inst in zip(rows, instances)],
            hits1_mode=config.hits1_mode,
        )
        avg_paths = sum(len(r["paths"]) for r in rows) / len(rows) if rows else 0.0
        sweep_rows.append({"beam_k": beam, "avg_paths": avg_paths} | report.aggregate)
    write_json(out_dir / "sweep.json", {"variant": variant, "rows": sweep_rows})
    print(json.dumps(sweep_rows))
    return EXIT_OK


def _add_common(parser: argparse.ArgumentParser) -> None:
    parser.add_argument("--config", help="run config file (JSON or TOML)")
    parser.add_argument("--kg", help="knowledge graph TSV file")
    parser.add_argument("--qa", help="QA instances JSONL file")
    parser.add_argument("--out", help="output file or directory")
    parser.add_argument("--max-hops", type=int, dest="max_hops")
    parser.add_argument("--stages", type=int)
    parser.add_argument("--sample-n", type=int, dest="sample_n")
    parser.add_argument("--seed", type=int)
    parser.add_argument("--jobs", type=int)


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="kgreason", description=__doc__)
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("index", help="build a KG store and emit its statistics")
    _add_common(p)
    p.set_defaults(func=cmd_index)

    p = sub.add_parser("build-dataset", help="construct the three supervision datasets")
    _add_common(p)
    p.add_argument("--samples", type=int, default=1, help="reasoning-process samples per instance")
    p.set_defaults(func=cmd_build_dataset)

    p = sub.add_parser("infer", help="answer questions under a KG-access variant")
    _add_common(p)
    p.add_argument("--variant", choices=VARIANTS)
    p.add_argument("--beam-k", type=int, dest="beam_k")
    p.set_defaults(func=cmd_infer)

    p = sub.add_parser("eval", help="score predictions (QA metrics or medical judge)")
    _add_common(p)
    p.add_argument("--pred", required=True, help="predictions JSONL")
    p.add_argument("--mode", choices=("qa", "medical"), default="qa")
    p.add_argument("--runs", type=int, default=3, help="judge runs per answer (medical mode)")
    p.add_argument("--hits1-mode", choices=("any_match", "first_only"), dest="hits1_mode")
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("trajectory", help="stage metrics over recorded generation traces")
    _add_common(p)
    p.add_argument("--traces", required=True, help="traces JSONL: {id, run, tokens}")
    p.set_defaults(func=cmd_trajectory)

    p = sub.add_parser("sweep-beam", help="run infer+eval across beam widths")
    _add_common(p)
    p.add_argument("--variant", choices=VARIANTS)
    p.add_argument("--beam-k", dest="beam_k", help="comma-separated beam widths (default 1,2,3,4,5)")
    p.set_defaults(func=cmd_sweep_beam)
    return parser


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except (InputError, TSVParseError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INPUT
    except GatewayError as exc:
        print(f"gateway error: {exc}", file=sys.stderr)
        return EXIT_GATEWAY
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except Exception:
        traceback.print_exc()
        return EXIT_INTERNAL


if __name__ == "__main__":
    sys.exit(main())
