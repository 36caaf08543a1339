"""Assemble the three multi-task supervision datasets as JSONL records."""

from __future__ import annotations

import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field, replace
from typing import Iterable, Sequence

from . import paths as pathmod
from .gateway import Gateway, GatewayError, GenParams
from .kg import KGStore
from .prompts import render_process_prompt, render_relation_prompt, render_triple_prompt

TASK_RELATION = "relation_path"
TASK_TRIPLE = "triple_path"
TASK_PROCESS = "reasoning_process"

KG_SOURCE = "KG"
INFERRED_SOURCE = "INFERRED"


@dataclass(frozen=True)
class QAInstance:
    """One question with its entities and gold answers."""

    id: str
    question: str
    question_entities: tuple[str, ...]
    answers: tuple[str, ...]
    split: str = "test"

    def __post_init__(self):
        if not self.answers:
            raise ValueError(f"instance {self.id!r} has no answers")
        if self.split not in ("train", "validation", "test"):
            raise ValueError(f"instance {self.id!r}: unknown split {self.split!r}")


def qa_from_json(row: dict) -> QAInstance:
    return QAInstance(
        id=str(row["id"]),
        question=row["question"],
        question_entities=tuple(dict.fromkeys(row.get("question_entities", []))),
        answers=tuple(dict.fromkeys(row["answers"])),
        split=row.get("split", "test"),
    )


@dataclass(frozen=True)
class SupervisionRecord:
    instance_id: str
    task: str
    prompt: str
    target: str
    provenance: tuple[str, ...] = ()
    hops: int | None = None

    def to_json(self) -> dict:
        return {
            "id": self.instance_id,
            "task": self.task,
            "prompt": self.prompt,
            "target": self.target,
            "meta": {"provenance": list(self.provenance), "hops": self.hops},
        }


def annotate_path(path, source: str) -> str:
    """Render a path with its provenance suffix, " [<KG>]" or " [<INFERRED>]"."""
    if source not in (KG_SOURCE, INFERRED_SOURCE):
        raise ValueError(f"unknown provenance {source!r}")
    if isinstance(path, pathmod.ReasoningPath):
        rendered = path.render()
    elif isinstance(path, str):
        rendered = path
    else:
        rendered = pathmod.render_relation_path(path)
    return f"{rendered} [<{source}>]"


def strip_annotation(text: str) -> tuple[str, str | None]:
    """Inverse of :func:`annotate_path`; source is None when no suffix found."""
    for source in (KG_SOURCE, INFERRED_SOURCE):
        suffix = f" [<{source}>]"
        if text.endswith(suffix):
            return text[: -len(suffix)], source
    return text, None


@dataclass
class BuildConfig:
    max_hops: int = 2
    samples_per_instance: int = 1
    max_retries: int = 3
    retry_backoff_s: float = 0.5
    jobs: int = 1
    seed: int = 0
    gen_params: GenParams = field(default_factory=lambda: GenParams(max_tokens=256))


def gold_paths(
    store: KGStore, instance: QAInstance, max_hops: int
) -> tuple[list[pathmod.RelationPath], list[pathmod.ReasoningPath]]:
    """Shortest relation and triple paths from question entities to answers.

    Answer surfaces are resolved against the store; instances whose answers
    do not resolve (or are unreachable) yield empty path sets.
    """
    targets: set[str] = set()
    for answer in instance.answers:
        targets |= store.resolve_entity(answer)
    if not targets or not instance.question_entities:
        return [], []
    triple_paths = pathmod.enumerate_triple_paths(store, instance.question_entities, targets, max_hops)
    relation_paths = sorted({p.relations for p in triple_paths})
    return relation_paths, triple_paths


def _generate_with_retries(gateway: Gateway, prompt: str, params: GenParams, config: BuildConfig) -> str:
    last: GatewayError | None = None
    for attempt in range(config.max_retries + 1):
        if attempt and config.retry_backoff_s:
            time.sleep(config.retry_backoff_s * 2 ** (attempt - 1))
        try:
            return gateway.generate(prompt, params).text
        except GatewayError as exc:
            last = exc
    assert last is not None
    raise last


def _instance_records(
    instance: QAInstance, store: KGStore, gateway: Gateway, config: BuildConfig
) -> tuple[list[SupervisionRecord], list[dict]]:
    records: list[SupervisionRecord] = []
    failures: list[dict] = []

    relation_paths, triple_paths = gold_paths(store, instance, config.max_hops)
    rel_prompt = render_relation_prompt(instance.question)
    for rp in relation_paths:
        records.append(
            SupervisionRecord(
                instance.id, TASK_RELATION, rel_prompt, pathmod.render_relation_path(rp), (KG_SOURCE,), len(rp)
            )
        )
    tri_prompt = render_triple_prompt(instance.question)
    for tp in triple_paths:
        records.append(
            SupervisionRecord(instance.id, TASK_TRIPLE, tri_prompt, tp.render(), (KG_SOURCE,), len(tp))
        )

    annotated = [annotate_path(tp, KG_SOURCE) for tp in triple_paths]
    process_prompt = render_process_prompt(instance.question, instance.answers, annotated)
    for sample_idx in range(config.samples_per_instance):
        params = replace(config.gen_params, seed=config.seed + sample_idx)
        try:
            target = _generate_with_retries(gateway, process_prompt, params, config)
        except GatewayError as exc:
            failures.append({"id": instance.id, "task": TASK_PROCESS, "error": str(exc)})
            continue
        records.append(
            SupervisionRecord(
                instance.id, TASK_PROCESS, process_prompt, target, tuple(KG_SOURCE for _ in annotated), None
            )
        )
    return records, failures


def build_dataset(
    instances: Sequence[QAInstance] | Iterable[QAInstance],
    store: KGStore,
    gateway: Gateway,
    config: BuildConfig | None = None,
) -> tuple[list[SupervisionRecord], list[dict]]:
    """Build all supervision records for the given instances.

    Emits one relation-path record per gold relation path, one triple-path
    record per gold triple path, and ``samples_per_instance`` reasoning
    process records whose targets come raw from the gateway. Generation
    failures (after retries) land in the failure list as
    {"id", "task", "error"} rows instead of fabricated records. Record
    order follows input order regardless of worker scheduling.
    """
    config = config or BuildConfig()
    instances = list(instances)
    ids = [inst.id for inst in instances]
    if len(set(ids)) != len(ids):
        raise ValueError("instance ids must be unique within a dataset")

    def job(instance: QAInstance):
        return _instance_records(instance, store, gateway, config)

    if config.jobs > 1:
        with ThreadPoolExecutor(max_workers=config.jobs) as pool:
            results = list(pool.map(job, instances))
    else:
        results = [job(inst) for inst in instances]

    records: list[SupervisionRecord] = []
    failures: list[dict] = []
    for recs, fails in results:
        records.extend(recs)
        failures.extend(fails)
    return records, failures


def records_by_task(records: Iterable[SupervisionRecord]) -> dict[str, list[SupervisionRecord]]:
    grouped: dict[str, list[SupervisionRecord]] = {TASK_RELATION: [], TASK_TRIPLE: [], TASK_PROCESS: []}
    for record in records:
        grouped[record.task].append(record)
    return grouped
