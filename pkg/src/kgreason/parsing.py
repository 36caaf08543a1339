"""Parser for attribution-tagged reasoning-process text.

The grammar is line-oriented and whitespace-tolerant: steps start at
"Step k:" headers, provenance tags appear in square-bracket groups such as
"[<KG> <EFFECTIVE>]", and the process ends with a "Final Answer:" clause.
Anything that is not a recognizable header, tag group, or final-answer
marker is kept as step text, so arbitrary model output either parses or
raises a typed :class:`ProcessParseError`, never anything else.
"""

from __future__ import annotations

import re
from dataclasses import dataclass
from typing import Sequence

from .kg import normalize_surface

SOURCE_TOKENS = ("KG", "INFERRED")
EFFECT_TOKENS = ("EFFECTIVE", "INEFFECTIVE")
KNOWN_TOKENS = frozenset(SOURCE_TOKENS) | frozenset(EFFECT_TOKENS)

_STEP_RE = re.compile(r"^\s*(?:\*\*\s*)?Step\s+(\d+)\s*(?:\*\*\s*)?:\s*(.*)$", re.IGNORECASE)
_FINAL_RE = re.compile(r"(?:\*\*\s*)?Final Answer\s*(?:\*\*)?\s*:\s*", re.IGNORECASE)
_BANNER_RE = re.compile(r"^\s*(?:\*\*\s*)?Reasoning Process\s*(?:\*\*)?\s*:?\s*$", re.IGNORECASE)
_GROUP_RE = re.compile(r"\[\s*<[^\[\]<>]+>(?:\s*<[^\[\]<>]+>)*\s*\]")
_GROUP_STRIP_RE = re.compile(r"[ \t]*\[\s*<[^\[\]<>]+>(?:\s*<[^\[\]<>]+>)*\s*\]")
_TOKEN_RE = re.compile(r"<([^<>]+)>")
_CITE_RE = re.compile(r"#(\d+)")


class ProcessParseError(ValueError):
    """Reasoning-process text that cannot be parsed into a process."""


class MissingFinalAnswerError(ProcessParseError):
    """No terminal "Final Answer:" clause found."""


class EmptyProcessError(ProcessParseError):
    """Neither steps nor final answers present."""


@dataclass(frozen=True)
class AttributionTag:
    source: str
    effectiveness: str | None = None

    def render(self) -> str:
        if self.effectiveness is None:
            return f"[<{self.source}>]"
        return f"[<{self.source}> <{self.effectiveness}>]"


@dataclass(frozen=True)
class ReasoningStep:
    index: int
    text: str
    tags: tuple[AttributionTag, ...] = ()
    cited_path_ids: tuple[int, ...] = ()


@dataclass(frozen=True)
class ReasoningProcess:
    steps: tuple[ReasoningStep, ...]
    final_answers: tuple[str, ...]
    raw: str


@dataclass(frozen=True)
class TagViolation:
    kind: str  # untagged-step | unknown-token | ineffective-use
    step_index: int | None
    detail: str


def split_answer_list(clause: str) -> list[str]:
    """Split an answer clause on ',', ';' and ' and '; normalize and dedup.

    Items are normalized with the KG surface normalization, surrounding
    quotes and brackets are trimmed, empties dropped, order preserved.
    """
    clause = clause.strip()
    if clause.startswith("[") and clause.endswith("]"):
        clause = clause[1:-1]
    chunks: list[str] = []
    for part in re.split(r"[,;\n]", clause):
        chunks.extend(part.split(" and "))
    answers: list[str] = []
    for chunk in chunks:
        item = chunk.strip().strip("'\"").strip()
        if item.endswith("."):
            item = item[:-1]
        item = normalize_surface(item)
        if item and item not in answers:
            answers.append(item)
    return answers


def _scan_group_tokens(group_text: str) -> list[str]:
    return _TOKEN_RE.findall(group_text)


def _tags_from_line(line: str) -> list[AttributionTag]:
    tags = []
    for group in _GROUP_RE.findall(line):
        tokens = _scan_group_tokens(group)
        source = next((t for t in tokens if t in SOURCE_TOKENS), None)
        if source is None:
            continue
        effect = next((t for t in tokens if t in EFFECT_TOKENS), None)
        tags.append(AttributionTag(source, effect))
    return tags


def _split_blocks(text: str) -> tuple[list[tuple[int, list[str]]], str]:
    """Split raw text into per-step line blocks and the final-answer clause."""
    matches = list(_FINAL_RE.finditer(text))
    if not matches:
        raise MissingFinalAnswerError("no 'Final Answer:' clause found")
    last = matches[-1]
    steps_region, answer_clause = text[: last.start()], text[last.end() :]

    blocks: list[tuple[int, list[str]]] = []
    current: list[str] | None = None
    for line in steps_region.split("\n"):
        header = _STEP_RE.match(line)
        if header:
            current = [header.group(2)]
            blocks.append((int(header.group(1)), current))
        elif current is not None:
            current.append(line)
        elif _BANNER_RE.match(line) or not line.strip():
            continue  # banner or leading blank lines before the first step
    return blocks, answer_clause


def parse_process(text: str) -> ReasoningProcess:
    """Parse reasoning-process text into steps, tags, and final answers.

    Steps keep their literal numbering; tag groups are lifted out of the
    step text into :class:`AttributionTag` records; "#<int>" references are
    collected as cited path ids; the final-answer clause is split into a
    normalized, deduplicated answer list. Untagged steps parse fine (they
    are flagged by :func:`validate_tags`, not here).
    """
    blocks, answer_clause = _split_blocks(text)
    steps = []
    for index, lines in blocks:
        tags: list[AttributionTag] = []
        cited: list[int] = []
        for line in lines:
            tags.extend(_tags_from_line(line))
            cited.extend(int(m) for m in _CITE_RE.findall(line))
        body = "\n".join(_GROUP_STRIP_RE.sub("", line).rstrip() for line in lines).strip()
        steps.append(ReasoningStep(index, body, tuple(tags), tuple(dict.fromkeys(cited))))
    answers = split_answer_list(answer_clause)
    if not steps and not answers:
        raise EmptyProcessError("no steps and no final answers")
    return ReasoningProcess(tuple(steps), tuple(answers), text)


def render_process(proc: ReasoningProcess) -> str:
    """Render a process back to canonical text (tags at end of each step)."""
    lines = ["**Reasoning Process**:"]
    for step in proc.steps:
        rendered = f"Step {step.index}: {step.text}"
        if step.tags:
            rendered += " " + " ".join(tag.render() for tag in step.tags)
        lines.append(rendered)
    lines.append("Final Answer: " + ", ".join(proc.final_answers))
    return "\n".join(lines)


def extract_final_answers(proc: ReasoningProcess) -> list[str]:
    """Normalized, deduplicated final answers in clause order."""
    return list(proc.final_answers)


def validate_tags(proc: ReasoningProcess) -> list[TagViolation]:
    """Report tag hygiene findings; never raises.

    Findings: steps carrying no tag at all, unknown tokens inside bracket
    groups, and the final step citing a path id that was marked
    INEFFECTIVE anywhere in the process.
    """
    violations = []
    for step in proc.steps:
        if not step.tags:
            violations.append(TagViolation("untagged-step", step.index, f"step {step.index} has no attribution tag"))

    blocks, _ = _split_blocks(proc.raw)
    ineffective_ids: set[int] = set()
    for index, lines in blocks:
        for line in lines:
            tokens = [t for group in _GROUP_RE.findall(line) for t in _scan_group_tokens(group)]
            for token in tokens:
                if token not in KNOWN_TOKENS:
                    violations.append(TagViolation("unknown-token", index, f"unknown token <{token}>"))
            if "INEFFECTIVE" in tokens:
                ineffective_ids.update(int(m) for m in _CITE_RE.findall(line))
    if proc.steps:
        final_step = proc.steps[-1]
        for cite in final_step.cited_path_ids:
            if cite in ineffective_ids:
                violations.append(
                    TagViolation(
                        "ineffective-use",
                        final_step.index,
                        f"final step cites #{cite}, which is marked INEFFECTIVE",
                    )
                )
    return violations


def attribution_stats(proc: ReasoningProcess) -> dict[tuple[str, str | None], int]:
    """Tag occurrence counts per (source, effectiveness) cell, zeros included."""
    counts: dict[tuple[str, str | None], int] = {
        (source, effect): 0 for source in SOURCE_TOKENS for effect in (*EFFECT_TOKENS, None)
    }
    for step in proc.steps:
        for tag in step.tags:
            counts[(tag.source, tag.effectiveness)] += 1
    return counts


def process_to_json(proc: ReasoningProcess) -> dict:
    return {
        "steps": [
            {
                "index": s.index,
                "text": s.text,
                "tags": [{"source": t.source, "effectiveness": t.effectiveness} for t in s.tags],
                "cited": list(s.cited_path_ids),
            }
            for s in proc.steps
        ],
        "final_answers": list(proc.final_answers),
    }


def steps_equal(a: Sequence[ReasoningStep], b: Sequence[ReasoningStep]) -> bool:
    return tuple(a) == tuple(b)
