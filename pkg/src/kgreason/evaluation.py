"""QA metrics, loss diagnostics, and the medical LLM-judge protocol."""

from __future__ import annotations

import math
import re
from dataclasses import dataclass, replace
from statistics import mean
from typing import Iterable, Sequence

from .gateway import Gateway, GenParams
from .kg import normalize_surface
from .paths import PathDistribution
from .prompts import render_medical_evaluation_prompt

HITS1_ANY = "any_match"
HITS1_FIRST = "first_only"


class DivergenceError(ValueError):
    """KL divergence undefined: Q puts mass where P is zero."""


def hits_at_1(predicted: Sequence[str], gold: Iterable[str], mode: str = HITS1_ANY) -> int:
    """1 iff a predicted answer matches gold, 0 otherwise.

    ``any_match`` accepts a hit anywhere in the prediction list;
    ``first_only`` only scores the first prediction. Both sides are run
    through the KG surface normalization before comparison.
    """
    gold_set = {normalize_surface(g) for g in gold}
    preds = [normalize_surface(p) for p in predicted]
    if not preds:
        return 0
    if mode == HITS1_ANY:
        return int(any(p in gold_set for p in preds))
    if mode == HITS1_FIRST:
        return int(preds[0] in gold_set)
    raise ValueError(f"unknown hits@1 mode {mode!r}")


def precision_recall_f1(predicted: Sequence[str], gold: Iterable[str]) -> tuple[float, float, float]:
    """Set precision/recall/F1 over normalized, deduplicated predictions."""
    gold_set = {normalize_surface(g) for g in gold}
    if not gold_set:
        raise ValueError("gold answer set must be non-empty")
    pred_set = set()
    for p in predicted:
        pred_set.add(normalize_surface(p))
    pred_set.discard("")
    hit = len(pred_set & gold_set)
    precision = hit / len(pred_set) if pred_set else 0.0
    recall = hit / len(gold_set)
    f1 = 2 * precision * recall / (precision + recall) if precision + recall > 0 else 0.0
    return precision, recall, f1


def kl_divergence(q: PathDistribution, p: PathDistribution, floor: float = 1e-12) -> float:
    """D(Q || P) in nats over Q's support.

    P is floor-smoothed at ``floor`` on Q's support, since model-side
    distributions are beam-truncated. With floor=0 a Q-supported path
    missing from P raises :class:`DivergenceError`.
    """
    total = 0.0
    p_map = p.as_dict()
    for path, q_prob in q.support:
        if q_prob == 0.0:
            continue
        p_prob = max(p_map.get(path, 0.0), floor)
        if p_prob <= 0.0:
            raise DivergenceError(f"Q has mass on {path!r} where P is zero")
        total += q_prob * (math.log(q_prob) - math.log(p_prob))
    return total


def sequence_nll(trace) -> float:
    """Negative sum of the trace's token logprobs (the process supervision loss)."""
    if not trace.tokens:
        raise ValueError("trace has no tokens")
    return -sum(lp for _, lp in trace.tokens)


def total_loss(relation_loss: float, triple_loss: float, process_loss: float) -> float:
    """Sum of the three supervision loss components."""
    for name, value in (("relation", relation_loss), ("triple", triple_loss), ("process", process_loss)):
        if value < 0:
            raise ValueError(f"{name} loss must be >= 0, got {value}")
    return relation_loss + triple_loss + process_loss


@dataclass(frozen=True)
class EvalRow:
    id: str
    hits1: int
    precision: float
    recall: float
    f1: float


@dataclass(frozen=True)
class EvalReport:
    rows: tuple[EvalRow, ...]
    aggregate: dict[str, float]
    count: int

    def to_json(self) -> dict:
        return {
            "count": self.count,
            "aggregate": dict(self.aggregate),
            "per_instance": [
                {"id": r.id, "hits1": r.hits1, "precision": r.precision, "recall": r.recall, "f1": r.f1}
                for r in self.rows
            ],
        }


def evaluate_qa(
    items: Iterable[tuple[str, Sequence[str], Sequence[str]]], hits1_mode: str = HITS1_ANY
) -> EvalReport:
    """Score (id, predicted, gold) items and aggregate by arithmetic mean."""
    rows = []
    for item_id, predicted, gold in items:
        p, r, f1 = precision_recall_f1(predicted, gold)
        rows.append(EvalRow(item_id, hits_at_1(predicted, gold, hits1_mode), p, r, f1))
    if rows:
        aggregate = {
            "hits1": mean(r.hits1 for r in rows),
            "precision": mean(r.precision for r in rows),
            "recall": mean(r.recall for r in rows),
            "f1": mean(r.f1 for r in rows),
        }
    else:
        aggregate = {"hits1": 0.0, "precision": 0.0, "recall": 0.0, "f1": 0.0}
    return EvalReport(tuple(rows), aggregate, len(rows))


MEDICAL_CRITERIA = ("Relevance", "Accuracy", "Completeness", "Clarity", "Conciseness")


class ScoreParseError(ValueError):
    def __init__(self, criterion: str, reason: str):
        super().__init__(f"{criterion}: {reason}")
        self.criterion = criterion


class JudgeError(RuntimeError):
    """All judge runs failed to parse."""

    def __init__(self, raw_outputs: list[str]):
        super().__init__(f"no parseable score breakdown in {len(raw_outputs)} judge runs")
        self.raw_outputs = raw_outputs


@dataclass(frozen=True)
class MedicalScores:
    relevance: float
    accuracy: float
    completeness: float
    clarity: float
    conciseness: float
    average: float
    runs: int = 1

    def criteria(self) -> dict[str, float]:
        return {
            "Relevance": self.relevance,
            "Accuracy": self.accuracy,
            "Completeness": self.completeness,
            "Clarity": self.clarity,
            "Conciseness": self.conciseness,
        }

    def to_json(self) -> dict:
        data = {k.lower(): v for k, v in self.criteria().items()}
        data["average"] = self.average
        data["runs"] = self.runs
        return data


def _scores_from_values(values: dict[str, float], runs: int) -> MedicalScores:
    return MedicalScores(
        relevance=values["Relevance"],
        accuracy=values["Accuracy"],
        completeness=values["Completeness"],
        clarity=values["Clarity"],
        conciseness=values["Conciseness"],
        average=mean(values[c] for c in MEDICAL_CRITERIA),
        runs=runs,
    )


def parse_score_breakdown(text: str) -> MedicalScores:
    """Extract the five criterion scores from a judge reply.

    Criterion lines look like "- **Relevance**: 0.8 (Explanation: ...)" and
    may appear in any order; a missing criterion or an out-of-range value
    raises :class:`ScoreParseError` naming the criterion.
    """
    values: dict[str, float] = {}
    for criterion in MEDICAL_CRITERIA:
        match = re.search(rf"\*\*{criterion}\*\*\s*:\s*([0-9]*\.?[0-9]+)", text, re.IGNORECASE)
        if not match:
            raise ScoreParseError(criterion, "criterion line not found")
        value = float(match.group(1))
        if not 0.0 <= value <= 1.0:
            raise ScoreParseError(criterion, f"score {value} outside [0, 1]")
        values[criterion] = value
    return _scores_from_values(values, runs=1)


def judge_medical(
    reference: str,
    answer: str,
    gateway: Gateway,
    runs: int = 3,
    params: GenParams | None = None,
) -> MedicalScores:
    """Score an answer against a reference with an LLM judge, averaged.

    The evaluation prompt is rendered once and sent ``runs`` times (each run
    gets a distinct derived seed so stochastic backends vary); parsed
    breakdowns are averaged per criterion. Unparseable runs are dropped;
    when every run fails a :class:`JudgeError` carries the raw outputs.
    """
    if runs < 1:
        raise ValueError("runs must be >= 1")
    params = params or GenParams(max_tokens=256)
    prompt = render_medical_evaluation_prompt(reference, answer)
    parsed: list[MedicalScores] = []
    raw_outputs: list[str] = []
    for run in range(runs):
        run_params = replace(params, seed=(params.seed or 0) + run)
        text = gateway.generate(prompt, run_params).text
        raw_outputs.append(text)
        try:
            parsed.append(parse_score_breakdown(text))
        except ScoreParseError:
            continue
    if not parsed:
        raise JudgeError(raw_outputs)
    values = {c: mean(s.criteria()[c] for s in parsed) for c in MEDICAL_CRITERIA}
    return _scores_from_values(values, runs=len(parsed))
