"""Stage segmentation and reasoning-trajectory metrics over generation traces."""

from __future__ import annotations

import math
from dataclasses import dataclass
from pathlib import Path
from statistics import mean, median, pstdev
from typing import Sequence

from .gateway import Gateway, GenerationTrace

METRIC_NAMES = ("consistency", "perplexity", "uncertainty")  # row order in reports

DEFAULT_STAGES = 5


@dataclass(frozen=True)
class StageSlice:
    stage_index: int
    begin: int
    end: int
    text: str

    def __len__(self) -> int:
        return self.end - self.begin


def segment_stages(trace: GenerationTrace, n: int = DEFAULT_STAGES, mode: str = "tokens") -> list[StageSlice]:
    """Partition the trace into n contiguous token spans of near-equal size.

    In "tokens" mode sizes differ by at most one token, with earlier stages
    taking the remainder. In "chars" mode the cut points aim at equal shares
    of the rendered text instead, snapped to token boundaries. Spans cover
    the trace exactly either way; traces shorter than n leave the trailing
    stages empty.
    """
    if n < 1:
        raise ValueError("stage count must be >= 1")
    total = len(trace.tokens)
    if total == 0:
        raise ValueError("cannot segment an empty trace")
    if mode == "tokens":
        base, rem = divmod(total, n)
        ends = []
        end = 0
        for stage in range(n):
            end += base + (1 if stage < rem else 0)
            ends.append(end)
    elif mode == "chars":
        total_chars = sum(len(tok) for tok, _ in trace.tokens)
        ends = []
        token, consumed = 0, 0
        for stage in range(n):
            target = round(total_chars * (stage + 1) / n)
            while token < total and consumed < target:
                consumed += len(trace.tokens[token][0])
                token += 1
            ends.append(token)
        ends[-1] = total
    else:
        raise ValueError(f"unknown segmentation mode {mode!r}")
    slices = []
    begin = 0
    for stage, end in enumerate(ends):
        text = "".join(tok for tok, _ in trace.tokens[begin:end])
        slices.append(StageSlice(stage, begin, end, text))
        begin = end
    return slices


def softmax(scores: Sequence[float]) -> list[float]:
    """Shift-invariant softmax."""
    if not scores:
        raise ValueError("no scores to normalize")
    top = max(scores)
    exps = [math.exp(s - top) for s in scores]
    total = sum(exps)
    return [e / total for e in exps]


@dataclass(frozen=True)
class AnswerState:
    """Probability distribution over answer candidates at one reasoning point."""

    candidates: tuple[str, ...]
    probabilities: tuple[float, ...]

    def __post_init__(self):
        if not self.candidates:
            raise ValueError("answer state needs at least one candidate")
        if len(self.candidates) != len(self.probabilities):
            raise ValueError("candidates and probabilities differ in length")
        if any(p < 0 for p in self.probabilities):
            raise ValueError("negative probability")
        if abs(sum(self.probabilities) - 1.0) > 1e-9:
            raise ValueError(f"probabilities sum to {sum(self.probabilities)}")

    def best_index(self) -> int:
        """Index of the most probable candidate; ties go to the lowest index."""
        best = 0
        for i, p in enumerate(self.probabilities):
            if p > self.probabilities[best]:
                best = i
        return best


def answer_state(thought_prefix: str, candidates: Sequence[str], gateway: Gateway) -> AnswerState:
    """Distribution over candidates given a thought prefix.

    Each candidate's weight is exp(mean token logprob of the candidate
    continuation), i.e. exp(-NLL/length), softmax-normalized. Candidates
    are deduplicated preserving order.
    """
    distinct = list(dict.fromkeys(candidates))
    if not distinct:
        raise ValueError("candidates must be non-empty")
    scores = []
    for candidate in distinct:
        total, tokens = gateway.score_sequence(thought_prefix, candidate)
        if not tokens:
            raise ValueError(f"candidate {candidate!r} yields no tokens to score")
        scores.append(total / len(tokens))
    return AnswerState(tuple(distinct), tuple(softmax(scores)))


def consistency(state: AnswerState, final_state: AnswerState) -> int:
    """1 iff the leading candidate matches the final state's leading candidate."""
    if state.candidates != final_state.candidates:
        raise ValueError("states must share one candidate list")
    return int(state.best_index() == final_state.best_index())


def uncertainty(state: AnswerState) -> float:
    """Shannon entropy of the state in nats, with 0*log(0) taken as 0."""
    return -sum(p * math.log(p) for p in state.probabilities if p > 0)


def stage_perplexity(trace: GenerationTrace, stage: StageSlice) -> float:
    """exp of the mean token NLL over the slice; >= 1 for proper logprobs."""
    tokens = trace.tokens[stage.begin : stage.end]
    if not tokens:
        raise ValueError(f"stage {stage.stage_index} is empty")
    nll = -sum(lp for _, lp in tokens)
    return math.exp(nll / len(tokens))


@dataclass(frozen=True)
class StageMetrics:
    """Per-stage metric values for one inference run; None marks a missing stage."""

    consistency: tuple[int | None, ...]
    uncertainty: tuple[float | None, ...]
    perplexity: tuple[float | None, ...]

    def __post_init__(self):
        if not (len(self.consistency) == len(self.uncertainty) == len(self.perplexity)):
            raise ValueError("metric tuples must share one stage count")

    @property
    def n_stages(self) -> int:
        return len(self.consistency)


def run_stage_metrics(
    trace: GenerationTrace,
    candidates: Sequence[str],
    gateway: Gateway,
    n_stages: int = DEFAULT_STAGES,
    context: str = "",
    mode: str = "tokens",
) -> StageMetrics:
    """All three trajectory metrics for a single run.

    The answer state at stage i conditions on ``context`` plus the
    cumulative trace text up to the end of stage i; the final stage's state
    is the reference for consistency. Stages with no tokens, or metrics
    whose candidate set is empty, come back as None.
    """
    slices = segment_stages(trace, n_stages, mode)
    cons: list[int | None] = [None] * n_stages
    unc: list[float | None] = [None] * n_stages
    ppl: list[float | None] = [None] * n_stages

    for s in slices:
        if len(s) > 0:
            ppl[s.stage_index] = stage_perplexity(trace, s)

    distinct = list(dict.fromkeys(candidates))
    if distinct:
        states: dict[int, AnswerState] = {}
        for s in slices:
            if len(s) == 0:
                continue
            prefix = context + "".join(tok for tok, _ in trace.tokens[: s.end])
            states[s.stage_index] = answer_state(prefix, distinct, gateway)
        if states:
            final_state = states[max(states)]
            for idx, state in states.items():
                cons[idx] = consistency(state, final_state)
                unc[idx] = uncertainty(state)
    return StageMetrics(tuple(cons), tuple(unc), tuple(ppl))


@dataclass(frozen=True)
class StageAggregate:
    stage: int
    metric: str
    mean: float | None
    std: float | None
    median: float | None
    n: int


@dataclass(frozen=True)
class TrajectoryReport:
    n_stages: int
    rows: tuple[StageAggregate, ...]

    def to_json(self) -> dict:
        return {
            "n_stages": self.n_stages,
            "rows": [
                {"stage": r.stage, "metric": r.metric, "mean": r.mean, "std": r.std, "median": r.median, "n": r.n}
                for r in self.rows
            ],
        }


def aggregate_runs(runs: Sequence[StageMetrics]) -> TrajectoryReport:
    """Pool per-run stage metrics into per-stage aggregates.

    Mean and population standard deviation for every metric plus the median
    (the protocol's headline statistic for perplexity); missing stages are
    excluded and the per-cell sample count is recorded.
    """
    if not runs:
        raise ValueError("no runs to aggregate")
    n_stages = runs[0].n_stages
    if any(r.n_stages != n_stages for r in runs):
        raise ValueError("all runs must use the same stage count")
    rows: list[StageAggregate] = []
    for stage in range(n_stages):
        for metric in METRIC_NAMES:
            values = [getattr(run, metric)[stage] for run in runs]
            values = [v for v in values if v is not None]
            if values:
                rows.append(
                    StageAggregate(stage, metric, mean(values), pstdev(values), median(values), len(values))
                )
            else:
                rows.append(StageAggregate(stage, metric, None, None, None, 0))
    return TrajectoryReport(n_stages, tuple(rows))


def emit_stage_csv(report: TrajectoryReport, destination) -> int:
    """Write the report as CSV; returns the byte count.

    Header is "stage,metric,mean,std,median,n"; rows are ordered by stage
    then metric name; floats use repr so the file re-parses exactly.
    ``destination`` may be a path or a text file object.
    """

    def fmt(value: float | None) -> str:
        return "" if value is None else repr(value)

    lines = ["stage,metric,mean,std,median,n"]
    for row in report.rows:
        lines.append(f"{row.stage},{row.metric},{fmt(row.mean)},{fmt(row.std)},{fmt(row.median)},{row.n}")
    text = "\n".join(lines) + "\n"
    if hasattr(destination, "write"):
        destination.write(text)
        return len(text.encode("utf-8"))
    from .io_utils import atomic_write_text

    return atomic_write_text(Path(destination), text)
