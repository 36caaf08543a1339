"""Knowledge-graph-constrained reasoning toolchain.

Builds multi-task supervision datasets from symbolic KG paths, executes and
links reasoning paths, parses attribution-tagged reasoning processes, and
evaluates answers and reasoning-trajectory quality.
"""

from .evaluation import (
    EvalReport,
    MedicalScores,
    evaluate_qa,
    hits_at_1,
    judge_medical,
    kl_divergence,
    parse_score_breakdown,
    precision_recall_f1,
    sequence_nll,
    total_loss,
)
from .gateway import GenerationTrace, GenParams, Gateway, MockGateway, ReplayCache
from .kg import KGStore, Triple, load_kg, load_kg_file, normalize_surface
from .parsing import (
    AttributionTag,
    ReasoningProcess,
    ReasoningStep,
    attribution_stats,
    extract_final_answers,
    parse_process,
    render_process,
    validate_tags,
)
from .paths import (
    PathDistribution,
    ReasoningPath,
    empirical_distribution,
    enumerate_relation_paths,
    enumerate_triple_paths,
    execute_relation_path,
    link_triples,
    sample_paths,
    top_k_paths,
)
from .supervision import QAInstance, SupervisionRecord, annotate_path, build_dataset
from .trajectory import (
    AnswerState,
    StageMetrics,
    aggregate_runs,
    answer_state,
    consistency,
    emit_stage_csv,
    segment_stages,
    stage_perplexity,
    uncertainty,
)

__version__ = "0.1.0"

__all__ = [
    "AnswerState",
    "AttributionTag",
    "EvalReport",
    "Gateway",
    "GenParams",
    "GenerationTrace",
    "KGStore",
    "MedicalScores",
    "MockGateway",
    "PathDistribution",
    "QAInstance",
    "ReasoningPath",
    "ReasoningProcess",
    "ReasoningStep",
    "ReplayCache",
    "StageMetrics",
    "SupervisionRecord",
    "Triple",
    "aggregate_runs",
    "annotate_path",
    "answer_state",
    "attribution_stats",
    "build_dataset",
    "consistency",
    "emit_stage_csv",
    "empirical_distribution",
    "enumerate_relation_paths",
    "enumerate_triple_paths",
    "evaluate_qa",
    "execute_relation_path",
    "extract_final_answers",
    "hits_at_1",
    "judge_medical",
    "kl_divergence",
    "link_triples",
    "load_kg",
    "load_kg_file",
    "normalize_surface",
    "parse_process",
    "parse_score_breakdown",
    "precision_recall_f1",
    "render_process",
    "sample_paths",
    "segment_stages",
    "sequence_nll",
    "stage_perplexity",
    "top_k_paths",
    "total_loss",
    "uncertainty",
    "validate_tags",
]
