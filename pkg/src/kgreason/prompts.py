"""Verbatim prompt templates and their renderers.

Rendering is pure string substitution: every render is byte-deterministic
and the templates are pinned by golden-file tests. Slot values are inserted
with plain replacement, so braces inside questions or answers are safe.
"""

from __future__ import annotations

from typing import Sequence

KG_TOKEN = "<KG>"
INFERRED_TOKEN = "<INFERRED>"
EFFECTIVE_TOKEN = "<EFFECTIVE>"
INEFFECTIVE_TOKEN = "<INEFFECTIVE>"

PROCESS_CONSTRUCTION_TEMPLATE = """\
### Question:
{question}

### Answer:
{answer}

### Potential useful reasoning path:
The following reasoning paths are provided to help you understand relationships among entities and derive an answer:
{reasoning_paths}

### Task Instructions:
1. Goal:
- Use the given reasoning paths and answer to generate a detailed reasoning process for the original question, explicitly indicating the source of knowledge (e.g., from KG or inferred by LLMs).
- Enhance the reasoning process by including special tokens to label each path's source and effectiveness:
  - <KG>: Knowledge directly from the knowledge graph.
  - <INFERRED>: Knowledge inferred by LLMs without explicit KG support.
  - <EFFECTIVE> / <INEFFECTIVE>: Whether the path effectively contributes to the final answer.

2. Specific Requirements:
- Path Selection and Labeling:
  - Filter out unnecessary paths: Only select paths directly relevant to the question.
  - Ignore paths marked as <INEFFECTIVE> when getting the final answer.
  - Label each selected path using the special tokens.
- Dynamic Knowledge Utilization:
  - If no KG path applies, allow LLMs to infer logical connections using <INFERRED>, clearly marked.

3. Output Format:
**Reasoning Process**: [Output reasoning process here]

### Example:

[Input]
**Question**: Which film directed by Christopher Nolan starred Leonardo DiCaprio and was released in 2010?
**Answer**: Inception
**Retrieved Triples**:
1. Leonardo DiCaprio → film.actor.film → m.12345
2. m.12345 → film.director → Christopher Nolan
...
19. m.00000 → film.release_date → 2017

[Output]
**Reasoning Process**:
Step 1: Identify film starring Leonardo DiCaprio.
- Relevant Triple: #1 [<KG> <EFFECTIVE>]
- Note: Triples #10/#13 [<KG> <INEFFECTIVE>]
Step 2: Directed by Christopher Nolan: #2 [<KG> <EFFECTIVE>]
...
Final Answer: Inception
"""

RELATION_PATH_TEMPLATE = """\
Please generate a valid reasoning relation path that can be helpful for answering the following question.
**Question**: {question}
"""

TRIPLE_PATH_TEMPLATE = """\
Please generate a valid reasoning triple path that can be helpful for answering the following question.
**Question**: {question}
"""

INFERENCE_NO_PATH_TEMPLATE = """\
Please answer the following questions. Please keep the answer as simple as possible and return all the possible answers as a list.
**Question**: {question}
"""

INFERENCE_WITH_PATHS_TEMPLATE = """\
Based on the reasoning paths, please answer the given question. The paths with [<KG>] are from the real world **Knowledge Graph** (more reliable) and the paths with [<INFERRED>] are your predictions. You should recognize useful reasoning paths from **Potential Useful Reasoning Paths**. Please generate both the reasoning process and answer. Please keep the answer as simple as possible and return all the possible answers as a list.

**Potential Useful Reasoning Paths**: {reasoning_paths}
**Question**: {question}
"""

MEDICAL_EVALUATION_TEMPLATE = """\
Reference Information: {reference}

Answer to Score: {answer}

Task:
Evaluate the given answer based on the provided reference information using the following criteria. Assign a score between 0 and 1 (inclusive) for each criterion, in increments of 0.1. A score of 1 means the answer fully meets the criterion, while a score of 0 means the answer fails to meet the criterion at all.

### Evaluation Criteria:

1. **Relevance** (Score: 0-1):
   This criterion assesses how well the answer aligns with the reference information, addressing the symptoms, diagnosis, and treatments mentioned. The answer should directly respond to the medical context and conditions outlined in the reference. Answers that focus on the core issues presented, without deviating into irrelevant areas, should score higher.

2. **Accuracy** (Score: 0-1):
   The accuracy score reflects how correctly the answer represents the facts outlined in the reference. This includes correct medical terminology, diagnosis, and treatment recommendations. An answer should avoid introducing false or unsupported information while accurately reflecting the key aspects of the reference, including the medical procedures and conditions described.

3. **Completeness** (Score: 0-1):
   Completeness is assessed based on how thoroughly the answer covers the key points mentioned in the reference, including diagnostic procedures, symptoms, and treatment options. A complete answer should address all aspects of the medical condition mentioned in the reference, offering a full response to the query with relevant details. Missing important diagnostic tests or treatment steps will reduce the score.

4. **Clarity** (Score: 0-1):
   This criterion evaluates the clarity and readability of the answer. A high score is awarded to responses that are well-structured, logically coherent, and easily understood. An answer that communicates its reasoning in a clear and concise manner without ambiguity or unnecessary complexity will score higher.

5. **Conciseness** (Score: 0-1):
   This criterion evaluates how succinctly the answer conveys necessary information. Answers should avoid redundancy and irrelevant details but should not be penalized for adding depth and reasoning to the response. A longer, well-reasoned response that covers all necessary aspects of the reference will be rewarded, provided it does not become excessively verbose.

### Response Format:
Provide the evaluation results in the following format:

**Score Breakdown:**

- **Relevance**: X.X (Explanation: [Provide brief reasoning for the score based on how well the answer aligns with the reference information and medical context])

- **Accuracy**: X.X (Explanation: [Provide brief reasoning for the score based on the accuracy and consistency of the answer with the reference])

- **Completeness**: X.X (Explanation: [Provide brief reasoning for the score based on the coverage of key points in the reference information])

- **Clarity**: X.X (Explanation: [Provide brief reasoning for the score based on how clearly the answer is expressed])

- **Conciseness**: X.X (Explanation: [Provide brief reasoning for the score based on how focused and concise the answer is])
"""


def _fill(template: str, **slots: str) -> str:
    out = template
    for name, value in slots.items():
        out = out.replace("{" + name + "}", value)
    return out


def render_relation_prompt(question: str) -> str:
    return _fill(RELATION_PATH_TEMPLATE, question=question)


def render_triple_prompt(question: str) -> str:
    return _fill(TRIPLE_PATH_TEMPLATE, question=question)


def render_process_prompt(question: str, answers: Sequence[str], annotated_paths: Sequence[str]) -> str:
    """Instantiate the reasoning-process construction template.

    ``annotated_paths`` are already-rendered path strings carrying their
    provenance suffix (see :func:`kgreason.supervision.annotate_path`); they
    are joined one per line, an empty sequence leaves the section empty.
    """
    if not answers:
        raise ValueError("answers must be non-empty")
    return _fill(
        PROCESS_CONSTRUCTION_TEMPLATE,
        question=question,
        answer=", ".join(answers),
        reasoning_paths="\n".join(annotated_paths),
    )


def render_inference_prompt(question: str, annotated_paths: Sequence[str] | None = None) -> str:
    """No-path prompt when ``annotated_paths`` is None, path-informed otherwise."""
    if annotated_paths is None:
        return _fill(INFERENCE_NO_PATH_TEMPLATE, question=question)
    return _fill(
        INFERENCE_WITH_PATHS_TEMPLATE,
        question=question,
        reasoning_paths="\n".join(annotated_paths),
    )


def render_medical_evaluation_prompt(reference: str, answer: str) -> str:
    return _fill(MEDICAL_EVALUATION_TEMPLATE, reference=reference, answer=answer)
