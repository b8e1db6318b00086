"""Dataset-construction pipelines.

Three sources feed the corpus: forum dumps (near-duplicate questions merged
by ROUGE-1, answers kept only when accepted or well-upvoted, then rewritten
into a "detailed, professional and friendly" style), product manuals (token-
budgeted segments through a three-stage prompt chain, with retrieval labels
annotated from a fine-grained vector index), and simulated instances
(few-shot question generation per tool with a multi-tool-fraction
constraint, tool-loop answer generation, and a polishing pass).
"""

from __future__ import annotations

import json
import logging
import re
from collections import Counter
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Callable, Sequence

from . import templates
from .agent import (
    CotTrace,
    SimulatedInstance,
    TERMINATED_FINAL,
    ToolKind,
    ToolPool,
    ToolSpec,
    default_instance,
    default_tool_pool,
    format_trace,
    load_tool_pool,
    run_agent_loop,
)
from .corpus import (
    Dataset,
    Document,
    QAPair,
    QuestionCategory,
    ToolCall,
    save_dataset,
    validate_record,
)
from .errors import ConstraintError, GenerationError, ScriptExhaustedError
from .gateway import BackendConfig, complete, user_request
from .retrieval import TrigramEmbedder, VectorIndex, build_index, retrieve, segment_text

logger = logging.getLogger(__name__)

DEFAULT_DEDUP_THRESHOLD = 0.8
DEFAULT_UPVOTE_CUTOFF = 5
DEFAULT_TOKEN_BUDGET = 8000
DEFAULT_LABEL_THRESHOLD = 0.8
DEFAULT_MULTI_TOOL_MIN = 0.5

STYLE_PHRASE = "detailed, professional and friendly"


# ---------------------------------------------------------------------------
# Forum filtering and rewriting


@dataclass(frozen=True)
class ForumAnswer:
    text: str
    upvotes: int = 0
    accepted: bool = False


@dataclass
class RawForumItem:
    question: str
    answers: list[ForumAnswer] = field(default_factory=list)


def rouge1(a: str, b: str) -> float:
    """Unigram-overlap F1 between two texts.

    Tokens are lowercase whitespace splits; the overlap is multiset
    intersection. Returns 0 when either text has no tokens.
    """
    tokens_a = a.lower().split()
    tokens_b = b.lower().split()
    if not tokens_a or not tokens_b:
        return 0.0
    overlap = sum((Counter(tokens_a) & Counter(tokens_b)).values())
    precision = overlap / len(tokens_a)
    recall = overlap / len(tokens_b)
    if precision + recall == 0:
        return 0.0
    return 2 * precision * recall / (precision + recall)


def _qualifies(answer: ForumAnswer, upvote_cutoff: int) -> bool:
    return answer.accepted or answer.upvotes >= upvote_cutoff


@dataclass
class DedupResult:
    """Outcome of the greedy dedup pass, with an auditable merge log."""

    kept: list[RawForumItem]
    # (merged item index, representative item index) pairs, in input order.
    merges: list[tuple[int, int]]
    # Representatives dropped because no pooled answer was accepted/upvoted.
    dropped_no_answer: list[int]


def dedup_forum_items(
    items: Sequence[RawForumItem],
    threshold: float = DEFAULT_DEDUP_THRESHOLD,
    upvote_cutoff: int = DEFAULT_UPVOTE_CUTOFF,
) -> DedupResult:
    """Greedy near-duplicate merge in input order.

    An item whose question scores >= threshold against a retained
    representative merges into it: the representative (the earliest item)
    keeps its question, and the merged item's accepted/high-upvote answers
    are pooled onto it. Representatives whose pooled answers contain no
    accepted or high-upvote answer are dropped at the end.
    """
    if not 0 < threshold <= 1:
        raise ValueError("threshold must be in (0, 1]")
    reps: list[tuple[int, RawForumItem]] = []
    merges: list[tuple[int, int]] = []
    for index, item in enumerate(items):
        target = None
        for rep_index, rep in reps:
            if rouge1(item.question, rep.question) >= threshold:
                target = (rep_index, rep)
                break
        if target is None:
            reps.append((index, RawForumItem(question=item.question, answers=list(item.answers))))
        else:
            rep_index, rep = target
            merges.append((index, rep_index))
            rep.answers.extend(a for a in item.answers if _qualifies(a, upvote_cutoff))
    kept: list[RawForumItem] = []
    dropped: list[int] = []
    for rep_index, rep in reps:
        if any(_qualifies(a, upvote_cutoff) for a in rep.answers):
            kept.append(rep)
        else:
            dropped.append(rep_index)
    return DedupResult(kept=kept, merges=merges, dropped_no_answer=dropped)


def filter_dedup(
    items: Sequence[RawForumItem],
    threshold: float = DEFAULT_DEDUP_THRESHOLD,
    upvote_cutoff: int = DEFAULT_UPVOTE_CUTOFF,
) -> list[RawForumItem]:
    """Deduplicated items whose pooled answers include an accepted or high-upvote answer."""
    return dedup_forum_items(items, threshold, upvote_cutoff).kept


def rewrite_answer(backend: BackendConfig, question: str, raw_answer: str) -> str:
    """Rewrite a raw forum answer into the target style via the backend."""
    if not raw_answer:
        raise ValueError("raw answer must be non-empty")
    prompt = templates.substitute(
        templates.load_prompt("rewrite_answer"), {"Q": question, "A": raw_answer}
    )
    return complete(backend, user_request(prompt))


def load_forum_dump(path: str | Path) -> list[RawForumItem]:
    """Read a raw forum dump: JSONL of {question, answers: [{text, upvotes, accepted}]}."""
    items = []
    with Path(path).open("r", encoding="utf-8") as fh:
        for line in fh:
            line = line.strip()
            if not line:
                continue
            obj = json.loads(line)
            items.append(
                RawForumItem(
                    question=obj["question"],
                    answers=[
                        ForumAnswer(
                            text=a["text"],
                            upvotes=int(a.get("upvotes", 0)),
                            accepted=bool(a.get("accepted", False)),
                        )
                        for a in obj.get("answers", [])
                    ],
                )
            )
    return items


# ---------------------------------------------------------------------------
# Product manuals: segmentation, prompt chain, retrieval labels


def whitespace_token_count(text: str) -> int:
    return len(text.split())


def segment_manual(
    doc: Document,
    token_budget: int = DEFAULT_TOKEN_BUDGET,
    counter: Callable[[str], int] = whitespace_token_count,
) -> list[str]:
    """Split a manual into segments of whole paragraphs within a token budget.

    Paragraphs (blank-line separated) are packed greedily; a single paragraph
    exceeding the budget becomes its own segment with a warning. The token
    count is approximate by design (pluggable ``counter``).
    """
    if token_budget <= 0:
        raise ValueError("token_budget must be positive")
    paragraphs = [p for p in re.split(r"\n\s*\n", doc.body) if p.strip()]
    segments: list[str] = []
    current: list[str] = []
    current_tokens = 0
    for paragraph in paragraphs:
        tokens = counter(paragraph)
        if tokens > token_budget:
            if current:
                segments.append("\n\n".join(current))
                current, current_tokens = [], 0
            logger.warning(
                "paragraph of ~%d tokens exceeds the %d-token budget; emitting it whole",
                tokens,
                token_budget,
            )
            segments.append(paragraph)
            continue
        if current and current_tokens + tokens > token_budget:
            segments.append("\n\n".join(current))
            current, current_tokens = [], 0
        current.append(paragraph)
        current_tokens += tokens
    if current:
        segments.append("\n\n".join(current))
    return segments


_BULLET_RE = re.compile(r"^(?:[-*]\s+|\d+[.)]\s+)(.*\S)\s*$")


def _bullet_lines(text: str) -> list[str]:
    items = []
    for line in text.splitlines():
        match = _BULLET_RE.match(line.strip())
        if match:
            items.append(match.group(1))
    return items


@dataclass(frozen=True)
class StageLog:
    stage: str
    prompt: str
    output: str


@dataclass
class ProductQaBatch:
    """Generated (question, answer) pairs plus the full stage log for replay."""

    pairs: list[tuple[str, str]]
    stages: list[StageLog]


def generate_product_qa(backend: BackendConfig, segment: str, n_max: int) -> ProductQaBatch:
    """Three chained completions over one manual segment.

    Stage 1 summarizes key points, stage 2 writes one question per key point,
    stage 3 writes one answer per question; each stage's raw output is
    embedded verbatim in the next prompt, and all prompts/outputs are logged.
    """
    if not segment:
        raise ValueError("segment must be non-empty")
    if n_max < 1:
        raise ValueError("n_max must be >= 1")
    stages: list[StageLog] = []

    def run_stage(name: str, prompt_name: str, bindings: dict) -> str:
        prompt = templates.substitute(templates.load_prompt(prompt_name), bindings)
        output = complete(backend, user_request(prompt))
        stages.append(StageLog(stage=name, prompt=prompt, output=output))
        return output

    key_points_raw = run_stage("key_points", "product_qa_keypoints", {"SEGMENT": segment})
    if not _bullet_lines(key_points_raw):
        raise GenerationError("stage 1 (key points) produced no parseable items")
    questions_raw = run_stage(
        "questions", "product_qa_questions", {"SEGMENT": segment, "KEY_POINTS": key_points_raw}
    )
    questions = _bullet_lines(questions_raw)
    if not questions:
        raise GenerationError("stage 2 (questions) produced no parseable items")
    answers_raw = run_stage(
        "answers", "product_qa_answers", {"SEGMENT": segment, "QUESTIONS": questions_raw}
    )
    answers = _bullet_lines(answers_raw)
    if not answers:
        raise GenerationError("stage 3 (answers) produced no parseable items")
    pairs = list(zip(questions, answers))[:n_max]
    return ProductQaBatch(pairs=pairs, stages=stages)


@dataclass
class AnnotatedBatch:
    records: list[QAPair]
    # Pairs whose question and answer both matched nothing above threshold.
    unlabeled: list[tuple[str, str]]


def annotate_retrieval_labels(
    pairs: Sequence[tuple[str, str]],
    index: VectorIndex,
    threshold: float = DEFAULT_LABEL_THRESHOLD,
    *,
    id_prefix: str = "prod",
    lang: str = "en",
    source: str = "",
) -> AnnotatedBatch:
    """Attach retrieval labels to generated product pairs.

    Each pair queries the fine-grained index twice — with the question and
    with the answer — and the union of chunk ids scoring >= threshold becomes
    the record's retrieval labels. Pairs with an empty union are flagged
    unlabeled and not turned into records.
    """
    records: list[QAPair] = []
    unlabeled: list[tuple[str, str]] = []
    for i, (question, answer) in enumerate(pairs):
        labels: set[str] = set()
        for query in (question, answer):
            for hit in retrieve(index, query, k=max(len(index), 1), threshold=threshold):
                labels.add(hit.chunk_id)
        if not labels:
            logger.warning("pair %d (%r) matched no chunk above %.2f", i, question[:40], threshold)
            unlabeled.append((question, answer))
            continue
        records.append(
            QAPair(
                id=f"{id_prefix}-{i:04d}",
                lang=lang,
                category=QuestionCategory.PRODUCT,
                question=question,
                reference_answer=answer,
                source=source,
                retrieval_labels=sorted(labels),
            )
        )
    return AnnotatedBatch(records=records, unlabeled=unlabeled)


# ---------------------------------------------------------------------------
# Instance questions, answers and polishing


@dataclass(frozen=True)
class GeneratedQuestion:
    question: str
    tools: tuple[str, ...]

    @property
    def multi_tool(self) -> bool:
        return len(self.tools) >= 2


_TOOL_TAG_RE = re.compile(r"^(?P<q>.*?)\s*\[(?P<tools>[^\[\]]+)\]\s*$")


def _parse_generated_questions(text: str, default_tool: str) -> list[GeneratedQuestion]:
    out = []
    for line in _bullet_lines(text):
        match = _TOOL_TAG_RE.match(line)
        if match:
            tools = tuple(t.strip() for t in match.group("tools").split(",") if t.strip())
            out.append(GeneratedQuestion(question=match.group("q").strip(), tools=tools))
        else:
            out.append(GeneratedQuestion(question=line, tools=(default_tool,)))
    return out


def generate_instance_questions(
    backend: BackendConfig,
    tool: ToolSpec,
    few_shots: Sequence[str],
    n: int,
    multi_tool_min: float = DEFAULT_MULTI_TOOL_MIN,
    max_rounds: int = 2,
) -> list[GeneratedQuestion]:
    """Generate up to ``n`` questions for one tool, keeping the batch's
    multi-tool fraction at or above ``multi_tool_min``.

    Excess single-tool questions are dropped (never multi-tool ones). If the
    backend cannot produce any multi-tool question within ``max_rounds``
    prompts, a ConstraintError carries the partial batch.
    """
    if n < 1:
        raise ValueError("n must be >= 1")
    if not 0 <= multi_tool_min <= 1:
        raise ValueError("multi_tool_min must be in [0, 1]")
    prompt = templates.substitute(
        templates.load_prompt("instance_questions"),
        {
            "TOOL": f"{tool.name}: {tool.description} Input: {tool.input_format}",
            "FEW_SHOTS": "\n".join(f"- {s}" for s in few_shots),
            "N": str(n),
        },
    )
    collected: list[GeneratedQuestion] = []

    def select() -> list[GeneratedQuestion] | None:
        multi = [g for g in collected if g.multi_tool]
        single = [g for g in collected if not g.multi_tool]
        if multi_tool_min > 0 and not multi:
            return None
        m_take = min(len(multi), n)
        if multi_tool_min > 0:
            single_cap = int(m_take * (1 - multi_tool_min) / multi_tool_min + 1e-9)
        else:
            single_cap = n
        s_take = min(len(single), n - m_take, single_cap)
        chosen_multi = set(id(g) for g in multi[:m_take])
        chosen_single = set(id(g) for g in single[:s_take])
        return [g for g in collected if id(g) in chosen_multi or id(g) in chosen_single]

    for round_no in range(max_rounds):
        try:
            output = complete(backend, user_request(prompt))
        except ScriptExhaustedError:
            if round_no == 0:
                raise
            break  # scripted backend has nothing more to offer
        collected.extend(_parse_generated_questions(output, tool.name))
        batch = select()
        if batch is not None and len(batch) >= min(n, len(collected)):
            break
    batch = select()
    if batch is None:
        raise ConstraintError(
            f"no multi-tool question after {max_rounds} round(s); "
            f"cannot reach fraction {multi_tool_min}",
            partial=collected,
        )
    return batch


@dataclass
class InstanceGenerationResult:
    trace: CotTrace
    flagged: bool
    flag_reason: str | None = None


def generate_instance_answers(
    backend: BackendConfig,
    question: str,
    expected_tools: Sequence[str],
    pool: ToolPool,
    few_shot_answer_cases: Sequence[str],
    *,
    instance: SimulatedInstance | None = None,
    max_steps: int = 8,
    store: templates.TemplateStore | None = None,
) -> InstanceGenerationResult:
    """Drive the tool loop with a few-shot-augmented instance prompt.

    Traces that do not end in a final answer, or that never invoke one of the
    expected tools, are flagged for manual review rather than rejected.
    """
    store = store or templates.TemplateStore.default()
    template = store.get("instance")
    if few_shot_answer_cases:
        block = "Here are worked examples:\n\n" + "\n\n".join(few_shot_answer_cases)
        template = replace(
            template, body=template.body.replace("Question: {{Q}}", block + "\n\nQuestion: {{Q}}", 1)
        )
    trace = run_agent_loop(
        backend,
        question,
        pool,
        instance if instance is not None else default_instance(),
        max_steps=max_steps,
        template=template,
    )
    reasons = []
    if trace.terminated_by != TERMINATED_FINAL:
        reasons.append(f"loop terminated by {trace.terminated_by}")
    unused = [t for t in expected_tools if t not in {s.action for s in trace.steps}]
    if unused:
        reasons.append(f"expected tools not invoked: {', '.join(unused)}")
    if reasons:
        logger.warning("question %r flagged: %s", question[:60], "; ".join(reasons))
    return InstanceGenerationResult(
        trace=trace, flagged=bool(reasons), flag_reason="; ".join(reasons) or None
    )


@dataclass
class PolishedAnswer:
    trace: CotTrace
    # Present only for generalization tools: a model-written input-format summary.
    format_summary: str | None = None


def polish_answer(
    backend: BackendConfig,
    trace: CotTrace,
    pool: ToolPool,
    tool_kind: ToolKind,
    target_tool: ToolSpec | None = None,
) -> PolishedAnswer:
    """Re-check every tool input in a finished trace and fix the noncompliant ones.

    Per step, the backend either answers ``OK`` (input kept) or returns the
    corrected input (replaced in place, rest of the trace untouched). For
    generalization tools one extra completion summarizes the tool's input
    format from the trace, to be attached to the tool spec.
    """
    body = templates.load_prompt("polish_check_input")
    new_steps = []
    for step in trace.steps:
        tool = pool.get(step.action)
        declared = tool.input_format if tool else "unspecified"
        output = complete(
            backend,
            user_request(
                templates.substitute(
                    body,
                    {"NAME": step.action, "FORMAT": declared, "INPUT": step.action_input},
                )
            ),
        ).strip()
        new_steps.append(step if output == "OK" else replace(step, action_input=output))
    polished = CotTrace(
        steps=tuple(new_steps),
        final_answer=trace.final_answer,
        terminated_by=trace.terminated_by,
        failure_output=trace.failure_output,
    )
    summary = None
    if tool_kind == ToolKind.GENERALIZATION:
        name = target_tool.name if target_tool else (trace.steps[0].action if trace.steps else "")
        summary = complete(
            backend,
            user_request(
                templates.substitute(
                    templates.load_prompt("polish_summarize_format"),
                    {"NAME": name, "TRACE": format_trace(polished)},
                )
            ),
        ).strip()
    return PolishedAnswer(trace=polished, format_summary=summary)


def build_instance_record(
    record_id: str,
    lang: str,
    question: str,
    trace: CotTrace,
    source: str = "",
) -> QAPair:
    """Turn a finished trace into an instance record with tool-chain labels."""
    if trace.terminated_by != TERMINATED_FINAL or not trace.steps:
        raise ValueError("only traces with tool steps and a final answer become records")
    return QAPair(
        id=record_id,
        lang=lang,
        category=QuestionCategory.INSTANCE,
        question=question,
        reference_answer=trace.final_answer,
        source=source,
        tool_chain=[
            ToolCall(tool=s.action, action_input=s.action_input, observation=s.observation or "")
            for s in trace.steps
        ],
    )


# ---------------------------------------------------------------------------
# Batch jobs


@dataclass
class GenerationJob:
    """One batch generation run, as described by a job config file."""

    pipeline: str
    backend: BackendConfig
    seed: int = 0
    out_path: Path | None = None
    lang: str = "en"
    options: dict = field(default_factory=dict)

    def __post_init__(self):
        if self.pipeline not in ("forum", "product", "instance"):
            raise ValueError(f"unknown pipeline {self.pipeline!r}")


def run_forum_pipeline(
    backend: BackendConfig,
    items: Sequence[RawForumItem],
    *,
    lang: str = "en",
    threshold: float = DEFAULT_DEDUP_THRESHOLD,
    upvote_cutoff: int = DEFAULT_UPVOTE_CUTOFF,
    id_prefix: str = "forum",
    source: str = "forum",
) -> list[QAPair]:
    """Filter/dedup a forum dump and rewrite the best answer of each survivor."""
    records = []
    for i, item in enumerate(filter_dedup(items, threshold, upvote_cutoff)):
        best = next((a for a in item.answers if a.accepted), None)
        if best is None:
            best = max(item.answers, key=lambda a: a.upvotes)
        records.append(
            QAPair(
                id=f"{id_prefix}-{i:04d}",
                lang=lang,
                category=QuestionCategory.GENERAL,
                question=item.question,
                reference_answer=rewrite_answer(backend, item.question, best.text),
                source=source,
            )
        )
    return records


def run_product_pipeline(
    backend: BackendConfig,
    manual: Document,
    *,
    lang: str = "en",
    n_max: int = 4,
    token_budget: int = DEFAULT_TOKEN_BUDGET,
    label_threshold: float = DEFAULT_LABEL_THRESHOLD,
    seg_len: int = 250,
    overlap: int = 50,
    id_prefix: str = "prod",
) -> AnnotatedBatch:
    """Generate product records from a manual: segment, prompt-chain, annotate."""
    pairs: list[tuple[str, str]] = []
    for segment in segment_manual(manual, token_budget):
        pairs.extend(generate_product_qa(backend, segment, n_max).pairs)
    chunks = segment_text(manual, seg_len=seg_len, overlap=overlap)
    index = build_index(chunks, TrigramEmbedder())
    return annotate_retrieval_labels(
        pairs, index, label_threshold, id_prefix=id_prefix, lang=lang, source=manual.doc_id
    )


def run_instance_pipeline(
    backend: BackendConfig,
    pool: ToolPool,
    *,
    tools: Sequence[str],
    few_shots: Sequence[str],
    answer_cases: Sequence[str],
    questions_per_tool: int = 2,
    multi_tool_min: float = DEFAULT_MULTI_TOOL_MIN,
    lang: str = "en",
    instance: SimulatedInstance | None = None,
    id_prefix: str = "inst",
) -> list[QAPair]:
    """Generate instance records tool by tool; flagged traces are skipped."""
    records = []
    counter = 0
    for tool_name in tools:
        tool = pool.get(tool_name)
        if tool is None:
            raise ValueError(f"tool {tool_name!r} is not in the pool")
        questions = generate_instance_questions(
            backend, tool, few_shots, questions_per_tool, multi_tool_min
        )
        for generated in questions:
            result = generate_instance_answers(
                backend,
                generated.question,
                generated.tools,
                pool,
                answer_cases,
                instance=instance,
            )
            if result.flagged:
                logger.warning("skipping flagged question %r", generated.question[:60])
                continue
            polished = polish_answer(backend, result.trace, pool, tool.kind, target_tool=tool)
            record = build_instance_record(
                f"{id_prefix}-{counter:04d}", lang, generated.question, polished.trace
            )
            if polished.format_summary:
                record.extras["tool_format_summary"] = polished.format_summary
            records.append(record)
            counter += 1
    return records


def run_generation_job(job: GenerationJob) -> Dataset:
    """Execute one pipeline per its job config; saves to ``out_path`` when set."""
    options = job.options
    if job.pipeline == "forum":
        items = load_forum_dump(options["input"])
        records = run_forum_pipeline(
            job.backend,
            items,
            lang=job.lang,
            threshold=options.get("rouge_threshold", DEFAULT_DEDUP_THRESHOLD),
            upvote_cutoff=options.get("upvote_cutoff", DEFAULT_UPVOTE_CUTOFF),
        )
    elif job.pipeline == "product":
        manual_path = Path(options["manual"])
        manual = Document(
            doc_id=manual_path.stem,
            title=manual_path.stem,
            body=manual_path.read_text(encoding="utf-8"),
        )
        records = run_product_pipeline(
            job.backend,
            manual,
            lang=job.lang,
            n_max=options.get("n_max", 4),
            token_budget=options.get("token_budget", DEFAULT_TOKEN_BUDGET),
            label_threshold=options.get("label_threshold", DEFAULT_LABEL_THRESHOLD),
            seg_len=options.get("seg_len", 250),
            overlap=options.get("overlap", 50),
        ).records
    else:
        pool = load_tool_pool(options["pool"]) if options.get("pool") else default_tool_pool()
        records = run_instance_pipeline(
            job.backend,
            pool,
            tools=options.get("tools", [t.name for t in pool]),
            few_shots=options.get("few_shots", []),
            answer_cases=options.get("answer_cases", []),
            questions_per_tool=options.get("questions_per_tool", 2),
            multi_tool_min=options.get("multi_tool_min", DEFAULT_MULTI_TOOL_MIN),
            lang=job.lang,
        )
    invalid = [r.id for r in records if validate_record(r)]
    if invalid:
        raise GenerationError(f"pipeline emitted invalid record(s): {', '.join(invalid)}")
    dataset = Dataset(records=records, metadata={"pipeline": job.pipeline, "seed": job.seed})
    if job.out_path is not None:
        save_dataset(dataset, job.out_path)
    return dataset
