"""Standardized end-to-end evaluation and all metric computations.

The evaluation fixes everything that is not the model's own ability: routing
uses ground-truth category labels, product prompts get the ground-truth
retrieval text, and instance answers are generated by walking the record's
ground-truth tool chain — the model picks each next action, a matching pick
splices in the recorded observation, a mismatch appends
"Tool Invocation Failure." and stops. Metrics: multiple-choice accuracy
(strict single letter), pairwise win rate, tool selection accuracy and tool
format accuracy (both prefix-scored against ground-truth chain lengths), and
retrieval precision at 3 (in :mod:`dbqa.retrieval`).

Reports are emitted as deterministic JSON and as a human Markdown table.
Records may be evaluated concurrently (``jobs > 1``); metric aggregation is
a single-threaded reduction in record order. Scripted backends consume their
scripts in call order, so keep ``jobs = 1`` when replaying fixtures.
"""

from __future__ import annotations

import json
import logging
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Callable, Iterable, Mapping, Sequence

from . import templates
from .agent import (
    CotStep,
    CotTrace,
    TERMINATED_FAILURE,
    TERMINATED_FINAL,
    ToolPool,
    format_cot_step,
    parse_cot_step,
    render_tool_lines,
    sample_tool_slate,
)
from .corpus import Dataset, QAPair, QuestionCategory
from .errors import CotParseError, DbqaError, JudgeFormatError
from .gateway import BackendConfig, Verdict, complete, judge_pair, judge_tool_format, user_request

logger = logging.getLogger(__name__)

TOOL_FAILURE_MARKER = "Tool Invocation Failure."

SUITES = ("general_mc", "general_subjective", "product", "instance")

MC_INSTRUCTION = "Answer with exactly one letter: A, B, C or D. Output only the letter."

# Externally reported results for the full-scale system (trained classifiers,
# GPT-4 judge, full corpus). Recorded for reference; not reproducible offline.
REFERENCE_RESULTS = {
    "qcr_hierarchical_acc_zh": 0.94,
    "rag_p_at_3_product": 0.82,
}


# ---------------------------------------------------------------------------
# Metrics


def tool_selection_accuracy(runs: Iterable[tuple[int, int]]) -> float:
    """Matched-prefix tool selection accuracy.

    ``runs`` holds (matched_prefix_len, ground_truth_chain_len) per record;
    credit stops at the first wrong tool, the denominator is the total
    ground-truth chain length.
    """
    runs = list(runs)
    if not runs:
        raise ValueError("tool_selection_accuracy needs at least one run")
    numerator = 0
    denominator = 0
    for prefix, chain_len in runs:
        if chain_len < 1:
            raise ValueError("ground-truth chain length must be >= 1")
        if not 0 <= prefix <= chain_len:
            raise ValueError(f"matched prefix {prefix} outside [0, {chain_len}]")
        numerator += prefix
        denominator += chain_len
    return numerator / denominator


def tool_format_accuracy(runs: Iterable[tuple[Sequence[bool], int]]) -> float:
    """Prefix-scored tool format accuracy from per-step judge verdicts.

    Each run is (verdicts, ground_truth_chain_len); verdicts cover the
    model's steps up to and including its first format failure. Credit is
    the all-True prefix length, over the total ground-truth chain length.
    """
    runs = list(runs)
    if not runs:
        raise ValueError("tool_format_accuracy needs at least one run")
    numerator = 0
    denominator = 0
    for verdicts, chain_len in runs:
        if chain_len < 1:
            raise ValueError("ground-truth chain length must be >= 1")
        for verdict in verdicts:
            if not verdict:
                break
            numerator += 1
        denominator += chain_len
    return numerator / denominator


def win_rate(verdicts: Iterable[Verdict]) -> float | None:
    """Wins over wins-plus-losses; ties are excluded. All ties -> None (undefined)."""
    wins = 0
    losses = 0
    for verdict in verdicts:
        if verdict == Verdict.WIN:
            wins += 1
        elif verdict == Verdict.LOSE:
            losses += 1
    if wins + losses == 0:
        return None
    return wins / (wins + losses)


def multiple_choice_accuracy(answers: Iterable[tuple[str, str]]) -> float:
    """Strict single-letter scoring: after trimming whitespace the output must
    equal the gold letter exactly; anything else counts as wrong."""
    answers = list(answers)
    if not answers:
        raise ValueError("multiple_choice_accuracy needs at least one answer")
    correct = 0
    for output, gold in answers:
        if gold not in ("A", "B", "C", "D"):
            raise ValueError(f"gold letter must be one of A-D, got {gold!r}")
        if output.strip() == gold:
            correct += 1
    return correct / len(answers)


def matched_prefix_len(actions: Sequence[str], ground_truth: Sequence[str]) -> int:
    """Length of the longest prefix of ``ground_truth`` matched by ``actions``."""
    prefix = 0
    for got, expected in zip(actions, ground_truth):
        if got != expected:
            break
        prefix += 1
    return prefix


# ---------------------------------------------------------------------------
# Standardized instance-answer generation


@dataclass(frozen=True)
class InstanceAnswer:
    """Outcome of walking one record's ground-truth tool chain with a model."""

    answer: str
    matched_prefix_len: int
    failed: bool
    steps: tuple[CotStep, ...]
    final_answer: str | None
    trace: CotTrace


def standardized_instance_answer(
    model: BackendConfig,
    record: QAPair,
    pool: ToolPool,
    *,
    rng_seed: int = 0,
    n_random_tools: int = 4,
    store: templates.TemplateStore | None = None,
) -> InstanceAnswer:
    """Generate an instance answer against ground-truth tool results.

    The tool slate is the record's ground-truth tools plus ``n_random_tools``
    decoys. For each ground-truth invocation the model proposes the next
    step; a matching action appends the recorded observation, a mismatch (or
    unparseable step) appends "Tool Invocation Failure." and stops. After a
    fully matched chain one more completion produces the final answer.
    """
    if not record.tool_chain:
        raise ValueError(f"record {record.id!r} has no ground-truth tool chain")
    store = store or templates.TemplateStore.default()
    template = store.get("instance")
    gt_tools = []
    for call in record.tool_chain:
        tool = pool.get(call.tool)
        if tool is None:
            raise ValueError(f"record {record.id!r} references unknown tool {call.tool!r}")
        gt_tools.append(tool)
    slate = sample_tool_slate(gt_tools, pool, n_random=n_random_tools, rng_seed=rng_seed)
    tool_lines = render_tool_lines(slate)

    def next_step_output(scratchpad: str, interrupt: bool) -> str:
        prompt = templates.substitute(
            template.body,
            {"Q": record.question, "T": tool_lines, "Agent_Scratchpad": scratchpad},
        )
        stop = ("Observation:",) if interrupt else ()
        return complete(model, user_request(prompt, stop_sequences=stop))

    answer = ""
    steps: list[CotStep] = []
    matched = 0
    failed = False
    final_answer: str | None = None
    for call in record.tool_chain:
        output = next_step_output(answer, interrupt=True)
        try:
            parsed = parse_cot_step(output)
        except CotParseError:
            answer += output.strip() + "\n" + TOOL_FAILURE_MARKER
            failed = True
            break
        if parsed.is_final or parsed.action != call.tool:
            answer += format_cot_step(parsed) + "\n" + TOOL_FAILURE_MARKER
            if not parsed.is_final:
                steps.append(
                    CotStep(
                        thought=parsed.thought,
                        action=parsed.action,
                        action_input=parsed.action_input,
                        observation=TOOL_FAILURE_MARKER,
                    )
                )
            failed = True
            break
        matched += 1
        steps.append(
            CotStep(
                thought=parsed.thought,
                action=parsed.action,
                action_input=parsed.action_input,
                observation=call.observation,
            )
        )
        answer += format_cot_step(parsed) + f"\nObservation: {call.observation}\n"

    if not failed:
        output = next_step_output(answer, interrupt=False)
        try:
            parsed = parse_cot_step(output)
        except CotParseError:
            parsed = None
        if parsed is not None and parsed.is_final:
            final_answer = parsed.final_answer
            answer += f"Final_Answer: {final_answer}"
        else:
            # The chain matched but the model produced no final answer; keep
            # its raw output so the judge sees what actually happened.
            answer += output.strip()
    if final_answer is not None:
        trace = CotTrace(
            steps=tuple(steps), final_answer=final_answer, terminated_by=TERMINATED_FINAL
        )
    else:
        trace = CotTrace(
            steps=tuple(steps),
            final_answer=None,
            terminated_by=TERMINATED_FAILURE,
            failure_output=answer,
        )
    return InstanceAnswer(
        answer=answer,
        matched_prefix_len=matched,
        failed=failed,
        steps=tuple(steps),
        final_answer=final_answer,
        trace=trace,
    )


# ---------------------------------------------------------------------------
# Suite orchestration


@dataclass
class SuiteConfig:
    """Knobs shared by every suite run; captured into the report snapshot."""

    seed: int = 0
    store: templates.TemplateStore | None = None
    chunks: Mapping[str, str] | None = None
    pool: ToolPool | None = None
    n_random_tools: int = 4
    swap_judge_positions: bool = False
    jobs: int = 1


@dataclass
class EvalReport:
    """Per-suite metric aggregate with per-record rows and a config snapshot."""

    suite: str
    metrics: dict[str, float | None]
    records: list[dict]
    config: dict
    failures: list[dict] = field(default_factory=list)

    def to_json(self) -> str:
        payload = {
            "suite": self.suite,
            "metrics": self.metrics,
            "records": self.records,
            "config": self.config,
            "failures": self.failures,
        }
        return json.dumps(payload, ensure_ascii=False, sort_keys=True, indent=2) + "\n"

    @classmethod
    def from_json(cls, text: str) -> "EvalReport":
        payload = json.loads(text)
        return cls(
            suite=payload["suite"],
            metrics=payload.get("metrics", {}),
            records=payload.get("records", []),
            config=payload.get("config", {}),
            failures=payload.get("failures", []),
        )

    def to_markdown(self) -> str:
        lines = [f"# Evaluation report: {self.suite}", ""]
        for label in ("model", "competitor", "judge"):
            value = self.config.get(label)
            if value:
                lines.append(f"{label.capitalize()}: `{value}`  ")
        lines.append(f"Seed: {self.config.get('seed', 0)}")
        lines += ["", "| metric | value |", "| --- | --- |"]
        for name in sorted(self.metrics):
            value = self.metrics[name]
            shown = "undefined" if value is None else f"{value:.4f}"
            lines.append(f"| {name} | {shown} |")
        lines += ["", f"Records evaluated: {len(self.records)}; failures: {len(self.failures)}"]
        if self.failures:
            lines += ["", "| record | error |", "| --- | --- |"]
            for failure in self.failures:
                lines.append(f"| {failure['id']} | {failure['error']} |")
        return "\n".join(lines) + "\n"


def _map_records(
    records: Sequence[QAPair], work: Callable[[int, QAPair], dict], jobs: int
) -> list[dict]:
    """Apply ``work`` to every record, preserving record order in the results."""
    if jobs <= 1:
        return [work(i, r) for i, r in enumerate(records)]
    with ThreadPoolExecutor(max_workers=jobs) as executor:
        return list(executor.map(work, range(len(records)), records))


def _require_category(dataset: Dataset, category: QuestionCategory, suite: str) -> None:
    for record in dataset.records:
        if record.category != category:
            raise ValueError(
                f"suite {suite!r} expects only {category.value} records; "
                f"record {record.id!r} is {record.category.value}"
            )


def _general_prompt(question: str, store: templates.TemplateStore) -> str:
    return templates.substitute(store.get("general").body, {"Q": question})


def _run_general_mc(dataset, model, store, report, config):
    def work(idx: int, record: QAPair) -> dict:
        if not record.choices or not record.gold_letter:
            return {"id": record.id, "error": "missing choices/gold_letter"}
        lines = [record.question]
        for letter in sorted(record.choices):
            lines.append(f"{letter}. {record.choices[letter]}")
        lines.append(MC_INSTRUCTION)
        prompt = _general_prompt("\n".join(lines), store)
        try:
            output = complete(model, user_request(prompt, max_tokens=8))
        except DbqaError as exc:
            return {"id": record.id, "error": str(exc)}
        return {
            "id": record.id,
            "output": output,
            "gold": record.gold_letter,
            "correct": output.strip() == record.gold_letter,
        }

    scored = []
    for result in _map_records(dataset.records, work, config.jobs):
        if "error" in result:
            report.failures.append(result)
            continue
        scored.append((result["output"], result["gold"]))
        report.records.append(result)
    report.metrics["mca"] = multiple_choice_accuracy(scored) if scored else None


def _judged_pair_suite(dataset, model, competitor, judge, report, config, prompt_builder):
    def work(idx: int, record: QAPair) -> dict:
        try:
            prompt = prompt_builder(record)
            model_answer = complete(model, user_request(prompt))
            competitor_answer = complete(competitor, user_request(prompt))
        except DbqaError as exc:
            return {"id": record.id, "error": str(exc)}
        row = {"id": record.id, "answer": model_answer, "competitor_answer": competitor_answer}
        try:
            verdict = judge_pair(
                judge,
                record.question,
                record.reference_answer,
                model_answer,
                competitor_answer,
                swap_positions=config.swap_judge_positions,
            )
        except JudgeFormatError as exc:
            row["verdict"] = "judge_error"
            row["judge_error"] = str(exc)
            return {"row": row}
        row["verdict"] = verdict.name.lower()
        return {"row": row, "verdict": verdict}

    verdicts = []
    judge_errors = 0
    for result in _map_records(dataset.records, work, config.jobs):
        if "error" in result:
            report.failures.append(result)
            continue
        report.records.append(result["row"])
        if "verdict" in result:
            verdicts.append(result["verdict"])
        else:
            judge_errors += 1
    report.metrics["winrate"] = win_rate(verdicts)
    if judge_errors:
        report.config["judge_errors"] = judge_errors


def _format_verdicts(judge, steps: Sequence[CotStep], pool: ToolPool) -> list[bool]:
    # Judge each step's input in order; stop after the first failure
    # (later steps are never judged). Unknown tools cannot comply.
    verdicts: list[bool] = []
    for step in steps:
        tool = pool.get(step.action)
        if tool is None:
            verdicts.append(False)
            break
        ok = judge_tool_format(judge, tool, step.action_input)
        verdicts.append(ok)
        if not ok:
            break
    return verdicts


def _run_instance(dataset, model, competitor, judge, store, report, config):
    pool = config.pool
    if pool is None:
        raise ValueError("instance suite requires a tool pool in the config")

    def work(idx: int, record: QAPair) -> dict:
        seed = config.seed + idx
        try:
            result = standardized_instance_answer(
                model,
                record,
                pool,
                rng_seed=seed,
                n_random_tools=config.n_random_tools,
                store=store,
            )
        except DbqaError as exc:
            return {"id": record.id, "error": str(exc)}
        chain_len = len(record.tool_chain)
        out = {
            "row": {
                "id": record.id,
                "matched_prefix_len": result.matched_prefix_len,
                "chain_len": chain_len,
                "failed": result.failed,
                "answer": result.answer,
            },
            "tsa_run": (result.matched_prefix_len, chain_len),
        }
        if judge is not None:
            try:
                format_verdicts = _format_verdicts(judge, result.steps, pool)
                out["tfa_run"] = (format_verdicts, chain_len)
                out["row"]["format_verdicts"] = format_verdicts
            except JudgeFormatError as exc:
                out["judge_error"] = True
                out["row"]["format_verdicts"] = "judge_error"
                out["row"]["judge_error"] = str(exc)
        if competitor is not None and judge is not None:
            try:
                competitor_result = standardized_instance_answer(
                    competitor,
                    record,
                    pool,
                    rng_seed=seed,
                    n_random_tools=config.n_random_tools,
                    store=store,
                )
                verdict = judge_pair(
                    judge,
                    record.question,
                    record.reference_answer,
                    result.answer,
                    competitor_result.answer,
                    swap_positions=config.swap_judge_positions,
                )
                out["verdict"] = verdict
                out["row"]["verdict"] = verdict.name.lower()
            except JudgeFormatError as exc:
                out["judge_error"] = True
                out["row"]["verdict"] = "judge_error"
                out["row"]["judge_error"] = str(exc)
        return out

    tsa_runs, tfa_runs, verdicts = [], [], []
    judge_errors = 0
    for result in _map_records(dataset.records, work, config.jobs):
        if "error" in result:
            report.failures.append(result)
            continue
        report.records.append(result["row"])
        tsa_runs.append(result["tsa_run"])
        if "tfa_run" in result:
            tfa_runs.append(result["tfa_run"])
        if "verdict" in result:
            verdicts.append(result["verdict"])
        if result.get("judge_error"):
            judge_errors += 1
    report.metrics["tsa"] = tool_selection_accuracy(tsa_runs) if tsa_runs else None
    if judge is not None:
        report.metrics["tfa"] = tool_format_accuracy(tfa_runs) if tfa_runs else None
    if competitor is not None and judge is not None:
        report.metrics["winrate"] = win_rate(verdicts)
    if judge_errors:
        report.config["judge_errors"] = judge_errors


def run_suite(
    dataset: Dataset,
    suite: str,
    model_backend: BackendConfig,
    competitor_backend: BackendConfig | None = None,
    judge_backend: BackendConfig | None = None,
    config: SuiteConfig | None = None,
) -> EvalReport:
    """Run one standardized evaluation suite over a dataset.

    ``general_mc`` scores strict multiple-choice accuracy; the judged suites
    (``general_subjective``, ``product``) generate answers from the model and
    the competitor and report the pairwise win rate; ``instance`` walks each
    record's ground-truth tool chain and reports tool selection/format
    accuracy plus (with a competitor) the win rate. Product prompts get the
    record's ground-truth retrieval text injected verbatim.
    """
    if suite not in SUITES:
        raise ValueError(f"unknown suite {suite!r} (expected one of {SUITES})")
    config = config or SuiteConfig()
    store = config.store or templates.TemplateStore.default()
    report = EvalReport(
        suite=suite,
        metrics={},
        records=[],
        config={
            "model": model_backend.model_name,
            "competitor": competitor_backend.model_name if competitor_backend else None,
            "judge": judge_backend.model_name if judge_backend else None,
            "seed": config.seed,
            "template_version": store.version,
            "swap_judge_positions": config.swap_judge_positions,
            "n_random_tools": config.n_random_tools,
            "jobs": config.jobs,
        },
    )
    if suite == "general_mc":
        _require_category(dataset, QuestionCategory.GENERAL, suite)
        _run_general_mc(dataset, model_backend, store, report, config)
        return report
    if suite == "general_subjective":
        _require_category(dataset, QuestionCategory.GENERAL, suite)
        if competitor_backend is None or judge_backend is None:
            raise ValueError("general_subjective requires competitor and judge backends")
        _judged_pair_suite(
            dataset,
            model_backend,
            competitor_backend,
            judge_backend,
            report,
            config,
            lambda record: _general_prompt(record.question, store),
        )
        return report
    if suite == "product":
        _require_category(dataset, QuestionCategory.PRODUCT, suite)
        if competitor_backend is None or judge_backend is None:
            raise ValueError("product suite requires competitor and judge backends")
        chunks = config.chunks
        if chunks is None:
            raise ValueError("product suite requires a chunk store in the config")

        def product_prompt(record: QAPair) -> str:
            missing = [cid for cid in record.retrieval_labels if cid not in chunks]
            if missing:
                raise DbqaError(f"chunk(s) not in store: {', '.join(missing)}")
            knowledge = "\n\n".join(chunks[cid] for cid in record.retrieval_labels)
            return templates.substitute(
                store.get("product").body, {"Q": record.question, "K": knowledge}
            )

        _judged_pair_suite(
            dataset,
            model_backend,
            competitor_backend,
            judge_backend,
            report,
            config,
            product_prompt,
        )
        return report
    _require_category(dataset, QuestionCategory.INSTANCE, suite)
    _run_instance(dataset, model_backend, competitor_backend, judge_backend, store, report, config)
    return report
