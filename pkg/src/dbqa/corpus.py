"""Benchmark data model and its JSONL representation.

A dataset is an ordered list of question/answer records, each tagged with one
of five routing categories. Product records carry retrieval labels (chunk
ids), instance records carry a ground-truth tool chain with recorded
observations so evaluation can replay tool results without a live database.

On disk a dataset is one JSON object per line with the fields
``id, lang, category, question, reference_answer, source, retrieval_labels,
tool_chain, choices, gold_letter``; tool_chain entries are objects
``{tool, action_input, observation}``. Unknown fields survive a load/save
round trip. Dataset metadata, when present, is stored as an optional first
line ``{"_meta": {...}}``.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from enum import Enum
from pathlib import Path
from typing import Any

from .errors import DatasetError, IntegrityError


class QuestionCategory(str, Enum):
    """The five routing categories. Closed set."""

    GENERAL = "general"
    PRODUCT = "product"
    INSTANCE = "instance"
    IRRELEVANT = "irrelevant"
    UNSAFE = "unsafe"


LANGS = ("en", "zh")

# On-disk field order for one record.
SCHEMA_FIELDS = (
    "id",
    "lang",
    "category",
    "question",
    "reference_answer",
    "source",
    "retrieval_labels",
    "tool_chain",
    "choices",
    "gold_letter",
)


@dataclass(frozen=True)
class ToolCall:
    """One ground-truth tool invocation: tool name, its input, and the recorded observation."""

    tool: str
    action_input: str
    observation: str


@dataclass(frozen=True)
class Document:
    """A knowledge-base source document (e.g. a product manual)."""

    doc_id: str
    title: str
    body: str


@dataclass
class QAPair:
    """One benchmark record."""

    id: str
    lang: str
    category: QuestionCategory
    question: str
    reference_answer: str
    source: str = ""
    retrieval_labels: list[str] | None = None
    tool_chain: list[ToolCall] | None = None
    choices: dict[str, str] | None = None
    gold_letter: str | None = None
    # Unknown input fields, preserved verbatim on save.
    extras: dict[str, Any] = field(default_factory=dict)


@dataclass
class Dataset:
    """Ordered records plus free-form metadata. Treat as immutable after load."""

    records: list[QAPair] = field(default_factory=list)
    metadata: dict[str, Any] = field(default_factory=dict)

    def __len__(self) -> int:
        return len(self.records)


def validate_record(record: QAPair) -> list[str]:
    """Return every violated invariant of ``record`` (empty list means valid).

    Violations are data, not faults: this never raises.
    """
    violations: list[str] = []
    if not record.id:
        violations.append("missing id")
    if record.lang not in LANGS:
        violations.append(f"unknown lang {record.lang!r} (expected one of {LANGS})")
    if not record.question:
        violations.append("empty question")
    if record.category == QuestionCategory.PRODUCT and not record.retrieval_labels:
        violations.append("missing retrieval labels (required for product records)")
    if record.category == QuestionCategory.INSTANCE and not record.tool_chain:
        violations.append("missing tool chain (required for instance records)")
    if record.gold_letter is not None:
        if not record.choices or record.gold_letter not in record.choices:
            violations.append(f"gold_letter {record.gold_letter!r} is not a key of choices")
    return violations


def record_to_obj(record: QAPair) -> dict[str, Any]:
    """Serialize a record to a plain dict in canonical field order."""
    obj: dict[str, Any] = {
        "id": record.id,
        "lang": record.lang,
        "category": record.category.value,
        "question": record.question,
        "reference_answer": record.reference_answer,
        "source": record.source,
    }
    if record.retrieval_labels is not None:
        obj["retrieval_labels"] = list(record.retrieval_labels)
    if record.tool_chain is not None:
        obj["tool_chain"] = [
            {"tool": c.tool, "action_input": c.action_input, "observation": c.observation}
            for c in record.tool_chain
        ]
    if record.choices is not None:
        obj["choices"] = dict(record.choices)
    if record.gold_letter is not None:
        obj["gold_letter"] = record.gold_letter
    for key in sorted(record.extras):
        if key not in SCHEMA_FIELDS:
            obj[key] = record.extras[key]
    return obj


def record_from_obj(obj: dict[str, Any]) -> QAPair:
    """Deserialize one JSON object into a QAPair.

    Raises DatasetError on structurally unusable input (non-object, unknown
    category); invariant violations are left to validate_record.
    """
    if not isinstance(obj, dict):
        raise DatasetError(f"record must be a JSON object, got {type(obj).__name__}")
    category_raw = obj.get("category", "")
    try:
        category = QuestionCategory(category_raw)
    except ValueError:
        raise DatasetError(f"unknown category {category_raw!r}") from None
    tool_chain = None
    if obj.get("tool_chain") is not None:
        entries = obj["tool_chain"]
        if not isinstance(entries, list):
            raise DatasetError("tool_chain must be a list")
        tool_chain = [
            ToolCall(
                tool=str(e.get("tool", "")),
                action_input=str(e.get("action_input", "")),
                observation=str(e.get("observation", "")),
            )
            for e in entries
        ]
    retrieval_labels = None
    if obj.get("retrieval_labels") is not None:
        retrieval_labels = [str(x) for x in obj["retrieval_labels"]]
    choices = None
    if obj.get("choices") is not None:
        choices = {str(k): str(v) for k, v in obj["choices"].items()}
    extras = {k: v for k, v in obj.items() if k not in SCHEMA_FIELDS}
    return QAPair(
        id=str(obj.get("id", "")),
        lang=str(obj.get("lang", "")),
        category=category,
        question=str(obj.get("question", "")),
        reference_answer=str(obj.get("reference_answer", "")),
        source=str(obj.get("source", "")),
        retrieval_labels=retrieval_labels,
        tool_chain=tool_chain,
        choices=choices,
        gold_letter=None if obj.get("gold_letter") is None else str(obj["gold_letter"]),
        extras=extras,
    )


@dataclass
class DatasetScan:
    """Result of a lenient dataset read: parsed records plus per-line problems."""

    dataset: Dataset
    problems: list[tuple[int, str]] = field(default_factory=list)

    @property
    def ok(self) -> bool:
        return not self.problems


def scan_dataset(path: str | Path) -> DatasetScan:
    """Read a JSONL dataset, collecting every problem instead of stopping at the first.

    Problems are (line_number, message) pairs covering malformed JSON,
    structural errors, invariant violations, and duplicate ids (the duplicate
    message names both lines).
    """
    path = Path(path)
    records: list[QAPair] = []
    metadata: dict[str, Any] = {}
    problems: list[tuple[int, str]] = []
    seen_ids: dict[str, int] = {}
    with path.open("r", encoding="utf-8") as fh:
        for line_no, line in enumerate(fh, start=1):
            stripped = line.strip()
            if not stripped:
                continue
            try:
                obj = json.loads(stripped)
            except json.JSONDecodeError as exc:
                problems.append((line_no, f"malformed JSON: {exc.msg}"))
                continue
            if line_no == 1 and isinstance(obj, dict) and set(obj) == {"_meta"}:
                metadata = dict(obj["_meta"])
                continue
            try:
                record = record_from_obj(obj)
            except DatasetError as exc:
                problems.append((line_no, str(exc)))
                continue
            for violation in validate_record(record):
                problems.append((line_no, violation))
            if record.id:
                if record.id in seen_ids:
                    problems.append(
                        (
                            line_no,
                            f"duplicate id {record.id!r} on lines {seen_ids[record.id]} and {line_no}",
                        )
                    )
                else:
                    seen_ids[record.id] = line_no
            records.append(record)
    return DatasetScan(dataset=Dataset(records=records, metadata=metadata), problems=problems)


def load_dataset(path: str | Path) -> Dataset:
    """Load a JSONL dataset, raising if any line is malformed or any record invalid.

    Record order is preserved. Duplicate ids raise IntegrityError; other
    problems raise DatasetError listing every offending line.
    """
    scan = scan_dataset(path)
    if scan.problems:
        messages = [f"line {n}: {msg}" for n, msg in scan.problems]
        if any("duplicate id" in msg for _, msg in scan.problems):
            raise IntegrityError("; ".join(messages))
        raise DatasetError("; ".join(messages))
    return scan.dataset


def save_dataset(dataset: Dataset, path: str | Path) -> None:
    """Write a dataset as JSONL (one record per line, UTF-8, non-ASCII kept literal).

    The dataset must be valid; load_dataset(save_dataset(d)) equals d
    field for field.
    """
    bad: list[str] = []
    for i, record in enumerate(dataset.records):
        for violation in validate_record(record):
            bad.append(f"record {i} ({record.id!r}): {violation}")
    if bad:
        raise DatasetError("; ".join(bad))
    ids = [r.id for r in dataset.records]
    if len(set(ids)) != len(ids):
        dupes = sorted({x for x in ids if ids.count(x) > 1})
        raise IntegrityError(f"duplicate record ids: {dupes}")
    path = Path(path)
    with path.open("w", encoding="utf-8") as fh:
        if dataset.metadata:
            fh.write(json.dumps({"_meta": dataset.metadata}, ensure_ascii=False) + "\n")
        for record in dataset.records:
            fh.write(json.dumps(record_to_obj(record), ensure_ascii=False) + "\n")
