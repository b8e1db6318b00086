"""Question classification routing: assign one of five categories to a question.

Four classifier kinds share one entry point: an LLM prompt, a remote flat
classifier service, a remote hierarchical classifier service (both speak
``POST {"question": ...} -> {"label": ...}``), and an offline keyword
ruleset. A separate two-stage path first gates on safety, then classifies
safe questions into the remaining four categories. Any output that cannot be
mapped to a category falls back to ``irrelevant`` with a recorded reason.
"""

from __future__ import annotations

import json
import logging
from dataclasses import dataclass, field
from importlib import resources
from pathlib import Path
from typing import Iterable, Sequence

import requests

from . import templates
from .corpus import QuestionCategory
from .errors import ServiceError
from .gateway import BackendConfig, complete, user_request

logger = logging.getLogger(__name__)

CLASSIFIER_KINDS = ("llm_prompt", "remote_flat", "remote_hierarchical", "rules")

# Normalized label vocabulary -> category. Vocabulary is artifact-defined;
# remote classifiers and prompts must emit one of these (case/punctuation
# insensitive).
_LABEL_MAP = {
    "general": QuestionCategory.GENERAL,
    "db general": QuestionCategory.GENERAL,
    "general db": QuestionCategory.GENERAL,
    "general database": QuestionCategory.GENERAL,
    "product": QuestionCategory.PRODUCT,
    "product specific": QuestionCategory.PRODUCT,
    "instance": QuestionCategory.INSTANCE,
    "instance specific": QuestionCategory.INSTANCE,
    "irrelevant": QuestionCategory.IRRELEVANT,
    "other": QuestionCategory.IRRELEVANT,
    "others": QuestionCategory.IRRELEVANT,
    "not related": QuestionCategory.IRRELEVANT,
    "unrelated": QuestionCategory.IRRELEVANT,
    "safe but irrelevant": QuestionCategory.IRRELEVANT,
    "unsafe": QuestionCategory.UNSAFE,
}

CATEGORIES = tuple(QuestionCategory)


@dataclass(frozen=True)
class RoutingDecision:
    """Outcome of classifying one question."""

    category: QuestionCategory
    classifier_kind: str
    confidence: float | None = None
    # Set when an unmappable label forced the irrelevant fallback.
    fallback_reason: str | None = None


@dataclass(frozen=True)
class RoutingRule:
    category: QuestionCategory
    keywords: tuple[str, ...]


def _normalize_label(label: str) -> str:
    cleaned = "".join(c if c.isalnum() or c.isspace() else " " for c in label.lower())
    return " ".join(cleaned.split())


def map_label(label: str) -> QuestionCategory | None:
    """Map a raw classifier/LLM label to a category, or None if unmappable."""
    return _LABEL_MAP.get(_normalize_label(label))


def _fallback(kind: str, label: str) -> RoutingDecision:
    reason = f"unmappable label {label!r}; falling back to irrelevant"
    logger.warning("%s classifier: %s", kind, reason)
    return RoutingDecision(QuestionCategory.IRRELEVANT, kind, fallback_reason=reason)


def load_ruleset(path: str | Path | None = None) -> list[RoutingRule]:
    """Load an ordered keyword ruleset; default is the packaged one."""
    if path is None:
        text = (resources.files(__package__) / "prompts" / "routing_rules.json").read_text(
            encoding="utf-8"
        )
    else:
        text = Path(path).read_text(encoding="utf-8")
    rules = []
    for entry in json.loads(text):
        rules.append(
            RoutingRule(
                category=QuestionCategory(entry["category"]),
                keywords=tuple(str(k).lower() for k in entry["keywords"]),
            )
        )
    return rules


def _classify_rules(question: str, ruleset: Sequence[RoutingRule]) -> RoutingDecision:
    text = question.lower()
    for rule in ruleset:
        for keyword in rule.keywords:
            if keyword in text:
                return RoutingDecision(rule.category, "rules")
    return RoutingDecision(QuestionCategory.IRRELEVANT, "rules")


def _classify_remote(question: str, kind: str, endpoint_url: str, timeout_s: float) -> RoutingDecision:
    try:
        resp = requests.post(endpoint_url, json={"question": question}, timeout=timeout_s)
    except requests.RequestException as exc:
        raise ServiceError(f"classifier service {endpoint_url} unreachable: {exc}") from exc
    if not 200 <= resp.status_code < 300:
        raise ServiceError(f"classifier service {endpoint_url} answered {resp.status_code}")
    try:
        label = resp.json()["label"]
    except (ValueError, KeyError, TypeError) as exc:
        raise ServiceError(f"classifier service returned an unusable body: {exc}") from exc
    category = map_label(label)
    if category is None:
        return _fallback(kind, label)
    return RoutingDecision(category, kind)


def classify(
    question: str,
    kind: str = "rules",
    backend: BackendConfig | None = None,
    *,
    endpoint_url: str | None = None,
    ruleset: Sequence[RoutingRule] | None = None,
    timeout_s: float = 10.0,
) -> RoutingDecision:
    """Classify a question into one of the five routing categories.

    ``llm_prompt`` renders the classification prompt against ``backend``;
    ``remote_flat`` / ``remote_hierarchical`` call the external classifier
    service at ``endpoint_url``; ``rules`` applies the ordered keyword
    ruleset (first match wins, default irrelevant).
    """
    if not question:
        raise ValueError("question must be non-empty")
    if kind not in CLASSIFIER_KINDS:
        raise ValueError(f"unknown classifier kind {kind!r}")
    if kind == "rules":
        return _classify_rules(question, ruleset if ruleset is not None else load_ruleset())
    if kind in ("remote_flat", "remote_hierarchical"):
        if not endpoint_url:
            raise ValueError(f"{kind} classifier requires endpoint_url")
        return _classify_remote(question, kind, endpoint_url, timeout_s)
    if backend is None:
        raise ValueError("llm_prompt classifier requires a backend")
    prompt = templates.substitute(templates.load_prompt("classify_question"), {"Q": question})
    label = complete(backend, user_request(prompt, max_tokens=16))
    category = map_label(label)
    if category is None:
        return _fallback(kind, label)
    return RoutingDecision(category, kind)


def hierarchical_classify(
    question: str,
    safety_backend: BackendConfig,
    topic_backend: BackendConfig,
) -> RoutingDecision:
    """Two-stage classification: safety gate first, then the four-way topic stage.

    An unsafe stage-1 answer short-circuits to ``unsafe`` without invoking
    stage 2. Anything else proceeds; an unmappable stage-2 label falls back
    to ``irrelevant`` with a recorded reason.
    """
    if not question:
        raise ValueError("question must be non-empty")
    stage1 = complete(
        safety_backend,
        user_request(
            templates.substitute(templates.load_prompt("classify_safety"), {"Q": question}),
            max_tokens=8,
        ),
    )
    token = _normalize_label(stage1)
    if token == "unsafe":
        return RoutingDecision(QuestionCategory.UNSAFE, "llm_prompt")
    if token != "safe":
        logger.warning("safety stage answered %r; treating as safe", stage1)
    stage2 = complete(
        topic_backend,
        user_request(
            templates.substitute(templates.load_prompt("classify_topic"), {"Q": question}),
            max_tokens=16,
        ),
    )
    category = map_label(stage2)
    if category is None or category == QuestionCategory.UNSAFE:
        return _fallback("llm_prompt", stage2)
    return RoutingDecision(category, "llm_prompt")


@dataclass
class ConfusionMatrix:
    """Counts m[gold][predicted] over the five categories."""

    counts: dict[QuestionCategory, dict[QuestionCategory, int]] = field(
        default_factory=lambda: {g: {p: 0 for p in CATEGORIES} for g in CATEGORIES}
    )

    def add(self, gold: QuestionCategory, predicted: QuestionCategory) -> None:
        self.counts[gold][predicted] += 1

    def total(self) -> int:
        return sum(sum(row.values()) for row in self.counts.values())

    def diagonal(self) -> int:
        return sum(self.counts[c][c] for c in CATEGORIES)

    def row_total(self, category: QuestionCategory) -> int:
        return sum(self.counts[category].values())

    def col_total(self, category: QuestionCategory) -> int:
        return sum(self.counts[g][category] for g in CATEGORIES)


@dataclass(frozen=True)
class ClassificationMetrics:
    matrix: ConfusionMatrix
    accuracy: float
    f1: dict[QuestionCategory, float]


def confusion_metrics(
    pairs: Iterable[tuple[QuestionCategory, QuestionCategory]],
) -> ClassificationMetrics:
    """Accuracy and per-category F1 from (gold, predicted) pairs.

    Accuracy is the diagonal over the total. Per category i,
    precision = m[i][i] / row i and recall = m[i][i] / column i (row =
    ground truth, column = prediction); zero-denominator categories report
    F1 = 0.
    """
    matrix = ConfusionMatrix()
    n = 0
    for gold, predicted in pairs:
        matrix.add(QuestionCategory(gold), QuestionCategory(predicted))
        n += 1
    if n == 0:
        raise ValueError("confusion_metrics needs at least one (gold, predicted) pair")
    accuracy = matrix.diagonal() / matrix.total()
    f1: dict[QuestionCategory, float] = {}
    for category in CATEGORIES:
        hit = matrix.counts[category][category]
        row = matrix.row_total(category)
        col = matrix.col_total(category)
        precision = hit / row if row else 0.0
        recall = hit / col if col else 0.0
        f1[category] = (
            2 * precision * recall / (precision + recall) if precision + recall else 0.0
        )
    return ClassificationMetrics(matrix=matrix, accuracy=accuracy, f1=f1)
