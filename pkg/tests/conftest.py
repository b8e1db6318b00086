"""Shared helpers for the test suite."""

from __future__ import annotations

import json
from pathlib import Path

import pytest

from dbqa.agent import default_instance, default_tool_pool
from dbqa.corpus import QAPair, QuestionCategory, ToolCall

FIXTURES = Path(__file__).parent / "fixtures"


def write_jsonl(path: Path, objs) -> Path:
    with path.open("w", encoding="utf-8") as fh:
        for obj in objs:
            fh.write(json.dumps(obj, ensure_ascii=False) + "\n")
    return path


def general_record(rid: str = "g1", question: str = "What is an index?", **kwargs) -> QAPair:
    defaults = dict(
        id=rid,
        lang="en",
        category=QuestionCategory.GENERAL,
        question=question,
        reference_answer="An index speeds up lookups.",
    )
    defaults.update(kwargs)
    return QAPair(**defaults)


def instance_record(rid: str, chain: list[tuple[str, str, str]], question: str = "Diagnose it.") -> QAPair:
    return QAPair(
        id=rid,
        lang="en",
        category=QuestionCategory.INSTANCE,
        question=question,
        reference_answer="Ground-truth fix.",
        tool_chain=[ToolCall(tool=t, action_input=a, observation=o) for t, a, o in chain],
    )


@pytest.fixture
def pool():
    return default_tool_pool()


@pytest.fixture
def instance():
    return default_instance()
