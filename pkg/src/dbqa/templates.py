"""Slotted prompt templates and the store for the four routing-specific prompts.

Slots are written ``{{NAME}}``. Each routed template file starts with a
one-line header naming the template id and its triggers, e.g.::

    # id=product triggers=rag

followed by the template body verbatim. Substitution is a single pass over
the stored body, so brace sequences inside bound values (user questions) are
never re-interpreted as slots. Auxiliary prompts (judges, classification,
generation stages) are plain files without headers, loaded by name.
"""

from __future__ import annotations

import hashlib
import re
from dataclasses import dataclass
from importlib import resources
from pathlib import Path
from typing import Mapping

from .errors import RenderError

SLOT_PATTERN = re.compile(r"\{\{([A-Za-z_]+)\}\}")

ROUTED_IDS = ("general", "product", "instance", "irrelevant")

TRIGGER_RAG = "rag"
TRIGGER_TIG = "tig"

# template id -> (required keyword in body, required slots, triggers)
_ROUTED_CONTRACT = {
    "general": (None, {"Q"}, frozenset()),
    "product": ("Knowledge", {"Q", "K"}, frozenset({TRIGGER_RAG})),
    "instance": ("using tools", {"Q", "T", "Agent_Scratchpad"}, frozenset({TRIGGER_TIG})),
    "irrelevant": (None, {"Q"}, frozenset()),
}


@dataclass(frozen=True)
class PromptTemplate:
    """One routed template: id, body with slots, and the modules it triggers."""

    template_id: str
    body: str
    triggers: frozenset[str]

    @property
    def slots(self) -> frozenset[str]:
        return frozenset(SLOT_PATTERN.findall(self.body))


def find_slots(body: str) -> set[str]:
    """Slot names present in a template body."""
    return set(SLOT_PATTERN.findall(body))


def substitute(body: str, bindings: Mapping[str, str]) -> str:
    """Replace every slot in ``body`` with its binding, in a single pass.

    Bindings must cover exactly the slots present: a missing binding raises
    RenderError naming the slot, and so does an unused (extra) binding.
    """
    slots = find_slots(body)
    missing = slots - set(bindings)
    if missing:
        raise RenderError(f"missing binding for slot(s): {', '.join(sorted(missing))}")
    extra = set(bindings) - slots
    if extra:
        raise RenderError(f"binding(s) without a matching slot: {', '.join(sorted(extra))}")
    return SLOT_PATTERN.sub(lambda m: str(bindings[m.group(1)]), body)


def _parse_template_file(text: str, filename: str) -> PromptTemplate:
    first, sep, rest = text.partition("\n")
    header = first.strip()
    if not header.startswith("#"):
        raise RenderError(f"{filename}: first line must be a '# id=... triggers=...' header")
    fields: dict[str, str] = {}
    for token in header.lstrip("#").split():
        key, eq, value = token.partition("=")
        if not eq:
            raise RenderError(f"{filename}: malformed header token {token!r}")
        fields[key] = value
    if "id" not in fields or "triggers" not in fields:
        raise RenderError(f"{filename}: header must name id and triggers")
    triggers = frozenset(t for t in fields["triggers"].split(",") if t)
    body = rest[:-1] if rest.endswith("\n") else rest
    return PromptTemplate(template_id=fields["id"], body=body, triggers=triggers)


def _validate_routed(template: PromptTemplate) -> None:
    tid = template.template_id
    if tid not in _ROUTED_CONTRACT:
        raise RenderError(f"unknown template id {tid!r}")
    keyword, required_slots, triggers = _ROUTED_CONTRACT[tid]
    if template.slots != frozenset(required_slots):
        raise RenderError(
            f"template {tid!r} must use exactly slots {sorted(required_slots)}, "
            f"found {sorted(template.slots)}"
        )
    if template.triggers != triggers:
        raise RenderError(f"template {tid!r} must declare triggers {sorted(triggers)}")
    if keyword and keyword not in template.body:
        raise RenderError(f"template {tid!r} must contain the trigger keyword {keyword!r}")


class TemplateStore:
    """Immutable set of the four routed templates, keyed by id.

    The default store holds the packaged English templates; a parallel
    language set is a drop-in directory with the same four file names.
    """

    def __init__(self, templates: Mapping[str, PromptTemplate]):
        for tid in ROUTED_IDS:
            if tid not in templates:
                raise RenderError(f"template store is missing {tid!r}")
        for template in templates.values():
            _validate_routed(template)
        self._templates = dict(templates)
        digest = hashlib.sha256()
        for tid in ROUTED_IDS:
            digest.update(tid.encode("utf-8"))
            digest.update(self._templates[tid].body.encode("utf-8"))
        self.version = digest.hexdigest()[:12]

    def get(self, template_id: str) -> PromptTemplate:
        try:
            return self._templates[template_id]
        except KeyError:
            raise RenderError(f"unknown template id {template_id!r}") from None

    @classmethod
    def from_dir(cls, path: str | Path) -> "TemplateStore":
        path = Path(path)
        templates = {}
        for tid in ROUTED_IDS:
            file = path / f"{tid}.txt"
            if not file.exists():
                raise RenderError(f"template directory {path} is missing {file.name}")
            template = _parse_template_file(file.read_text(encoding="utf-8"), file.name)
            templates[template.template_id] = template
        return cls(templates)

    @classmethod
    def default(cls) -> "TemplateStore":
        global _DEFAULT_STORE
        if _DEFAULT_STORE is None:
            templates = {}
            base = resources.files(__package__) / "prompts" / "en"
            for tid in ROUTED_IDS:
                text = (base / f"{tid}.txt").read_text(encoding="utf-8")
                template = _parse_template_file(text, f"{tid}.txt")
                templates[template.template_id] = template
            _DEFAULT_STORE = cls(templates)
        return _DEFAULT_STORE


_DEFAULT_STORE: TemplateStore | None = None


def render(template_id: str, bindings: Mapping[str, str], store: TemplateStore | None = None) -> str:
    """Render a routed template by slot substitution.

    Non-slot text is returned byte-identical to the stored template body.
    """
    store = store or TemplateStore.default()
    return substitute(store.get(template_id).body, bindings)


def triggers(template_id: str, store: TemplateStore | None = None) -> frozenset[str]:
    """The downstream modules a template activates: product -> {rag}, instance -> {tig}."""
    store = store or TemplateStore.default()
    return store.get(template_id).triggers


def load_prompt(name: str) -> str:
    """Load an auxiliary prompt body (judges, classification, generation stages) by file stem."""
    file = resources.files(__package__) / "prompts" / f"{name}.txt"
    try:
        text = file.read_text(encoding="utf-8")
    except FileNotFoundError:
        raise RenderError(f"unknown auxiliary prompt {name!r}") from None
    return text[:-1] if text.endswith("\n") else text
