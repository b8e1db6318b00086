"""Uniform access to language-model backends.

Two backend kinds share one ``complete()`` entry point: a remote
chat-completion service speaking the de-facto open HTTP contract (POST
``{model, messages, temperature, ...}``, response carries
``choices[0].message.content``), and a deterministic scripted stub for
offline tests. Judge roles (pairwise answer comparison, tool-input format
checking) are built on top so every caller stays LLM-agnostic.

Scripted backends consume their entries strictly in order; an entry may pin
a matcher substring that the rendered prompt must contain, which guards test
fixtures against silent prompt drift.
"""

from __future__ import annotations

import enum
import logging
import os
import threading
import time
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Sequence

import requests

try:  # stdlib on 3.11+
    import tomllib
except ModuleNotFoundError:  # pragma: no cover - depends on interpreter
    import tomli as tomllib

from . import templates
from .errors import (
    JudgeFormatError,
    ScriptExhaustedError,
    ScriptMismatchError,
    ServiceError,
    TransportError,
)

logger = logging.getLogger(__name__)

DEFAULT_API_KEY_ENV = "DBQA_API_KEY"

# Statuses worth retrying: rate limits and server-side failures.
_RETRYABLE_STATUSES = {429, 500, 502, 503, 504}


class Verdict(enum.IntEnum):
    """Pairwise judgment outcome; the int value is the comparison score r."""

    WIN = 1
    TIE = 0
    LOSE = -1


@dataclass(frozen=True)
class ChatMessage:
    role: str
    content: str

    def __post_init__(self):
        if self.role not in ("system", "user", "assistant"):
            raise ValueError(f"unknown role {self.role!r}")
        if self.role in ("user", "assistant") and not self.content:
            raise ValueError(f"{self.role} message must have non-empty content")


@dataclass(frozen=True)
class CompletionRequest:
    messages: tuple[ChatMessage, ...]
    temperature: float = 0.0
    max_tokens: int = 1024
    stop_sequences: tuple[str, ...] = ()

    def __post_init__(self):
        object.__setattr__(self, "messages", tuple(self.messages))
        object.__setattr__(self, "stop_sequences", tuple(self.stop_sequences))
        if not self.messages:
            raise ValueError("request must carry at least one message")
        if self.temperature < 0:
            raise ValueError("temperature must be >= 0")
        if self.max_tokens <= 0:
            raise ValueError("max_tokens must be positive")

    @property
    def prompt_text(self) -> str:
        """All message contents joined; what scripted matchers are checked against."""
        return "\n".join(m.content for m in self.messages)


def user_request(prompt: str, **kwargs) -> CompletionRequest:
    """Convenience: a single-user-message request (temperature 0 by default)."""
    return CompletionRequest(messages=(ChatMessage("user", prompt),), **kwargs)


@dataclass(frozen=True)
class ScriptEntry:
    """One scripted response; ``match`` (if set) must occur in the rendered prompt."""

    response: str
    match: str | None = None


class Script:
    """Ordered scripted responses with thread-safe in-order consumption."""

    def __init__(self, entries: Sequence[ScriptEntry]):
        if not entries:
            raise ValueError("script must have at least one entry")
        self._entries = list(entries)
        self._cursor = 0
        self._lock = threading.Lock()

    def __len__(self) -> int:
        return len(self._entries)

    @property
    def consumed(self) -> int:
        return self._cursor

    def next_response(self, prompt: str) -> str:
        with self._lock:
            if self._cursor >= len(self._entries):
                raise ScriptExhaustedError(
                    f"script exhausted after {len(self._entries)} responses"
                )
            entry = self._entries[self._cursor]
            if entry.match is not None and entry.match not in prompt:
                raise ScriptMismatchError(
                    f"scripted response {self._cursor} expected the prompt to contain "
                    f"{entry.match!r}; prompt was: {prompt!r}"
                )
            self._cursor += 1
            return entry.response


@dataclass
class BackendConfig:
    """How to reach one model: a remote chat-completion endpoint or a scripted stub."""

    kind: str = "remote"
    model_name: str = ""
    endpoint_url: str | None = None
    timeout_s: float = 30.0
    max_retries: int = 2
    retry_backoff_s: float = 0.5
    api_key_env: str = DEFAULT_API_KEY_ENV
    max_in_flight: int = 8
    script: Script | None = None
    _gate: threading.Semaphore = field(init=False, repr=False, compare=False)

    def __post_init__(self):
        if self.kind not in ("remote", "scripted"):
            raise ValueError(f"unknown backend kind {self.kind!r}")
        if self.kind == "remote" and not self.endpoint_url:
            raise ValueError("remote backend requires endpoint_url")
        if self.kind == "scripted" and self.script is None:
            raise ValueError("scripted backend requires a script")
        if self.max_retries < 0:
            raise ValueError("max_retries must be >= 0")
        self._gate = threading.Semaphore(max(1, self.max_in_flight))


def register_script(
    responses: Iterable[str | tuple[str | None, str] | ScriptEntry],
    model_name: str = "scripted",
) -> BackendConfig:
    """Build a scripted backend from an ordered response list.

    Entries may be bare response strings, (matcher, response) pairs, or
    ScriptEntry objects. Calls consume entries in registration order.
    """
    entries: list[ScriptEntry] = []
    for item in responses:
        if isinstance(item, ScriptEntry):
            entries.append(item)
        elif isinstance(item, str):
            entries.append(ScriptEntry(response=item))
        else:
            match, response = item
            entries.append(ScriptEntry(response=response, match=match))
    return BackendConfig(kind="scripted", model_name=model_name, script=Script(entries))


def load_backend_config(path: str | Path) -> BackendConfig:
    """Read a backend config from a TOML file.

    Remote keys: endpoint_url, model_name, timeout_s, max_retries,
    retry_backoff_s, api_key_env, max_in_flight. Scripted configs carry a
    [[script]] array of {response, match?} tables.
    """
    path = Path(path)
    with path.open("rb") as fh:
        data = tomllib.load(fh)
    kind = data.get("kind", "remote")
    if kind == "scripted":
        entries = [
            ScriptEntry(response=e["response"], match=e.get("match"))
            for e in data.get("script", [])
        ]
        if not entries:
            raise ValueError(f"{path}: scripted backend config has an empty script")
        return BackendConfig(
            kind="scripted",
            model_name=data.get("model_name", "scripted"),
            script=Script(entries),
        )
    return BackendConfig(
        kind="remote",
        model_name=data.get("model_name", ""),
        endpoint_url=data.get("endpoint_url"),
        timeout_s=float(data.get("timeout_s", 30.0)),
        max_retries=int(data.get("max_retries", 2)),
        retry_backoff_s=float(data.get("retry_backoff_s", 0.5)),
        api_key_env=data.get("api_key_env", DEFAULT_API_KEY_ENV),
        max_in_flight=int(data.get("max_in_flight", 8)),
    )


def _truncate_at_stop(text: str, stop_sequences: Sequence[str]) -> str:
    # Defensive client-side cut in case the server ignores stop sequences.
    cut = len(text)
    for stop in stop_sequences:
        pos = text.find(stop)
        if pos != -1:
            cut = min(cut, pos)
    return text[:cut]


def _remote_complete(backend: BackendConfig, request: CompletionRequest) -> str:
    payload: dict = {
        "model": backend.model_name,
        "messages": [{"role": m.role, "content": m.content} for m in request.messages],
        "temperature": request.temperature,
        "max_tokens": request.max_tokens,
    }
    if request.stop_sequences:
        payload["stop"] = list(request.stop_sequences)
    headers = {"Content-Type": "application/json"}
    api_key = os.environ.get(backend.api_key_env, "")
    if api_key:
        headers["Authorization"] = f"Bearer {api_key}"

    attempts = backend.max_retries + 1
    last_status: int | None = None
    for attempt in range(attempts):
        try:
            resp = requests.post(
                backend.endpoint_url,
                json=payload,
                headers=headers,
                timeout=backend.timeout_s,
            )
        except requests.RequestException as exc:
            if attempt + 1 < attempts:
                time.sleep(backend.retry_backoff_s * (2**attempt))
                continue
            raise TransportError(
                f"{backend.endpoint_url} unreachable after {attempts} attempts: {exc}"
            ) from exc
        if 200 <= resp.status_code < 300:
            try:
                text = resp.json()["choices"][0]["message"]["content"]
            except (ValueError, KeyError, IndexError, TypeError) as exc:
                raise ServiceError(
                    f"{backend.endpoint_url} returned an unusable body: {exc}"
                ) from exc
            return _truncate_at_stop(text, request.stop_sequences)
        last_status = resp.status_code
        if resp.status_code in _RETRYABLE_STATUSES and attempt + 1 < attempts:
            time.sleep(backend.retry_backoff_s * (2**attempt))
            continue
        break
    raise ServiceError(
        f"{backend.endpoint_url} answered status {last_status} "
        f"(gave up after {attempts if last_status in _RETRYABLE_STATUSES else attempt + 1} attempt(s))"
    )


def complete(backend: BackendConfig, request: CompletionRequest) -> str:
    """Obtain one assistant completion from the backend.

    Remote backends retry transient failures (timeouts, 429/5xx) with
    exponential backoff, making at most ``max_retries + 1`` attempts, and
    honor stop sequences. Scripted backends return the next script entry.
    """
    if backend.kind == "scripted":
        return _truncate_at_stop(
            backend.script.next_response(request.prompt_text), request.stop_sequences
        )
    with backend._gate:
        return _remote_complete(backend, request)


def _parse_verdict_token(text: str) -> Verdict:
    token = text.strip().upper()
    if token == "A":
        return Verdict.WIN
    if token == "B":
        return Verdict.LOSE
    if token == "TIE":
        return Verdict.TIE
    raise JudgeFormatError(f"judge output {text!r} is not one of A, B, TIE")


def judge_pair(
    judge: BackendConfig,
    question: str,
    ground_truth: str,
    answer_a: str,
    answer_b: str,
    swap_positions: bool = False,
) -> Verdict:
    """Compare answer_a against answer_b with the reference answer as ground truth.

    Returns the verdict for answer_a. With ``swap_positions`` the judge is
    called a second time with the candidates swapped; if the two orderings
    disagree the result is a tie (position-bias control).
    """
    for name, value in (
        ("question", question),
        ("ground_truth", ground_truth),
        ("answer_a", answer_a),
        ("answer_b", answer_b),
    ):
        if not value:
            raise ValueError(f"{name} must be non-empty")
    body = templates.load_prompt("judge_pairwise")
    prompt = templates.substitute(
        body, {"Q": question, "GT": ground_truth, "A": answer_a, "B": answer_b}
    )
    verdict = _parse_verdict_token(complete(judge, user_request(prompt, max_tokens=8)))
    if not swap_positions:
        return verdict
    swapped_prompt = templates.substitute(
        body, {"Q": question, "GT": ground_truth, "A": answer_b, "B": answer_a}
    )
    swapped = _parse_verdict_token(complete(judge, user_request(swapped_prompt, max_tokens=8)))
    # Map the swapped ordering back to answer_a's point of view.
    swapped_back = Verdict(-int(swapped))
    return verdict if verdict == swapped_back else Verdict.TIE


def judge_tool_format(judge: BackendConfig, tool, action_input: str) -> bool:
    """Ask the judge whether ``action_input`` satisfies the tool's declared input format.

    ``tool`` must expose ``name`` and ``input_format``. Returns True only for
    the affirmative token; unparseable output raises JudgeFormatError.
    """
    prompt = templates.substitute(
        templates.load_prompt("judge_tool_format"),
        {"NAME": tool.name, "FORMAT": tool.input_format, "INPUT": action_input},
    )
    text = complete(judge, user_request(prompt, max_tokens=8))
    token = text.strip().upper()
    if token == "YES":
        return True
    if token == "NO":
        return False
    raise JudgeFormatError(f"format judge output {text!r} is not YES or NO")
