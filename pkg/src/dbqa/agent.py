"""ReAct-style tool invocation over simulated database tools.

The loop renders the instance prompt with a tool listing and a growing
scratchpad, asks the model for one step, parses the labeled-line grammar
(``Thought:`` / ``Action:`` / ``Action_Input:`` or ``Final_Answer:``),
dispatches the named tool against a desk-scale simulated instance, appends
the post-processed observation, and iterates until a final answer or the
step limit. Generation is interrupted at tool calls by sending
``Observation:`` as a stop sequence, so the model cannot invent tool output.

Tools come in six common kinds (schema, selection, resource, workload,
status, tuning) with real fixture-backed executors, plus free-form
generalization tools. A live-database executor can be plugged in behind the
same ``(action_input, instance) -> observation`` signature.
"""

from __future__ import annotations

import json
import logging
import random
import re
from dataclasses import dataclass, field
from enum import Enum
from pathlib import Path
from typing import Any, Callable, Iterable, Sequence

from . import templates
from .errors import CotParseError, IntegrityError
from .gateway import BackendConfig, complete, user_request

logger = logging.getLogger(__name__)

DEFAULT_MAX_STEPS = 8
DEFAULT_POSTPROCESS_MAX_LINES = 50
STOP_AT_OBSERVATION = ("Observation:",)

TERMINATED_FINAL = "final_answer"
TERMINATED_FAILURE = "failure"
TERMINATED_STEP_LIMIT = "step_limit"


class ToolKind(str, Enum):
    SCHEMA = "schema"
    SELECTION = "selection"
    RESOURCE = "resource"
    WORKLOAD = "workload"
    STATUS = "status"
    TUNING = "tuning"
    GENERALIZATION = "generalization"


COMMON_KINDS = (
    ToolKind.SCHEMA,
    ToolKind.SELECTION,
    ToolKind.RESOURCE,
    ToolKind.WORKLOAD,
    ToolKind.STATUS,
    ToolKind.TUNING,
)


# ---------------------------------------------------------------------------
# Simulated instance fixtures


@dataclass
class TableFixture:
    name: str
    columns: list[str]
    rows: list[tuple] = field(default_factory=list)
    constraints: list[str] = field(default_factory=list)


@dataclass
class SimulatedInstance:
    """Desk-scale stand-in for a live database: schemas, rows, knobs and counters."""

    tables: dict[str, TableFixture] = field(default_factory=dict)
    knobs: dict[str, str] = field(default_factory=dict)
    metrics: dict[str, float] = field(default_factory=dict)
    indexes: list[dict] = field(default_factory=list)
    views: list[str] = field(default_factory=list)
    workload: list[dict] = field(default_factory=list)
    hints: list[str] = field(default_factory=list)


def default_instance() -> SimulatedInstance:
    """A small orders/customers fixture used by tests, demos and the CLI default."""
    return SimulatedInstance(
        tables={
            "orders": TableFixture(
                name="orders",
                columns=["id", "customer_id", "amount", "status"],
                rows=[
                    (1, 101, 250.0, "open"),
                    (2, 102, 80.5, "shipped"),
                    (3, 101, 120.0, "open"),
                    (4, 103, 310.0, "cancelled"),
                    (5, 102, 45.0, "open"),
                ],
                constraints=[
                    "PRIMARY KEY (id)",
                    "FOREIGN KEY (customer_id) REFERENCES customers(id)",
                ],
            ),
            "customers": TableFixture(
                name="customers",
                columns=["id", "name", "region"],
                rows=[(101, "Acme", "emea"), (102, "Globex", "apac"), (103, "Initech", "amer")],
                constraints=["PRIMARY KEY (id)"],
            ),
        },
        knobs={"shared_buffers": "128MB", "work_mem": "4MB", "max_connections": "100"},
        metrics={
            "cpu_percent": 37.5,
            "memory_used_mb": 2048.0,
            "memory_total_mb": 8192.0,
            "disk_read_iops": 120.0,
            "disk_write_iops": 45.0,
        },
        indexes=[{"name": "idx_orders_id", "table": "orders", "columns": ["id"]}],
        views=["v_open_orders"],
        workload=[
            {
                "query": "SELECT * FROM orders WHERE status = 'open'",
                "mean_time_ms": 840.0,
                "calls": 512,
            },
            {"query": "SELECT count(*) FROM customers", "mean_time_ms": 12.0, "calls": 90},
        ],
    )


# ---------------------------------------------------------------------------
# Tool results and executors


@dataclass(frozen=True)
class ResultSet:
    """Tabular tool output; rendered as a Markdown pipe table downstream."""

    columns: tuple[str, ...]
    rows: tuple[tuple, ...] = ()


def render_markdown_table(result: ResultSet) -> str:
    def cell(value: Any) -> str:
        return str(value).replace("|", "\\|")

    header = "| " + " | ".join(cell(c) for c in result.columns) + " |"
    separator = "| " + " | ".join("---" for _ in result.columns) + " |"
    lines = [header, separator]
    for row in result.rows:
        lines.append("| " + " | ".join(cell(v) for v in row) + " |")
    return "\n".join(lines)


def _schema_executor(action_input: str, instance: SimulatedInstance) -> str:
    name = action_input.strip()
    if name:
        table = instance.tables.get(name)
        if table is None:
            return f"No table named {name!r}. Known tables: {', '.join(sorted(instance.tables))}"
        tables = [table]
    else:
        tables = [instance.tables[t] for t in sorted(instance.tables)]
    lines = []
    for table in tables:
        constraints = "; ".join(table.constraints) if table.constraints else "none"
        lines.append(
            f"Table {table.name} (columns: {', '.join(table.columns)}; constraints: {constraints})"
        )
    return "\n".join(lines) if lines else "The instance has no tables."


_SQL_RE = re.compile(
    r"^\s*select\s+(?P<cols>.+?)\s+from\s+(?P<table>\w+)"
    r"(?:\s+where\s+(?P<wcol>\w+)\s*(?P<op><=|>=|!=|<>|=|<|>)\s*(?P<wval>'[^']*'|\"[^\"]*\"|\S+))?"
    r"(?:\s+limit\s+(?P<limit>\d+))?\s*;?\s*$",
    re.IGNORECASE | re.DOTALL,
)
_AGG_RE = re.compile(r"^(count|sum|avg|min|max)\((\*|\w+)\)$", re.IGNORECASE)


def _coerce(value: str):
    value = value.strip()
    if value and value[0] in "'\"" and value[-1] == value[0]:
        return value[1:-1]
    try:
        return float(value)
    except ValueError:
        return value


def _match_row(row_value, op: str, literal) -> bool:
    if isinstance(literal, float):
        try:
            row_value = float(row_value)
        except (TypeError, ValueError):
            return False
    else:
        row_value = str(row_value)
        literal = str(literal)
    if op == "=":
        return row_value == literal
    if op in ("!=", "<>"):
        return row_value != literal
    if op == "<":
        return row_value < literal
    if op == "<=":
        return row_value <= literal
    if op == ">":
        return row_value > literal
    return row_value >= literal


def _selection_executor(action_input: str, instance: SimulatedInstance) -> ResultSet | str:
    match = _SQL_RE.match(action_input)
    if not match:
        return (
            f"Selection tool could not execute {action_input!r}: expected "
            "SELECT <columns|aggregate> FROM <table> [WHERE <col> <op> <value>] [LIMIT n]"
        )
    table = instance.tables.get(match.group("table"))
    if table is None:
        return (
            f"Selection tool: no table named {match.group('table')!r}. "
            f"Known tables: {', '.join(sorted(instance.tables))}"
        )
    rows = list(table.rows)
    if match.group("wcol"):
        col = match.group("wcol")
        if col not in table.columns:
            return f"Selection tool: table {table.name!r} has no column {col!r}"
        idx = table.columns.index(col)
        literal = _coerce(match.group("wval"))
        rows = [r for r in rows if _match_row(r[idx], match.group("op"), literal)]
    if match.group("limit"):
        rows = rows[: int(match.group("limit"))]

    cols_spec = match.group("cols").strip()
    agg = _AGG_RE.match(cols_spec)
    if agg:
        func, target = agg.group(1).lower(), agg.group(2)
        if func == "count":
            return ResultSet(columns=("count",), rows=((len(rows),),))
        if target == "*" or target not in table.columns:
            return f"Selection tool: {func} needs a column of table {table.name!r}"
        values = [float(r[table.columns.index(target)]) for r in rows]
        if not values:
            return ResultSet(columns=(func,), rows=((None,),))
        result = {
            "sum": sum(values),
            "avg": sum(values) / len(values),
            "min": min(values),
            "max": max(values),
        }[func]
        return ResultSet(columns=(func,), rows=((result,),))
    if cols_spec == "*":
        selected = list(table.columns)
    else:
        selected = [c.strip() for c in cols_spec.split(",")]
        unknown = [c for c in selected if c not in table.columns]
        if unknown:
            return f"Selection tool: table {table.name!r} has no column(s) {', '.join(unknown)}"
    indices = [table.columns.index(c) for c in selected]
    return ResultSet(
        columns=tuple(selected), rows=tuple(tuple(r[i] for i in indices) for r in rows)
    )


def _resource_executor(action_input: str, instance: SimulatedInstance) -> ResultSet:
    needle = action_input.strip().lower()
    rows = [
        (name, instance.metrics[name])
        for name in sorted(instance.metrics)
        if not needle or needle in name.lower()
    ]
    return ResultSet(columns=("metric", "value"), rows=tuple(rows))


def _workload_executor(action_input: str, instance: SimulatedInstance) -> ResultSet:
    text = action_input.strip()
    min_ms = 0.0
    if text:
        try:
            min_ms = float(text)
        except ValueError:
            min_ms = 0.0
    rows = [
        (e["query"], e["mean_time_ms"], e["calls"])
        for e in instance.workload
        if e["mean_time_ms"] >= min_ms
    ]
    return ResultSet(columns=("query", "mean_time_ms", "calls"), rows=tuple(rows))


def _status_executor(action_input: str, instance: SimulatedInstance) -> str:
    section = action_input.strip().lower()
    parts: list[str] = []
    if section in ("", "indexes"):
        lines = [
            f"- {ix['name']} ON {ix['table']}({', '.join(ix['columns'])})"
            for ix in instance.indexes
        ]
        parts.append("Indexes:\n" + ("\n".join(lines) if lines else "- none"))
    if section in ("", "views"):
        lines = [f"- {v}" for v in instance.views]
        parts.append("Views:\n" + ("\n".join(lines) if lines else "- none"))
    if section in ("", "knobs"):
        lines = [f"- {k} = {instance.knobs[k]}" for k in sorted(instance.knobs)]
        parts.append("Knob settings:\n" + ("\n".join(lines) if lines else "- none"))
    if not parts:
        return f"Status tool: unknown section {action_input!r} (use indexes, views or knobs)"
    return "\n".join(parts)


def _tuning_executor(action_input: str, instance: SimulatedInstance) -> str:
    target = action_input.strip()
    indexed = {
        (ix["table"], col) for ix in instance.indexes for col in ix.get("columns", [])
    }
    advice: list[str] = []
    for entry in instance.workload:
        m = re.search(r"from\s+(\w+).*?where\s+(\w+)", entry["query"], re.IGNORECASE | re.DOTALL)
        if not m:
            continue
        table, col = m.group(1), m.group(2)
        if target and table != target:
            continue
        if (table, col) not in indexed:
            advice.append(
                f"CREATE INDEX idx_{table}_{col} ON {table}({col}) "
                f"-- speeds up: {entry['query']}"
            )
    advice.extend(instance.hints)
    return "\n".join(advice) if advice else "No optimization opportunities found."


_BUILTIN_EXECUTORS: dict[str, Callable[[str, SimulatedInstance], ResultSet | str]] = {
    "schema": _schema_executor,
    "selection": _selection_executor,
    "resource": _resource_executor,
    "workload": _workload_executor,
    "status": _status_executor,
    "tuning": _tuning_executor,
}


def canned_executor(text: str) -> Callable[[str, SimulatedInstance], str]:
    """Executor returning a fixed observation (generalization-tool stand-in)."""

    def run(action_input: str, instance: SimulatedInstance) -> str:
        return text

    return run


# ---------------------------------------------------------------------------
# Tool specs and pools


@dataclass(frozen=True)
class ToolSpec:
    """A named tool: what it does, what its input looks like, and how to run it."""

    name: str
    kind: ToolKind
    description: str
    input_format: str
    executor: Callable[[str, SimulatedInstance], ResultSet | str]


class ToolPool:
    """Tools with unique names; lookup is exact-match on the name."""

    def __init__(self, tools: Iterable[ToolSpec]):
        self.tools = list(tools)
        names = [t.name for t in self.tools]
        if len(set(names)) != len(names):
            dupes = sorted({n for n in names if names.count(n) > 1})
            raise IntegrityError(f"duplicate tool names: {dupes}")
        self._by_name = {t.name: t for t in self.tools}

    def __len__(self) -> int:
        return len(self.tools)

    def __iter__(self):
        return iter(self.tools)

    def get(self, name: str) -> ToolSpec | None:
        return self._by_name.get(name)


def default_tool_pool() -> ToolPool:
    """Six common tools plus four canned generalization tools."""
    common = [
        ToolSpec(
            "Schema",
            ToolKind.SCHEMA,
            "Obtain database table structure, constraints, etc.",
            "a table name, or empty for all tables",
            _schema_executor,
        ),
        ToolSpec(
            "Selection",
            ToolKind.SELECTION,
            "Return SQL execution results of retrieving specific data from the database, computing data distribution, etc.",
            "a single SQL query",
            _selection_executor,
        ),
        ToolSpec(
            "Resource",
            ToolKind.RESOURCE,
            "Obtain information about CPU usage, memory, disk IO, etc.",
            "a metric name filter, or empty for all metrics",
            _resource_executor,
        ),
        ToolSpec(
            "Workload",
            ToolKind.WORKLOAD,
            "Workload analysis, slow query identification, etc.",
            "a minimum mean latency in milliseconds, or empty for the whole workload",
            _workload_executor,
        ),
        ToolSpec(
            "Status",
            ToolKind.STATUS,
            "Detailed information about the current indexes, views, knob settings, etc.",
            "one of: indexes, views, knobs; or empty for all sections",
            _status_executor,
        ),
        ToolSpec(
            "Tuning",
            ToolKind.TUNING,
            "Identify optimization opportunities by advising indexes, setting knobs, etc.",
            "a table name to focus on, or empty to analyze the whole instance",
            _tuning_executor,
        ),
    ]
    generalization = [
        ToolSpec(
            "Backup_Inspector",
            ToolKind.GENERALIZATION,
            "Inspect backup history and restore points.",
            "a backup label, or empty for the latest backup",
            canned_executor("Latest backup: base_2024_04_01 (full, 42 GB, verified)."),
        ),
        ToolSpec(
            "Permission_Auditor",
            ToolKind.GENERALIZATION,
            "Audit role grants and object permissions.",
            "a role or table name",
            canned_executor("Role app_rw: SELECT/INSERT/UPDATE on orders, customers."),
        ),
        ToolSpec(
            "Replication_Monitor",
            ToolKind.GENERALIZATION,
            "Report replication lag and standby health.",
            "a standby name, or empty for all standbys",
            canned_executor("Standby s1: streaming, lag 0.4 s; standby s2: streaming, lag 1.2 s."),
        ),
        ToolSpec(
            "Capacity_Planner",
            ToolKind.GENERALIZATION,
            "Project storage and connection growth.",
            "a horizon in days",
            canned_executor("Projected storage in 90 days: 310 GB (+18%); connections stable."),
        ),
    ]
    return ToolPool(common + generalization)


def load_tool_pool(path: str | Path) -> ToolPool:
    """Load a tool pool definition file.

    JSON list of {name, kind, description, input_format, binding} where
    binding is {"builtin": <executor key>} or {"canned": <text>}; tools
    without a binding echo their invocation.
    """
    entries = json.loads(Path(path).read_text(encoding="utf-8"))
    tools = []
    for entry in entries:
        binding = entry.get("binding", {})
        name = entry["name"]
        if "builtin" in binding:
            key = binding["builtin"]
            if key not in _BUILTIN_EXECUTORS:
                raise ValueError(f"tool {name!r}: unknown builtin executor {key!r}")
            executor = _BUILTIN_EXECUTORS[key]
        elif "canned" in binding:
            executor = canned_executor(binding["canned"])
        else:
            def executor(action_input, instance, _name=name):  # noqa: ANN001
                return f"{_name} executed with input: {action_input}"
        tools.append(
            ToolSpec(
                name=name,
                kind=ToolKind(entry["kind"]),
                description=entry["description"],
                input_format=entry["input_format"],
                executor=executor,
            )
        )
    return ToolPool(tools)


def render_tool_lines(tools: Iterable[ToolSpec]) -> str:
    """The tool listing injected into the instance prompt, one line per tool."""
    return "\n".join(f"- {t.name}: {t.description} Input: {t.input_format}" for t in tools)


# ---------------------------------------------------------------------------
# COT steps, parsing and traces


@dataclass(frozen=True)
class ParsedStep:
    """One parsed model step: either a tool call or a final answer."""

    thought: str = ""
    action: str | None = None
    action_input: str | None = None
    final_answer: str | None = None

    @property
    def is_final(self) -> bool:
        return self.final_answer is not None


@dataclass(frozen=True)
class CotStep:
    """One executed tool step inside a trace."""

    thought: str
    action: str
    action_input: str
    observation: str | None = None


@dataclass(frozen=True)
class CotTrace:
    """A full reasoning chain: tool steps plus how it ended."""

    steps: tuple[CotStep, ...]
    final_answer: str | None
    terminated_by: str
    failure_output: str | None = None

    def __post_init__(self):
        object.__setattr__(self, "steps", tuple(self.steps))
        if self.terminated_by not in (TERMINATED_FINAL, TERMINATED_FAILURE, TERMINATED_STEP_LIMIT):
            raise ValueError(f"unknown termination {self.terminated_by!r}")
        if (self.final_answer is not None) != (self.terminated_by == TERMINATED_FINAL):
            raise ValueError("final_answer must be present exactly when terminated_by=final_answer")

    def to_dict(self) -> dict:
        return {
            "steps": [
                {
                    "thought": s.thought,
                    "action": s.action,
                    "action_input": s.action_input,
                    "observation": s.observation,
                }
                for s in self.steps
            ],
            "final_answer": self.final_answer,
            "terminated_by": self.terminated_by,
            "failure_output": self.failure_output,
        }

    @classmethod
    def from_dict(cls, obj: dict) -> "CotTrace":
        return cls(
            steps=tuple(
                CotStep(
                    thought=s.get("thought", ""),
                    action=s["action"],
                    action_input=s["action_input"],
                    observation=s.get("observation"),
                )
                for s in obj.get("steps", [])
            ),
            final_answer=obj.get("final_answer"),
            terminated_by=obj["terminated_by"],
            failure_output=obj.get("failure_output"),
        )


def _after(line: str, label: str) -> str:
    return line[len(label) :].strip()


def parse_cot_step(model_output: str) -> ParsedStep:
    """Parse the first complete step out of raw model output.

    Grammar: an optional ``Thought:`` line, then either an ``Action:`` line
    followed by an ``Action_Input:`` line, or a ``Final_Answer:`` line (which
    captures the rest of the output, so answers may span lines). Text after
    the first complete tool step is ignored; generation is interrupted there.
    """
    lines = model_output.splitlines()
    thought = ""
    for idx, raw in enumerate(lines):
        line = raw.strip()
        if line.startswith("Thought:"):
            thought = _after(line, "Thought:")
            continue
        if line.startswith("Final_Answer:"):
            tail = [_after(line, "Final_Answer:")] + [l for l in lines[idx + 1 :]]
            return ParsedStep(final_answer="\n".join(tail).strip())
        if line.startswith("Action:"):
            action = _after(line, "Action:")
            if not action:
                raise CotParseError(f"empty Action in step: {model_output!r}")
            for nxt in lines[idx + 1 :]:
                nxt = nxt.strip()
                if not nxt:
                    continue
                if nxt.startswith("Action_Input:"):
                    return ParsedStep(
                        thought=thought, action=action, action_input=_after(nxt, "Action_Input:")
                    )
                break
            raise CotParseError(f"Action without Action_Input in step: {model_output!r}")
    raise CotParseError(f"neither Action nor Final_Answer in output: {model_output!r}")


def format_cot_step(step: ParsedStep) -> str:
    """Inverse of parse_cot_step for well-formed steps."""
    if step.is_final:
        return f"Final_Answer: {step.final_answer}"
    parts = []
    if step.thought:
        parts.append(f"Thought: {step.thought}")
    parts.append(f"Action: {step.action}")
    parts.append(f"Action_Input: {step.action_input}")
    return "\n".join(parts)


def format_trace(trace: CotTrace) -> str:
    """Scratchpad-style rendering of a whole trace (steps, observations, ending)."""
    parts = []
    for step in trace.steps:
        parts.append(
            format_cot_step(
                ParsedStep(thought=step.thought, action=step.action, action_input=step.action_input)
            )
        )
        if step.observation is not None:
            parts.append(f"Observation: {step.observation}")
    if trace.final_answer is not None:
        parts.append(f"Final_Answer: {trace.final_answer}")
    return "\n".join(parts)


# ---------------------------------------------------------------------------
# Dispatch, post-processing and the loop


def dispatch_tool(
    pool: ToolPool, action: str, action_input: str, instance: SimulatedInstance
) -> ResultSet | str:
    """Run the named tool against the instance; never raises.

    An unmatched name yields an in-band "Tool not found" observation so the
    loop continues and the model can recover; executor faults are returned
    as error text.
    """
    tool = pool.get(action)
    if tool is None:
        return f"Tool not found: {action}"
    try:
        return tool.executor(action_input, instance)
    except Exception as exc:  # executor faults become observations, never aborts
        logger.warning("tool %s failed on input %r: %s", action, action_input, exc)
        return f"Tool {action} failed: {exc}"


def postprocess_tool_output(
    raw: ResultSet | str,
    relevance_terms: Sequence[str] = (),
    max_lines: int = DEFAULT_POSTPROCESS_MAX_LINES,
) -> str:
    """Turn raw tool output into observation text.

    Tabular results become a Markdown pipe table. Text longer than
    ``max_lines`` is filtered to lines containing any relevance term; if the
    result still exceeds the cap it is truncated with an elision marker.
    """
    text = render_markdown_table(raw) if isinstance(raw, ResultSet) else str(raw)
    lines = text.splitlines()
    if len(lines) <= max_lines:
        return text
    if relevance_terms:
        lowered = [t.lower() for t in relevance_terms]
        matched = [ln for ln in lines if any(t in ln.lower() for t in lowered)]
        if matched:
            lines = matched
    if len(lines) > max_lines:
        omitted = len(lines) - max_lines
        lines = lines[:max_lines] + [f"... ({omitted} more lines omitted)"]
    return "\n".join(lines)


def run_agent_loop(
    backend: BackendConfig,
    question: str,
    pool: ToolPool,
    instance: SimulatedInstance,
    max_steps: int = DEFAULT_MAX_STEPS,
    *,
    template: templates.PromptTemplate | None = None,
    store: templates.TemplateStore | None = None,
    relevance_terms: Sequence[str] = (),
    postprocess_max_lines: int = DEFAULT_POSTPROCESS_MAX_LINES,
) -> CotTrace:
    """Drive the think/act/observe loop until a final answer, a parse failure
    or the step limit.

    Each iteration completes with ``Observation:`` as a stop sequence, parses
    one step, dispatches the tool, and appends the post-processed observation
    to the scratchpad. The scratchpad after k steps contains exactly k
    ``Observation:`` markers.
    """
    if max_steps < 1:
        raise ValueError("max_steps must be >= 1")
    if template is None:
        template = (store or templates.TemplateStore.default()).get("instance")
    tool_lines = render_tool_lines(pool)
    scratchpad = ""
    steps: list[CotStep] = []
    for _ in range(max_steps):
        prompt = templates.substitute(
            template.body, {"Q": question, "T": tool_lines, "Agent_Scratchpad": scratchpad}
        )
        output = complete(
            backend, user_request(prompt, stop_sequences=STOP_AT_OBSERVATION)
        )
        try:
            parsed = parse_cot_step(output)
        except CotParseError:
            return CotTrace(
                steps=tuple(steps),
                final_answer=None,
                terminated_by=TERMINATED_FAILURE,
                failure_output=output,
            )
        if parsed.is_final:
            return CotTrace(
                steps=tuple(steps), final_answer=parsed.final_answer, terminated_by=TERMINATED_FINAL
            )
        observation = postprocess_tool_output(
            dispatch_tool(pool, parsed.action, parsed.action_input, instance),
            relevance_terms,
            postprocess_max_lines,
        )
        steps.append(
            CotStep(
                thought=parsed.thought,
                action=parsed.action,
                action_input=parsed.action_input,
                observation=observation,
            )
        )
        scratchpad += format_cot_step(parsed) + f"\nObservation: {observation}\n"
    return CotTrace(steps=tuple(steps), final_answer=None, terminated_by=TERMINATED_STEP_LIMIT)


def sample_tool_slate(
    ground_truth_tools: Sequence[ToolSpec],
    pool: ToolPool,
    n_random: int = 4,
    rng_seed: int = 0,
) -> ToolPool:
    """Ground-truth tools plus ``n_random`` distinct decoys drawn from the pool.

    Decoys never duplicate a ground-truth tool; the slate order is shuffled
    deterministically by seed.
    """
    unique_gt: list[ToolSpec] = []
    seen: set[str] = set()
    for tool in ground_truth_tools:
        if tool.name not in seen:
            unique_gt.append(tool)
            seen.add(tool.name)
    candidates = [t for t in pool if t.name not in seen]
    if len(candidates) < n_random:
        raise ValueError(
            f"pool has only {len(candidates)} tools outside the ground truth; need {n_random}"
        )
    rng = random.Random(rng_seed)
    slate = unique_gt + rng.sample(candidates, n_random)
    rng.shuffle(slate)
    return ToolPool(slate)
