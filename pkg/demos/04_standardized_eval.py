"""Run the standardized instance-suite evaluation end to end, fully offline.

Ground-truth tool chains come from the dataset records; the evaluated model
only has to pick each next action. Matching picks splice in the recorded
observation, a mismatch appends "Tool Invocation Failure." and stops, so the
scores isolate tool selection and formatting from instance noise. The judge
is scripted too: per step it checks the input format (YES/NO), and per
record it compares the two candidate answers (A/B/TIE).

Run: python demos/04_standardized_eval.py
"""

from dbqa.agent import default_tool_pool
from dbqa.corpus import Dataset, QAPair, QuestionCategory, ToolCall
from dbqa.evaluation import SuiteConfig, run_suite
from dbqa.gateway import register_script

dataset = Dataset(
    records=[
        QAPair(
            id="i1",
            lang="en",
            category=QuestionCategory.INSTANCE,
            question="Is the orders table healthy?",
            reference_answer="Yes; the schema is consistent and constraints hold.",
            tool_chain=[
                ToolCall("Schema", "orders", "Table orders (columns: id, customer_id, amount, status)")
            ],
        ),
        QAPair(
            id="i2",
            lang="en",
            category=QuestionCategory.INSTANCE,
            question="Why are order queries slow?",
            reference_answer="A sequential scan on orders dominates the workload.",
            tool_chain=[
                ToolCall("Schema", "orders", "Table orders (columns: id, customer_id, amount, status)"),
                ToolCall("Workload", "", "SELECT * FROM orders WHERE status='open' | 840ms | 512 calls"),
            ],
        ),
    ]
)

model = register_script(
    [
        "Thought: inspect schema\nAction: Schema\nAction_Input: orders",
        "Final_Answer: The orders table is healthy.",
        "Thought: schema first\nAction: Schema\nAction_Input: orders",
        "Thought: check the workload\nAction: Workload\nAction_Input:",
        "Final_Answer: A slow sequential scan on orders dominates.",
    ],
    model_name="demo-model",
)
# The competitor picks a wrong tool on the second record.
competitor = register_script(
    [
        "Thought: inspect schema\nAction: Schema\nAction_Input: orders",
        "Final_Answer: Looks fine to me.",
        "Thought: jump to tuning\nAction: Tuning\nAction_Input: orders",
    ],
    model_name="demo-competitor",
)
# Judge consumption per record: one YES per model step (format checks),
# then one pairwise verdict. Record i1: YES, A. Record i2: YES, YES, A.
judge = register_script(
    ["YES", "A", "YES", "YES", "A"],
    model_name="demo-judge",
)

report = run_suite(
    dataset,
    "instance",
    model,
    competitor_backend=competitor,
    judge_backend=judge,
    config=SuiteConfig(pool=default_tool_pool(), seed=7),
)

print(report.to_markdown())
print("raw JSON report:")
print(report.to_json())
