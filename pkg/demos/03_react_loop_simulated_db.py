"""Drive the think/act/observe tool loop against the simulated instance.

A scripted backend stands in for the model, emitting Thought/Action/
Action_Input steps. The loop interrupts generation at each tool call
(stop sequence "Observation:"), runs the named tool against the in-memory
database fixture, and feeds the post-processed observation back.

Run: python demos/03_react_loop_simulated_db.py
"""

from dbqa.agent import default_instance, default_tool_pool, format_trace, run_agent_loop
from dbqa.gateway import register_script

pool = default_tool_pool()
instance = default_instance()

print("tools in the pool:")
for tool in pool:
    print(f"  - {tool.name} ({tool.kind.value}): {tool.description}")

model = register_script(
    [
        "Thought: I should look at the table layout first.\n"
        "Action: Schema\n"
        "Action_Input: orders",
        "Thought: Now check what the workload looks like.\n"
        "Action: Workload\n"
        "Action_Input: 100",
        "Thought: Count how many open orders are involved.\n"
        "Action: Selection\n"
        "Action_Input: SELECT count(*) FROM orders WHERE status = 'open'",
        "Thought: Ask the advisor for concrete optimizations.\n"
        "Action: Tuning\n"
        "Action_Input: orders",
        "Final_Answer: The slow query scans orders by status; adding the advised index on "
        "orders(status) will remove the sequential scan seen in the workload.",
    ]
)

trace = run_agent_loop(
    model,
    "Why are queries against the orders table slow, and what should I change?",
    pool,
    instance,
    max_steps=8,
)

print("\n=== full trace ===")
print(format_trace(trace))
print(f"\nterminated by: {trace.terminated_by} after {len(trace.steps)} tool steps")
