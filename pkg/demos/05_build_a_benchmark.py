"""Build benchmark records from all three sources, fully scripted.

Forum dumps are deduplicated by unigram overlap and their best answers
rewritten; manuals go through the three-stage question/answer chain and get
retrieval labels from a fine-grained index; instance questions are generated
per tool (with a multi-tool quota), answered by the tool loop, polished, and
converted into records with tool-chain labels.

Run: python demos/05_build_a_benchmark.py
"""

from dbqa.agent import default_tool_pool
from dbqa.corpus import Document, validate_record
from dbqa.datagen import (
    ForumAnswer,
    RawForumItem,
    rouge1,
    run_forum_pipeline,
    run_instance_pipeline,
    run_product_pipeline,
)
from dbqa.gateway import register_script

print("=== forum pipeline: dedup + rewrite ===")
items = [
    RawForumItem("how to tune work_mem for large sorts", [ForumAnswer("bump it per session", 9, True)]),
    RawForumItem("how to tune work_mem for large sort", [ForumAnswer("near duplicate", 2, False)]),
    RawForumItem("what does vacuum full rewrite", [ForumAnswer("the whole table", 7, False)]),
    RawForumItem("unanswerable question with no good answer", [ForumAnswer("meh", 0, False)]),
]
print(f"pairwise overlap of the first two questions: {rouge1(items[0].question, items[1].question):.3f}")
rewriter = register_script(
    [
        "Raising work_mem per session lets large sorts stay in memory...",
        "VACUUM FULL rewrites the entire table into a fresh file...",
    ]
)
forum_records = run_forum_pipeline(rewriter, items)
for record in forum_records:
    print(f"  {record.id}: {record.question!r} -> {record.reference_answer[:50]!r}...")

print("\n=== product pipeline: segment -> question chain -> retrieval labels ===")
body = "Set archive_mode to on and configure archive_command before relying on point in time recovery."
manual = Document("admin-guide", "Administration guide", body)
chain_backend = register_script(
    [
        "- archiving must be configured first",
        f"- {body}",  # scripted question equal to the source text, so the label is exact
        "- Turn archive_mode on, then set archive_command and test it.",
    ]
)
product_batch = run_product_pipeline(chain_backend, manual, n_max=2)
for record in product_batch.records:
    print(f"  {record.id}: labels {record.retrieval_labels}")

print("\n=== instance pipeline: questions -> tool loop -> polish -> records ===")
instance_backend = register_script(
    [
        "- Check CPU pressure together with the slow queries [Resource, Workload]",
        "Thought: read the counters\nAction: Resource\nAction_Input:",
        "Thought: correlate with slow statements\nAction: Workload\nAction_Input: 100",
        "Final_Answer: CPU is moderate; one slow scan on orders dominates.",
        "OK",
        "OK",
    ]
)
instance_records = run_instance_pipeline(
    instance_backend,
    default_tool_pool(),
    tools=["Resource"],
    few_shots=["Which table grew fastest this week? [Selection, Schema]"],
    answer_cases=["Question: ...\nThought: ...\nAction: ...\nFinal_Answer: ..."],
    questions_per_tool=1,
)
for record in instance_records:
    chain = " -> ".join(c.tool for c in record.tool_chain)
    print(f"  {record.id}: {chain}")

all_records = forum_records + product_batch.records + instance_records
print(f"\nall {len(all_records)} generated records validate:",
      all(validate_record(r) == [] for r in all_records))
