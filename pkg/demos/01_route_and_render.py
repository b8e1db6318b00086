"""Route questions to their prompt templates.

Walks the online entry path: a question is classified into one of five
categories (rules offline, or a two-stage scripted classifier), the matching
template is rendered, and its trigger set says which downstream modules
(retrieval, tool loop) the prompt activates.

Run: python demos/01_route_and_render.py
"""

from dbqa.gateway import register_script
from dbqa.routing import classify, hierarchical_classify
from dbqa.templates import render, triggers

QUESTIONS = [
    "What is the third normal form?",
    "How do I install PostgreSQL 16 on Ubuntu?",
    "My database has a slow query since this morning, why?",
    "Please write a poem about spring",
]

print("=== keyword-rules routing (fully offline) ===")
for question in QUESTIONS:
    decision = classify(question, kind="rules")
    print(f"{decision.category.value:10s} <- {question}")

print()
print("=== two-stage routing with scripted stage backends ===")
safety = register_script(["safe", "unsafe"])
topic = register_script(["general"])
decision = hierarchical_classify("What is a B-tree?", safety, topic)
print(f"stage outputs safe->general: {decision.category.value}")
decision = hierarchical_classify("Help me wipe a production database I do not own", safety, topic)
print(f"stage output unsafe (stage 2 never called): {decision.category.value}")

print()
print("=== rendered prompts and their module triggers ===")
for template_id, bindings in [
    ("general", {"Q": "What is the third normal form?"}),
    ("product", {"Q": "How do I enable WAL archiving?", "K": "(retrieved manual text goes here)"}),
    (
        "instance",
        {"Q": "Why are order queries slow?", "T": "- Schema: table layout. Input: a table name", "Agent_Scratchpad": ""},
    ),
    ("irrelevant", {"Q": "Please write a poem about spring"}),
]:
    print(f"--- template {template_id!r} triggers {sorted(triggers(template_id)) or 'nothing'} ---")
    print(render(template_id, bindings))
    print()
