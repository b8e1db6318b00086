import json
import random
import threading
from http.server import BaseHTTPRequestHandler, ThreadingHTTPServer

import pytest

from dbqa.corpus import QuestionCategory
from dbqa.errors import ServiceError
from dbqa.gateway import register_script
from dbqa.routing import (
    classify,
    confusion_metrics,
    hierarchical_classify,
    load_ruleset,
    map_label,
)

G = QuestionCategory.GENERAL
P = QuestionCategory.PRODUCT
I = QuestionCategory.INSTANCE
U = QuestionCategory.UNSAFE
X = QuestionCategory.IRRELEVANT


# ---------------------------------------------------------------------------
# classify


def test_llm_label_instance_specific_maps_to_instance():
    decision = classify("Why is my query slow?", "llm_prompt", register_script(["instance-specific"]))
    assert decision.category == I
    assert decision.fallback_reason is None


def test_unmappable_label_falls_back_to_irrelevant(caplog):
    with caplog.at_level("WARNING"):
        decision = classify("anything", "llm_prompt", register_script(["banana"]))
    assert decision.category == X
    assert decision.fallback_reason is not None
    assert "banana" in caplog.text


def test_rules_poem_is_irrelevant():
    # No ruleset keyword occurs in this sentence; the default applies.
    decision = classify("Please write a poem about spring", "rules")
    assert decision.category == X
    assert decision.classifier_kind == "rules"


def test_rules_first_match_wins():
    assert classify("How do I protect against sql injection?", "rules").category == U
    assert classify("My database has a slow query since noon", "rules").category == I
    assert classify("How do I install PostgreSQL 16?", "rules").category == P
    assert classify("What is a primary key?", "rules").category == G


def test_rules_custom_ruleset_file(tmp_path):
    path = tmp_path / "rules.json"
    path.write_text(
        json.dumps([{"category": "unsafe", "keywords": ["forbidden"]}]), encoding="utf-8"
    )
    ruleset = load_ruleset(path)
    assert classify("a forbidden topic", "rules", ruleset=ruleset).category == U
    assert classify("sql basics", "rules", ruleset=ruleset).category == X


def test_classify_rejects_empty_question():
    with pytest.raises(ValueError):
        classify("", "rules")


def test_classify_rejects_unknown_kind():
    with pytest.raises(ValueError):
        classify("q", "magic")


def test_map_label_variants():
    assert map_label("Product-Specific") == P
    assert map_label("  GENERAL ") == G
    assert map_label("no idea") is None


# ---------------------------------------------------------------------------
# hierarchical


def test_stage1_unsafe_short_circuits():
    safety = register_script(["unsafe"])
    topic = register_script(["general"])  # must never be consumed
    decision = hierarchical_classify("how to wipe the prod db", safety, topic)
    assert decision.category == U
    assert topic.script.consumed == 0


def test_safe_then_product():
    decision = hierarchical_classify(
        "openGauss install steps?", register_script(["safe"]), register_script(["product-specific"])
    )
    assert decision.category == P


def test_safe_then_unmappable_falls_back():
    decision = hierarchical_classify(
        "hmm", register_script(["safe"]), register_script(["no clue"])
    )
    assert decision.category == X
    assert decision.fallback_reason is not None


# ---------------------------------------------------------------------------
# remote classifier contract


class _LabelHandler(BaseHTTPRequestHandler):
    def do_POST(self):
        length = int(self.headers.get("Content-Length", 0))
        body = json.loads(self.rfile.read(length))
        self.server.questions.append(body["question"])
        payload = json.dumps({"label": self.server.label}).encode("utf-8")
        self.send_response(200)
        self.send_header("Content-Length", str(len(payload)))
        self.end_headers()
        self.wfile.write(payload)

    def log_message(self, *args):
        pass


def test_remote_classifier_contract():
    server = ThreadingHTTPServer(("127.0.0.1", 0), _LabelHandler)
    server.label = "product-specific"
    server.questions = []
    threading.Thread(target=server.serve_forever, daemon=True).start()
    try:
        url = f"http://127.0.0.1:{server.server_address[1]}/classify"
        decision = classify("How to set up GaussDB?", "remote_flat", endpoint_url=url)
        assert decision.category == P
        assert server.questions == ["How to set up GaussDB?"]
    finally:
        server.shutdown()
        server.server_close()


def test_remote_classifier_unreachable_is_service_error():
    with pytest.raises(ServiceError):
        classify("q", "remote_flat", endpoint_url="http://127.0.0.1:1/classify", timeout_s=0.2)


# ---------------------------------------------------------------------------
# confusion metrics


def test_all_correct_gives_accuracy_one():
    pairs = [(G, G)] * 4 + [(P, P)] * 3 + [(I, I)] * 3
    metrics = confusion_metrics(pairs)
    assert metrics.accuracy == 1.0
    for category in (G, P, I):
        assert metrics.f1[category] == 1.0
    # Unrepresented categories have zero denominators -> F1 = 0.
    assert metrics.f1[U] == 0.0


def test_two_class_hand_computed_example():
    pairs = [(G, G), (G, P), (P, P), (P, P)]
    metrics = confusion_metrics(pairs)
    assert abs(metrics.accuracy - 0.75) < 1e-12
    # precision(general) = 1/2 over its row, recall(general) = 1/1 over its column.
    assert abs(metrics.f1[G] - (2 * (0.5 * 1.0) / 1.5)) < 1e-12
    # precision(product) = 2/2, recall(product) = 2/3.
    assert abs(metrics.f1[P] - 0.8) < 1e-12


def test_metrics_invariant_under_permutation():
    rng = random.Random(7)
    cats = list(QuestionCategory)
    pairs = [(rng.choice(cats), rng.choice(cats)) for _ in range(200)]
    base = confusion_metrics(pairs)
    shuffled = pairs[:]
    rng.shuffle(shuffled)
    permuted = confusion_metrics(shuffled)
    assert permuted.accuracy == base.accuracy
    assert permuted.f1 == base.f1


def test_accuracy_equals_trace_over_total_random_matrices():
    rng = random.Random(13)
    cats = list(QuestionCategory)
    for _ in range(50):
        pairs = [(rng.choice(cats), rng.choice(cats)) for _ in range(rng.randint(1, 60))]
        metrics = confusion_metrics(pairs)
        # Direct-counting oracle.
        hits = sum(1 for gold, pred in pairs if gold == pred)
        assert metrics.accuracy == hits / len(pairs)
        assert metrics.matrix.total() == len(pairs)


def test_empty_input_is_domain_error():
    with pytest.raises(ValueError):
        confusion_metrics([])
