import shutil
from importlib import resources

import pytest

from dbqa.errors import RenderError
from dbqa.templates import (
    PromptTemplate,
    TemplateStore,
    find_slots,
    load_prompt,
    render,
    substitute,
    triggers,
)


def test_general_render_substitutes_question():
    prompt = render("general", {"Q": "What is an index?"})
    assert "Question:What is an index?" in prompt
    assert "{{" not in prompt


def test_missing_binding_names_the_slot():
    with pytest.raises(RenderError, match="K"):
        render("product", {"Q": "How do I enable WAL?"})


def test_extra_binding_is_rejected():
    with pytest.raises(RenderError, match="T"):
        render("general", {"Q": "q", "T": "tools"})


def test_instance_render_contains_format_block_verbatim():
    prompt = render("instance", {"Q": "Why slow?", "T": "- Schema: ...", "Agent_Scratchpad": ""})
    assert "Question: ...; Thought: ...; Action: ...;" in prompt
    assert "Action_Input: ...; Observation: ...; ...; Final_Answer: ..." in prompt


def test_triggers_mapping():
    assert triggers("product") == frozenset({"rag"})
    assert triggers("instance") == frozenset({"tig"})
    assert triggers("general") == frozenset()
    assert triggers("irrelevant") == frozenset()


def test_unknown_template_id_raises():
    with pytest.raises(RenderError, match="banana"):
        triggers("banana")


def test_render_is_injective_in_question():
    a = render("general", {"Q": "first question"})
    b = render("general", {"Q": "second question"})
    assert a != b


def test_non_slot_text_is_untouched():
    store = TemplateStore.default()
    body = store.get("product").body
    rendered = substitute(body, {"Q": "QQ", "K": "KK"})
    # Independent oracle: plain string replacement (bindings are brace-free).
    assert rendered == body.replace("{{Q}}", "QQ").replace("{{K}}", "KK")


def test_braces_in_bound_values_are_not_reinterpreted():
    rendered = render("product", {"Q": "evil {{K}} text", "K": "the knowledge"})
    assert "evil {{K}} text" in rendered
    assert rendered.count("the knowledge") == 1


def test_find_slots():
    assert find_slots("a {{X}} b {{Y_Z}} c {{X}}") == {"X", "Y_Z"}


def test_store_from_dir_is_a_drop_in(tmp_path):
    src = resources.files("dbqa") / "prompts" / "en"
    for name in ("general", "product", "instance", "irrelevant"):
        shutil.copy(str(src / f"{name}.txt"), tmp_path / f"{name}.txt")
    store = TemplateStore.from_dir(tmp_path)
    assert store.version == TemplateStore.default().version
    # Edit one body -> different version, still valid.
    text = (tmp_path / "general.txt").read_text(encoding="utf-8")
    (tmp_path / "general.txt").write_text(text.replace("expert", "seasoned expert"), encoding="utf-8")
    assert TemplateStore.from_dir(tmp_path).version != store.version


def test_store_rejects_template_without_required_slot(tmp_path):
    src = resources.files("dbqa") / "prompts" / "en"
    for name in ("general", "product", "instance", "irrelevant"):
        shutil.copy(str(src / f"{name}.txt"), tmp_path / f"{name}.txt")
    (tmp_path / "product.txt").write_text(
        "# id=product triggers=rag\nNo slots here at all.\n", encoding="utf-8"
    )
    with pytest.raises(RenderError, match="product"):
        TemplateStore.from_dir(tmp_path)


def test_store_rejects_missing_file(tmp_path):
    with pytest.raises(RenderError, match="general.txt"):
        TemplateStore.from_dir(tmp_path)


def test_template_slots_property():
    template = PromptTemplate("general", "ask {{Q}} twice {{Q}}", frozenset())
    assert template.slots == frozenset({"Q"})


def test_auxiliary_prompts_load():
    body = load_prompt("judge_pairwise")
    assert "{{GT}}" in body and "{{A}}" in body and "{{B}}" in body
    with pytest.raises(RenderError, match="nope"):
        load_prompt("nope")


def test_rewrite_prompt_contains_style_phrase():
    assert "detailed, professional and friendly" in load_prompt("rewrite_answer")
