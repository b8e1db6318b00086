
import pytest

from dbqa.corpus import Dataset, QuestionCategory
from dbqa.evaluation import (
    EvalReport,
    SuiteConfig,
    TOOL_FAILURE_MARKER,
    matched_prefix_len,
    multiple_choice_accuracy,
    run_suite,
    standardized_instance_answer,
    tool_format_accuracy,
    tool_selection_accuracy,
    win_rate,
)
from dbqa.gateway import Verdict, judge_pair, register_script

from conftest import general_record, instance_record


# ---------------------------------------------------------------------------
# Standardized instance-answer generation


def _step(action, action_input="x", thought="think"):
    return f"Thought: {thought}\nAction: {action}\nAction_Input: {action_input}"


def test_fully_matched_two_tool_chain(pool):
    record = instance_record("r1", [("Schema", "orders", "the schema"), ("Workload", "", "the load")])
    model = register_script(
        [_step("Schema", "orders"), _step("Workload", ""), "Final_Answer: add an index."]
    )
    result = standardized_instance_answer(model, record, pool, rng_seed=1)
    assert result.matched_prefix_len == 2
    assert result.failed is False
    assert result.answer.endswith("add an index.")
    assert "Observation: the schema" in result.answer
    assert "Observation: the load" in result.answer
    assert result.trace.final_answer == "add an index."


def test_wrong_first_action_appends_failure_marker(pool):
    record = instance_record("r2", [("Schema", "orders", "obs")])
    model = register_script([_step("Selection", "SELECT 1")])
    result = standardized_instance_answer(model, record, pool, rng_seed=1)
    assert result.matched_prefix_len == 0
    assert result.failed is True
    assert result.answer.endswith(TOOL_FAILURE_MARKER)


def test_single_tool_chain_matched(pool):
    record = instance_record("r3", [("Selection", "SELECT count(*) FROM orders", "| 5 |")])
    model = register_script([_step("Selection", "SELECT count(*) FROM orders"), "Final_Answer: five."])
    result = standardized_instance_answer(model, record, pool, rng_seed=1)
    assert result.matched_prefix_len == 1
    assert result.failed is False


def test_unparseable_step_counts_as_mismatch(pool):
    record = instance_record("r4", [("Schema", "orders", "obs"), ("Workload", "", "obs2")])
    model = register_script([_step("Schema", "orders"), "no labels whatsoever"])
    result = standardized_instance_answer(model, record, pool, rng_seed=1)
    assert result.matched_prefix_len == 1
    assert result.failed is True
    assert result.answer.endswith(TOOL_FAILURE_MARKER)


def test_early_final_answer_is_a_mismatch(pool):
    record = instance_record("r5", [("Schema", "orders", "obs")])
    model = register_script(["Final_Answer: I refuse to use tools."])
    result = standardized_instance_answer(model, record, pool, rng_seed=1)
    assert result.matched_prefix_len == 0
    assert result.failed is True
    assert result.answer.endswith(TOOL_FAILURE_MARKER)


def test_matched_chain_without_final_answer_keeps_raw_output(pool):
    record = instance_record("r6", [("Schema", "orders", "obs")])
    model = register_script([_step("Schema", "orders"), _step("Workload", "")])
    result = standardized_instance_answer(model, record, pool, rng_seed=1)
    assert result.matched_prefix_len == 1
    assert result.failed is False
    assert result.final_answer is None
    assert "Workload" in result.answer


def test_unknown_ground_truth_tool_rejected(pool):
    record = instance_record("r7", [("NoSuchTool", "", "obs")])
    with pytest.raises(ValueError, match="NoSuchTool"):
        standardized_instance_answer(register_script(["x"]), record, pool)


def test_matched_prefix_len_helper():
    assert matched_prefix_len(["a", "b", "c"], ["a", "b", "c"]) == 3
    assert matched_prefix_len(["a", "x"], ["a", "b", "c"]) == 1
    assert matched_prefix_len([], ["a"]) == 0


# ---------------------------------------------------------------------------
# Metrics


def test_tsa_upper_bound():
    assert tool_selection_accuracy([(2, 2), (3, 3)]) == 1.0


def test_tsa_hand_example():
    # Two records, chains of length 2, prefixes 2 and 1 -> 3/4.
    assert abs(tool_selection_accuracy([(2, 2), (1, 2)]) - 0.75) < 1e-12


def test_tsa_lower_bound():
    assert tool_selection_accuracy([(0, 2), (0, 3)]) == 0.0


def test_tsa_permutation_invariant():
    runs = [(1, 2), (0, 1), (3, 3), (2, 4)]
    shuffled = runs[::-1]
    assert tool_selection_accuracy(runs) == tool_selection_accuracy(shuffled)


def test_tsa_validates_inputs():
    with pytest.raises(ValueError):
        tool_selection_accuracy([])
    with pytest.raises(ValueError):
        tool_selection_accuracy([(3, 2)])
    with pytest.raises(ValueError):
        tool_selection_accuracy([(0, 0)])


def test_tfa_upper_bound():
    assert tool_format_accuracy([([True, True], 2)]) == 1.0


def test_tfa_prefix_rule():
    # One 3-step run judged [true, false]; the third step is never judged.
    assert abs(tool_format_accuracy([([True, False], 3)]) - 1 / 3) < 1e-12


def test_tfa_all_first_steps_rejected():
    assert tool_format_accuracy([([False], 2), ([False], 1)]) == 0.0


def test_winrate_hand_example():
    verdicts = [Verdict.WIN] * 3 + [Verdict.LOSE] + [Verdict.TIE] * 2
    assert abs(win_rate(verdicts) - 0.75) < 1e-12


def test_winrate_all_ties_is_undefined():
    assert win_rate([Verdict.TIE, Verdict.TIE]) is None


def test_winrate_all_losses_is_zero():
    assert win_rate([Verdict.LOSE] * 5) == 0.0


def test_winrate_antisymmetric_judge_mirrors():
    # An order-insensitive judge decided by answer content.
    script = [("Candidate A: strong", "A"), ("Candidate A: weak", "B")]
    judge = register_script(script)
    forward = judge_pair(judge, "q", "gt", "strong", "weak")
    backward = judge_pair(judge, "q", "gt", "weak", "strong")
    assert win_rate([forward]) == 1 - win_rate([backward])


def test_mca_exact_letter_only():
    assert multiple_choice_accuracy([("B", "B")]) == 1.0
    assert multiple_choice_accuracy([("The answer is B", "B")]) == 0.0
    assert multiple_choice_accuracy([("A", "A"), ("C", "B")]) == 0.5


def test_mca_trims_whitespace_only():
    assert multiple_choice_accuracy([("  B\n", "B")]) == 1.0
    assert multiple_choice_accuracy([("b", "B")]) == 0.0


def test_mca_validates_gold_letters():
    with pytest.raises(ValueError):
        multiple_choice_accuracy([("A", "E")])
    with pytest.raises(ValueError):
        multiple_choice_accuracy([])


# ---------------------------------------------------------------------------
# Suites


def _mc_dataset():
    records = []
    for i, gold in enumerate("ABCD"):
        records.append(
            general_record(
                f"mc{i}",
                question=f"Question {i}?",
                choices={"A": "one", "B": "two", "C": "three", "D": "four"},
                gold_letter=gold,
            )
        )
    return Dataset(records=records)


def test_general_mc_suite_three_of_four():
    model = register_script(["A", "B", "C", "A"])  # last one wrong
    report = run_suite(_mc_dataset(), "general_mc", model)
    assert abs(report.metrics["mca"] - 0.75) < 1e-12
    assert [r["correct"] for r in report.records] == [True, True, True, False]
    assert report.failures == []


def test_general_subjective_winrate_and_judge_errors():
    dataset = Dataset(records=[general_record(f"g{i}", question=f"q{i}") for i in range(3)])
    model = register_script(["m0", "m1", "m2"])
    competitor = register_script(["c0", "c1", "c2"])
    judge = register_script(["A", "not a verdict", "B"])
    report = run_suite(dataset, "general_subjective", model, competitor, judge)
    # One judge-format error: excluded from the ratio, disclosed in the config.
    assert report.metrics["winrate"] == 0.5
    assert report.config["judge_errors"] == 1
    assert [r["verdict"] for r in report.records] == ["win", "judge_error", "lose"]


def test_product_suite_injects_chunk_text_verbatim():
    record = general_record(
        "p0",
        category=QuestionCategory.PRODUCT,
        question="How do I enable WAL archiving?",
        retrieval_labels=["man:0001", "man:0002"],
    )
    chunks = {
        "man:0001": "WAL archiving requires archive_mode = on.",
        "man:0002": "Set archive_command to copy segments.",
    }
    # Matchers fail the test if the prompt lacks the labeled chunk text.
    model = register_script([("WAL archiving requires archive_mode = on.", "use archive_mode")])
    competitor = register_script([("Set archive_command to copy segments.", "other answer")])
    judge = register_script(["A"])
    report = run_suite(
        Dataset(records=[record]),
        "product",
        model,
        competitor,
        judge,
        SuiteConfig(chunks=chunks),
    )
    assert report.metrics["winrate"] == 1.0


def test_product_suite_missing_chunk_is_recorded_failure():
    record = general_record(
        "p0", category=QuestionCategory.PRODUCT, retrieval_labels=["nope"]
    )
    report = run_suite(
        Dataset(records=[record]),
        "product",
        register_script(["x"]),
        register_script(["y"]),
        register_script(["A"]),
        SuiteConfig(chunks={}),
    )
    assert report.metrics["winrate"] is None
    assert len(report.failures) == 1
    assert "nope" in report.failures[0]["error"]


def _perfect_instance_run(pool):
    records = [
        instance_record("i0", [("Schema", "orders", "obs0")]),
        instance_record("i1", [("Schema", "orders", "obs1"), ("Workload", "", "obs2")]),
    ]
    model = register_script(
        [
            _step("Schema", "orders"),
            "Final_Answer: done i0.",
            _step("Schema", "orders"),
            _step("Workload", ""),
            "Final_Answer: done i1.",
        ]
    )
    judge = register_script(["YES", "YES", "YES"])
    return Dataset(records=records), model, judge


def test_instance_suite_perfect_model(pool):
    dataset, model, judge = _perfect_instance_run(pool)
    report = run_suite(
        dataset, "instance", model, judge_backend=judge, config=SuiteConfig(pool=pool, seed=5)
    )
    assert report.metrics["tsa"] == 1.0
    assert report.metrics["tfa"] == 1.0
    assert "winrate" not in report.metrics  # no competitor configured
    assert [r["matched_prefix_len"] for r in report.records] == [1, 2]


def test_instance_suite_is_bit_reproducible(pool):
    def run_once():
        dataset, model, judge = _perfect_instance_run(pool)
        return run_suite(
            dataset, "instance", model, judge_backend=judge, config=SuiteConfig(pool=pool, seed=5)
        ).to_json()

    assert run_once() == run_once()


def test_instance_suite_records_backend_failure(pool):
    records = [
        instance_record("i0", [("Schema", "orders", "obs0")]),
        instance_record("i1", [("Schema", "orders", "obs1")]),
    ]
    # Script covers only the first record; the second run hits exhaustion.
    model = register_script([_step("Schema", "orders"), "Final_Answer: ok."])
    report = run_suite(
        Dataset(records=records), "instance", model, config=SuiteConfig(pool=pool)
    )
    assert len(report.failures) == 1
    assert report.failures[0]["id"] == "i1"
    assert report.metrics["tsa"] == 1.0  # computed over the surviving record


def test_instance_suite_with_competitor_reports_winrate(pool):
    record = instance_record("i0", [("Schema", "orders", "obs0")])
    model = register_script([_step("Schema", "orders"), "Final_Answer: model answer."])
    competitor = register_script([_step("Schema", "orders"), "Final_Answer: competitor answer."])
    judge = register_script(["YES", "A"])  # one format check, then the pairwise verdict
    report = run_suite(
        Dataset(records=[record]),
        "instance",
        model,
        competitor,
        judge,
        SuiteConfig(pool=pool, seed=3),
    )
    assert report.metrics["winrate"] == 1.0
    assert report.records[0]["verdict"] == "win"


def test_suite_category_mismatch_rejected(pool):
    dataset = Dataset(records=[general_record("g0")])
    with pytest.raises(ValueError, match="instance"):
        run_suite(dataset, "instance", register_script(["x"]), config=SuiteConfig(pool=pool))


def test_unknown_suite_rejected():
    with pytest.raises(ValueError):
        run_suite(Dataset(), "banana", register_script(["x"]))


def test_report_json_roundtrip_and_markdown(pool):
    dataset, model, judge = _perfect_instance_run(pool)
    report = run_suite(
        dataset, "instance", model, judge_backend=judge, config=SuiteConfig(pool=pool, seed=5)
    )
    parsed = EvalReport.from_json(report.to_json())
    assert parsed.metrics == report.metrics
    assert parsed.records == report.records
    md = report.to_markdown()
    assert "| tsa | 1.0000 |" in md
    assert "| tfa | 1.0000 |" in md


def test_reference_results_are_recorded():
    # Full-scale results (trained classifiers, GPT-4 judge) are reference
    # values only; nothing offline reproduces them.
    from dbqa.evaluation import REFERENCE_RESULTS

    assert REFERENCE_RESULTS["qcr_hierarchical_acc_zh"] == 0.94
    assert REFERENCE_RESULTS["rag_p_at_3_product"] == 0.82


def test_jobs_parallelism_preserves_record_order():
    # Identical unmatched responses make any script interleaving valid; the
    # report rows must still come back in dataset order.
    records = [
        general_record(f"mc{i}", question=f"q{i}", choices={"A": "x", "B": "y"}, gold_letter="A")
        for i in range(8)
    ]
    model = register_script(["A"] * 8)
    report = run_suite(Dataset(records=records), "general_mc", model, config=SuiteConfig(jobs=4))
    assert [r["id"] for r in report.records] == [f"mc{i}" for i in range(8)]
    assert report.metrics["mca"] == 1.0
