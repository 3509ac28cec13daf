import json
import math
import random

import pytest
from hypothesis import given
from hypothesis import strategies as st

from memrl.exceptions import EmptyInput, JudgeMalformed, StubMiss
from memrl.gateway import GatewayRequest, StubGateway
from memrl.metrics import (
    JudgeLabel,
    RewardReport,
    ScoreTriple,
    aggregate_report,
    average_reports,
    bleu1,
    exact_match,
    judge_many,
    llm_judge,
    normalize_answer,
    parse_judge_label,
    score_answer,
    token_f1,
)
from memrl.prompts import render_judge_prompt

ARTICLES = {"a", "an", "the"}
PUNCT = set(".,!?;:'\"()-")


def oracle_tokens(text, drop_articles):
    """Character-by-character tokenizer written independently of the package."""
    # punctuation is deleted rather than split on
    cleaned = "".join(ch for ch in text.lower() if ch not in PUNCT)
    tokens = cleaned.split()
    return [t for t in tokens if t not in ARTICLES] if drop_articles else tokens


def oracle_count_matches(pred, gold):
    remaining = list(gold)
    matches = 0
    for token in pred:
        if token in remaining:
            remaining.remove(token)
            matches += 1
    return matches


def oracle_f1(pred, gold):
    p, g = oracle_tokens(pred, True), oracle_tokens(gold, True)
    if not p and not g:
        return 1.0
    m = oracle_count_matches(p, g)
    if not p or not g or m == 0:
        return 0.0
    precision, recall = m / len(p), m / len(g)
    return 2 * precision * recall / (precision + recall)


def oracle_bleu1(pred, gold):
    p, g = oracle_tokens(pred, False), oracle_tokens(gold, False)
    if not p:
        return 0.0
    precision = oracle_count_matches(p, g) / len(p)
    return precision * min(1.0, math.exp(1 - len(g) / len(p)))


def oracle_em(pred, gold):
    return oracle_tokens(pred, True) == oracle_tokens(gold, True)


# twenty hand-constructed cases shared with the acceptance check
METRIC_CASES = [
    ("beach", "beach"),
    ("beach", "near beach"),
    ("", "beach"),
    ("the the", "the cat"),
    ("shell", "a shell necklace in hawaii"),
    ("The Beach.", "beach"),
    ("2 dogs", "2 dogs"),
    ("  A   shell   necklace ", "shell necklace"),
    ("you bought a shell necklace in Hawaii", "A shell necklace"),
    ("dog dog dog", "dog"),
    ("cat", "dog"),
    ("", ""),
    ("Paris, France", "paris"),
    ("7 May 2023", "May 7, 2023"),
    ("an apple a day", "apple day"),
    ("red blue green", "green blue red"),
    ("Buddy and Scout", "Scout and Buddy"),
    ("mountains", "beach"),
    ("camping trip at the lake", "camping at lake"),
    ("the", "the"),
]


@pytest.mark.parametrize("pred, gold", METRIC_CASES)
def test_metrics_match_independent_oracle(pred, gold):
    assert abs(token_f1(pred, gold) - oracle_f1(pred, gold)) < 1e-9
    assert abs(bleu1(pred, gold) - oracle_bleu1(pred, gold)) < 1e-9
    assert exact_match(pred, gold) == oracle_em(pred, gold)


@pytest.mark.parametrize(
    "text, expected",
    [("The Beach.", "beach"), ("2 dogs", "2 dogs"), ("  A   shell   necklace ", "shell necklace"), ("", ""),
     ("Theatre", "theatre"), ("an-apple", "anapple")],
)
def test_normalize_examples(text, expected):
    assert normalize_answer(text) == expected


def test_f1_worked_examples():
    assert token_f1("beach", "beach") == 1.0
    assert token_f1("beach", "near beach") == pytest.approx(2 / 3)
    assert token_f1("", "beach") == 0.0


def test_bleu_worked_examples():
    assert bleu1("a shell necklace", "a shell necklace") == 1.0
    assert bleu1("the the", "the cat") == 0.5
    assert bleu1("shell", "a shell necklace today") == pytest.approx(math.exp(-3))
    assert bleu1("", "beach") == 0.0


def random_text(rng):
    vocab = ["the", "a", "beach", "Beach.", "dog", "dogs", "2", "!", "shell", "an", "Mountains,"]
    return " ".join(rng.choice(vocab) for _ in range(rng.randint(0, 6)))


def test_fuzz_ranges_and_perfect_scores():
    rng = random.Random(0)
    for _ in range(10_000):
        a, b = random_text(rng), random_text(rng)
        f, bl = token_f1(a, b), bleu1(a, b)
        assert 0.0 <= f <= 1.0 and 0.0 <= bl <= 1.0
        assert (f == 1.0) == (sorted(normalize_answer(a).split()) == sorted(normalize_answer(b).split()))
        assert token_f1(a, b) == token_f1(b, a)
        if exact_match(a, b):
            assert f == 1.0
        if bl == 1.0:
            assert sorted(oracle_tokens(a, False)) == sorted(oracle_tokens(b, False))


@given(st.text(max_size=30), st.text(max_size=30))
def test_f1_is_symmetric_and_bounded(a, b):
    assert token_f1(a, b) == token_f1(b, a)
    assert 0.0 <= bleu1(a, b) <= 1.0


@given(st.text(max_size=20), st.sampled_from(["", " .", "!", " The", "  "]))
def test_exact_match_implies_full_f1(a, noise):
    b = a.upper() + noise
    if exact_match(a, b):
        assert token_f1(a, b) == 1.0


# --- judge -------------------------------------------------------------------


def judge_stub(question, gold, pred, reply):
    gateway = StubGateway()
    gateway.script(GatewayRequest.user(render_judge_prompt(question, gold, pred), temperature=0.0), reply)
    return gateway


def test_judge_generous_topic_match():
    q = "Do you remember what I got the last time I went to Hawaii?"
    gold, pred = "A shell necklace", "you bought a shell necklace in Hawaii"
    gateway = judge_stub(q, gold, pred, '{"label": "CORRECT"}')
    assert llm_judge(q, gold, pred, gateway) is JudgeLabel.CORRECT


def test_judge_wrong_and_case_insensitive():
    gateway = judge_stub("q", "beach", "mountains", '{"label": "WRONG"}')
    assert llm_judge("q", "beach", "mountains", gateway) is JudgeLabel.WRONG
    assert parse_judge_label('Reasoning first.\n{"label": "correct"}') is JudgeLabel.CORRECT


def test_judge_malformed_reply():
    gateway = judge_stub("q", "beach", "sand", "no label here")
    with pytest.raises(JudgeMalformed):
        llm_judge("q", "beach", "sand", gateway)
    with pytest.raises(JudgeMalformed):
        parse_judge_label('{"label": "MAYBE"}')


def test_unreachable_judge_is_recorded_as_unavailable():
    labels = judge_many([("q", "beach", "sand")], StubGateway(), workers=1)
    assert labels == [JudgeLabel.UNAVAILABLE]


def test_judge_many_keeps_order_and_is_reproducible():
    items = [(f"q{i}", "beach", "beach" if i % 2 else "sand") for i in range(8)]
    gateway = StubGateway()
    for q, gold, pred in items:
        label = "CORRECT" if pred == gold else "WRONG"
        gateway.script(GatewayRequest.user(render_judge_prompt(q, gold, pred)), json.dumps({"label": label}))
    first = judge_many(items, gateway, workers=4)
    assert first == judge_many(items, gateway, workers=1)
    assert [l.value for l in first] == ["WRONG", "CORRECT"] * 4


def test_stub_miss_is_an_error():
    with pytest.raises(StubMiss):
        StubGateway().chat_complete(GatewayRequest.user("hello"))


# --- aggregation -------------------------------------------------------------


def test_score_triple_ranges():
    with pytest.raises(ValueError):
        ScoreTriple(1.5, 0.0)
    assert score_answer("The beach", "beach") == ScoreTriple(1.0, bleu1("The beach", "beach"), None, 1.0)


def test_one_category_mean():
    report = aggregate_report([ScoreTriple(1, 1, em=1), ScoreTriple(0, 0)], ["single-hop"] * 2)
    assert report.rows["single-hop"]["f1"] == 0.5 == report.overall("f1")
    assert report.rows["temporal"]["count"] == 0 and report.rows["temporal"]["f1"] is None


def test_overall_is_question_weighted():
    scores = [ScoreTriple(1, 1)] * 3 + [ScoreTriple(0, 0)]
    report = aggregate_report(scores, ["multi-hop"] * 3 + ["temporal"])
    category_mean = (1.0 + 0.0) / 2
    assert report.overall("f1") == 0.75 != category_mean


def test_judge_means_skip_unavailable():
    scores = [ScoreTriple(1, 1, JudgeLabel.CORRECT), ScoreTriple(0, 0, JudgeLabel.UNAVAILABLE),
              ScoreTriple(0, 0, JudgeLabel.WRONG)]
    report = aggregate_report(scores, ["open-domain"] * 3)
    assert report.overall("judge") == 0.5 and report.judge_unavailable == 1
    assert "judge unavailable for 1" in report.to_table()


def test_identical_runs_average_to_the_single_run():
    scores = [ScoreTriple(1 / 3, 0.1), ScoreTriple(0.7, 0.2)]
    runs = [aggregate_report(scores, ["single-hop", "temporal"], seed=s) for s in range(3)]
    mean = average_reports(runs)
    assert mean.rows == runs[0].rows and mean.seeds == (0, 1, 2) and mean.runs == 3


def test_aggregation_errors():
    with pytest.raises(EmptyInput):
        aggregate_report([], [])
    with pytest.raises(EmptyInput):
        average_reports([])
    with pytest.raises(ValueError):
        aggregate_report([ScoreTriple(1, 1)], ["adversarial"])


def test_report_json_round_trip():
    report = aggregate_report([ScoreTriple(1, 1, em=1)], ["single-hop"], seed=0)
    assert RewardReport.from_dict(json.loads(report.to_json())) == report
    assert report.to_table().splitlines()[0].split() == ["category", "n", "F1", "B1", "EM", "J"]
