"""The ten acceptance criteria, one test each.

Each test records a ``criterion N PASS|FAIL: ...`` line that is echoed in
the pytest terminal summary. Run directly with ``python3 tests/test_acceptance.py``.
"""

import copy
import time
from pathlib import Path

import numpy as np
import pytest

from memrl.cli import run as cli_run
from memrl.dataset import load_locomo, split_dataset
from memrl.estimators import AnswerAgentEstimator, MemoryManagerEstimator
from memrl.memory import MemoryBank, MemoryEntry, MemoryOperationDecision as D, OpKind, parse_decisions
from memrl.metrics import bleu1, exact_match, token_f1
from memrl.pipeline import OracleOperationPolicy, answer_question, answer_tuples_for, construct_memory_bank, greedy_em
from memrl.policy import (
    OP_FEATURES,
    OperationPolicyParameters,
    PolicySample,
    freeze_reference,
    hand_set_answer_policy,
    load_params,
)
from memrl.prompts import (
    MANAGER_ADD_EXAMPLE_OUTPUT,
    MANAGER_DELETE_EXAMPLE_OUTPUT,
    MANAGER_NONE_EXAMPLE_OUTPUT,
    MANAGER_UPDATE_EXAMPLE_OUTPUT,
)
from memrl.retrieval import retrieve_top_k
from memrl.rl import (
    GroupSample,
    TrainerConfig,
    Trajectory,
    clipped_surrogate,
    grpo_gradient,
    grpo_objective,
    group_advantages,
    importance_ratio,
    ppo_gradient,
    ppo_surrogate,
    steps_to_fraction,
)
from memrl.synthetic import load_corpus

FIXTURES = Path(__file__).resolve().parent / "fixtures"


def record(log, n, ok, detail):
    line = f"criterion {n} {'PASS' if ok else 'FAIL'}: {detail}"
    log.append(line)
    print(line)
    assert ok, line


def bank_of(*pairs):
    return MemoryBank([MemoryEntry(i, t, 0, 0) for i, t in pairs])


# --- 1. the four worked manager operations -------------------------------------


def test_criterion_1_operation_scenarios(acceptance_log):
    start = time.perf_counter()
    problems = []

    bank = bank_of(("0", "User is a software engineer"))
    before = bank.entries
    outcomes = [bank.apply(d) for d in parse_decisions(MANAGER_ADD_EXAMPLE_OUTPUT, bank)]
    if [(e.id, e.text) for e in bank] != [("0", "User is a software engineer"), ("1", "Name is John")]:
        problems.append("ADD")
    if bank["0"] != before[0] or outcomes[1].affected_id != "1":
        problems.append("ADD id")

    bank = bank_of(("0", "I really like cheese pizza"), ("2", "User likes to play cricket"))
    for d in parse_decisions(MANAGER_UPDATE_EXAMPLE_OUTPUT, bank):
        bank.apply(d)
    if [(e.id, e.text, e.history) for e in bank] != [
        ("0", "Loves cheese and chicken pizza", ("I really like cheese pizza",)),
        ("2", "Loves to play cricket with friends", ("User likes to play cricket",)),
    ]:
        problems.append("UPDATE")

    bank = bank_of(("1", "Loves cheese pizza"))
    for d in parse_decisions(MANAGER_DELETE_EXAMPLE_OUTPUT, bank):
        bank.apply(d)
    after_delete = len(bank)
    bank.apply(parse_decisions('{"memory": [{"id": "2", "text": "Dislikes cheese pizza", "event": "ADD"}]}')[0])
    if after_delete != 0 or bank.ids() != ["2"]:
        problems.append("DELETE")

    bank = bank_of(("0", "Name is John"))
    snapshot = (bank.entries, bank.next_id)
    (none,) = parse_decisions(MANAGER_NONE_EXAMPLE_OUTPUT, bank)
    bank.apply(none)
    if none.kind is not OpKind.NOOP or (bank.entries, bank.next_id) != snapshot:
        problems.append("NONE")

    elapsed = time.perf_counter() - start
    record(acceptance_log, 1, not problems and elapsed < 1.0,
           f"ADD/UPDATE/DELETE/NONE scenarios exact, mismatches={problems or 'none'}, {elapsed * 1e3:.1f} ms")


# --- 2. group advantage standardization -------------------------------------


def test_criterion_2_group_standardization(acceptance_log):
    rng = np.random.default_rng(2)
    start = time.perf_counter()
    worst_mean = worst_std = 0.0
    for _ in range(1000):
        g = int(rng.integers(2, 17))
        rewards = rng.normal(size=g) * rng.uniform(0.1, 10) + rng.uniform(-5, 5)
        a = group_advantages(rewards)
        worst_mean = max(worst_mean, abs(float(np.mean(a))))
        worst_std = max(worst_std, abs(float(np.std(a)) - 1.0))
    degenerate = all(np.array_equal(group_advantages(np.full(g, c)), np.zeros(g))
                     for g in range(2, 17) for c in (0.0, 1.0, -3.5))
    elapsed = time.perf_counter() - start
    ok = worst_mean < 1e-12 and worst_std < 1e-12 and degenerate and elapsed < 5
    record(acceptance_log, 2, ok,
           f"1000 groups, max|mean|={worst_mean:.1e}, max|std-1|={worst_std:.1e}, "
           f"degenerate all-zero={degenerate}, {elapsed:.2f} s")


# --- 3. gradient fidelity -----------------------------------------------------

NF = len(OP_FEATURES)
H = 1e-5


def central_difference(fn, theta):
    grad = np.zeros_like(theta)
    for i in range(theta.size):
        e = np.zeros_like(theta)
        e[i] = H
        grad[i] = (fn(theta + e) - fn(theta - e)) / (2 * H)
    return grad


def relative_error(analytic, numeric):
    return float(np.max(np.abs(analytic - numeric) / np.maximum(1.0, np.abs(analytic) + np.abs(numeric))))


def random_state(rng):
    f = rng.uniform(0, 1, NF)
    f[-1] = 1.0
    return f


def logged(params, state, rng, reward):
    choice = int(rng.choice(4, p=params.distribution(state)))
    return Trajectory(PolicySample(None, params.log_prob(state, choice, 1.0), 1.0, state, choice), float(reward))


def test_criterion_3_gradient_fidelity(acceptance_log):
    rng = np.random.default_rng(3)
    start = time.perf_counter()
    config = TrainerConfig(beta=0.1)
    grpo_err = 0.0
    for _ in range(100):
        old = OperationPolicyParameters(rng.normal(size=(4, NF)))
        groups = []
        for _ in range(2):
            state = random_state(rng)
            groups.append(GroupSample(tuple(logged(old, state, rng, r) for r in rng.integers(0, 2, 4))))
        params = old.with_theta(old.theta + rng.normal(scale=0.3, size=old.theta.size))
        ref = freeze_reference(old.with_theta(old.theta + rng.normal(scale=0.3, size=old.theta.size)))
        fd = central_difference(lambda t: grpo_objective(groups, params.with_theta(t), ref, config), params.theta)
        grpo_err = max(grpo_err, relative_error(grpo_gradient(groups, params, ref, config), fd))

    ppo_err, checked = 0.0, 0
    while checked < 100:
        old = OperationPolicyParameters(rng.normal(size=(4, NF)))
        batch = [logged(old, random_state(rng), rng, r) for r in rng.integers(0, 2, 6)]
        params = old.with_theta(old.theta + rng.normal(scale=0.1, size=old.theta.size))
        rho = np.array([importance_ratio(params, t) for t in batch])
        if np.any(np.abs(np.abs(rho - 1) - 0.2) < 1e-3):
            continue  # the surrogate has a kink here; a central difference straddling it is meaningless
        adv = rng.normal(size=len(batch))
        fd = central_difference(lambda t: ppo_surrogate(batch, params.with_theta(t), adv, 0.2), params.theta)
        ppo_err = max(ppo_err, relative_error(ppo_gradient(batch, params, adv, 0.2), fd))
        checked += 1
    elapsed = time.perf_counter() - start
    ok = grpo_err < 1e-4 and ppo_err < 1e-4 and elapsed < 60
    record(acceptance_log, 3, ok,
           f"100 GRPO + 100 PPO instances, max rel err GRPO={grpo_err:.1e} PPO={ppo_err:.1e}, {elapsed:.1f} s")


# --- 4. clip algebra -----------------------------------------------------------


def test_criterion_4_clip_algebra(acceptance_log):
    rng = np.random.default_rng(4)
    start = time.perf_counter()
    bad = 0
    for _ in range(10_000):
        eps = float(rng.uniform(0.01, 0.5))
        adv = float(rng.normal() * 3)
        rho = float(rng.uniform(0.2, 2.0))
        got = clipped_surrogate(rho, adv, eps)
        if rho > 1 + eps and adv > 0:
            expected = (1 + eps) * adv  # saturated above
        elif rho < 1 - eps and adv < 0:
            expected = (1 - eps) * adv  # saturated below
        else:
            expected = rho * adv  # inside the band, or outside it on the pessimistic side
        bad += got != expected
    elapsed = time.perf_counter() - start
    record(acceptance_log, 4, bad == 0 and elapsed < 1.0,
           f"10000-point sweep, {bad} mismatches, {elapsed * 1e3:.0f} ms")


# --- 5. metric oracles ----------------------------------------------------------


def test_criterion_5_metric_oracles(acceptance_log):
    from test_metrics import METRIC_CASES, oracle_bleu1, oracle_em, oracle_f1

    start = time.perf_counter()
    worst = 0.0
    for pred, gold in METRIC_CASES:
        worst = max(worst, abs(token_f1(pred, gold) - oracle_f1(pred, gold)),
                    abs(bleu1(pred, gold) - oracle_bleu1(pred, gold)),
                    abs(exact_match(pred, gold) - oracle_em(pred, gold)))
    elapsed = time.perf_counter() - start
    record(acceptance_log, 5, len(METRIC_CASES) == 20 and worst <= 1e-9 and elapsed < 1.0,
           f"{len(METRIC_CASES)} cases, max deviation {worst:.1e}, {elapsed * 1e3:.1f} ms")


# --- 6. retrieval correctness -----------------------------------------------------


def test_criterion_6_retrieval(acceptance_log):
    from test_retrieval import WORDS, brute_force

    rng = np.random.default_rng(6)
    start = time.perf_counter()
    mismatches = ties = 0
    for _ in range(500):
        bank = MemoryBank()
        for _ in range(int(rng.integers(0, 101))):
            bank.apply(D.add(" ".join(rng.choice(WORDS, int(rng.integers(1, 4))))))
        query = " ".join(rng.choice(WORDS, int(rng.integers(1, 3))))
        k = int(rng.integers(1, 110))
        ranked = retrieve_top_k(query, bank, k)
        scores = ranked.scores()
        ties += len(scores) != len(set(scores))
        mismatches += ranked.ids() != brute_force(query, bank, k)
    elapsed = time.perf_counter() - start
    record(acceptance_log, 6, mismatches == 0 and ties > 0 and elapsed < 10,
           f"500 banks, {mismatches} mismatches, {ties} rankings with ties, {elapsed:.1f} s")


# --- 7. desk-scale manager learning ---------------------------------------------


def smoothed(curve, window=10):
    return list(np.convolve(curve, np.ones(window) / window, mode="valid"))


def test_criterion_7_manager_learning(acceptance_log):
    dialogues, scripts = load_corpus(FIXTURES / "synthetic_train.json")
    answer = hand_set_answer_policy()
    start = time.perf_counter()
    baseline = greedy_em(dialogues, OperationPolicyParameters.zeros(), answer)
    ceiling = greedy_em(dialogues, OracleOperationPolicy({d.dialogue_id: s for d, s in zip(dialogues, scripts)}),
                        answer)
    grpo = MemoryManagerEstimator(trainer="grpo", max_steps=200).fit(dialogues, scripts)
    ppo = MemoryManagerEstimator(trainer="ppo", max_steps=200).fit(dialogues, scripts)
    em_grpo, em_ppo = grpo.score(dialogues), ppo.score(dialogues)
    steps_grpo = steps_to_fraction(smoothed(grpo.log_.curve()), 0.8)
    steps_ppo = steps_to_fraction(smoothed(ppo.log_.curve()), 0.8)
    elapsed = time.perf_counter() - start
    ok = (baseline <= 0.5 and em_grpo >= 0.8 and em_grpo >= 0.9 * ceiling and abs(em_ppo - em_grpo) <= 0.05
          and steps_grpo is not None and steps_ppo is not None and steps_grpo < steps_ppo and elapsed < 300)
    record(acceptance_log, 7, ok,
           f"EM {baseline:.3f} -> GRPO {em_grpo:.3f} / PPO {em_ppo:.3f} (ceiling {ceiling:.3f}), "
           f"80% of final reward at step GRPO {steps_grpo} vs PPO {steps_ppo}, {elapsed:.0f} s")


# --- 8. distillation ablation ----------------------------------------------------


def test_criterion_8_distillation_ablation(acceptance_log):
    dialogues, scripts = load_corpus(FIXTURES / "synthetic_eval.json")
    oracle = OracleOperationPolicy({d.dialogue_id: s for d, s in zip(dialogues, scripts)})
    train, _, test = split_dataset(dialogues)
    start = time.perf_counter()
    agent = AnswerAgentEstimator().fit(answer_tuples_for(train, oracle))
    tuples = answer_tuples_for(test, oracle)
    with_distill = agent.score(tuples)
    full = float(np.mean([exact_match(a, t.gold_answer) for a, t in zip(agent.predict(tuples, distill=False), tuples)]))
    elapsed = time.perf_counter() - start
    record(acceptance_log, 8, with_distill >= full and elapsed < 60,
           f"{len(tuples)} test questions, EM distilled {with_distill:.4f} vs full context {full:.4f} "
           f"(gap {with_distill - full:+.4f}), {elapsed:.1f} s")


# --- 9. determinism ---------------------------------------------------------------


def test_criterion_9_determinism(acceptance_log, tmp_path):
    start = time.perf_counter()
    argv = ["eval", "--stub", "--corpus", str(FIXTURES / "synthetic_eval.json"),
            "--manager-params", str(FIXTURES / "manager.params"), "--answer-params", str(FIXTURES / "answer.params")]
    reports = []
    for name in ("a", "b", "c"):
        assert cli_run(argv + ["--out-dir", str(tmp_path / name)]) == 0
        (run_dir,) = (tmp_path / name).iterdir()
        reports.append(tuple((run_dir / f).read_bytes() for f in ("report.json", "report.txt", "predictions.jsonl")))
    identical = len(set(reports)) == 1

    dialogues, _ = load_corpus(FIXTURES / "synthetic_eval.json")
    manager, answer = load_params(FIXTURES / "manager.params"), load_params(FIXTURES / "answer.params")
    pure = True
    for dialogue in dialogues[:3]:
        banks = [construct_memory_bank(dialogue, manager)[0] for _ in range(2)]
        pure &= banks[0] == banks[1]
        bank = banks[0]
        frozen = copy.deepcopy(bank)
        weights = answer.selection_weights.copy()
        for qa in dialogue.qa:
            first = answer_question(qa.question, bank, answer)
            pure &= first == answer_question(qa.question, bank, answer)
        pure &= bank == frozen and np.array_equal(answer.selection_weights, weights)
    elapsed = time.perf_counter() - start
    record(acceptance_log, 9, identical and pure and elapsed < 60,
           f"3 eval --stub runs byte-identical={identical}, tau=0 calls pure={pure}, {elapsed:.1f} s")


# --- 10. split and exclusion -------------------------------------------------------


def test_criterion_10_split_and_exclusion(acceptance_log):
    start = time.perf_counter()
    corpus = load_locomo(FIXTURES / "locomo10.json")
    sizes = tuple(map(len, split_dataset(corpus.dialogues)))
    no_adversarial = all(q.category != "adversarial" for q in corpus.qa)
    elapsed = time.perf_counter() - start
    record(acceptance_log, 10, sizes == (1, 1, 8) and corpus.adversarial_dropped == 4 and no_adversarial
           and elapsed < 1.0,
           f"split {sizes[0]}:{sizes[1]}:{sizes[2]}, {corpus.adversarial_dropped} adversarial dropped, "
           f"{elapsed * 1e3:.0f} ms")


if __name__ == "__main__":
    import sys

    sys.exit(pytest.main([__file__, "-q", "-s"]))
