import json
import logging

import numpy as np
import pytest

from memrl.dataset import (
    Dialogue,
    DialogueTurn,
    QAPair,
    Session,
    build_answer_tuples,
    build_manager_tuples,
    dumps_locomo,
    load_locomo,
    loads_locomo,
    parse_category,
    split_dataset,
)
from memrl.exceptions import ExtractorUnavailable, FormatError, TooFewDialogues
from memrl.extraction import RuleExtractor
from memrl.memory import MemoryBank, MemoryOperationDecision as D
from memrl.retrieval import embed_text

MINIMAL = {
    "dialogue_id": "conv-1",
    "sessions": [
        {
            "session_id": "1",
            "datetime": "1:24 pm on 25 May, 2023",
            "turns": [
                {"turn_id": "D1:1", "speaker": "Caroline", "text": "I adopted a dog named Rex."},
                {"turn_id": "D1:2", "speaker": "Melanie", "text": "That's great news!"},
            ],
        }
    ],
    "qa": [{"question": "What is the dog's name?", "answer": "Rex", "category": 4, "evidence": ["D1:1"]}],
}


def test_minimal_fixture_parses_intact():
    corpus = loads_locomo(json.dumps([MINIMAL]))
    (dialogue,) = corpus.dialogues
    assert dialogue.dialogue_id == "conv-1"
    assert [t.turn_id for t in dialogue.turns] == ["D1:1", "D1:2"]
    assert dialogue.turns[0].timestamp == "1:24 pm on 25 May, 2023"
    assert dialogue.turns[1].session_id == "1"
    assert dialogue.qa == (QAPair("What is the dog's name?", "Rex", "single-hop", ("D1:1",)),)
    assert corpus.adversarial_dropped == 0
    assert loads_locomo(dumps_locomo(corpus.dialogues)).dialogues == corpus.dialogues


def test_adversarial_question_is_dropped_with_a_warning(caplog):
    record = json.loads(json.dumps(MINIMAL))
    record["qa"].append({"question": "Did Melanie adopt a cat?", "adversarial_answer": "no", "category": 5})
    with caplog.at_level(logging.WARNING, logger="memrl.dataset"):
        corpus = loads_locomo(json.dumps([record]))
    assert corpus.adversarial_dropped == 1 and len(corpus.qa) == 1
    assert "dropped 1 adversarial" in caplog.text


@pytest.mark.parametrize(
    "mutate, where",
    [
        (lambda r: r.pop("sessions"), "$[0]"),
        (lambda r: r["sessions"][0]["turns"][1].pop("speaker"), "$[0].sessions[0].turns[1]"),
        (lambda r: r["qa"][0].update(category=9), "$[0].qa[0].category"),
        (lambda r: r["sessions"][0]["turns"][1].update(turn_id="D1:1"), "$[0].sessions[0].turns[1]"),
        (lambda r: r["sessions"][0]["turns"][0].update(text=7), "$[0].sessions[0].turns[0].text"),
    ],
)
def test_malformed_records_raise_with_a_path(mutate, where):
    record = json.loads(json.dumps(MINIMAL))
    mutate(record)
    with pytest.raises(FormatError) as err:
        loads_locomo(json.dumps([record]), "bad.json")
    assert where in str(err.value) and err.value.path == "bad.json"


def test_invalid_json_reports_a_byte_offset():
    with pytest.raises(FormatError) as err:
        loads_locomo('[{"dialogue_id": "é", ]', "x.json")
    assert err.value.offset == len('[{"dialogue_id": "é", '.encode())


@pytest.mark.parametrize(
    "value, expected",
    [(1, "multi-hop"), (2, "temporal"), (3, "open-domain"), (4, "single-hop"), (5, "adversarial"),
     ("single_hop", "single-hop"), ("Open Domain", "open-domain"), ("3", "open-domain")],
)
def test_category_codes(value, expected):
    assert parse_category(value) == expected


def test_ten_dialogue_fixture_split_and_exclusion(fixtures_dir):
    corpus = load_locomo(fixtures_dir / "locomo10.json")
    train, val, test = split_dataset(corpus.dialogues)
    assert (len(train), len(val), len(test)) == (1, 1, 8)
    assert [d.dialogue_id for d in train + val + test] == [f"conv-{i}" for i in range(10)]
    assert corpus.adversarial_dropped == 4
    assert len(corpus.qa) == 11 and all(q.category != "adversarial" for q in corpus.qa)


def test_split_sizes():
    dialogues = [Dialogue(f"d{i}", ()) for i in range(3)]
    assert tuple(map(len, split_dataset(dialogues))) == (1, 1, 1)
    with pytest.raises(TooFewDialogues):
        split_dataset(dialogues[:2])


# --- manager tuples ----------------------------------------------------------


def long_dialogue(n):
    turns = tuple(DialogueTurn(f"D1:{i + 1}", "Caroline" if i % 2 == 0 else "Melanie", f"I saw x{i} y{i} z{i}.")
                  for i in range(n))
    qa = (QAPair("What pebble?", "pebble 60", "single-hop", ("D1:61",)),)
    return Dialogue("long", (Session("1", None, turns),), qa)


def test_first_turn_has_an_empty_bank():
    tuples = build_manager_tuples(long_dialogue(3), RuleExtractor())
    assert len(tuples[0].temporal_bank) == 0


def add_only(fact, bank, retriever):
    return D.add(fact.text, speaker=fact.speaker, source_turn=fact.source_turn_id)


def test_window_bounds_and_provenance():
    dialogue = long_dialogue(70)
    # add-only keeps one entry per turn so provenance maps back to turns one to one
    tuples = build_manager_tuples(dialogue, RuleExtractor(), window=50, bootstrap=add_only)
    assert len(tuples) == 70
    t60 = tuples[60]
    sources = sorted(int(e.source_turn.split(":")[1]) - 1 for e in t60.temporal_bank)
    assert sources == list(range(10, 60))
    assert (t60.window_start, t60.turn_index) == (10, 60)
    assert t60.qa == dialogue.qa


def test_no_tuple_sees_its_own_or_later_turns():
    dialogue = long_dialogue(30)
    for tup in build_manager_tuples(dialogue, RuleExtractor(), window=7):
        for entry in tup.temporal_bank:
            # merged entries name every contributing turn in their text
            contributors = [int(part.split()[2][1:]) for part in entry.text.split("; ")]
            assert all(tup.turn_index - 7 <= i < tup.turn_index for i in contributors)


def test_matching_facts_bootstrap_as_updates():
    turns = (DialogueTurn("D1:1", "Caroline", "I adopted a dog named Rex."),
             DialogueTurn("D1:2", "Caroline", "I adopted a dog named Scout."),
             DialogueTurn("D1:3", "Caroline", "Bye."))
    tuples = build_manager_tuples(Dialogue("d", (Session("1", None, turns),)), RuleExtractor())
    (entry,) = tuples[2].temporal_bank
    assert entry.text == "Caroline adopted a dog named Rex; Caroline adopted a dog named Scout"


def test_synthetic_dialogue_gives_one_tuple_per_turn(eval_corpus):
    dialogue = eval_corpus[0][0]
    assert len(build_manager_tuples(dialogue, RuleExtractor())) == len(dialogue.turns)


def test_missing_extractor():
    with pytest.raises(ExtractorUnavailable):
        build_manager_tuples(long_dialogue(2), None)


# --- answer tuples -----------------------------------------------------------


def two_speaker_bank(per_speaker, rng):
    words = "dog cat beach mountain park song book lake".split()
    bank = MemoryBank()
    for i in range(per_speaker):
        for speaker in ("John", "Maria"):
            bank.apply(D.add(f"{speaker} {' '.join(rng.choice(words, 3))} {i}", speaker=speaker))
    return bank


def two_speaker_dialogue():
    turns = (DialogueTurn("D1:1", "John", "Hi."), DialogueTurn("D1:2", "Maria", "Hello."))
    qa = (QAPair("Did anyone go to the beach with a dog?", "yes", "open-domain"),)
    return Dialogue("d", (Session("1", None, turns),), qa)


def brute_force_section(question, bank, speaker, k):
    q = embed_text(question)
    rows = []
    for index, entry in enumerate(bank):
        if entry.speaker == speaker:
            v = embed_text(entry.text)
            nq, nv = np.linalg.norm(q), np.linalg.norm(v)
            rows.append((-float(np.clip(q @ v / (nq * nv), -1, 1)), index, entry.id))
    return [r[2] for r in sorted(rows)[:k]]


def test_small_bank_takes_everything():
    (tup,) = build_answer_tuples(two_speaker_dialogue(), two_speaker_bank(5, np.random.default_rng(0)))
    assert len(tup.retrieved) == 10 and tup.retrieved.sections == (("John", 5), ("Maria", 5))


def test_large_bank_gives_thirty_per_participant_in_brute_force_order():
    bank = two_speaker_bank(50, np.random.default_rng(1))
    dialogue = two_speaker_dialogue()
    (tup,) = build_answer_tuples(dialogue, bank)
    assert len(tup.retrieved) == 60 and tup.retrieved.sections == (("John", 30), ("Maria", 30))
    question = dialogue.qa[0].question
    assert tup.retrieved.ids() == (brute_force_section(question, bank, "John", 30)
                                   + brute_force_section(question, bank, "Maria", 30))
    assert (tup.gold_answer, tup.category) == ("yes", "open-domain")


@pytest.mark.parametrize("k", [1, 3, 30, 80])
def test_answer_tuples_never_exceed_two_k(k):
    (tup,) = build_answer_tuples(two_speaker_dialogue(), two_speaker_bank(50, np.random.default_rng(2)), k)
    assert len(tup.retrieved) <= 2 * k
