from pathlib import Path

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from handoff_lab.corpus import (BOT_MARK, PAD_ID, UNK_ID, USER_MARK, CandidateSet, CorpusError,
                                Dialog, Exchange, KbFact, ParseError, build_all_instances,
                                build_instances, build_vocabulary, dialog_tokens, load_candidates,
                                parse_dialog_file, serialize_dialogs)
from handoff_lab.simulator import ORIGINAL, build_candidates, generate_dialog, generate_kb

GOLDEN = Path(__file__).parent / "data" / "golden_task5.txt"


def test_minimal_exchange():
    dialogs = parse_dialog_file("1 hi\thello what can i help you with today")
    assert len(dialogs) == 1
    (line,) = dialogs[0].lines
    assert line.line_no == 1
    assert line.kind == Exchange(("hi",), tuple("hello what can i help you with today".split()))


def test_empty_input():
    assert parse_dialog_file("") == []
    assert parse_dialog_file("\n\n") == []


def test_serialize_one_exchange():
    d = Dialog.from_parts([Exchange(("hi",), ("hello", "what", "can", "i", "help", "you", "with", "today"))])
    assert serialize_dialogs([d]) == "1 hi\thello what can i help you with today\n"


def test_kb_fact_line():
    (d,) = parse_dialog_file("1 resto_a R_rating 5\n2 hi\tok\n")
    assert d.lines[0].kind == KbFact("resto_a", "R_rating", "5")


@pytest.mark.parametrize("text, lineno", [
    ("x hi\thello\n", 1),
    ("1 hi\thello\n2 a\tb\tc\n", 2),
    ("1 hi\thello\n2 resto R_phone\n", 2),
    ("1 hi\thello\n3 a\tb\n", 2),
])
def test_parse_errors_carry_location(text, lineno):
    with pytest.raises(ParseError) as info:
        parse_dialog_file(text)
    assert info.value.lineno == lineno


def test_three_dialog_round_trip():
    kb = generate_kb(3, 2, 2)
    rng = np.random.default_rng(0)
    dialogs = [generate_dialog(kb, ORIGINAL, rng) for _ in range(3)]
    assert any(d.facts for d in dialogs)
    text = serialize_dialogs(dialogs)
    parsed = parse_dialog_file(text)
    assert parsed == dialogs
    assert serialize_dialogs(parsed) == text


def test_golden_file_byte_identical():
    golden = GOLDEN.read_text(encoding="utf-8")
    kb = generate_kb(11, 2, 2)
    rng = np.random.default_rng(5)
    dialogs = [generate_dialog(kb, ORIGINAL, rng) for _ in range(3)]
    assert serialize_dialogs(dialogs) == golden
    assert serialize_dialogs(parse_dialog_file(golden)) == golden


@settings(max_examples=30, deadline=None)
@given(seed=st.integers(0, 2**32 - 1), n=st.integers(1, 5))
def test_round_trip_on_generator_output(seed, n):
    kb = generate_kb(seed % 97, 2, 2)
    rng = np.random.default_rng(seed)
    dialogs = [generate_dialog(kb, ORIGINAL, rng) for _ in range(n)]
    assert parse_dialog_file(serialize_dialogs(dialogs)) == dialogs


def test_candidates_indices_and_duplicates():
    c = load_candidates("1 hello there\n2 api_call a b c d\n")
    assert len(c) == 2
    assert c.lookup(["hello", "there"]) == 0
    assert c.lookup(["api_call", "a", "b", "c", "d"]) == 1
    with pytest.raises(CorpusError):
        load_candidates("1 hi\n2 hi\n")


def test_generated_candidate_file_count():
    cands = build_candidates(generate_kb(7, 3, 2))
    text = cands.to_text()
    assert len(load_candidates(text)) == len(text.splitlines())


def test_vocabulary_reserved_and_markers_only():
    v = build_vocabulary([], [], CandidateSet.from_texts([]), n_turn_markers=3)
    assert v.tokens[PAD_ID] == "<PAD>" and v.tokens[UNK_ID] == "<UNK>"
    assert set(v.tokens) == {"<PAD>", "<UNK>", USER_MARK, BOT_MARK, "#1", "#2", "#3"}


def test_vocabulary_test_only_token_is_unk():
    train = parse_dialog_file("1 hi\thello\n")
    cands = load_candidates("1 hello\n")
    v = build_vocabulary(train, [], cands)
    assert v.id("zanzibar") == UNK_ID
    assert "zanzibar" not in v
    assert v.id("hi") not in (PAD_ID, UNK_ID)


def test_vocabulary_size_matches_set_union():
    kb = generate_kb(2, 2, 3)
    rng = np.random.default_rng(1)
    train = [generate_dialog(kb, ORIGINAL, rng) for _ in range(8)]
    dev = [generate_dialog(kb, ORIGINAL, rng) for _ in range(3)]
    cands = build_candidates(kb)
    v = build_vocabulary(train, dev, cands, n_turn_markers=10)
    union = set()
    for d in train + dev:
        union |= dialog_tokens(d)
    for c in cands.candidates:
        union |= set(c)
    union |= {USER_MARK, BOT_MARK} | {f"#{k}" for k in range(1, 11)}
    assert len(v) == len(union) + 2
    assert list(v.tokens[2:]) == sorted(v.tokens[2:])


def _cands_for(*dialogs):
    texts = []
    for d in dialogs:
        for e in d.exchanges:
            if e.bot not in texts:
                texts.append(e.bot)
    return CandidateSet.from_texts(texts)


def test_single_exchange_instance_has_empty_memory():
    (d,) = parse_dialog_file("1 hi\thello\n")
    (inst,) = build_instances(d, _cands_for(d))
    assert inst.memory == ()
    assert inst.query == ("hi",)


def test_third_instance_memory_has_four_sentences():
    (d,) = parse_dialog_file("1 hi\thello\n2 a table\tsure\n3 thanks\tbye\n")
    insts = build_instances(d, _cands_for(d))
    assert len(insts) == 3
    assert len(insts[2].memory) == 4
    assert insts[2].memory[0] == ("hi", USER_MARK, "#1")
    assert insts[2].memory[3] == ("sure", BOT_MARK, "#2")


def test_memory_counts_match_line_expansion():
    kb = generate_kb(4, 2, 2)
    rng = np.random.default_rng(9)
    d = generate_dialog(kb, ORIGINAL, rng)
    cands = build_candidates(kb)
    insts = build_instances(d, cands, dialog_id=3)
    assert len(insts) == len(d.exchanges)
    # oracle: count lines strictly before each exchange, exchanges doubling
    expected, seen = [], 0
    for ln in d.lines:
        if isinstance(ln.kind, Exchange):
            expected.append(seen)
            seen += 2
        else:
            seen += 1
    assert [len(i.memory) for i in insts] == expected
    assert all(i.dialog_id == 3 for i in insts)
    assert all(i.answer < len(cands) for i in insts)


def test_unresolvable_response_names_text():
    (d,) = parse_dialog_file("1 hi\tnever seen\n")
    with pytest.raises(CorpusError, match="never seen"):
        build_instances(d, load_candidates("1 hello\n"))


def test_instance_count_equals_exchange_count():
    kb = generate_kb(1, 2, 2)
    rng = np.random.default_rng(2)
    dialogs = [generate_dialog(kb, ORIGINAL, rng) for _ in range(5)]
    insts = build_all_instances(dialogs, build_candidates(kb))
    assert len(insts) == sum(len(d.exchanges) for d in dialogs)
