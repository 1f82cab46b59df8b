import json

import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from cfnt.core import (
    FormatError,
    NameList,
    TaggedSentence,
    TokenizationError,
    Vocabulary,
    load_names,
    load_refs,
    load_vocab,
    read_jsonl,
    save_names,
    save_refs,
    save_vocab,
    surface,
    token_span_to_words,
    tokenize,
    word_index,
)

LORETTA = Vocabulary(("Lo", "_retta", "Ly", "_n"))


class TestVocabulary:
    def test_meta_ids_outside_surface_range(self):
        v = LORETTA
        assert v.size == 4
        assert v.class_id == 4 and v.blank_id == 5
        assert v.class_id != v.blank_id

    @pytest.mark.parametrize("tokens", [(), ("a", "a"), ("",), ("a b",), ("@name",)])
    def test_invalid(self, tokens):
        with pytest.raises(ValueError):
            Vocabulary(tokens)

    def test_check_rejects_meta_ids(self):
        with pytest.raises(IndexError):
            LORETTA.check([LORETTA.class_id])
        with pytest.raises(IndexError):
            LORETTA.strings([LORETTA.blank_id])

    def test_hash_depends_on_order(self):
        assert LORETTA.hash != Vocabulary(("_retta", "Lo", "Ly", "_n")).hash
        assert LORETTA.hash == Vocabulary(("Lo", "_retta", "Ly", "_n")).hash


class TestTokenize:
    def test_loretta(self):
        assert tokenize("Lo_retta", LORETTA) == (0, 1)

    def test_empty(self):
        assert tokenize("", LORETTA) == ()
        assert surface((), LORETTA) == ""

    def test_lynn(self):
        assert tokenize("Ly_n_n", LORETTA) == (2, 3, 3)
        assert surface((2, 3, 3), LORETTA) == "Ly_n_n"

    def test_surface_loretta(self):
        assert surface((0, 1), LORETTA) == "Lo_retta"
        assert surface((0, 1, 2, 3, 3), LORETTA) == "Lo_retta Ly_n_n"

    def test_longest_match_preferred(self):
        v = Vocabulary(("a", "ab", "_b", "_bc", "_c"))
        assert tokenize("ab_bc", v) == (1, 3)

    def test_error_names_character(self):
        with pytest.raises(TokenizationError, match="'x'"):
            tokenize("Lox", LORETTA)

    def test_continuation_cannot_start_word(self):
        with pytest.raises(TokenizationError):
            tokenize("_n", LORETTA)

    def test_deterministic(self):
        assert tokenize("Ly_n Lo_retta", LORETTA) == tokenize("Ly_n Lo_retta", LORETTA)


@st.composite
def surface_strings(draw):
    words = draw(st.lists(
        st.tuples(st.sampled_from(["Lo", "Ly"]), st.lists(st.sampled_from(["_retta", "_n"]), max_size=3)),
        max_size=5,
    ))
    return " ".join(w + "".join(rest) for w, rest in words)


@settings(max_examples=200, deadline=None)
@given(surface_strings())
def test_round_trip(text):
    assert surface(tokenize(text, LORETTA), LORETTA) == text


@settings(max_examples=200, deadline=None)
@given(st.lists(st.integers(0, 3), max_size=12))
def test_tokenize_inverts_surface_when_words_start_plainly(ids):
    ids = tuple(ids)
    words = word_index(ids, LORETTA)
    if ids and ids[0] in (1, 3):
        # a sequence opening with a continuation has no surface spelling
        # that tokenizes back to it
        return
    assert tokenize(surface(ids, LORETTA), LORETTA) == ids
    assert len(set(words)) == len(surface(ids, LORETTA).split())


class TestSpans:
    def test_word_spans(self):
        seq = (0, 1, 2, 3, 3)
        assert word_index(seq, LORETTA) == [0, 0, 1, 1, 1]
        assert token_span_to_words((2, 5), seq, LORETTA) == (1, 2)
        assert token_span_to_words((0, 5), seq, LORETTA) == (0, 2)

    @pytest.mark.parametrize("spans", [((0, 0),), ((0, 3),), ((1, 2), (0, 1)), ((0, 2), (1, 2))])
    def test_bad_spans(self, spans):
        with pytest.raises(ValueError):
            TaggedSentence((0, 1), spans)

    def test_name_list_rejects_empty(self):
        with pytest.raises(ValueError):
            NameList(((0,), ()))

    def test_name_list_dedup(self):
        assert NameList(((0,), (1,), (0,))).unique() == [(0,), (1,)]


class TestFiles:
    def test_vocab_round_trip(self, tmp_path):
        save_vocab(LORETTA, tmp_path / "vocab.txt")
        assert (tmp_path / "vocab.txt").read_text().splitlines() == list(LORETTA.tokens)
        assert load_vocab(tmp_path / "vocab.txt") == LORETTA

    def test_names_round_trip(self, tmp_path):
        names = NameList(((0, 1, 2, 3, 3), (2,)))
        save_names(names, LORETTA, tmp_path / "names.txt")
        assert (tmp_path / "names.txt").read_text() == "Lo_retta Ly_n_n\nLy\n"
        assert load_names(tmp_path / "names.txt", LORETTA) == names

    def test_names_bad_line(self, tmp_path):
        (tmp_path / "names.txt").write_text("Lo\nQq\n")
        with pytest.raises(FormatError, match=":2:"):
            load_names(tmp_path / "names.txt", LORETTA)

    def test_refs_round_trip(self, tmp_path):
        refs = [TaggedSentence((0, 1, 2), ((0, 2),)), TaggedSentence((), ())]
        save_refs(refs, LORETTA, tmp_path / "refs.jsonl")
        lines = (tmp_path / "refs.jsonl").read_text().splitlines()
        assert json.loads(lines[0]) == {"header": {"vocab_hash": LORETTA.hash}}
        assert json.loads(lines[1]) == {"tokens": ["Lo", "_retta", "Ly"], "entity_spans": [[0, 2]]}
        assert load_refs(tmp_path / "refs.jsonl", LORETTA) == refs

    def test_refs_hash_mismatch(self, tmp_path):
        save_refs([TaggedSentence((0,))], LORETTA, tmp_path / "refs.jsonl")
        other = Vocabulary(("Lo", "_retta", "Ly", "_m"))
        with pytest.raises(FormatError, match="hash"):
            load_refs(tmp_path / "refs.jsonl", other)

    def test_jsonl_bad_line(self, tmp_path):
        (tmp_path / "x.jsonl").write_text('{"a": 1}\n{oops\n')
        with pytest.raises(FormatError, match=":2:"):
            read_jsonl(tmp_path / "x.jsonl")
