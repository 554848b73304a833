import math

import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from prerank.corpus import (
    CLS,
    MASK,
    N_SPECIAL,
    PAD,
    SEP,
    UNK,
    ClickRecord,
    ClickSession,
    LabeledList,
    LetorRecord,
    ParseError,
    RunEntry,
    TokenSequence,
    Vocab,
    build_vocab,
    detokenize,
    encode_pair,
    parse_click_tsv,
    parse_labeled_line,
    parse_run_line,
    read_labeled,
    read_letor,
    read_run,
    read_sessions,
    serialize_click_tsv,
    serialize_labeled_line,
    serialize_run_line,
    split_tokens,
    tokenize,
    write_labeled,
    write_letor,
    write_run,
    write_sessions,
)


class TestVocab:
    def test_specials_fixed_order(self):
        v = build_vocab([])
        assert v.size == 5
        assert [v.id(t) for t in ("[PAD]", "[UNK]", "[CLS]", "[SEP]", "[MASK]")] == [PAD, UNK, CLS, SEP, MASK]

    def test_frequency_then_lexicographic(self):
        v = build_vocab(["a b", "a c"], min_freq=1, max_size=100)
        assert v.tokens[N_SPECIAL:] == ("a", "b", "c")
        assert v.id("a") == N_SPECIAL

    def test_min_freq(self):
        v = build_vocab(["x x", "y"], min_freq=2)
        assert v.tokens[N_SPECIAL:] == ("x",)

    def test_max_size_counts_specials(self):
        v = build_vocab(["a a a b b c"], max_size=7)
        assert v.tokens[N_SPECIAL:] == ("a", "b")

    def test_unknown_maps_to_unk(self):
        assert build_vocab(["a"]).id("zzz") == UNK

    def test_deterministic(self):
        texts = ["the cat sat", "on the mat", "the end"]
        assert build_vocab(texts).tokens == build_vocab(list(texts)).tokens

    def test_json_roundtrip(self, tmp_path):
        v = build_vocab(["hello world", "hello"])
        v.save(tmp_path / "v.json")
        assert Vocab.load(tmp_path / "v.json") == v


class TestTokenize:
    def test_lowercase_and_punctuation(self):
        v = build_vocab(["the cat"])
        assert tokenize("The cat.", v).ids == (v.id("the"), v.id("cat"))

    def test_unk_fallback(self):
        assert tokenize("zzz", build_vocab(["a"])).ids == (UNK,)

    def test_empty(self):
        assert tokenize("", build_vocab(["a"])).ids == ()

    def test_split_strips_edges_only(self):
        assert split_tokens("  \"Don't\"  stop!! ") == ["don't", "stop"]

    @given(st.lists(st.sampled_from(["alpha", "beta", "gamma", "delta", "x1", "y-2"]), max_size=20))
    def test_detokenize_roundtrip(self, words):
        v = build_vocab(["alpha beta gamma delta x1 y-2"])
        assert detokenize(tokenize(" ".join(words), v), v) == words


class TestEncodePair:
    def seq(self, n):
        return TokenSequence(tuple(range(N_SPECIAL, N_SPECIAL + n)))

    def test_no_truncation(self):
        p = encode_pair(self.seq(3), self.seq(10), 256)
        assert len(p) == 16
        assert p.segment_ids == (0,) * 5 + (1,) * 11

    def test_document_truncated_first(self):
        p = encode_pair(self.seq(3), self.seq(300), 256)
        assert len(p) == 256
        assert p.ids[1:4] == self.seq(3).ids
        assert p.ids[4] == SEP and p.ids[-1] == SEP

    def test_empty(self):
        p = encode_pair(self.seq(0), self.seq(0), 5)
        assert p.ids == (CLS, SEP, SEP)
        assert p.segment_ids == (0, 0, 1)

    def test_rejects_tiny_max_len(self):
        with pytest.raises(ValueError):
            encode_pair(self.seq(1), self.seq(1), 4)

    @given(st.integers(0, 1000), st.integers(0, 1000), st.integers(5, 300))
    def test_layout_invariants(self, nq, nd, max_len):
        p = encode_pair(self.seq(nq), self.seq(nd), max_len)
        assert p.ids[0] == CLS
        assert p.ids.count(SEP) == 2
        assert len(p) <= max_len
        first = p.ids.index(SEP)
        assert p.segment_ids == (0,) * (first + 1) + (1,) * (len(p) - first - 1)
        assert p.attention_len == len(p)
        # query kept whole whenever it fits with both separators
        if nq <= max_len - 3:
            assert first == nq + 1


class TestLetor:
    def test_full_line(self):
        r = parse_labeled_line("2 qid:10 1:0.5 2:0.0 #docid = D7")
        assert (r.label, r.qid, r.features, r.docid) == (2, "10", {1: 0.5, 2: 0.0}, "D7")

    def test_no_comment(self):
        r = parse_labeled_line("0 qid:10 1:0.5")
        assert (r.label, r.qid, r.features, r.docid) == (0, "10", {1: 0.5}, None)

    def test_missing_label(self):
        with pytest.raises(ParseError, match="missing label"):
            parse_labeled_line("qid:10 1:0.5")

    def test_duplicate_index(self):
        with pytest.raises(ParseError, match="duplicate"):
            parse_labeled_line("1 qid:3 1:0.5 1:0.7")

    def test_malformed_feature_names_offset(self):
        line = "1 qid:3 1:0.5 2:abc"
        with pytest.raises(ParseError) as e:
            parse_labeled_line(line)
        assert e.value.offset == line.index("2:abc")

    def test_zero_index_rejected(self):
        with pytest.raises(ParseError):
            parse_labeled_line("1 qid:3 0:0.5")

    def test_file_roundtrip(self, tmp_path):
        recs = [LetorRecord(1, "q", {1: 0.25, 3: -1.5}, "a"), LetorRecord(0, "q", {2: 1e-300}, None)]
        write_letor(tmp_path / "x.letor", recs)
        assert read_letor(tmp_path / "x.letor") == recs


class TestClickTsv:
    def test_with_url(self):
        assert parse_click_tsv("q1\tblue widgets\tD3\thttp://x") == ("q1", "blue widgets", "D3")

    def test_without_url(self):
        assert parse_click_tsv("q1\ta\tD3") == ("q1", "a", "D3")

    def test_too_few_columns(self):
        with pytest.raises(ParseError):
            parse_click_tsv("q1\ta")


class TestRunLine:
    def test_basic(self):
        e = parse_run_line("q1 Q0 D9 1 12.3 bm25")
        assert (e.qid, e.docid, e.rank, e.score) == ("q1", "D9", 1, 12.3)

    def test_rank_100(self):
        assert parse_run_line("q1 Q0 D9 100 0.1 t").rank == 100

    def test_rank_zero(self):
        with pytest.raises(ParseError, match="rank must be ≥1"):
            parse_run_line("q1 Q0 D9 0 1.0 t")

    @pytest.mark.parametrize("line", ["q1 Q0 D9 x 1.0 t", "q1 Q0 D9 1 abc t", "q1 Q0 D9 1 nan t", "q1 Q0 D9 1"])
    def test_malformed(self, line):
        with pytest.raises(ParseError):
            parse_run_line(line)

    def test_read_groups_by_rank(self, tmp_path):
        write_run(tmp_path / "r", [RunEntry("q", "b", 2, 1.0), RunEntry("q", "a", 1, 2.0), RunEntry("p", "c", 1, 0.5)])
        run = read_run(tmp_path / "r")
        assert [e.docid for e in run["q"]] == ["a", "b"]


# --- randomized round-trips (1,000 records each) ----------------------------------------------

ident = st.text(alphabet="abcdefghijklmnopqrstuvwxyz0123456789_-.", min_size=1, max_size=12)
finite = st.floats(allow_nan=False, allow_infinity=False, width=64)
letor_records = st.builds(
    LetorRecord,
    label=st.integers(0, 4),
    qid=ident,
    features=st.dictionaries(st.integers(1, 46), finite, max_size=10),
    docid=st.one_of(st.none(), ident),
)
run_entries = st.builds(RunEntry, qid=ident, docid=ident, rank=st.integers(1, 10 ** 6), score=finite, tag=ident)
tsv_text = st.text(st.characters(blacklist_categories=("Cs",), blacklist_characters="\t\n\r"), max_size=30)
click_records = st.builds(ClickRecord, qid=tsv_text, query=tsv_text, docid=tsv_text)


def _same_letor(a: LetorRecord, b: LetorRecord) -> bool:
    if (a.label, a.qid, a.docid) != (b.label, b.qid, b.docid) or a.features.keys() != b.features.keys():
        return False
    # bit-exact, including the sign of zero
    return all(math.copysign(1, a.features[k]) == math.copysign(1, b.features[k]) and a.features[k] == b.features[k]
               for k in a.features)


@settings(max_examples=1000)
@given(letor_records)
def test_letor_roundtrip_bit_exact(r):
    assert _same_letor(parse_labeled_line(serialize_labeled_line(r)), r)


@settings(max_examples=1000)
@given(run_entries)
def test_run_roundtrip_bit_exact(e):
    back = parse_run_line(serialize_run_line(e))
    assert back == e and math.copysign(1, back.score) == math.copysign(1, e.score)


@settings(max_examples=1000)
@given(click_records)
def test_click_tsv_roundtrip(r):
    assert parse_click_tsv(serialize_click_tsv(r)) == r


class TestJsonl:
    def test_sessions_roundtrip(self, tmp_path, tiny_lists):
        vocab, lists = tiny_lists
        s = ClickSession("q1", lists[0].query, lists[0].docs, (1, 0, 0), (1, 2, 3))
        write_sessions(tmp_path / "s.jsonl", [s])
        back = read_sessions(tmp_path / "s.jsonl", vocab)
        assert back == [s]

    def test_labeled_roundtrip(self, tmp_path, tiny_lists):
        vocab, lists = tiny_lists
        write_labeled(tmp_path / "l.jsonl", lists)
        back = read_labeled(tmp_path / "l.jsonl", vocab)
        assert [(b.qid, b.docids, b.labels) for b in back] == [(a.qid, a.docids, a.labels) for a in lists]

    def test_bad_json(self, tmp_path, tiny_lists):
        (tmp_path / "bad.jsonl").write_text("{not json}\n")
        with pytest.raises(ParseError):
            read_sessions(tmp_path / "bad.jsonl", tiny_lists[0])


class TestDatasetTypes:
    def test_session_length_mismatch(self):
        with pytest.raises(ValueError):
            ClickSession("q", TokenSequence(()), [("d", TokenSequence(()))], (1, 0), (1,))

    def test_session_clicks_binary(self):
        with pytest.raises(ValueError):
            ClickSession("q", TokenSequence(()), [("d", TokenSequence(()))], (2,), (1,))

    def test_labels_in_range(self):
        with pytest.raises(ValueError):
            LabeledList("q", TokenSequence(()), [("d", TokenSequence(()))], (3,), 2)

    def test_feature_rows_match(self):
        import numpy as np
        with pytest.raises(ValueError):
            LabeledList("q", TokenSequence(()), [("d", TokenSequence(()))], (1,), 2, np.zeros((2, 3)))
