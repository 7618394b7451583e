from collections import Counter
from datetime import datetime, timezone
from pathlib import Path

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from relavar.corpus import decode_corpus, encode_corpus, load_corpus, save_corpus
from relavar.data import (
    ItemVocab,
    Session,
    SplitRule,
    batcher,
    gen_synthetic,
    ingest,
    parse_timestamp,
    sparse_markov_matrix,
    split,
)
from relavar.errors import DataError

FIXTURE = Path(__file__).parent / "fixtures" / "clicks.dat"


def iso(text):
    return datetime.fromisoformat(text.replace("Z", "+00:00")).timestamp()


def naive_triples(sessions):
    return Counter(
        (s.items[i], s.items[i + 1], k) for k, s in enumerate(sessions) if len(s) >= 2 for i in range(len(s) - 1)
    )


def batcher_triples(sessions, beta):
    out = Counter()
    for b in batcher(sessions, beta):
        for lane in np.flatnonzero(b.active):
            out[(int(b.inputs[lane]), int(b.targets[lane]), int(b.session[lane]))] += 1
    return out


class TestIngest:
    def test_recsys_fixture(self):
        corpus = ingest(FIXTURE)
        sessions, vocab = corpus
        assert vocab.raw_ids == ["214536502", "214536500", "214536506", "214577561", "214662742",
                                 "214825110", "214757390", "214757407", "214551617"]
        assert [s.session_id for s in sessions] == ["3", "1", "2"]
        assert [s.items for s in sessions] == [[6, 7], [0, 1, 2, 3], [4, 4, 5]]
        assert sessions[0].timestamps == [iso("2014-04-02T13:17:46.940Z"), iso("2014-04-02T13:26:02.515Z")]
        assert sessions[2].timestamps[-1] == iso("2014-04-07T13:58:37.446Z")
        assert corpus.dropped_singletons == 1
        assert corpus.n_events == 9

    def test_singleton_dropped_but_item_kept(self, tmp_path):
        p = tmp_path / "c.csv"
        p.write_text("s1,1,a\ns1,2,b\ns2,3,c\n")
        corpus = ingest(p)
        assert len(corpus.sessions) == 1
        assert corpus.dropped_singletons == 1
        assert corpus.vocab.m == 3

    def test_sorted_within_session(self, tmp_path):
        p = tmp_path / "c.csv"
        p.write_text("s,30,c\ns,10,a\ns,20,b\n")
        (s,) = ingest(p).sessions
        assert [ingest(p).vocab.raw(i) for i in s.items] == ["a", "b", "c"]
        assert s.timestamps == [10.0, 20.0, 30.0]

    def test_header_and_delimiter(self, tmp_path):
        p = tmp_path / "c.tsv"
        p.write_text("session\ttime\titem\nx\t1.5\t9\nx\t2.5\t8\n")
        corpus = ingest(p, delimiter="\t")
        assert corpus.sessions[0].items == [0, 1]
        assert corpus.malformed_rows == 0

    def test_malformed_rows(self, tmp_path):
        p = tmp_path / "c.csv"
        p.write_text("s,1,a\ns,notatime,b\ns,2\ns,3,c\n")
        corpus = ingest(p)
        assert corpus.malformed_rows == 2
        assert corpus.sessions[0].items == [0, 1]
        with pytest.raises(DataError):
            ingest(p, strict=True)

    def test_empty_file(self, tmp_path):
        p = tmp_path / "empty.csv"
        p.write_text("")
        with pytest.raises(DataError):
            ingest(p)

    def test_missing_file(self, tmp_path):
        with pytest.raises(DataError):
            ingest(tmp_path / "nope.csv")

    def test_timestamps(self):
        assert parse_timestamp("1396868469") == 1396868469.0
        assert parse_timestamp("2014-04-07T10:51:09Z") == datetime(2014, 4, 7, 10, 51, 9, tzinfo=timezone.utc).timestamp()
        assert parse_timestamp("2014-04-07T10:51:09") == parse_timestamp("2014-04-07T10:51:09+00:00")


class TestVocab:
    def test_round_trip(self):
        vocab = ItemVocab(["x", "y", "z", "x"])
        assert vocab.m == 3
        for i in range(vocab.m):
            assert vocab.index(vocab.raw(i)) == i

    def test_unknown(self):
        with pytest.raises(KeyError):
            ItemVocab(["a"]).index("b")


def three_sessions():
    return [
        Session("1", [0, 1], [0.0, 5.0]),
        Session("2", [1, 2], [10.0, 15.0]),
        Session("3", [2, 0, 3], [20.0, 25.0, 30.0]),
    ]


class TestSplit:
    def test_by_count(self):
        train, test, _ = split(three_sessions(), SplitRule("by-count", n_test=1))
        assert [s.session_id for s in train] == ["1", "2"]
        assert [s.session_id for s in test] == ["3"]

    def test_by_time(self):
        train, test, filtered = split(three_sessions(), SplitRule("by-time", cutoff=17.0))
        assert [s.session_id for s in train] == ["1", "2"]
        assert [s.session_id for s in test] == ["3"]
        # item 3 never appears in training
        assert test[0].items == [2, 0] and filtered == 1

    def test_by_hash_deterministic(self):
        sessions = gen_synthetic(10, 50, (2, 4), "uniform", seed=1)
        a = split(sessions, SplitRule("by-hash", fraction=0.5, seed=3))
        b = split(sessions, SplitRule("by-hash", fraction=0.5, seed=3))
        assert [s.session_id for s in a[0]] == [s.session_id for s in b[0]]
        assert [s.session_id for s in a[1]] == [s.session_id for s in b[1]]

    def test_partition(self):
        sessions = gen_synthetic(5, 80, (2, 6), "uniform", seed=2)
        train, test, _ = split(sessions, SplitRule("by-hash", fraction=0.3, seed=0))
        ids_train = {s.session_id for s in train}
        ids_test = {s.session_id for s in test}
        assert not ids_train & ids_test
        # every item in this corpus appears in train, so nothing was filtered
        assert ids_train | ids_test == {s.session_id for s in sessions}

    def test_empty_sides(self):
        with pytest.raises(DataError):
            split(three_sessions(), SplitRule("by-time", cutoff=1000.0))
        with pytest.raises(DataError):
            split(three_sessions(), SplitRule("by-time", cutoff=-1.0))
        with pytest.raises(DataError):
            split(three_sessions(), SplitRule("by-count", n_test=3))

    def test_rule_validation(self):
        with pytest.raises(ValueError):
            SplitRule("random")
        with pytest.raises(ValueError):
            SplitRule("by-hash", fraction=1.5)


class TestBatcher:
    def test_hand_trace(self):
        a, b, c, d, e, f, g = range(7)
        sessions = [Session("S1", [a, b, c], [0, 1, 2]), Session("S2", [d, e], [0, 1]), Session("S3", [f, g], [0, 1])]
        steps = list(batcher(sessions, 2))
        assert len(steps) == 2
        np.testing.assert_array_equal(steps[0].inputs, [a, d])
        np.testing.assert_array_equal(steps[0].targets, [b, e])
        np.testing.assert_array_equal(steps[0].reset, [True, True])
        np.testing.assert_array_equal(steps[1].inputs, [b, f])
        np.testing.assert_array_equal(steps[1].targets, [c, g])
        np.testing.assert_array_equal(steps[1].reset, [False, True])

    def test_masked_tail(self):
        sessions = [Session("long", [0, 1, 2, 3], [0, 1, 2, 3]), Session("short", [4, 5], [0, 1])]
        steps = list(batcher(sessions, 2))
        assert [b.active.tolist() for b in steps] == [[True, True], [True, False], [True, False]]
        assert not steps[1].reset[1]

    def test_beta_one_is_sequential(self):
        sessions = gen_synthetic(6, 5, (2, 5), "uniform", seed=4)
        pairs = [(int(b.inputs[0]), int(b.targets[0])) for b in batcher(sessions, 1)]
        expected = [(s.items[i], s.items[i + 1]) for s in sessions for i in range(len(s) - 1)]
        assert pairs == expected

    def test_conservation(self):
        sessions = gen_synthetic(9, 40, (1, 7), "uniform", seed=5)
        total = sum(int(b.active.sum()) for b in batcher(sessions, 6))
        assert total == sum(len(s) - 1 for s in sessions)

    def test_beta_larger_than_corpus(self):
        steps = list(batcher(three_sessions(), 10))
        assert len(steps[0]) == 3

    @settings(max_examples=40, deadline=None)
    @given(st.integers(0, 10**6), st.integers(1, 9))
    def test_equivalence_to_naive(self, seed, beta):
        sessions = gen_synthetic(7, 25, (1, 6), "uniform", seed=seed)
        assert batcher_triples(sessions, beta) == naive_triples(sessions)


class TestSynthetic:
    def test_cyclic(self):
        sessions = gen_synthetic(5, 40, (4, 4), "cyclic", seed=0)
        starting_at_2 = [s for s in sessions if s.items[0] == 2]
        assert starting_at_2 and all(s.items == [2, 3, 4, 0] for s in starting_at_2)

    def test_deterministic(self):
        a = gen_synthetic(8, 30, (2, 9), "uniform", seed=12)
        b = gen_synthetic(8, 30, (2, 9), "uniform", seed=12)
        assert [(s.session_id, s.items, s.timestamps) for s in a] == [(s.session_id, s.items, s.timestamps) for s in b]

    def test_lengths_in_range(self):
        assert all(3 <= len(s) <= 6 for s in gen_synthetic(4, 100, (3, 6), "uniform", seed=1))

    def test_markov_frequencies(self):
        m = 4
        matrix = np.array([
            [0.1, 0.6, 0.3, 0.0],
            [0.0, 0.2, 0.3, 0.5],
            [0.7, 0.1, 0.1, 0.1],
            [0.25, 0.25, 0.25, 0.25],
        ])
        sessions = gen_synthetic(m, 1000, (101, 101), "markov", seed=3, matrix=matrix)
        counts = np.zeros((m, m))
        for s in sessions:
            for x, y in zip(s.items, s.items[1:]):
                counts[x, y] += 1
        assert counts.sum() == 10**5
        freq = counts / counts.sum(axis=1, keepdims=True)
        assert np.max(np.abs(freq - matrix)) < 0.01

    def test_sparse_markov_is_stochastic(self):
        mat = sparse_markov_matrix(10, 3, seed=1)
        np.testing.assert_allclose(mat.sum(axis=1), 1.0)
        assert np.all((mat > 0).sum(axis=1) == 3)

    def test_validation(self):
        with pytest.raises(ValueError):
            gen_synthetic(1, 3, (2, 3), "cyclic")
        with pytest.raises(ValueError):
            gen_synthetic(3, 3, (2, 3), "markov")
        with pytest.raises(ValueError):
            gen_synthetic(3, 3, (2, 3), "zipf")


class TestCorpusFile:
    def test_round_trip(self, tmp_path):
        corpus = ingest(FIXTURE)
        path = tmp_path / "c.rvc"
        save_corpus(path, corpus.sessions, corpus.vocab)
        back = load_corpus(path)
        assert back.vocab == corpus.vocab
        assert [(s.session_id, s.items, s.timestamps) for s in back.sessions] == \
               [(s.session_id, s.items, s.timestamps) for s in corpus.sessions]
        assert encode_corpus(back.sessions, back.vocab) == path.read_bytes()

    def test_header_layout(self):
        data = encode_corpus(three_sessions(), ItemVocab(["a", "b", "c", "d"]))
        assert data[:8] == b"RLVCORP\x00"
        assert int.from_bytes(data[8:10], "little") == 1
        assert int.from_bytes(data[12:16], "little") == 3
        # vocab count varint, then "a"
        assert data[16:19] == bytes([4, 1, ord("a")])

    def test_bad_magic(self):
        data = bytearray(encode_corpus(three_sessions(), ItemVocab(["a", "b", "c", "d"])))
        data[0] ^= 0xFF
        with pytest.raises(DataError):
            decode_corpus(bytes(data))

    def test_truncated(self):
        data = encode_corpus(three_sessions(), ItemVocab(["a", "b", "c", "d"]))
        with pytest.raises(DataError):
            decode_corpus(data[:-3])

    def test_large_varints(self):
        s = [Session("big", [0, 300], [1.7e9, 1.7e9 + 0.001])]
        vocab = ItemVocab([str(i) for i in range(301)])
        back = decode_corpus(encode_corpus(s, vocab))
        assert back.sessions[0].items == [0, 300]
        assert back.sessions[0].timestamps == [1.7e9, 1.7e9 + 0.001]
