"""Click-stream ingestion, splitting, session-parallel batching and synthetic corpora."""

from __future__ import annotations

import csv
import logging
from collections import OrderedDict
from dataclasses import dataclass, field
from datetime import datetime, timezone
from pathlib import Path
from typing import Iterator, Sequence

import numpy as np

from relavar.errors import DataError
from relavar.numerics import Rng, derive_seed

log = logging.getLogger(__name__)

SPLIT_RULES = ("by-time", "by-count", "by-hash")
TRANSITIONS = ("uniform", "cyclic", "markov")


@dataclass
class Session:
    session_id: str
    items: list[int]
    timestamps: list[float]

    def __post_init__(self):
        if len(self.items) != len(self.timestamps):
            raise ValueError("items and timestamps must have equal length")
        if not self.items:
            raise ValueError(f"session {self.session_id!r} has no events")

    def __len__(self) -> int:
        return len(self.items)

    @property
    def events(self) -> list[tuple[float, int]]:
        return list(zip(self.timestamps, self.items))

    @property
    def start(self) -> float:
        return self.timestamps[0]

    @property
    def end(self) -> float:
        return self.timestamps[-1]


class ItemVocab:
    """Bijection between raw item ids (strings) and dense indices ``0..m-1``."""

    def __init__(self, raw_ids: Sequence[str] = ()):
        self._raw: list[str] = []
        self._index: dict[str, int] = {}
        for raw in raw_ids:
            self.add(raw)

    def add(self, raw: str) -> int:
        raw = str(raw)
        idx = self._index.get(raw)
        if idx is None:
            idx = len(self._raw)
            self._raw.append(raw)
            self._index[raw] = idx
        return idx

    def index(self, raw: str) -> int:
        try:
            return self._index[str(raw)]
        except KeyError:
            raise KeyError(f"unknown item id {raw!r}") from None

    def raw(self, idx: int) -> str:
        return self._raw[idx]

    def __contains__(self, raw) -> bool:
        return str(raw) in self._index

    def __len__(self) -> int:
        return len(self._raw)

    def __eq__(self, other) -> bool:
        return isinstance(other, ItemVocab) and self._raw == other._raw

    @property
    def m(self) -> int:
        return len(self._raw)

    @property
    def raw_ids(self) -> list[str]:
        return list(self._raw)


@dataclass
class Corpus:
    sessions: list[Session]
    vocab: ItemVocab
    dropped_singletons: int = 0
    malformed_rows: int = 0
    filtered_events: int = 0

    def __iter__(self):
        # allows ``sessions, vocab = ingest(...)``
        return iter((self.sessions, self.vocab))

    @property
    def n_events(self) -> int:
        return sum(len(s) for s in self.sessions)


def parse_timestamp(text: str) -> float:
    """Epoch seconds, or an ISO-8601 timestamp (naive values are taken as UTC)."""
    text = text.strip()
    try:
        return float(text)
    except ValueError:
        pass
    if text.endswith(("Z", "z")):
        text = text[:-1] + "+00:00"
    dt = datetime.fromisoformat(text)
    if dt.tzinfo is None:
        dt = dt.replace(tzinfo=timezone.utc)
    return dt.timestamp()


def _finite_ts(text: str) -> float:
    ts = parse_timestamp(text)
    if not np.isfinite(ts):
        raise ValueError(f"non-finite timestamp {text!r}")
    return ts


def ingest(path, delimiter: str = ",", strict: bool = False) -> Corpus:
    """Read ``session_id, timestamp, item_id`` rows into time-ordered sessions.

    A first row whose timestamp does not parse is treated as a header. Other
    unparseable rows are skipped and counted, or raise in ``strict`` mode.
    The vocabulary covers every item in the file, in order of first
    appearance, including items that only occur in dropped singleton sessions.
    """
    path = Path(path)
    if not path.exists():
        raise DataError(f"input file not found: {path}")
    vocab = ItemVocab()
    grouped: OrderedDict[str, list[tuple[float, int, int]]] = OrderedDict()
    malformed = 0
    with path.open(newline="", encoding="utf-8") as fh:
        for lineno, row in enumerate(csv.reader(fh, delimiter=delimiter), start=1):
            if not row or all(not c.strip() for c in row):
                continue
            try:
                if len(row) < 3:
                    raise ValueError(f"expected 3 columns, got {len(row)}")
                sid, ts_text, item = row[0].strip(), row[1], row[2].strip()
                if not sid or not item:
                    raise ValueError("empty session or item id")
                ts = _finite_ts(ts_text)
            except ValueError as exc:
                if lineno == 1:
                    log.info("treating first line of %s as a header", path)
                    continue
                if strict:
                    raise DataError(f"{path}:{lineno}: malformed row: {exc}") from None
                malformed += 1
                continue
            idx = vocab.add(item)
            grouped.setdefault(sid, []).append((ts, lineno, idx))
    if malformed:
        log.warning("skipped %d malformed rows in %s", malformed, path)

    sessions = []
    dropped = 0
    for sid, events in grouped.items():
        if len(events) < 2:
            dropped += 1
            continue
        events.sort()
        sessions.append(Session(sid, [e[2] for e in events], [e[0] for e in events]))
    if dropped:
        log.warning("dropped %d single-event sessions", dropped)
    if not sessions:
        raise DataError(f"no usable sessions in {path}")
    sessions = order_sessions(sessions)
    return Corpus(sessions, vocab, dropped_singletons=dropped, malformed_rows=malformed)


def order_sessions(sessions: Sequence[Session]) -> list[Session]:
    """Stable sort by session start time."""
    return sorted(sessions, key=lambda s: s.start)


@dataclass
class SplitRule:
    kind: str
    cutoff: float | None = None
    n_test: int | None = None
    fraction: float | None = None
    seed: int = 0

    def __post_init__(self):
        if self.kind not in SPLIT_RULES:
            raise ValueError(f"split rule must be one of {SPLIT_RULES}, got {self.kind!r}")
        if self.kind == "by-time" and self.cutoff is None:
            raise ValueError("by-time split needs a cutoff")
        if self.kind == "by-count" and (self.n_test is None or self.n_test < 1):
            raise ValueError("by-count split needs n_test >= 1")
        if self.kind == "by-hash" and (self.fraction is None or not 0 < self.fraction < 1):
            raise ValueError("by-hash split needs a fraction in (0, 1)")


def _hash_unit(seed: int, session_id: str) -> float:
    return (derive_seed(seed, session_id) >> 11) * 2.0**-53


def split(sessions: Sequence[Session], rule: SplitRule) -> tuple[list[Session], list[Session], int]:
    """Partition sessions into train and test.

    by-time puts sessions that end after ``cutoff`` in test; by-count takes
    the ``n_test`` sessions with the latest final timestamp; by-hash assigns a
    session to test when a seeded hash of its id falls below ``fraction``.

    Test events whose item never occurs in train are removed afterwards and
    test sessions left with fewer than two events are dropped. Returns
    ``(train, test, n_filtered_events)``.
    """
    sessions = list(sessions)
    if rule.kind == "by-time":
        is_test = [s.end > rule.cutoff for s in sessions]
    elif rule.kind == "by-count":
        if rule.n_test >= len(sessions):
            raise DataError(f"by-count({rule.n_test}) leaves no training sessions")
        order = sorted(range(len(sessions)), key=lambda i: (sessions[i].end, i))
        test_idx = set(order[-rule.n_test:])
        is_test = [i in test_idx for i in range(len(sessions))]
    else:
        is_test = [_hash_unit(rule.seed, s.session_id) < rule.fraction for s in sessions]

    train = [s for s, t in zip(sessions, is_test) if not t]
    test_raw = [s for s, t in zip(sessions, is_test) if t]
    if not train:
        raise DataError("split produced an empty training set")

    seen = {i for s in train for i in s.items}
    test = []
    filtered = 0
    for s in test_raw:
        keep = [k for k, item in enumerate(s.items) if item in seen]
        filtered += len(s) - len(keep)
        if len(keep) >= 2:
            test.append(Session(s.session_id, [s.items[k] for k in keep], [s.timestamps[k] for k in keep]))
        else:
            filtered += len(keep)
    if filtered:
        log.warning("removed %d test events with items unseen in training", filtered)
    if not test:
        raise DataError("split produced an empty test set")
    return train, test, filtered


@dataclass
class SessionBatch:
    """One session-parallel step. ``active`` is False for lanes with no session
    left to run; such lanes carry placeholder indices and are excluded from
    the loss. ``session`` holds the corpus position of each lane's session
    (-1 when inactive)."""

    inputs: np.ndarray
    targets: np.ndarray
    reset: np.ndarray
    active: np.ndarray
    session: np.ndarray = field(default=None)

    def __len__(self) -> int:
        return self.inputs.shape[0]


def batcher(sessions: Sequence[Session], batch_size: int, order: Sequence[int] | None = None) -> Iterator[SessionBatch]:
    """Session-parallel mini-batches.

    Each lane walks one session, emitting consecutive (input, target) pairs;
    when its session runs out the next unused session (in ``order``, default
    corpus order) takes its place and the lane's reset flag is raised. The
    stream ends once every lane is exhausted.
    """
    if batch_size < 1:
        raise ValueError("batch size must be at least 1")
    if order is None:
        order = range(len(sessions))
    queue = [i for i in order if len(sessions[i]) >= 2]
    if not queue:
        return
    if batch_size > len(queue):
        log.warning("batch size %d exceeds session count; using %d", batch_size, len(queue))
        batch_size = len(queue)

    lane_session = np.full(batch_size, -1, dtype=np.int64)
    lane_pos = np.zeros(batch_size, dtype=np.int64)
    cursor = 0
    for lane in range(batch_size):
        lane_session[lane] = queue[cursor]
        cursor += 1
    fresh = np.ones(batch_size, dtype=bool)

    while True:
        for lane in range(batch_size):
            sid = lane_session[lane]
            if sid >= 0 and lane_pos[lane] + 1 >= len(sessions[sid]):
                if cursor < len(queue):
                    lane_session[lane] = queue[cursor]
                    cursor += 1
                    lane_pos[lane] = 0
                    fresh[lane] = True
                else:
                    lane_session[lane] = -1
        active = lane_session >= 0
        if not active.any():
            return
        inputs = np.zeros(batch_size, dtype=np.int64)
        targets = np.zeros(batch_size, dtype=np.int64)
        for lane in np.flatnonzero(active):
            s = sessions[lane_session[lane]]
            inputs[lane] = s.items[lane_pos[lane]]
            targets[lane] = s.items[lane_pos[lane] + 1]
        yield SessionBatch(inputs, targets, fresh & active, active, lane_session.copy())
        lane_pos[active] += 1
        fresh[:] = False


def gen_synthetic(
    m: int,
    n_sessions: int,
    len_range: tuple[int, int],
    transition: str = "uniform",
    seed: int = 0,
    matrix=None,
) -> list[Session]:
    """Deterministic synthetic sessions over items ``0..m-1``.

    ``uniform`` draws every item independently; ``cyclic`` follows i -> i+1 mod m;
    ``markov`` follows the row-stochastic ``matrix``. Session k starts at
    ``k * 3600`` seconds with one-second gaps between events.
    """
    if m < 2:
        raise ValueError("need at least two items")
    if transition not in TRANSITIONS:
        raise ValueError(f"transition must be one of {TRANSITIONS}")
    lo, hi = len_range
    if not 1 <= lo <= hi:
        raise ValueError(f"invalid length range {len_range}")
    if transition == "markov":
        if matrix is None:
            raise ValueError("markov transition needs a matrix")
        matrix = np.asarray(matrix, dtype=np.float64)
        if matrix.shape != (m, m) or np.any(matrix < 0) or not np.allclose(matrix.sum(axis=1), 1.0):
            raise ValueError("markov matrix must be a row-stochastic m x m array")
        cdf = np.cumsum(matrix, axis=1)
        cdf[:, -1] = 1.0

    rng = Rng(derive_seed(seed, "synthetic"))
    sessions = []
    for k in range(n_sessions):
        length = int(rng.integers(lo, hi + 1, 1)[0])
        item = int(rng.integers(0, m, 1)[0])
        items = [item]
        for _ in range(length - 1):
            if transition == "cyclic":
                item = (item + 1) % m
            elif transition == "uniform":
                item = int(rng.integers(0, m, 1)[0])
            else:
                u = rng.random(1)[0]
                item = int(np.searchsorted(cdf[item], u, side="right"))
            items.append(item)
        ts = [k * 3600.0 + j for j in range(length)]
        sessions.append(Session(f"s{k}", items, ts))
    return sessions


def sparse_markov_matrix(m: int, fanout: int, seed: int = 0) -> np.ndarray:
    """Random row-stochastic matrix with ``fanout`` nonzero successors per item."""
    rng = Rng(derive_seed(seed, "markov"))
    mat = np.zeros((m, m))
    for i in range(m):
        succ = rng.permutation(m)[:fanout]
        weights = rng.random(fanout) + 0.1
        mat[i, succ] = weights / weights.sum()
    return mat


def synthetic_vocab(m: int) -> ItemVocab:
    return ItemVocab([str(i) for i in range(m)])
