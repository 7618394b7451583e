"""Normalized binary corpus file.

Layout (all integers little-endian, varints are unsigned LEB128)::

    offset 0   8 bytes   magic b"RLVCORP\\x00"
    offset 8   u16       format version (1)
    offset 10  u16       reserved, zero
    offset 12  u32       number of sessions
    vocab:     varint m, then m x (varint byte length, UTF-8 raw item id)
    sessions:  per session
                 varint byte length, UTF-8 session id
                 varint event count n
                 n x (varint delta_ms, varint item index)

Timestamps are stored as integer milliseconds; the first delta of a session
is its absolute start time, later deltas are relative to the previous event.
"""

from __future__ import annotations

import io
import os
import struct
from pathlib import Path

from relavar.data import Corpus, ItemVocab, Session
from relavar.errors import DataError

MAGIC = b"RLVCORP\x00"
VERSION = 1
_HEADER = struct.Struct("<8sHHI")


def write_varint(buf: io.BytesIO, value: int) -> None:
    if value < 0:
        raise ValueError("varints are unsigned")
    while True:
        byte = value & 0x7F
        value >>= 7
        if value:
            buf.write(bytes((byte | 0x80,)))
        else:
            buf.write(bytes((byte,)))
            return


def read_varint(buf: io.BytesIO) -> int:
    shift = 0
    value = 0
    while True:
        b = buf.read(1)
        if not b:
            raise DataError("truncated corpus file")
        value |= (b[0] & 0x7F) << shift
        if not b[0] & 0x80:
            return value
        shift += 7
        if shift > 63:
            raise DataError("corrupt varint in corpus file")


def _write_str(buf, text: str) -> None:
    data = text.encode("utf-8")
    write_varint(buf, len(data))
    buf.write(data)


def _read_str(buf) -> str:
    n = read_varint(buf)
    data = buf.read(n)
    if len(data) != n:
        raise DataError("truncated corpus file")
    return data.decode("utf-8")


def encode_corpus(sessions, vocab: ItemVocab) -> bytes:
    buf = io.BytesIO()
    buf.write(_HEADER.pack(MAGIC, VERSION, 0, len(sessions)))
    write_varint(buf, vocab.m)
    for raw in vocab.raw_ids:
        _write_str(buf, raw)
    for s in sessions:
        _write_str(buf, s.session_id)
        write_varint(buf, len(s))
        prev = 0
        for ts, item in zip(s.timestamps, s.items):
            ms = int(round(ts * 1000.0))
            if ms < prev:
                raise DataError(f"session {s.session_id!r}: timestamps must be nonnegative and nondecreasing")
            write_varint(buf, ms - prev)
            write_varint(buf, item)
            prev = ms
    return buf.getvalue()


def decode_corpus(data: bytes) -> Corpus:
    if len(data) < _HEADER.size:
        raise DataError("corpus file too short")
    magic, version, _, n_sessions = _HEADER.unpack_from(data)
    if magic != MAGIC:
        raise DataError("not a corpus file (bad magic)")
    if version != VERSION:
        raise DataError(f"unsupported corpus version {version}")
    buf = io.BytesIO(data[_HEADER.size:])
    vocab = ItemVocab([_read_str(buf) for _ in range(read_varint(buf))])
    if vocab.m != len(set(vocab.raw_ids)):
        raise DataError("corpus vocabulary has duplicate ids")
    sessions = []
    for _ in range(n_sessions):
        sid = _read_str(buf)
        n = read_varint(buf)
        items, ts = [], []
        t = 0
        for _ in range(n):
            t += read_varint(buf)
            item = read_varint(buf)
            if item >= vocab.m:
                raise DataError(f"session {sid!r}: item index {item} outside vocabulary")
            ts.append(t / 1000.0)
            items.append(item)
        sessions.append(Session(sid, items, ts))
    if buf.read(1):
        raise DataError("trailing bytes after corpus data")
    return Corpus(sessions, vocab)


def atomic_write(path, data: bytes) -> None:
    """Write to a sibling temp file, then rename over ``path``."""
    path = Path(path)
    tmp = path.with_name(path.name + ".tmp")
    with open(tmp, "wb") as fh:
        fh.write(data)
        fh.flush()
        os.fsync(fh.fileno())
    os.replace(tmp, path)


def save_corpus(path, sessions, vocab: ItemVocab) -> None:
    atomic_write(path, encode_corpus(sessions, vocab))


def load_corpus(path) -> Corpus:
    path = Path(path)
    if not path.exists():
        raise DataError(f"corpus file not found: {path}")
    return decode_corpus(path.read_bytes())
