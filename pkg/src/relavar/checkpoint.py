"""Versioned binary checkpoint.

Layout (little-endian)::

    header   8s magic b"RLVCKPT\\x00", u16 version, u16 reserved, u32 reserved
    sections 4-byte tag, u64 payload length, payload; in this order:
      CONF   training config as UTF-8 JSON (sorted keys, compact separators)
      VOCB   u32 m, then m x (u32 byte length, UTF-8 raw item id)
      PARM   weight block: u32 count, then per matrix
             (u16 name length, ASCII name, u32 rows, u32 cols, rows*cols f64 row-major)
      ACCU   Adagrad accumulators, same layout as PARM
      VELO   momentum velocities, same layout as PARM
      RNGS   u64 seed, u64 counter of the training stream
      CTRS   u64 epoch, u64 step, u64 skipped updates
    trailer  u32 CRC-32 of every preceding byte
"""

from __future__ import annotations

import io
import json
import struct
import zlib
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from relavar.corpus import atomic_write
from relavar.data import ItemVocab
from relavar.errors import CheckpointError
from relavar.model import PARAM_NAMES, Model
from relavar.numerics import Rng
from relavar.trainer import AdagradNesterov, TrainConfig, Trainer

MAGIC = b"RLVCKPT\x00"
VERSION = 1
_HEADER = struct.Struct("<8sHHI")
_SECTIONS = (b"CONF", b"VOCB", b"PARM", b"ACCU", b"VELO", b"RNGS", b"CTRS")


@dataclass
class Checkpoint:
    model: Model
    config: TrainConfig
    vocab: ItemVocab
    accum: dict[str, np.ndarray]
    velocity: dict[str, np.ndarray]
    rng: Rng
    epoch: int = 0
    step: int = 0
    skipped: int = 0

    @classmethod
    def from_trainer(cls, trainer: Trainer, vocab: ItemVocab) -> "Checkpoint":
        opt = trainer.optimizer
        return cls(
            model=trainer.model,
            config=trainer.config,
            vocab=vocab,
            accum=opt.accum,
            velocity=opt.velocity,
            rng=Rng(*trainer.rng.state()),
            epoch=trainer.epoch,
            step=trainer.step,
            skipped=opt.skipped,
        )

    def to_trainer(self) -> Trainer:
        trainer = Trainer(self.model, self.config, rng=Rng(*self.rng.state()))
        opt: AdagradNesterov = trainer.optimizer
        opt.accum = {n: self.accum[n].copy() for n in PARAM_NAMES}
        opt.velocity = {n: self.velocity[n].copy() for n in PARAM_NAMES}
        opt.skipped = self.skipped
        trainer.epoch = self.epoch
        trainer.step = self.step
        return trainer


def _matrices(buf: io.BytesIO, mats: dict[str, np.ndarray]) -> None:
    buf.write(struct.pack("<I", len(PARAM_NAMES)))
    for name in PARAM_NAMES:
        arr = np.ascontiguousarray(mats[name], dtype="<f8")
        raw = name.encode("ascii")
        buf.write(struct.pack("<H", len(raw)) + raw)
        buf.write(struct.pack("<II", *arr.shape))
        buf.write(arr.tobytes())


def encode_checkpoint(ckpt: Checkpoint) -> bytes:
    payloads = {}
    payloads[b"CONF"] = json.dumps(ckpt.config.to_dict(), sort_keys=True, separators=(",", ":")).encode("utf-8")
    vb = io.BytesIO()
    vb.write(struct.pack("<I", ckpt.vocab.m))
    for raw in ckpt.vocab.raw_ids:
        data = raw.encode("utf-8")
        vb.write(struct.pack("<I", len(data)) + data)
    payloads[b"VOCB"] = vb.getvalue()
    for tag, mats in ((b"PARM", ckpt.model.params), (b"ACCU", ckpt.accum), (b"VELO", ckpt.velocity)):
        mb = io.BytesIO()
        _matrices(mb, mats)
        payloads[tag] = mb.getvalue()
    payloads[b"RNGS"] = struct.pack("<QQ", *ckpt.rng.state())
    payloads[b"CTRS"] = struct.pack("<QQQ", ckpt.epoch, ckpt.step, ckpt.skipped)

    out = io.BytesIO()
    out.write(_HEADER.pack(MAGIC, VERSION, 0, 0))
    for tag in _SECTIONS:
        out.write(tag + struct.pack("<Q", len(payloads[tag])) + payloads[tag])
    body = out.getvalue()
    return body + struct.pack("<I", zlib.crc32(body))


class _Reader:
    def __init__(self, data: bytes):
        self.data = data
        self.pos = 0

    def take(self, n: int) -> bytes:
        if self.pos + n > len(self.data):
            raise CheckpointError("checkpoint is truncated")
        chunk = self.data[self.pos:self.pos + n]
        self.pos += n
        return chunk

    def unpack(self, fmt: str):
        s = struct.Struct(fmt)
        return s.unpack(self.take(s.size))


def _read_matrices(payload: bytes) -> dict[str, np.ndarray]:
    r = _Reader(payload)
    (count,) = r.unpack("<I")
    mats = {}
    for _ in range(count):
        (n,) = r.unpack("<H")
        name = r.take(n).decode("ascii")
        rows, cols = r.unpack("<II")
        mats[name] = np.frombuffer(r.take(8 * rows * cols), dtype="<f8").reshape(rows, cols).astype(np.float64)
    if r.pos != len(payload) or set(mats) != set(PARAM_NAMES):
        raise CheckpointError("malformed weight block")
    return mats


def decode_checkpoint(data: bytes) -> Checkpoint:
    if len(data) < _HEADER.size + 4:
        raise CheckpointError("checkpoint is truncated")
    magic, version, _, _ = _HEADER.unpack_from(data)
    if magic != MAGIC:
        raise CheckpointError("not a checkpoint file (bad magic)")
    if version != VERSION:
        raise CheckpointError(f"unsupported checkpoint version {version} (expected {VERSION})")
    body, (crc,) = data[:-4], struct.unpack("<I", data[-4:])
    if zlib.crc32(body) != crc:
        raise CheckpointError("checkpoint checksum mismatch (truncated or corrupt file)")
    r = _Reader(body)
    r.pos = _HEADER.size
    payloads = {}
    for tag in _SECTIONS:
        got = r.take(4)
        if got != tag:
            raise CheckpointError(f"expected section {tag!r}, found {got!r}")
        (n,) = r.unpack("<Q")
        payloads[tag] = r.take(n)
    if r.pos != len(body):
        raise CheckpointError("trailing bytes in checkpoint")

    try:
        config = TrainConfig.from_dict(json.loads(payloads[b"CONF"].decode("utf-8")))
    except (ValueError, TypeError) as exc:
        raise CheckpointError(f"invalid config block: {exc}") from None
    vr = _Reader(payloads[b"VOCB"])
    (m,) = vr.unpack("<I")
    raw_ids = []
    for _ in range(m):
        (n,) = vr.unpack("<I")
        raw_ids.append(vr.take(n).decode("utf-8"))
    vocab = ItemVocab(raw_ids)
    model = Model(_read_matrices(payloads[b"PARM"]))
    if vocab.m != model.n_items:
        raise CheckpointError("vocabulary size does not match the weight matrices")
    seed, counter = struct.unpack("<QQ", payloads[b"RNGS"])
    epoch, step, skipped = struct.unpack("<QQQ", payloads[b"CTRS"])
    return Checkpoint(
        model=model,
        config=config,
        vocab=vocab,
        accum=_read_matrices(payloads[b"ACCU"]),
        velocity=_read_matrices(payloads[b"VELO"]),
        rng=Rng(seed, counter),
        epoch=epoch,
        step=step,
        skipped=skipped,
    )


def save_checkpoint(ckpt: Checkpoint, path) -> None:
    atomic_write(path, encode_checkpoint(ckpt))


def load_checkpoint(path) -> Checkpoint:
    path = Path(path)
    if not path.exists():
        raise CheckpointError(f"checkpoint not found: {path}")
    return decode_checkpoint(path.read_bytes())
