"""MWDS training-dataset file format.

Layout (little-endian): magic "MWDS", version u32, vocab-size u32,
sample-count u64, then fixed 609-byte records:

  256 x u8   input tokens
  256 x u8   target tokens
  1 x u8     target action
  32 x i8    sidecar: per-slot (rel row, rel col) of the input observation,
             EMPTY_SLOT (-128) for unoccupied slots, 6 trailing zero bytes
  32 x u8    A-position bitmap (np.packbits order)
  32 x u8    G-position bitmap

The masked set M is not stored; it is derived from pad tokens in the target.
"""
from __future__ import annotations

import struct
from dataclasses import dataclass

import numpy as np

from .tokenizer import (
    EMPTY_SLOT,
    N_SLOTS,
    PAD_ID,
    SEQ_LEN,
    VOCAB_SIZE,
    decode_coord,
)

MAGIC = b"MWDS"
VERSION = 1
_HEADER = struct.Struct("<4sIIQ")

RECORD_DTYPE = np.dtype(
    [
        ("input", np.uint8, (SEQ_LEN,)),
        ("target", np.uint8, (SEQ_LEN,)),
        ("action", np.uint8),
        ("sidecar", np.int8, (32,)),
        ("a_bits", np.uint8, (32,)),
        ("g_bits", np.uint8, (32,)),
    ]
)


class DatasetFormatError(ValueError):
    pass


@dataclass
class Dataset:
    """In-memory view of an MWDS file, one structured record per sample."""

    records: np.ndarray

    def __len__(self):
        return len(self.records)

    @property
    def inputs(self) -> np.ndarray:
        return self.records["input"]

    @property
    def targets(self) -> np.ndarray:
        return self.records["target"]

    @property
    def actions(self) -> np.ndarray:
        return self.records["action"]

    def a_mask(self) -> np.ndarray:
        return np.unpackbits(self.records["a_bits"], axis=1).astype(bool)

    def g_mask(self) -> np.ndarray:
        return np.unpackbits(self.records["g_bits"], axis=1).astype(bool)

    def m_mask(self) -> np.ndarray:
        return self.targets == PAD_ID

    def slot_s(self) -> np.ndarray:
        """(N, 13, 2) input-slot relative coordinates, EMPTY_SLOT when vacant."""
        return self.records["sidecar"][:, : 2 * N_SLOTS].reshape(-1, N_SLOTS, 2).astype(np.int16)

    def slot_g(self) -> np.ndarray:
        """(N, 13, 2) clamped relative goals, decoded from the input tokens."""
        from .tokenizer import AGENT_BASE, COORD_BASE, COORD_MIN, SLOT_LEN

        n = len(self.records)
        out = np.full((n, N_SLOTS, 2), EMPTY_SLOT, dtype=np.int16)
        occ = self.slot_s()[:, :, 0] != EMPTY_SLOT
        for slot in range(N_SLOTS):
            base = AGENT_BASE + slot * SLOT_LEN
            rows = self.inputs[:, base + 2].astype(np.int16) - COORD_BASE + COORD_MIN
            cols = self.inputs[:, base + 3].astype(np.int16) - COORD_BASE + COORD_MIN
            sel = occ[:, slot]
            out[sel, slot, 0] = rows[sel]
            out[sel, slot, 1] = cols[sel]
        return out


def sample_to_record(sample) -> np.ndarray:
    rec = np.zeros((), dtype=RECORD_DTYPE)
    rec["input"] = sample.input.tokens
    rec["target"] = sample.target_tokens
    rec["action"] = sample.target_action
    sidecar = np.zeros(32, dtype=np.int8)
    sidecar[: 2 * N_SLOTS] = np.clip(sample.input.slot_s.reshape(-1), -128, 127)
    rec["sidecar"] = sidecar
    rec["a_bits"] = np.packbits(sample.a_mask)
    rec["g_bits"] = np.packbits(sample.g_mask)
    return rec


def write_dataset(samples, path):
    """Serialize samples to an MWDS file. Accepts TrainingSamples or records."""
    recs = np.empty(len(samples), dtype=RECORD_DTYPE)
    for i, s in enumerate(samples):
        recs[i] = s if isinstance(s, np.void) else sample_to_record(s)
    with open(path, "wb") as f:
        f.write(_HEADER.pack(MAGIC, VERSION, VOCAB_SIZE, len(recs)))
        f.write(recs.tobytes())


def read_dataset(path) -> Dataset:
    with open(path, "rb") as f:
        head = f.read(_HEADER.size)
        if len(head) < _HEADER.size:
            raise DatasetFormatError("truncated header")
        magic, version, vocab, count = _HEADER.unpack(head)
        if magic != MAGIC:
            raise DatasetFormatError(f"bad magic {magic!r}")
        if version != VERSION:
            raise DatasetFormatError(f"unsupported version {version}")
        if vocab != VOCAB_SIZE:
            raise DatasetFormatError(f"vocab size {vocab} != {VOCAB_SIZE}")
        body = f.read()
    expected = count * RECORD_DTYPE.itemsize
    if len(body) != expected:
        raise DatasetFormatError(f"expected {expected} record bytes, got {len(body)}")
    records = np.frombuffer(body, dtype=RECORD_DTYPE).copy()
    return Dataset(records=records)
