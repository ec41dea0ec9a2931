"""The ``SBST`` strip container.

Layout (all integers little-endian)::

    magic        4 bytes  b"SBST"
    version      u32      (currently 1)
    count        u64
    per strip:
      subject_id   u32 length + UTF-8 bytes
      record_id    u32 length + UTF-8 bytes
      cycle        u8       0 = unknown, 1, 2
      start_index  u64
      label block  u8 gender (0 absent, 1 F, 2 M)
                   f64 age (NaN = absent)
                   u8 rhythm (0 absent, 1 AFib, 2 Normal, 3 Other)
                   u8 sleep stage (0 absent, 1 Awake, 2 REM, 3 NREM)
      values       1000 x f64
"""

from __future__ import annotations

import io
import math
import os
import struct
from pathlib import Path
from typing import Sequence

import numpy as np

from .errors import CorruptStore
from .strips import GENDERS, RHYTHMS, SLEEP_STAGES, STRIP_LEN, Strip, StripLabels

MAGIC = b"SBST"
VERSION = 1


def _encode_choice(value: str | None, choices: Sequence[str]) -> int:
    return 0 if value is None else choices.index(value) + 1


def _decode_choice(code: int, choices: Sequence[str]) -> str | None:
    if code == 0:
        return None
    if code > len(choices):
        raise CorruptStore(f"label code {code} out of range")
    return choices[code - 1]


def _write_text(buf, text: str) -> None:
    raw = text.encode("utf-8")
    buf.write(struct.pack("<I", len(raw)))
    buf.write(raw)


def dumps_strips(strips: Sequence[Strip]) -> bytes:
    buf = io.BytesIO()
    buf.write(MAGIC)
    buf.write(struct.pack("<IQ", VERSION, len(strips)))
    for s in strips:
        _write_text(buf, s.subject_id)
        _write_text(buf, s.record_id)
        lab = s.labels
        buf.write(struct.pack("<BQ", s.cycle or 0, s.start_index))
        buf.write(
            struct.pack(
                "<BdBB",
                _encode_choice(lab.gender, GENDERS),
                math.nan if lab.age is None else float(lab.age),
                _encode_choice(lab.rhythm, RHYTHMS),
                _encode_choice(lab.sleep_stage, SLEEP_STAGES),
            )
        )
        buf.write(np.ascontiguousarray(s.values, dtype="<f8").tobytes())
    return buf.getvalue()


class _Reader:
    def __init__(self, data: bytes):
        self.data = data
        self.pos = 0

    def take(self, n: int) -> bytes:
        if self.pos + n > len(self.data):
            raise CorruptStore("strip store truncated")
        out = self.data[self.pos : self.pos + n]
        self.pos += n
        return out

    def unpack(self, fmt: str):
        return struct.unpack(fmt, self.take(struct.calcsize(fmt)))

    def text(self) -> str:
        (n,) = self.unpack("<I")
        try:
            return self.take(n).decode("utf-8")
        except UnicodeDecodeError as exc:
            raise CorruptStore("invalid UTF-8 in strip store") from exc


def loads_strips(data: bytes) -> list[Strip]:
    r = _Reader(data)
    if r.take(4) != MAGIC:
        raise CorruptStore("not an SBST strip store (bad magic)")
    version, count = r.unpack("<IQ")
    if version != VERSION:
        raise CorruptStore(f"unsupported strip store version {version}")
    strips = []
    for _ in range(count):
        subject_id = r.text()
        record_id = r.text()
        cycle, start = r.unpack("<BQ")
        g, age, rhythm, stage = r.unpack("<BdBB")
        values = np.frombuffer(r.take(8 * STRIP_LEN), dtype="<f8").astype(np.float64)
        if cycle not in (0, 1, 2):
            raise CorruptStore(f"bad cycle byte {cycle}")
        strips.append(
            Strip(
                values=values,
                subject_id=subject_id,
                record_id=record_id,
                cycle=cycle or None,
                start_index=start,
                labels=StripLabels(
                    gender=_decode_choice(g, GENDERS),
                    age=None if math.isnan(age) else age,
                    rhythm=_decode_choice(rhythm, RHYTHMS),
                    sleep_stage=_decode_choice(stage, SLEEP_STAGES),
                ),
            )
        )
    if r.pos != len(data):
        raise CorruptStore("trailing bytes after last strip")
    return strips


def save_strips(strips: Sequence[Strip], path: str | os.PathLike) -> None:
    Path(path).write_bytes(dumps_strips(strips))


def load_strips(path: str | os.PathLike) -> list[Strip]:
    return loads_strips(Path(path).read_bytes())
