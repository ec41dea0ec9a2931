"""Reader for PhysioNet WFDB records: ``.hea`` headers, format 212/16 signals, MIT annotations."""

from __future__ import annotations

import os
import re
from dataclasses import dataclass, replace
from fractions import Fraction
from pathlib import Path

import numpy as np

from .errors import MalformedAnnotation, MalformedHeader, TruncatedData, UnsupportedFormat
from .records import RecordHeader, SignalRecord, SignalSpec, adc_to_physical

SUPPORTED_FORMATS = (212, 16)
DEFAULT_GAIN = 200.0
DEFAULT_FS = Fraction(250)

# MIT annotation codes -> display symbols
ANNOTATION_SYMBOLS = {
    0: " ", 1: "N", 2: "L", 3: "R", 4: "a", 5: "V", 6: "F", 7: "J", 8: "A", 9: "S",
    10: "E", 11: "j", 12: "/", 13: "Q", 14: "~", 16: "|", 18: "s", 19: "T", 20: "*",
    21: "D", 22: '"', 23: "=", 24: "p", 25: "B", 26: "^", 27: "t", 28: "+", 29: "u",
    30: "?", 31: "!", 32: "[", 33: "]", 34: "e", 35: "n", 36: "@", 37: "x", 38: "f",
    39: "(", 40: ")", 41: "r",
}
SYMBOL_CODES = {v: k for k, v in ANNOTATION_SYMBOLS.items()}

SKIP, NUM, SUB, CHN, AUX = 59, 60, 61, 62, 63


@dataclass
class Annotation:
    sample_index: int
    code: int
    aux_text: str | None = None
    subtype: int = 0
    chan: int = 0
    num: int = 0

    @property
    def symbol(self) -> str:
        return ANNOTATION_SYMBOLS.get(self.code, "?")


# -- signal formats -----------------------------------------------------------


def decode_wfdb_212(data: bytes, n_samples: int) -> np.ndarray:
    """Unpack 12-bit two's-complement samples stored two per three bytes."""
    needed = (n_samples * 3 + 1) // 2
    if len(data) < needed:
        raise TruncatedData(f"format 212 needs {needed} bytes for {n_samples} samples, got {len(data)}")
    n_pairs = (n_samples + 1) // 2
    raw = np.zeros(n_pairs * 3, dtype=np.uint8)
    chunk = np.frombuffer(data, dtype=np.uint8, count=min(len(data), n_pairs * 3))
    raw[: chunk.size] = chunk
    b = raw.reshape(n_pairs, 3).astype(np.int32)
    out = np.empty(n_pairs * 2, dtype=np.int32)
    out[0::2] = b[:, 0] | ((b[:, 1] & 0x0F) << 8)
    out[1::2] = b[:, 2] | ((b[:, 1] & 0xF0) << 4)
    out[out > 2047] -= 4096
    return out[:n_samples].astype(np.int64)


def encode_wfdb_212(samples) -> bytes:
    """Pack integers in [-2048, 2047] as format 212 (inverse of :func:`decode_wfdb_212`)."""
    s = np.asarray(samples, dtype=np.int64)
    if s.size and (s.min() < -2048 or s.max() > 2047):
        raise ValueError("format 212 samples must lie in [-2048, 2047]")
    n = s.size
    u = (s & 0xFFF).astype(np.uint16)
    if n % 2:
        u = np.append(u, 0)
    first, second = u[0::2], u[1::2]
    packed = np.empty((first.size, 3), dtype=np.uint8)
    packed[:, 0] = first & 0xFF
    packed[:, 1] = ((first >> 8) & 0x0F) | (((second >> 8) & 0x0F) << 4)
    packed[:, 2] = second & 0xFF
    out = packed.reshape(-1).tobytes()
    return out[: (n * 3 + 1) // 2]


def decode_wfdb_16(data: bytes, n_samples: int) -> np.ndarray:
    if len(data) < 2 * n_samples:
        raise TruncatedData(f"format 16 needs {2 * n_samples} bytes, got {len(data)}")
    return np.frombuffer(data, dtype="<i2", count=n_samples).astype(np.int64)


# -- header -------------------------------------------------------------------

_RECORD_RE = re.compile(
    r"^(?P<name>[^\s/]+)(?:/(?P<nseg>\d+))?\s+(?P<nsig>\d+)"
    r"(?:\s+(?P<fs>[\d.eE+-]+)(?:/[\d.eE+-]+)?(?:\([\d.eE+-]+\))?"
    r"(?:\s+(?P<nsamp>\d+))?)?"
)
_FORMAT_RE = re.compile(r"^(?P<fmt>\d+)(?:x(?P<spf>\d+))?(?::(?P<skew>\d+))?(?:\+(?P<offset>\d+))?$")
_GAIN_RE = re.compile(r"^(?P<gain>[\d.eE+-]+)(?:\((?P<baseline>-?\d+)\))?(?:/(?P<units>\S+))?$")


@dataclass(frozen=True)
class _SignalLine:
    filename: str
    spec: SignalSpec
    byte_offset: int


def parse_header(text: str) -> tuple[RecordHeader, list[_SignalLine]]:
    lines = [ln.strip() for ln in text.splitlines()]
    lines = [ln for ln in lines if ln and not ln.startswith("#")]
    if not lines:
        raise MalformedHeader("empty header")
    m = _RECORD_RE.match(lines[0])
    if not m:
        raise MalformedHeader(f"cannot parse record line {lines[0]!r}")
    if m.group("nseg"):
        raise UnsupportedFormat("multi-segment records are not supported")
    n_sig = int(m.group("nsig"))
    if n_sig < 1:
        raise MalformedHeader("record declares no signals")
    try:
        fs = Fraction(m.group("fs")) if m.group("fs") else DEFAULT_FS
    except ValueError as exc:
        raise MalformedHeader(f"bad sampling frequency {m.group('fs')!r}") from exc
    if fs <= 0:
        raise MalformedHeader("sampling frequency must be positive")
    # 0 means "not declared": derived from the signal file size when reading
    n_samples = int(m.group("nsamp")) if m.group("nsamp") else 0

    if len(lines) < 1 + n_sig:
        raise MalformedHeader(f"header declares {n_sig} signals but has {len(lines) - 1} signal lines")
    signals: list[_SignalLine] = []
    for ln in lines[1 : 1 + n_sig]:
        fields = ln.split(None, 8)
        if len(fields) < 2:
            raise MalformedHeader(f"bad signal line {ln!r}")
        fm = _FORMAT_RE.match(fields[1])
        if not fm:
            raise MalformedHeader(f"bad format field {fields[1]!r}")
        fmt = int(fm.group("fmt"))
        if fmt not in SUPPORTED_FORMATS:
            raise UnsupportedFormat(f"WFDB format {fmt} is not supported (only {SUPPORTED_FORMATS})")
        if fm.group("spf") and int(fm.group("spf")) != 1:
            raise UnsupportedFormat("multi-frequency records (samples per frame > 1) are not supported")
        gain, baseline, units = DEFAULT_GAIN, None, "mV"
        if len(fields) > 2:
            gm = _GAIN_RE.match(fields[2])
            if not gm:
                raise MalformedHeader(f"bad gain field {fields[2]!r}")
            gain = float(gm.group("gain")) or DEFAULT_GAIN
            if gm.group("baseline") is not None:
                baseline = float(gm.group("baseline"))
            units = gm.group("units") or "mV"
        adc_zero = float(fields[4]) if len(fields) > 4 else 0.0
        if baseline is None:
            baseline = adc_zero
        if gain <= 0:
            raise MalformedHeader(f"non-positive gain {gain}")
        if units.lower() in ("uv", "microvolt", "µv"):
            gain = gain * 1000.0  # ADC units per mV
            units = "mV"
        description = fields[8] if len(fields) > 8 else f"sig{len(signals)}"
        signals.append(
            _SignalLine(
                filename=fields[0],
                spec=SignalSpec(format_code=fmt, gain=gain, baseline=baseline, lead_name=description, units=units),
                byte_offset=int(fm.group("offset") or 0),
            )
        )
    header = RecordHeader(
        record_name=m.group("name"),
        n_signals=n_sig,
        sampling_rate=fs,
        n_samples=n_samples,
        signals=tuple(s.spec for s in signals),
    )
    return header, signals


def _decode(fmt: int, data: bytes, n: int) -> np.ndarray:
    return decode_wfdb_212(data, n) if fmt == 212 else decode_wfdb_16(data, n)


def _bytes_per_sample(fmt: int) -> float:
    return 1.5 if fmt == 212 else 2.0


def read_wfdb_record(header_file: str | os.PathLike, signal_file: str | os.PathLike | None = None) -> SignalRecord:
    """Read a single-segment record; ``signal_file`` overrides the file named in the header."""
    header_path = Path(header_file)
    if header_path.suffix != ".hea":
        header_path = header_path.with_name(header_path.name + ".hea")
    text = header_path.read_text(encoding="latin-1")
    header, signals = parse_header(text)

    # signals sharing a file are stored frame-interleaved
    groups: dict[str, list[int]] = {}
    for i, s in enumerate(signals):
        groups.setdefault(s.filename, []).append(i)

    n_samples = header.n_samples
    decoded: dict[int, np.ndarray] = {}
    for filename, idx in groups.items():
        fmts = {signals[i].spec.format_code for i in idx}
        if len(fmts) != 1:
            raise UnsupportedFormat(f"mixed formats within {filename}")
        fmt = fmts.pop()
        path = Path(signal_file) if signal_file is not None else header_path.parent / filename
        data = path.read_bytes()[signals[idx[0]].byte_offset :]
        if n_samples == 0:
            n_samples = int(len(data) // (_bytes_per_sample(fmt) * len(idx)))
        flat = _decode(fmt, data, n_samples * len(idx))
        frames = flat.reshape(n_samples, len(idx))
        for col, i in enumerate(idx):
            decoded[i] = frames[:, col]

    physical = np.stack(
        [adc_to_physical(decoded[i], header.signals[i].gain, header.signals[i].baseline) for i in range(header.n_signals)]
    )
    return SignalRecord(header=replace(header, n_samples=n_samples), samples=physical)


# -- annotations ----------------------------------------------------------------


def decode_annotations(data: bytes) -> list[Annotation]:
    if len(data) % 2:
        raise MalformedAnnotation("annotation stream has an odd number of bytes")
    words = np.frombuffer(data, dtype="<u2")
    out: list[Annotation] = []
    t = 0
    i = 0
    n = words.size
    while i < n:
        w = int(words[i])
        code, value = w >> 10, w & 0x3FF
        i += 1
        if w == 0:
            break
        if code == SKIP:
            if i + 2 > n:
                raise MalformedAnnotation("SKIP escape truncated")
            hi, lo = int(words[i]), int(words[i + 1])
            interval = (hi << 16) | lo
            if interval >= 2**31:
                interval -= 2**32
            t += interval
            if t < (out[-1].sample_index if out else 0):
                raise MalformedAnnotation("SKIP moves annotation time backwards")
            i += 2
            continue
        if code == AUX:
            if not out:
                raise MalformedAnnotation("AUX escape before any annotation")
            n_words = (value + 1) // 2
            if i + n_words > n:
                raise MalformedAnnotation("AUX string truncated")
            raw = words[i : i + n_words].tobytes()[:value]
            out[-1].aux_text = raw.rstrip(b"\x00").decode("latin-1")
            i += n_words
            continue
        if code in (NUM, SUB, CHN):
            if not out:
                raise MalformedAnnotation("NUM/SUB/CHN escape before any annotation")
            field = {NUM: "num", SUB: "subtype", CHN: "chan"}[code]
            setattr(out[-1], field, value)
            continue
        t += value
        out.append(Annotation(sample_index=t, code=code))
    # some writers store the sampling frequency as a leading note
    if out and out[0].code == 22 and (out[0].aux_text or "").startswith("## time resolution"):
        out = out[1:]
    return out


def read_wfdb_annotations(annotation_file: str | os.PathLike) -> list[Annotation]:
    return decode_annotations(Path(annotation_file).read_bytes())


def encode_annotations(annotations: list[Annotation]) -> bytes:
    """Test/fixture writer for the MIT annotation format."""
    words: list[int] = []
    prev = 0
    for a in annotations:
        dt = a.sample_index - prev
        if dt < 0:
            raise ValueError("annotations must be sorted")
        if dt > 1023:
            words += [SKIP << 10, (dt >> 16) & 0xFFFF, dt & 0xFFFF]
            dt = 0
        words.append((a.code << 10) | dt)
        if a.aux_text:
            raw = a.aux_text.encode("latin-1")
            words.append((AUX << 10) | len(raw))
            if len(raw) % 2:
                raw += b"\x00"
            words += list(np.frombuffer(raw, dtype="<u2"))
        prev = a.sample_index
    words.append(0)
    return np.asarray(words, dtype="<u2").tobytes()
