"""Reader for continuous EDF files (16-bit little-endian data records)."""

from __future__ import annotations

import os
from dataclasses import dataclass
from fractions import Fraction
from pathlib import Path

import numpy as np

from .errors import LeadNotFound, MalformedHeader, TruncatedData, UnsupportedFormat
from .records import RecordHeader, SignalRecord, SignalSpec

GLOBAL_HEADER_BYTES = 256
SIGNAL_HEADER_BYTES = 256

# per-signal header fields, in file order: name, width
_SIGNAL_FIELDS = (
    ("label", 16),
    ("transducer", 80),
    ("units", 8),
    ("physical_min", 8),
    ("physical_max", 8),
    ("digital_min", 8),
    ("digital_max", 8),
    ("prefilter", 80),
    ("samples_per_record", 8),
    ("reserved", 32),
)


@dataclass(frozen=True)
class EDFSignalHeader:
    label: str
    units: str
    physical_min: float
    physical_max: float
    digital_min: int
    digital_max: int
    samples_per_record: int

    @property
    def gain(self) -> float:
        """Digital units per physical unit."""
        return (self.digital_max - self.digital_min) / (self.physical_max - self.physical_min)

    @property
    def baseline(self) -> float:
        """Digital value that maps to physical zero."""
        return self.digital_min - self.physical_min * self.gain


@dataclass(frozen=True)
class EDFHeader:
    version: str
    patient_id: str
    recording_id: str
    header_bytes: int
    reserved: str
    n_records: int
    record_duration: float
    signals: tuple[EDFSignalHeader, ...]


def header_size(n_signals: int) -> int:
    return GLOBAL_HEADER_BYTES + SIGNAL_HEADER_BYTES * n_signals


def _ascii(raw: bytes) -> str:
    return raw.decode("ascii", errors="replace").strip()


def _number(raw: bytes, kind=float, what: str = "field"):
    text = _ascii(raw)
    try:
        return kind(text)
    except ValueError:
        try:
            return kind(float(text))
        except ValueError as exc:
            raise MalformedHeader(f"cannot parse EDF {what} {text!r}") from exc


def parse_edf_header(raw: bytes) -> EDFHeader:
    if len(raw) < GLOBAL_HEADER_BYTES:
        raise MalformedHeader("EDF global header shorter than 256 bytes")
    n_signals = _number(raw[252:256], int, "signal count")
    if n_signals < 1:
        raise MalformedHeader("EDF file declares no signals")
    total = header_size(n_signals)
    if len(raw) < total:
        raise MalformedHeader(f"EDF header needs {total} bytes, file has {len(raw)}")
    declared = _number(raw[184:192], int, "header size")
    if declared != total:
        raise MalformedHeader(f"EDF header size field {declared} != 256 + 256*{n_signals}")
    reserved = _ascii(raw[192:236])
    if reserved.upper().startswith("EDF+D"):
        raise UnsupportedFormat("discontinuous EDF+D files are not supported")

    fields: dict[str, list[bytes]] = {}
    offset = GLOBAL_HEADER_BYTES
    for name, width in _SIGNAL_FIELDS:
        fields[name] = [raw[offset + i * width : offset + (i + 1) * width] for i in range(n_signals)]
        offset += width * n_signals

    signals = []
    for i in range(n_signals):
        sig = EDFSignalHeader(
            label=_ascii(fields["label"][i]),
            units=_ascii(fields["units"][i]),
            physical_min=_number(fields["physical_min"][i], float, "physical minimum"),
            physical_max=_number(fields["physical_max"][i], float, "physical maximum"),
            digital_min=_number(fields["digital_min"][i], int, "digital minimum"),
            digital_max=_number(fields["digital_max"][i], int, "digital maximum"),
            samples_per_record=_number(fields["samples_per_record"][i], int, "samples per record"),
        )
        if sig.digital_max <= sig.digital_min or sig.physical_max == sig.physical_min:
            raise MalformedHeader(f"degenerate physical/digital range for signal {sig.label!r}")
        signals.append(sig)

    return EDFHeader(
        version=_ascii(raw[0:8]),
        patient_id=_ascii(raw[8:88]),
        recording_id=_ascii(raw[88:168]),
        header_bytes=total,
        reserved=reserved,
        n_records=_number(raw[236:244], int, "record count"),
        record_duration=_number(raw[244:252], float, "record duration"),
        signals=tuple(signals),
    )


def _unit_scale(units: str) -> float:
    """Factor converting ``units`` to mV."""
    u = units.strip().lower()
    if u in ("uv", "µv", "microvolt"):
        return 1e-3
    if u == "v":
        return 1e3
    return 1.0


def select_lead(labels: list[str], lead: str = "ECG") -> int:
    for i, label in enumerate(labels):
        if lead.lower() in label.lower():
            return i
    raise LeadNotFound(f"no EDF signal matching {lead!r} in {labels}")


def read_edf(file: str | os.PathLike, lead: str = "ECG") -> SignalRecord:
    """Read the first signal whose label contains ``lead`` (case-insensitive), in mV."""
    raw = Path(file).read_bytes()
    header = parse_edf_header(raw)
    idx = select_lead([s.label for s in header.signals], lead)
    sig = header.signals[idx]
    if sig.physical_max < sig.physical_min:
        raise UnsupportedFormat(f"signal {sig.label!r} has an inverted physical range")

    per_record = sum(s.samples_per_record for s in header.signals)
    n_records = header.n_records
    available = (len(raw) - header.header_bytes) // (2 * per_record)
    if n_records < 0:
        n_records = available
    elif available < n_records:
        raise TruncatedData(f"EDF declares {n_records} data records, file holds {available}")

    data = np.frombuffer(raw, dtype="<i2", count=n_records * per_record, offset=header.header_bytes)
    data = data.reshape(n_records, per_record)
    start = sum(s.samples_per_record for s in header.signals[:idx])
    digital = data[:, start : start + sig.samples_per_record].reshape(-1).astype(np.float64)

    scale = _unit_scale(sig.units)
    physical = ((digital - sig.digital_min) / (sig.digital_max - sig.digital_min)) * (
        sig.physical_max - sig.physical_min
    ) + sig.physical_min
    physical = physical * scale

    if header.record_duration <= 0:
        raise MalformedHeader("EDF record duration must be positive")
    rate = Fraction(sig.samples_per_record) / Fraction(str(header.record_duration))
    rec_header = RecordHeader(
        record_name=Path(file).stem,
        n_signals=1,
        sampling_rate=rate,
        n_samples=digital.size,
        signals=(
            SignalSpec(
                format_code=16,
                gain=sig.gain / scale,
                baseline=sig.baseline,
                lead_name=sig.label,
                units="mV",
            ),
        ),
    )
    return SignalRecord(header=rec_header, samples=physical[None, :])
