from __future__ import annotations

from dataclasses import dataclass, field
from typing import Iterable, Sequence

import numpy as np

from .errors import RecordTooShort, WrongSamplingRate
from .records import SignalRecord
from .wfdb import Annotation

STRIP_LEN = 1000
STRIP_RATE = 100

RHYTHMS = ("AFib", "Normal", "Other")
SLEEP_STAGES = ("Awake", "REM", "NREM")
GENDERS = ("F", "M")


@dataclass
class StripLabels:
    gender: str | None = None
    age: float | None = None
    rhythm: str | None = None
    sleep_stage: str | None = None

    def __post_init__(self):
        if self.gender is not None and self.gender not in GENDERS:
            raise ValueError(f"gender must be one of {GENDERS}, got {self.gender!r}")
        if self.rhythm is not None and self.rhythm not in RHYTHMS:
            raise ValueError(f"rhythm must be one of {RHYTHMS}, got {self.rhythm!r}")
        if self.sleep_stage is not None and self.sleep_stage not in SLEEP_STAGES:
            raise ValueError(f"sleep_stage must be one of {SLEEP_STAGES}, got {self.sleep_stage!r}")


@dataclass
class Strip:
    values: np.ndarray
    subject_id: str
    record_id: str
    cycle: int | None = None  # 1, 2, or unknown
    start_index: int = 0
    labels: StripLabels = field(default_factory=StripLabels)

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=np.float64)
        if self.values.shape != (STRIP_LEN,):
            raise ValueError(f"strip must hold exactly {STRIP_LEN} samples, got shape {self.values.shape}")
        if not np.isfinite(self.values).all():
            raise ValueError("strip values must be finite")
        if self.cycle not in (None, 1, 2):
            raise ValueError(f"cycle must be 1, 2 or None, got {self.cycle!r}")


@dataclass(frozen=True)
class StripRef:
    record_id: str
    cycle: int | None
    position: int  # index into the strip list the index was built from


class SubjectIndex:
    """subject_id -> strip references; every strip belongs to exactly one subject."""

    def __init__(self, entries: dict[str, list[StripRef]]):
        self.entries = entries

    @classmethod
    def from_strips(cls, strips: Sequence[Strip]) -> "SubjectIndex":
        entries: dict[str, list[StripRef]] = {}
        for pos, s in enumerate(strips):
            entries.setdefault(s.subject_id, []).append(StripRef(s.record_id, s.cycle, pos))
        return cls(entries)

    @property
    def subjects(self) -> list[str]:
        return list(self.entries)

    def __len__(self) -> int:
        return len(self.entries)

    def n_strips(self) -> int:
        return sum(len(v) for v in self.entries.values())


# -- labeling -------------------------------------------------------------------


def rhythm_from_aux(aux: str) -> str:
    body = aux.strip("\x00 ").lstrip("(")
    token = body.split()[0].upper() if body.split() else ""
    if token == "AFIB":
        return "AFib"
    if token == "N":
        return "Normal"
    return "Other"


def stage_from_aux(aux: str) -> str | None:
    """Map a sleep-stage annotation string (W, R, 1-4) to Awake/REM/NREM."""
    parts = aux.split()
    if not parts:
        return None
    token = parts[0].upper()
    if token == "W":
        return "Awake"
    if token == "R":
        return "REM"
    if token in ("1", "2", "3", "4", "N1", "N2", "N3", "N4"):
        return "NREM"
    return None


def label_intervals(annotations: Iterable[Annotation], n_samples: int, kind: str = "rhythm") -> list[tuple[int, int, str]]:
    """Half-open ``[start, end)`` intervals; each label runs until the next change or record end."""
    changes: list[tuple[int, str]] = []
    for a in annotations:
        if not a.aux_text:
            continue
        if kind == "rhythm":
            if not a.aux_text.startswith("("):
                continue
            label = rhythm_from_aux(a.aux_text)
        elif kind == "sleep":
            label = stage_from_aux(a.aux_text)
            if label is None:
                continue
        else:
            raise ValueError(f"unknown label kind {kind!r}")
        changes.append((a.sample_index, label))
    out = []
    for i, (start, label) in enumerate(changes):
        end = changes[i + 1][0] if i + 1 < len(changes) else n_samples
        if end > start:
            out.append((start, end, label))
    return out


def _covering_label(intervals: list[tuple[int, int, str]], start: int, stop: int) -> str | None:
    for a, b, label in intervals:
        if a <= start and stop <= b:
            return label
    return None


def extract_strips(
    record: SignalRecord,
    annotations: Sequence[Annotation] | None = None,
    stride: int = STRIP_LEN,
    lead: int = 0,
    subject_id: str | None = None,
    cycle: int | None = None,
    label_kind: str = "rhythm",
    base_labels: StripLabels | None = None,
    annotation_rate: float | None = None,
) -> list[Strip]:
    """Cut consecutive 1000-sample windows from a 100 Hz record.

    A window gets a rhythm (or sleep stage) label only when it lies entirely
    inside one annotated interval; straddling windows get ``Other`` for
    rhythm and no label for sleep stage. ``annotation_rate`` rescales
    annotation sample indices recorded at the original sampling rate.
    """
    if stride < 1:
        raise ValueError("stride must be >= 1")
    if abs(record.sampling_rate - STRIP_RATE) > 1e-9:
        raise WrongSamplingRate(f"record must be resampled to {STRIP_RATE} Hz first (is {record.sampling_rate})")
    x = record.lead(lead)
    n = x.size
    if n < STRIP_LEN:
        raise RecordTooShort(f"record has {n} samples, need at least {STRIP_LEN}")

    intervals: list[tuple[int, int, str]] = []
    if annotations:
        ann = list(annotations)
        if annotation_rate is not None and annotation_rate != STRIP_RATE:
            factor = STRIP_RATE / annotation_rate
            ann = [
                Annotation(int(round(a.sample_index * factor)), a.code, a.aux_text, a.subtype, a.chan, a.num)
                for a in ann
            ]
        intervals = label_intervals(ann, n, label_kind)

    base = base_labels or StripLabels()
    record_id = record.header.record_name
    strips = []
    for start in range(0, n - STRIP_LEN + 1, stride):
        labels = StripLabels(gender=base.gender, age=base.age, rhythm=base.rhythm, sleep_stage=base.sleep_stage)
        if annotations is not None:
            covered = _covering_label(intervals, start, start + STRIP_LEN)
            if label_kind == "rhythm":
                labels.rhythm = covered or "Other"
            else:
                labels.sleep_stage = covered
        strips.append(
            Strip(
                values=np.array(x[start : start + STRIP_LEN]),
                subject_id=subject_id if subject_id is not None else record_id,
                record_id=record_id,
                cycle=cycle,
                start_index=start,
                labels=labels,
            )
        )
    return strips


def stack_values(strips: Sequence[Strip]) -> np.ndarray:
    return np.stack([s.values for s in strips]) if strips else np.empty((0, STRIP_LEN))
