from __future__ import annotations

from dataclasses import dataclass, field
from fractions import Fraction

import numpy as np


@dataclass(frozen=True)
class SignalSpec:
    format_code: int
    gain: float  # ADC units per mV
    baseline: float  # ADC units
    lead_name: str
    units: str = "mV"


@dataclass(frozen=True)
class RecordHeader:
    record_name: str
    n_signals: int
    sampling_rate: Fraction
    n_samples: int
    signals: tuple[SignalSpec, ...] = field(default_factory=tuple)

    def __post_init__(self):
        if self.n_signals < 1:
            raise ValueError("n_signals must be >= 1")
        if self.sampling_rate <= 0:
            raise ValueError("sampling_rate must be positive")
        if len(self.signals) != self.n_signals:
            raise ValueError("one SignalSpec per signal required")
        for s in self.signals:
            if s.gain <= 0:
                raise ValueError(f"gain must be positive for lead {s.lead_name!r}")

    @property
    def lead_names(self) -> list[str]:
        return [s.lead_name for s in self.signals]


@dataclass(frozen=True)
class SignalRecord:
    """Physical-unit samples, one row per lead. Immutable after construction."""

    header: RecordHeader
    samples: np.ndarray  # (n_signals, n_samples), mV

    def __post_init__(self):
        arr = np.array(self.samples, dtype=np.float64)
        if arr.ndim != 2 or arr.shape != (self.header.n_signals, self.header.n_samples):
            raise ValueError(
                f"samples shape {arr.shape} != ({self.header.n_signals}, {self.header.n_samples})"
            )
        if not np.isfinite(arr).all():
            raise ValueError("record samples must be finite")
        arr.flags.writeable = False
        object.__setattr__(self, "samples", arr)

    @property
    def sampling_rate(self) -> float:
        return float(self.header.sampling_rate)

    def lead(self, index: int = 0) -> np.ndarray:
        return self.samples[index]

    def find_lead(self, name: str = "ECG") -> int:
        """Index of the first lead whose name contains ``name`` (case-insensitive)."""
        from .errors import LeadNotFound

        for i, lead in enumerate(self.header.lead_names):
            if name.lower() in lead.lower():
                return i
        raise LeadNotFound(f"no lead matching {name!r} in {self.header.lead_names}")


def adc_to_physical(adc: np.ndarray, gain: float, baseline: float) -> np.ndarray:
    return (np.asarray(adc, dtype=np.float64) - baseline) / gain


def physical_to_adc(values: np.ndarray, gain: float, baseline: float) -> np.ndarray:
    return np.rint(np.asarray(values, dtype=np.float64) * gain + baseline).astype(np.int64)
