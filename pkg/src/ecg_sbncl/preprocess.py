"""Signal conditioning: resample to 100 Hz, zero-phase Butterworth high-pass,
dataset-level unit-variance scaling, and a heuristic quality gate.

Order is fixed: :func:`prepare_record` resamples then filters whole records,
strips are cut from the result, and :func:`normalize_dataset` scales the
strips of one dataset by a single pooled standard deviation.
"""

from __future__ import annotations

import enum
import os
from dataclasses import dataclass, replace
from fractions import Fraction
from pathlib import Path
from typing import Sequence

import numpy as np
from scipy import signal as sps

from .io.records import SignalRecord, SignalSpec
from .io.strips import STRIP_RATE, Strip


class EmptySignal(ValueError):
    pass


class ZeroVariance(ValueError):
    pass


@dataclass(frozen=True)
class FilterSpec:
    cutoff: float = 0.5
    order: int = 5
    rate: float = 100.0
    kind: str = "highpass"

    def __post_init__(self):
        if not 0 < self.cutoff < self.rate / 2:
            raise ValueError(f"cutoff {self.cutoff} must lie in (0, {self.rate / 2})")
        if self.order < 1:
            raise ValueError("filter order must be >= 1")
        if self.kind != "highpass":
            raise ValueError("only high-pass filters are supported")

    def sos(self) -> np.ndarray:
        return sps.butter(self.order, self.cutoff, btype="highpass", fs=self.rate, output="sos")


def resample(x, src_rate: float, dst_rate: float = STRIP_RATE) -> np.ndarray:
    """Polyphase resampling; output length is ``round(len(x) * dst_rate / src_rate)``."""
    x = np.asarray(x, dtype=np.float64)
    if x.size == 0:
        raise EmptySignal("cannot resample an empty signal")
    if src_rate <= 0 or dst_rate <= 0:
        raise ValueError("sampling rates must be positive")
    if src_rate == dst_rate:
        return x.copy()
    ratio = Fraction(dst_rate) / Fraction(src_rate)
    ratio = ratio.limit_denominator(10_000)
    y = sps.resample_poly(x, ratio.numerator, ratio.denominator)
    n_out = int(round(x.size * float(dst_rate) / float(src_rate)))
    if y.size >= n_out:
        return y[:n_out]
    return np.pad(y, (0, n_out - y.size), mode="edge")


def highpass(x, spec: FilterSpec = FilterSpec()) -> np.ndarray:
    """Forward-backward (zero-phase) Butterworth high-pass."""
    x = np.asarray(x, dtype=np.float64)
    if x.size <= 1:
        return np.zeros_like(x)
    sos = spec.sos()
    default_pad = 3 * (2 * len(sos) + 1)
    return sps.sosfiltfilt(sos, x, padlen=min(default_pad, x.size - 1))


def prepare_record(record: SignalRecord, lead: int = 0, spec: FilterSpec = FilterSpec()) -> SignalRecord:
    """One lead of ``record`` resampled to ``spec.rate`` and high-pass filtered."""
    y = highpass(resample(record.lead(lead), record.sampling_rate, spec.rate), spec)
    old = record.header.signals[lead]
    header = replace(
        record.header,
        n_signals=1,
        sampling_rate=Fraction(spec.rate),
        n_samples=y.size,
        signals=(SignalSpec(old.format_code, old.gain, old.baseline, old.lead_name, old.units),),
    )
    return SignalRecord(header=header, samples=y[None, :])


# -- normalization -----------------------------------------------------------------


@dataclass(frozen=True)
class NormalizationStats:
    dataset_id: str
    std: float

    def __post_init__(self):
        if not self.std > 0:
            raise ZeroVariance(f"normalization std must be positive, got {self.std}")

    def save(self, path: str | os.PathLike) -> None:
        Path(path).write_text(f"dataset_id={self.dataset_id}\nstd={self.std!r}\n", encoding="utf-8")

    @classmethod
    def load(cls, path: str | os.PathLike) -> "NormalizationStats":
        values = {}
        for line in Path(path).read_text(encoding="utf-8").splitlines():
            line = line.strip()
            if not line or line.startswith("#"):
                continue
            key, _, value = line.partition("=")
            values[key.strip()] = value.strip()
        try:
            return cls(dataset_id=values["dataset_id"], std=float(values["std"]))
        except KeyError as exc:
            raise ValueError(f"normalization sidecar missing key {exc}") from exc


def normalize_dataset(
    strips: Sequence[Strip], stats: NormalizationStats | None = None, dataset_id: str = "dataset"
) -> tuple[list[Strip], NormalizationStats]:
    """Divide every strip by one pooled std (recomputed unless ``stats`` is given)."""
    if not strips:
        raise ValueError("normalize_dataset needs at least one strip")
    if stats is None:
        pooled = np.concatenate([s.values for s in strips])
        std = float(pooled.std())
        if std == 0.0:
            raise ZeroVariance("all samples of the dataset are equal")
        stats = NormalizationStats(dataset_id=dataset_id, std=std)
    out = [replace(s, values=s.values / stats.std) for s in strips]
    return out, stats


# -- quality gate ----------------------------------------------------------------------


class QualityLabel(enum.IntEnum):
    UNACCEPTABLE = 0
    BARELY = 1
    EXCELLENT = 2

    @classmethod
    def parse(cls, text: str) -> "QualityLabel":
        return cls[text.strip().upper()]


@dataclass(frozen=True)
class QualityConfig:
    """Thresholds for :func:`quality_gate` (amplitudes in mV)."""

    flatline_fraction: float = 0.20
    flatline_rel_step: float = 1e-4  # |diff| below this fraction of peak-to-peak counts as flat
    clipping_fraction: float = 0.05
    clipping_rel_band: float = 1e-3  # within this fraction of peak-to-peak from a rail
    hr_band: tuple[float, float] = (0.7, 3.0)
    reference_band: tuple[float, float] = (0.5, 20.0)
    peak_prominence: float = 25.0  # in-band envelope peak power / median reference-band power
    min_peak_to_peak: float = 0.05
    max_peak_to_peak: float = 20.0


DEFAULT_QUALITY = QualityConfig()


def quality_features(values, rate: float = STRIP_RATE, config: QualityConfig = DEFAULT_QUALITY) -> dict[str, float]:
    x = np.asarray(values, dtype=np.float64)
    ptp = float(x.max() - x.min())
    if ptp == 0.0:
        return {"ptp": 0.0, "flatline": 1.0, "clipping": 1.0, "prominence": 0.0}
    flat = float(np.mean(np.abs(np.diff(x)) <= config.flatline_rel_step * ptp))
    band = config.clipping_rel_band * ptp
    clip = float(np.mean((x >= x.max() - band) | (x <= x.min() + band)))

    # heart-rate periodicity is read from the QRS energy envelope, whose beat
    # harmonics are flat enough for a median-referenced peak test
    energy = np.diff(x) ** 2
    energy -= energy.mean()
    spectrum = np.abs(np.fft.rfft(energy * np.hanning(energy.size))) ** 2
    freqs = np.fft.rfftfreq(energy.size, d=1.0 / rate)
    in_hr = (freqs >= config.hr_band[0]) & (freqs <= config.hr_band[1])
    in_ref = (freqs >= config.reference_band[0]) & (freqs <= config.reference_band[1])
    ref = float(np.median(spectrum[in_ref])) if in_ref.any() else 0.0
    peak = float(spectrum[in_hr].max()) if in_hr.any() else 0.0
    prominence = peak / ref if ref > 0 else (np.inf if peak > 0 else 0.0)
    return {"ptp": ptp, "flatline": flat, "clipping": clip, "prominence": float(prominence)}


def quality_gate(values, rate: float = STRIP_RATE, config: QualityConfig = DEFAULT_QUALITY) -> QualityLabel:
    """Three-level signal quality from flatline, clipping, amplitude and heart-rate-peak checks."""
    f = quality_features(values, rate, config)
    if (
        f["ptp"] < config.min_peak_to_peak
        or f["ptp"] > config.max_peak_to_peak
        or f["flatline"] > config.flatline_fraction
        or f["clipping"] > config.clipping_fraction
    ):
        return QualityLabel.UNACCEPTABLE
    if f["prominence"] < config.peak_prominence:
        return QualityLabel.BARELY
    return QualityLabel.EXCELLENT
