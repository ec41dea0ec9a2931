"""Synthetic ECG cohorts for tests and desk-scale experiments.

Each beat is a sum of five Gaussian waves (P, Q, R, S, T). A subject is a
perturbed template plus a heart rate; a binary static attribute (reported as
gender) scales the R and T waves so that it is recoverable from morphology.
AFib segments drop the P wave, randomize RR intervals and add 4-8 Hz
fibrillatory waves.
"""

from __future__ import annotations

from dataclasses import dataclass
from fractions import Fraction

import numpy as np

from .io.records import RecordHeader, SignalRecord, SignalSpec
from .io.strips import STRIP_LEN, STRIP_RATE, Strip, StripLabels, extract_strips
from .io.wfdb import Annotation
from .preprocess import FilterSpec, normalize_dataset, prepare_record

# (offset s, width s, amplitude mV) for P, Q, R, S, T
BASE_WAVES = np.array(
    [
        [-0.20, 0.025, 0.15],
        [-0.035, 0.010, -0.12],
        [0.00, 0.012, 1.00],
        [0.035, 0.010, -0.25],
        [0.28, 0.050, 0.30],
    ]
)


@dataclass(frozen=True)
class SubjectTemplate:
    subject_id: str
    waves: np.ndarray  # (5, 3) as BASE_WAVES
    heart_rate: float  # bpm
    gender: str
    age: float


def random_template(subject_id: str, rng: np.random.Generator, gender: str | None = None) -> SubjectTemplate:
    gender = gender or ("F", "M")[int(rng.integers(2))]
    waves = BASE_WAVES.copy()
    waves[:, 0] *= rng.uniform(0.85, 1.15, 5)
    waves[:, 1] *= rng.uniform(0.8, 1.25, 5)
    waves[:, 2] *= rng.uniform(0.6, 1.4, 5)
    if gender == "M":
        waves[2, 2] *= 1.3
        waves[4, 2] *= 0.75
    return SubjectTemplate(
        subject_id=subject_id,
        waves=waves,
        heart_rate=float(rng.uniform(52, 88)),
        gender=gender,
        age=float(rng.uniform(40, 85)),
    )


def _beat_times(duration: float, mean_rr: float, rng: np.random.Generator, afib: bool) -> np.ndarray:
    times, t = [], float(rng.uniform(0, mean_rr))
    while t < duration + 1.0:
        times.append(t)
        if afib:
            t += mean_rr * rng.uniform(0.55, 1.45)
        else:
            t += mean_rr * (1.0 + 0.03 * rng.standard_normal())
    return np.asarray(times)


def synth_signal(
    template: SubjectTemplate,
    duration: float,
    rng: np.random.Generator,
    rate: float = STRIP_RATE,
    segments=None,
    noise: float = 0.03,
    wander: float = 0.15,
    hr_scale: float = 1.0,
) -> np.ndarray:
    """ECG-like waveform in mV; ``segments`` is a list of ``(start_s, stop_s, is_afib)``."""
    n = int(round(duration * rate))
    t = np.arange(n) / rate
    x = np.zeros(n)
    mean_rr = 60.0 / (template.heart_rate * hr_scale)

    if segments is None:
        segments = [(0.0, duration, False)]
    for start, stop, afib in segments:
        for beat in _beat_times(stop - start, mean_rr * (0.8 if afib else 1.0), rng, afib) + start:
            if beat > stop:
                break
            lo, hi = np.searchsorted(t, [beat - 0.5, beat + 0.6])
            tt = t[lo:hi] - beat
            for k, (off, width, amp) in enumerate(template.waves):
                if afib and k == 0:
                    continue
                x[lo:hi] += amp * np.exp(-0.5 * ((tt - off) / width) ** 2)
        if afib:
            sel = (t >= start) & (t < stop)
            f = rng.uniform(4, 8)
            x[sel] += 0.05 * np.sin(2 * np.pi * f * t[sel] + rng.uniform(0, 2 * np.pi))

    x += wander * np.sin(2 * np.pi * rng.uniform(0.05, 0.3) * t + rng.uniform(0, 2 * np.pi))
    x += noise * rng.standard_normal(n)
    return x


def make_record(name: str, x: np.ndarray, rate: float = STRIP_RATE) -> SignalRecord:
    header = RecordHeader(
        record_name=name,
        n_signals=1,
        sampling_rate=Fraction(rate).limit_denominator(1000),
        n_samples=x.size,
        signals=(SignalSpec(format_code=16, gain=200.0, baseline=0.0, lead_name="ECG"),),
    )
    return SignalRecord(header=header, samples=x[None, :])


def make_cohort(
    n_subjects: int = 20,
    strips_per_subject: int = 200,
    seed: int = 0,
    noise: float = 0.03,
    records_per_subject: int = 2,
    normalize: bool = True,
) -> list[Strip]:
    """Subjects with ``records_per_subject`` recordings (cycles 1 and 2), run through the preprocessing chain."""
    rng = np.random.default_rng(seed)
    spec = FilterSpec()
    strips: list[Strip] = []
    for s in range(n_subjects):
        gender = ("F", "M")[s % 2]
        tmpl = random_template(f"subj{s:03d}", rng, gender=gender)
        per_record = [strips_per_subject // records_per_subject] * records_per_subject
        per_record[0] += strips_per_subject - sum(per_record)
        for r, count in enumerate(per_record):
            x = synth_signal(tmpl, count * STRIP_LEN / STRIP_RATE, rng, noise=noise, hr_scale=rng.uniform(0.95, 1.05))
            rec = prepare_record(make_record(f"{tmpl.subject_id}_r{r + 1}", x), spec=spec)
            strips += extract_strips(
                rec,
                subject_id=tmpl.subject_id,
                cycle=(r + 1) if records_per_subject <= 2 else None,
                base_labels=StripLabels(gender=tmpl.gender, age=round(tmpl.age, 1)),
            )
    if normalize:
        strips, _ = normalize_dataset(strips, dataset_id=f"synthetic-{seed}")
    return strips


def make_rhythm_record(
    template: SubjectTemplate,
    duration: float,
    rng: np.random.Generator,
    segment: float = 120.0,
    rate: float = 250.0,
    noise: float = 0.03,
) -> tuple[SignalRecord, list[Annotation]]:
    """Alternating Normal/AFib segments with MIT-style rhythm annotations, sampled at ``rate``."""
    segs, t, afib = [], 0.0, bool(rng.integers(2))
    while t < duration:
        end = min(duration, t + segment)
        segs.append((t, end, afib))
        t, afib = end, not afib
    x = synth_signal(template, duration, rng, rate=rate, segments=segs, noise=noise)
    ann = [
        Annotation(sample_index=int(round(a * rate)), code=28, aux_text="(AFIB" if f else "(N")
        for a, _, f in segs
    ]
    return make_record(template.subject_id, x, rate), ann


def make_rhythm_dataset(
    n_subjects: int, duration: float, seed: int, prefix: str = "afdb", normalize: bool = True
) -> list[Strip]:
    rng = np.random.default_rng(seed)
    strips: list[Strip] = []
    for s in range(n_subjects):
        tmpl = random_template(f"{prefix}{s:02d}", rng)
        rec, ann = make_rhythm_record(tmpl, duration, rng)
        prepared = prepare_record(rec)
        strips += extract_strips(prepared, ann, subject_id=tmpl.subject_id, annotation_rate=rec.sampling_rate)
    if normalize:
        strips, _ = normalize_dataset(strips, dataset_id=prefix)
    return strips


SLEEP_HR_SCALE = {"Awake": 1.15, "REM": 1.05, "NREM": 0.9}


def make_sleep_dataset(n_subjects: int, epochs: int, seed: int, normalize: bool = True) -> list[Strip]:
    """30-s epochs with stage-dependent heart rate; each epoch yields three strips."""
    rng = np.random.default_rng(seed)
    stages = list(SLEEP_HR_SCALE)
    strips: list[Strip] = []
    for s in range(n_subjects):
        tmpl = random_template(f"slp{s:02d}", rng)
        xs, ann = [], []
        for e in range(epochs):
            stage = stages[int(rng.integers(3))]
            xs.append(synth_signal(tmpl, 30.0, rng, hr_scale=SLEEP_HR_SCALE[stage]))
            ann.append(Annotation(sample_index=e * 3000, code=22, aux_text={"Awake": "W", "REM": "R", "NREM": "2"}[stage]))
        rec = prepare_record(make_record(tmpl.subject_id, np.concatenate(xs)))
        strips += extract_strips(rec, ann, subject_id=tmpl.subject_id, label_kind="sleep")
    if normalize:
        strips, _ = normalize_dataset(strips, dataset_id="sleep")
    return strips
