import math
from fractions import Fraction

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from ecg_sbncl.io.records import RecordHeader, SignalRecord, SignalSpec
from ecg_sbncl.io.strips import Strip
from ecg_sbncl.preprocess import (
    EmptySignal,
    FilterSpec,
    NormalizationStats,
    QualityLabel,
    ZeroVariance,
    highpass,
    normalize_dataset,
    prepare_record,
    quality_features,
    quality_gate,
    resample,
)
from ecg_sbncl.synthetic import random_template, synth_signal


def butterworth_hp_two_pass(f, fc=0.5, order=5, fs=100.0):
    """|H|^2 of a bilinear-transform Butterworth high-pass (prewarped), i.e. forward-backward gain."""
    w, wc = math.tan(math.pi * f / fs), math.tan(math.pi * fc / fs)
    return 1.0 / (1.0 + (wc / w) ** (2 * order))


def amplitude_at(y, f, fs, trim):
    """Least-squares amplitude of the f-Hz component of ``y`` away from the ends."""
    t = np.arange(y.size) / fs
    sl = slice(trim, y.size - trim)
    basis = np.stack([np.sin(2 * np.pi * f * t[sl]), np.cos(2 * np.pi * f * t[sl])], axis=1)
    coef, *_ = np.linalg.lstsq(basis, y[sl], rcond=None)
    return float(np.hypot(*coef))


def sine(f, seconds, fs=100.0):
    return np.sin(2 * np.pi * f * np.arange(int(seconds * fs)) / fs)


def test_constant_removed():
    y = highpass(np.full(3000, 3.0))
    assert np.abs(y).max() < 1e-6


def test_dc_gain_post_transient():
    y = highpass(np.full(6000, 1.0))
    assert np.abs(y[1000:-1000]).max() < 1e-3


def test_passband_10hz():
    ratio = amplitude_at(highpass(sine(10, 60)), 10, 100, 500)
    assert abs(ratio - 1) < 0.01


@pytest.mark.parametrize("f", [0.3, 0.5, 0.8])
def test_cutoff_region_matches_analytic(f):
    ratio = amplitude_at(highpass(sine(f, 400)), f, 100, 6000)
    assert abs(ratio - butterworth_hp_two_pass(f)) < 0.02
    if f == 0.5:
        assert abs(ratio - 0.5) < 0.02


@settings(max_examples=25, deadline=None)
@given(st.integers(0, 2**32 - 1), st.floats(-3, 3), st.floats(-3, 3))
def test_highpass_linear(seed, a, b):
    rng = np.random.default_rng(seed)
    x, y = rng.standard_normal(800), rng.standard_normal(800)
    assert np.allclose(highpass(a * x + b * y), a * highpass(x) + b * highpass(y), atol=1e-9, rtol=0)


def test_degenerate_lengths():
    assert highpass(np.array([5.0])).tolist() == [0.0]
    assert highpass(np.zeros(7)).shape == (7,)


def test_filter_spec_validation():
    with pytest.raises(ValueError):
        FilterSpec(cutoff=60.0)
    with pytest.raises(ValueError):
        FilterSpec(order=0)


def test_resample_lengths_and_identity():
    assert resample(np.zeros(2000), 200).size == 1000
    assert resample(np.zeros(3600), 360).size == 1000
    assert resample(np.zeros(1001), 250).size == round(1001 * 100 / 250)
    x = np.random.default_rng(0).standard_normal(50)
    assert np.array_equal(resample(x, 100, 100), x)
    with pytest.raises(EmptySignal):
        resample(np.array([]), 200)


@pytest.mark.parametrize("src", [500, 250, 360, 128])
def test_resampled_sine_matches_analytic(src):
    n = 30 * src
    x = np.sin(2 * np.pi * np.arange(n) / src)
    y = resample(x, src, 100)
    ref = np.sin(2 * np.pi * np.arange(y.size) / 100)
    assert np.abs(y - ref)[200:-200].max() < 1e-3


def _strips(values_list):
    return [Strip(v, f"s{i}", f"r{i}") for i, v in enumerate(values_list)]


def test_normalize_halves_std2():
    rng = np.random.default_rng(1)
    data = [rng.standard_normal(1000) for _ in range(4)]
    std = np.concatenate(data).std()
    scaled = [2.0 * v / std for v in data]
    out, stats = normalize_dataset(_strips(scaled))
    assert stats.std == pytest.approx(2.0, rel=1e-12)
    assert all(np.allclose(o.values, s / 2.0, rtol=1e-12) for o, s in zip(out, scaled))
    assert np.concatenate([o.values for o in out]).var() == pytest.approx(1.0, rel=1e-12)


def test_normalize_idempotent_with_stats():
    rng = np.random.default_rng(2)
    strips = _strips([rng.standard_normal(1000) * 3 for _ in range(3)])
    once, stats = normalize_dataset(strips)
    again, stats2 = normalize_dataset(strips, stats=stats)
    assert stats2 is stats
    assert all(a.values.tobytes() == b.values.tobytes() for a, b in zip(once, again))


def test_unit_variance_unchanged():
    v = np.random.default_rng(3).standard_normal(1000)
    v = (v - v.mean()) / v.std()
    out, _ = normalize_dataset(_strips([v]))
    assert np.abs(out[0].values - v).max() < 1e-12


def test_zero_variance():
    with pytest.raises(ZeroVariance):
        normalize_dataset(_strips([np.zeros(1000)]))


def test_stats_sidecar_round_trip(tmp_path):
    s = NormalizationStats("shhs1", 0.123456789)
    s.save(tmp_path / "n.txt")
    assert NormalizationStats.load(tmp_path / "n.txt") == s


def test_prepare_record_resamples_then_filters():
    x = 2.0 + np.sin(2 * np.pi * 7 * np.arange(5000) / 250)
    header = RecordHeader("r", 1, Fraction(250), 5000, (SignalSpec(212, 200.0, 0.0, "ECG"),))
    out = prepare_record(SignalRecord(header, x[None, :]))
    assert out.sampling_rate == 100 and out.header.n_samples == 2000
    assert np.allclose(out.lead(0), highpass(resample(x, 250, 100)), atol=0, rtol=0)
    assert abs(out.lead(0)[300:-300].mean()) < 1e-3


# -- quality gate ------------------------------------------------------------------------


def _clean(hr=60.0, seed=0, noise=0.02):
    rng = np.random.default_rng(seed)
    tmpl = random_template("q", rng)
    tmpl = type(tmpl)(tmpl.subject_id, tmpl.waves, hr, tmpl.gender, tmpl.age)
    return highpass(synth_signal(tmpl, 10.0, rng, noise=noise))


def test_zero_strip_unacceptable():
    assert quality_gate(np.zeros(1000)) == QualityLabel.UNACCEPTABLE


@pytest.mark.parametrize("seed", range(10))
def test_clean_template_excellent(seed):
    assert quality_gate(_clean(seed=seed)) == QualityLabel.EXCELLENT


def test_clipping_rail_unacceptable():
    x = _clean()
    rail = np.sort(x)[int(0.6 * x.size)]
    assert quality_gate(np.minimum(x, rail)) == QualityLabel.UNACCEPTABLE


def test_white_noise_is_not_excellent():
    rng = np.random.default_rng(9)
    labels = [quality_gate(rng.standard_normal(1000) * 0.3) for _ in range(50)]
    assert all(lab <= QualityLabel.BARELY for lab in labels)


def test_amplitude_sanity():
    x = _clean()
    assert quality_gate(x * 100) == QualityLabel.UNACCEPTABLE
    assert quality_gate(x * 1e-3) == QualityLabel.UNACCEPTABLE


def test_quality_order_and_purity():
    assert QualityLabel.EXCELLENT > QualityLabel.BARELY > QualityLabel.UNACCEPTABLE
    x = _clean(seed=4)
    assert quality_features(x) == quality_features(x.copy())
    assert QualityLabel.parse("barely") is QualityLabel.BARELY
