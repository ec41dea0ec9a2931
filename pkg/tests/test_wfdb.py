"""WFDB reader checks. The ``wfdb`` package is used only as an independent reference writer/decoder."""

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from ecg_sbncl.io import MalformedAnnotation, MalformedHeader, TruncatedData, UnsupportedFormat
from ecg_sbncl.io.records import physical_to_adc
from ecg_sbncl.io.wfdb import (
    AUX,
    SKIP,
    Annotation,
    decode_annotations,
    decode_wfdb_212,
    encode_annotations,
    encode_wfdb_212,
    parse_header,
    read_wfdb_annotations,
    read_wfdb_record,
)

wfdb = pytest.importorskip("wfdb")

twelve_bit = st.integers(-2048, 2047)


@pytest.mark.parametrize(
    "raw, n, expected",
    [
        (bytes([0x00, 0x00, 0x00]), 2, [0, 0]),
        (bytes([0x01, 0xF0, 0xFF]), 2, [1, -1]),
        (bytes([0xFF, 0x07, 0x00]), 1, [2047]),
    ],
)
def test_hand_packed_212(raw, n, expected):
    assert decode_wfdb_212(raw, n).tolist() == expected


@given(st.lists(twelve_bit, min_size=0, max_size=64))
def test_212_round_trip(samples):
    assert decode_wfdb_212(encode_wfdb_212(samples), len(samples)).tolist() == samples


def test_212_truncated():
    with pytest.raises(TruncatedData):
        decode_wfdb_212(bytes(4), 4)
    # an odd count needs only the first two bytes of its last triple
    assert decode_wfdb_212(bytes([0x05, 0x00]), 1).tolist() == [5]


def _write_reference_record(tmp_path, d_signal, fmt, gain, baseline):
    wfdb.wrsamp(
        "rec",
        fs=360,
        units=["mV"] * d_signal.shape[1],
        sig_name=[f"lead{i}" for i in range(d_signal.shape[1])],
        d_signal=d_signal,
        fmt=[fmt] * d_signal.shape[1],
        adc_gain=gain,
        baseline=baseline,
        write_dir=str(tmp_path),
    )
    return tmp_path / "rec.hea"


@pytest.mark.parametrize("fmt", ["212", "16"])
def test_reference_writer_two_lead_record(tmp_path, fmt):
    rng = np.random.default_rng(0)
    lim = 2000 if fmt == "212" else 30000
    d = rng.integers(-lim, lim, size=(10, 2))
    gain, base = [200.0, 100.0], [0, -12]
    path = _write_reference_record(tmp_path, d, fmt, gain, base)
    rec = read_wfdb_record(path)
    assert rec.samples.shape == (2, 10)
    assert float(rec.header.sampling_rate) == 360
    for i in range(2):
        assert np.array_equal(rec.lead(i), (d[:, i] - base[i]) / gain[i])
        # re-quantizing reproduces the stored integers
        assert np.array_equal(physical_to_adc(rec.lead(i), gain[i], base[i]), d[:, i])
    ref = wfdb.rdrecord(str(tmp_path / "rec"), physical=False)
    assert np.array_equal(ref.d_signal, d)


def test_gain_division(tmp_path):
    (tmp_path / "g.hea").write_text("g 1 100 1\ng.dat 212 200(0)/mV 12 0 200 0 0 ECG\n")
    (tmp_path / "g.dat").write_bytes(encode_wfdb_212([200]))
    rec = read_wfdb_record(tmp_path / "g.hea")
    assert rec.lead(0).tolist() == [1.0]
    assert rec.header.signals[0].lead_name == "ECG"


def test_uv_units_rescaled(tmp_path):
    (tmp_path / "u.hea").write_text("u 1 100 2\nu.dat 16 1000/uV\n")
    (tmp_path / "u.dat").write_bytes(np.array([1000, -500], dtype="<i2").tobytes())
    assert read_wfdb_record(tmp_path / "u.hea").lead(0).tolist() == [0.001, -0.0005]


def test_undeclared_length_from_file_size(tmp_path):
    (tmp_path / "n.hea").write_text("n 1 100\nn.dat 16 100\n")
    (tmp_path / "n.dat").write_bytes(np.arange(7, dtype="<i2").tobytes())
    assert read_wfdb_record(tmp_path / "n.hea").header.n_samples == 7


@pytest.mark.parametrize(
    "text, error",
    [
        ("r 1 360 10\nr.dat 310 200\n", UnsupportedFormat),
        ("r/2 1 360 10\nr_1 5\nr_2 5\n", UnsupportedFormat),
        ("r 2 360 10\nr.dat 212 200\n", MalformedHeader),
        ("", MalformedHeader),
        ("r 1 360 10\nr.dat 212 -5\n", MalformedHeader),
    ],
)
def test_header_errors(text, error):
    with pytest.raises(error):
        parse_header(text)


def test_truncated_signal_file(tmp_path):
    (tmp_path / "t.hea").write_text("t 1 100 10\nt.dat 212 200\n")
    (tmp_path / "t.dat").write_bytes(bytes(6))
    with pytest.raises(TruncatedData):
        read_wfdb_record(tmp_path / "t.hea")


# -- annotations --------------------------------------------------------------------


def _words(*ws):
    return np.asarray(ws, dtype="<u2").tobytes()


def test_hand_encoded_single_normal_beat():
    ann = decode_annotations(_words((1 << 10) | 360, 0))
    assert [(a.sample_index, a.symbol) for a in ann] == [(360, "N")]


def test_empty_file():
    assert decode_annotations(b"") == []


def test_cumulative_sum():
    ann = decode_annotations(_words((1 << 10) | 100, (1 << 10) | 150, 0))
    assert [a.sample_index for a in ann] == [100, 250]


def test_skip_and_aux_hand_traced():
    # SKIP 70000, rhythm change "(AFIB" at +5, then a beat 10 later
    aux = b"(AFIB\x00"
    data = _words(SKIP << 10, 70000 >> 16, 70000 & 0xFFFF, (28 << 10) | 5, (AUX << 10) | 5) + aux + _words((1 << 10) | 10, 0)
    ann = decode_annotations(data)
    assert [(a.sample_index, a.code, a.aux_text) for a in ann] == [(70005, 28, "(AFIB"), (70015, 1, None)]


@pytest.mark.parametrize(
    "data",
    [
        b"\x01",
        _words(AUX << 10 | 4, 0),
        _words((1 << 10) | 5, SKIP << 10, 0xFFFF, 0xFFF0, 0),
        _words((1 << 10) | 5, (AUX << 10) | 20, 0x4141),
        _words((1 << 10) | 5, SKIP << 10),
    ],
)
def test_malformed_annotation_streams(data):
    with pytest.raises(MalformedAnnotation):
        decode_annotations(data)


@given(
    st.lists(
        st.tuples(st.integers(0, 5000), st.sampled_from([1, 5, 8, 28]), st.sampled_from([None, "(N", "(AFIB", "(AFL"])),
        max_size=30,
    )
)
def test_annotation_writer_round_trip(items):
    t, anns = 0, []
    for dt, code, aux in items:
        t += dt
        anns.append(Annotation(t, code, aux if code == 28 else None))
    out = decode_annotations(encode_annotations(anns))
    assert [(a.sample_index, a.code, a.aux_text) for a in out] == [(a.sample_index, a.code, a.aux_text) for a in anns]


def test_reference_annotation_writer(tmp_path):
    samples = np.array([10, 360, 2000, 70000, 70001])
    symbols = ["N", "+", "V", "+", "N"]
    aux = ["", "(AFIB", "", "(N", ""]
    wfdb.wrann("ref", "atr", samples, symbol=symbols, aux_note=aux, write_dir=str(tmp_path))
    ann = read_wfdb_annotations(tmp_path / "ref.atr")
    assert [a.sample_index for a in ann] == samples.tolist()
    assert [a.symbol for a in ann] == symbols
    assert [a.aux_text for a in ann] == [None, "(AFIB", None, "(N", None]

    # and the other direction: our writer decoded by the reference reader
    (tmp_path / "ours.atr").write_bytes(encode_annotations(ann))
    ref = wfdb.rdann(str(tmp_path / "ours"), "atr")
    assert ref.sample.tolist() == samples.tolist()
    assert ref.symbol == symbols
