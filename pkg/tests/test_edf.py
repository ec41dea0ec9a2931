import numpy as np
import pytest

from ecg_sbncl.io import LeadNotFound, MalformedHeader, TruncatedData
from ecg_sbncl.io.edf import header_size, parse_edf_header, read_edf
from ecg_sbncl.io.errors import UnsupportedFormat


def _field(value, width):
    text = str(value).encode("ascii")
    assert len(text) <= width, (value, width)
    return text.ljust(width, b" ")


def write_edf(path, signals, n_records, duration=1.0, reserved=""):
    """Minimal EDF writer following the published fixed-width layout (test fixture only).

    ``signals`` is a list of dicts with label, units, pmin, pmax, dmin, dmax, spr, data (int16 array).
    """
    ns = len(signals)
    head = b"".join(
        [
            _field("0", 8),
            _field("X X X X", 80),
            _field("Startdate X X X X", 80),
            _field("01.01.01", 8),
            _field("00.00.00", 8),
            _field(256 + 256 * ns, 8),
            _field(reserved, 44),
            _field(n_records, 8),
            _field(duration, 8),
            _field(ns, 4),
        ]
    )
    cols = [
        ("label", 16), ("transducer", 80), ("units", 8), ("pmin", 8), ("pmax", 8),
        ("dmin", 8), ("dmax", 8), ("prefilter", 80), ("spr", 8), ("reserved", 32),
    ]
    for key, width in cols:
        head += b"".join(_field(s.get(key, ""), width) for s in signals)
    body = b""
    for r in range(n_records):
        for s in signals:
            body += np.asarray(s["data"][r * s["spr"] : (r + 1) * s["spr"]], dtype="<i2").tobytes()
    path.write_bytes(head + body)
    return path


def _sig(label, spr, data, pmin=-5, pmax=5, dmin=-32768, dmax=32767, units="mV"):
    return dict(label=label, units=units, pmin=pmin, pmax=pmax, dmin=dmin, dmax=dmax, spr=spr, data=data)


def test_two_signal_header_is_768_bytes(tmp_path):
    assert header_size(2) == 768
    p = write_edf(tmp_path / "a.edf", [_sig("EEG", 4, np.zeros(8)), _sig("ECG", 4, np.zeros(8))], 2)
    assert parse_edf_header(p.read_bytes()).header_bytes == 768


def test_linear_physical_mapping(tmp_path):
    digital = np.array([-32768, 0, 32767, 16384], dtype=np.int16)
    p = write_edf(tmp_path / "b.edf", [_sig("ECG", 4, digital)], 1)
    rec = read_edf(p)
    expected = (digital.astype(float) + 32768) / 65535 * 10 - 5
    assert np.allclose(rec.lead(0), expected, atol=1e-12, rtol=0)
    assert abs(rec.lead(0)[1]) < 1e-4  # digital 0 is about 0 mV
    assert rec.lead(0)[0] == -5 and rec.lead(0)[2] == 5


def test_lead_selection_and_rate(tmp_path):
    ecg = np.arange(250, dtype=np.int16)
    sigs = [_sig("EEG(sec)", 125, np.zeros(250)), _sig("ECG", 125, ecg), _sig("SaO2", 1, np.zeros(2))]
    p = write_edf(tmp_path / "c.edf", sigs, 2, duration=1)
    rec = read_edf(p, lead="ecg")
    assert rec.header.signals[0].lead_name == "ECG"
    assert rec.sampling_rate == 125
    assert rec.header.n_samples == 250
    expected = (ecg.astype(float) + 32768) / 65535 * 10 - 5
    assert np.allclose(rec.lead(0), expected, atol=1e-12)


def test_microvolt_units(tmp_path):
    p = write_edf(tmp_path / "u.edf", [_sig("ECG", 2, [0, 1000], pmin=-1000, pmax=1000, dmin=-1000, dmax=1000, units="uV")], 1)
    assert np.allclose(read_edf(p).lead(0), [0.0, 1.0])


def test_missing_lead(tmp_path):
    p = write_edf(tmp_path / "d.edf", [_sig("EEG", 2, [0, 0])], 1)
    with pytest.raises(LeadNotFound):
        read_edf(p, lead="ECG")


def test_bad_header_size_field(tmp_path):
    p = write_edf(tmp_path / "e.edf", [_sig("ECG", 2, [0, 0])], 1)
    raw = bytearray(p.read_bytes())
    raw[184:192] = _field(999, 8)
    with pytest.raises(MalformedHeader):
        parse_edf_header(bytes(raw))


def test_truncated_data(tmp_path):
    p = write_edf(tmp_path / "f.edf", [_sig("ECG", 4, np.zeros(8))], 2)
    p.write_bytes(p.read_bytes()[:-2])
    with pytest.raises(TruncatedData):
        read_edf(p)


def test_discontinuous_rejected(tmp_path):
    p = write_edf(tmp_path / "g.edf", [_sig("ECG", 2, [0, 0])], 1, reserved="EDF+D")
    with pytest.raises(UnsupportedFormat):
        read_edf(p)


def test_unknown_record_count_uses_file_size(tmp_path):
    p = write_edf(tmp_path / "h.edf", [_sig("ECG", 3, np.arange(9))], -1)
    # writer emitted no records for -1; append three by hand
    p.write_bytes(p.read_bytes() + np.arange(9, dtype="<i2").tobytes())
    assert read_edf(p).header.n_samples == 9
