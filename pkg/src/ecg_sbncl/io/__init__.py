"""Parsers for WFDB/EDF recordings and the strip container."""

from .edf import read_edf
from .errors import (
    CorruptStore,
    LeadNotFound,
    MalformedAnnotation,
    MalformedHeader,
    RecordTooShort,
    SignalIOError,
    TruncatedData,
    UnsupportedFormat,
    WrongSamplingRate,
)
from .records import RecordHeader, SignalRecord, SignalSpec
from .store import load_strips, save_strips
from .strips import STRIP_LEN, STRIP_RATE, Strip, StripLabels, StripRef, SubjectIndex, extract_strips
from .wfdb import Annotation, decode_wfdb_212, encode_wfdb_212, read_wfdb_annotations, read_wfdb_record

__all__ = [
    "Annotation",
    "CorruptStore",
    "LeadNotFound",
    "MalformedAnnotation",
    "MalformedHeader",
    "RecordHeader",
    "RecordTooShort",
    "STRIP_LEN",
    "STRIP_RATE",
    "SignalIOError",
    "SignalRecord",
    "SignalSpec",
    "Strip",
    "StripLabels",
    "StripRef",
    "SubjectIndex",
    "TruncatedData",
    "UnsupportedFormat",
    "WrongSamplingRate",
    "decode_wfdb_212",
    "encode_wfdb_212",
    "extract_strips",
    "load_strips",
    "read_edf",
    "read_wfdb_annotations",
    "read_wfdb_record",
    "save_strips",
]
