"""Labeled waveform datasets and their on-disk binary format.

File layout (little endian):

    magic   4 bytes  b"RFDS"
    version u32      currently 1
    |A|     u32      transmitter count
    len     u32      samples per waveform
    count   u64      record count
    records count x (u16 label, len x 2 float32 interleaved I/Q)

Waveforms are generated in float64 and quantized to float32 on packing, so
the in-memory dataset equals its on-disk representation bit for bit.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass
from pathlib import Path
from typing import Optional

import numpy as np

from . import waveforms

MAGIC = b"RFDS"
VERSION = 1
_HEADER = struct.Struct("<4sIIIQ")


class DatasetFormatError(Exception):
    """Base class for malformed dataset files."""


class BadMagicError(DatasetFormatError):
    pass


class UnsupportedVersionError(DatasetFormatError):
    pass


class TruncatedFileError(DatasetFormatError):
    pass


@dataclass
class LabeledExample:
    waveform: np.ndarray
    label: int
    snr_db: Optional[float] = None


@dataclass
class DatasetFile:
    """In-memory dataset: one complex64 row per record plus uint16 labels."""

    num_transmitters: int
    window_len: int
    labels: np.ndarray  # (n,) uint16
    iq: np.ndarray  # (n, window_len) complex64

    def __post_init__(self):
        self.labels = np.asarray(self.labels, dtype=np.uint16)
        self.iq = np.asarray(self.iq, dtype=np.complex64)
        if self.iq.ndim != 2 or self.iq.shape != (len(self.labels), self.window_len):
            raise ValueError("iq array shape must be (record count, window_len)")
        if len(self.labels) and int(self.labels.max()) >= self.num_transmitters:
            raise ValueError("label exceeds declared transmitter count")

    def __len__(self) -> int:
        return len(self.labels)

    def record(self, i: int) -> LabeledExample:
        return LabeledExample(waveform=self.iq[i], label=int(self.labels[i]))


def generate_dataset(
    num_transmitters: int,
    per_tx_count: int,
    window_len: int,
    snr_db: float,
    master_seed: int,
) -> DatasetFile:
    """Generate a labeled dataset of fingerprinted noisy waveforms.

    Records are fully deterministic given ``master_seed``: each record draws
    from its own stream keyed by (seed, transmitter, record index), so
    generation order does not matter.
    """
    if num_transmitters < 2:
        raise ValueError("need at least 2 transmitters")
    if per_tx_count < 1:
        raise ValueError("per_tx_count must be >= 1")
    if window_len < 2:
        raise ValueError("window_len must be >= 2")

    n = num_transmitters * per_tx_count
    labels = np.empty(n, dtype=np.uint16)
    iq = np.empty((n, window_len), dtype=np.complex64)
    row = 0
    for tx in range(num_transmitters):
        profile = waveforms.synth_transmitter_profile(master_seed, tx)
        for rec in range(per_tx_count):
            rng = waveforms.record_stream(master_seed, tx, rec)
            syms = waveforms.qpsk_symbols(window_len, rng)
            wf = waveforms.apply_fingerprint(profile, syms, rng)
            wf = waveforms.add_awgn(wf, snr_db, rng)
            labels[row] = tx
            iq[row] = wf.astype(np.complex64)
            row += 1
    return DatasetFile(
        num_transmitters=num_transmitters, window_len=window_len, labels=labels, iq=iq
    )


def _record_dtype(window_len: int) -> np.dtype:
    return np.dtype([("label", "<u2"), ("iq", "<f4", (2 * window_len,))])


def write_dataset(ds: DatasetFile, path) -> None:
    path = Path(path)
    rec_dtype = _record_dtype(ds.window_len)
    records = np.empty(len(ds), dtype=rec_dtype)
    records["label"] = ds.labels
    flat = np.empty((len(ds), 2 * ds.window_len), dtype=np.float32)
    flat[:, 0::2] = ds.iq.real
    flat[:, 1::2] = ds.iq.imag
    records["iq"] = flat
    header = _HEADER.pack(MAGIC, VERSION, ds.num_transmitters, ds.window_len, len(ds))
    path.write_bytes(header + records.tobytes())


def read_dataset(path) -> DatasetFile:
    data = Path(path).read_bytes()
    if len(data) < _HEADER.size:
        raise TruncatedFileError("file shorter than header")
    magic, version, num_tx, window_len, count = _HEADER.unpack_from(data)
    if magic != MAGIC:
        raise BadMagicError(f"bad magic {magic!r}")
    if version != VERSION:
        raise UnsupportedVersionError(f"unsupported version {version}")
    rec_dtype = _record_dtype(window_len)
    body = data[_HEADER.size :]
    expected = count * rec_dtype.itemsize
    if len(body) < expected:
        raise TruncatedFileError(
            f"record section truncated: expected {expected} bytes, found {len(body)}"
        )
    if len(body) > expected:
        raise DatasetFormatError("trailing bytes after final record")
    records = np.frombuffer(body, dtype=rec_dtype, count=count)
    flat = records["iq"]
    iq = np.empty((count, window_len), dtype=np.complex64)
    iq.real = flat[:, 0::2]
    iq.imag = flat[:, 1::2]
    return DatasetFile(
        num_transmitters=num_tx,
        window_len=window_len,
        labels=records["label"].astype(np.uint16),
        iq=iq,
    )
