"""
Binary sample file (.rtfs).

Layout, all little-endian:

    magic      4s   b"RTFS"
    version    u16
    meta_len   u32  length of the JSON metadata block (space-padded so
                    records start on an 8-byte boundary)
    metadata   meta_len bytes of UTF-8 JSON (SeriesMetadata)
    count      u64  number of records
    records    count x {seq u64, latency_ns u64}
    crc        u64  CRC-64 of every preceding byte

Records are fixed-size so large files can be memory-mapped and streamed.
"""

import contextlib
import logging
import os
import struct
from collections.abc import Iterator
from pathlib import Path

import crcmod.predefined
import numpy as np
from pydantic import ValidationError

from rtprobe import SAMPLE_FORMAT_VERSION
from rtprobe.bench.runner import SampleSeries, SeriesMetadata
from rtprobe.bench.worker import RECORD_DTYPE
from rtprobe.errors import CorruptSampleFileError, PersistenceError

logger = logging.getLogger(__name__)

MAGIC = b"RTFS"
SUFFIX = ".rtfs"
CRC_NAME = "crc-64"
CHUNK_RECORDS = 1_000_000

_PREAMBLE = struct.Struct("<4sHI")
_COUNT = struct.Struct("<Q")
_CRC = struct.Struct("<Q")
_IO_CHUNK = 8 * 1024 * 1024


def _new_crc():
    return crcmod.predefined.Crc(CRC_NAME)


def _encode_metadata(metadata: SeriesMetadata) -> bytes:
    raw = metadata.model_dump_json().encode("utf-8")
    unpadded = _PREAMBLE.size + len(raw)
    return raw + b" " * (-unpadded % 8)


def persist_samples(series: SampleSeries, path: Path) -> Path:
    """Write series to path atomically. Raises PersistenceError on I/O failure."""
    path = Path(path)
    tmp = path.with_name(path.name + ".tmp")
    meta = _encode_metadata(series.metadata)
    records = np.ascontiguousarray(series.records, dtype=RECORD_DTYPE)
    crc = _new_crc()

    def write(f, data):
        crc.update(data)
        f.write(data)

    try:
        path.parent.mkdir(parents=True, exist_ok=True)
        with open(tmp, "wb") as f:
            write(f, _PREAMBLE.pack(MAGIC, SAMPLE_FORMAT_VERSION, len(meta)))
            write(f, meta)
            write(f, _COUNT.pack(len(records)))
            for start in range(0, len(records), CHUNK_RECORDS):
                write(f, records[start : start + CHUNK_RECORDS].tobytes())
            f.write(_CRC.pack(crc.crcValue))
            f.flush()
            os.fsync(f.fileno())
        os.replace(tmp, path)
    except OSError as e:
        with contextlib.suppress(OSError):
            tmp.unlink()
        raise PersistenceError(f"Cannot write sample file {path}: {e}") from e

    logger.debug(f"Wrote {len(records)} samples to {path}")
    return path


class SampleFile:
    """
    An opened sample file: validated header, metadata and record access.

    Opening checks magic, version, size and the CRC; records are then read
    through a read-only memory map so statistics can stream them.
    """

    def __init__(self, path: Path, verify: bool = True):
        self.path = Path(path)
        try:
            size = self.path.stat().st_size
            with open(self.path, "rb") as f:
                preamble = f.read(_PREAMBLE.size)
                if len(preamble) < _PREAMBLE.size:
                    raise CorruptSampleFileError(f"{self.path}: truncated header")
                magic, version, meta_len = _PREAMBLE.unpack(preamble)
                if magic != MAGIC:
                    raise CorruptSampleFileError(f"{self.path}: not a sample file (bad magic)")
                if version > SAMPLE_FORMAT_VERSION:
                    raise CorruptSampleFileError(
                        f"{self.path}: format version {version} is newer than {SAMPLE_FORMAT_VERSION}"
                    )
                meta_raw = f.read(meta_len)
                count_raw = f.read(_COUNT.size)
        except OSError as e:
            raise CorruptSampleFileError(f"Cannot read sample file {self.path}: {e}") from e

        if len(meta_raw) < meta_len or len(count_raw) < _COUNT.size:
            raise CorruptSampleFileError(f"{self.path}: truncated header")
        (self.count,) = _COUNT.unpack(count_raw)
        self.records_offset = _PREAMBLE.size + meta_len + _COUNT.size
        expected = self.records_offset + self.count * RECORD_DTYPE.itemsize + _CRC.size
        if size != expected:
            raise CorruptSampleFileError(
                f"{self.path}: size {size} does not match {self.count} records ({expected} bytes)"
            )
        if verify:
            self.verify()

        try:
            self.metadata = SeriesMetadata.model_validate_json(meta_raw)
        except ValidationError as e:
            raise CorruptSampleFileError(f"{self.path}: invalid metadata: {e}") from e

    def verify(self):
        """Recompute the CRC; raises CorruptSampleFileError on mismatch."""
        crc = _new_crc()
        body = self.records_offset + self.count * RECORD_DTYPE.itemsize
        with open(self.path, "rb") as f:
            remaining = body
            while remaining:
                block = f.read(min(_IO_CHUNK, remaining))
                if not block:
                    raise CorruptSampleFileError(f"{self.path}: truncated")
                crc.update(block)
                remaining -= len(block)
            (stored,) = _CRC.unpack(f.read(_CRC.size))
        if stored != crc.crcValue:
            raise CorruptSampleFileError(
                f"{self.path}: checksum mismatch (stored {stored:016x}, computed {crc.crcValue:016x})"
            )

    def __len__(self) -> int:
        return self.count

    def records(self) -> np.ndarray:
        """Read-only memory map over all records."""
        if self.count == 0:
            return np.zeros(0, dtype=RECORD_DTYPE)
        return np.memmap(
            self.path, dtype=RECORD_DTYPE, mode="r", offset=self.records_offset, shape=(self.count,)
        )

    def latency_chunks(self, chunk: int = CHUNK_RECORDS) -> Iterator[np.ndarray]:
        """Latency column in bounded chunks."""
        records = self.records()
        for start in range(0, self.count, chunk):
            yield np.asarray(records["latency_ns"][start : start + chunk])

    def load(self) -> SampleSeries:
        return SampleSeries(self.metadata, np.array(self.records()))


def load_samples(path: Path) -> SampleSeries:
    """Load and checksum-verify a sample file fully into memory."""
    return SampleFile(path).load()


def open_samples(path: Path, verify: bool = True) -> SampleFile:
    return SampleFile(path, verify=verify)


def series_path(out: Path, cpu: int | None, multiple: bool) -> Path:
    """x.rtfs for a single worker, x.cpu<N>.rtfs when there are several."""
    out = Path(out)
    if not multiple:
        return out
    stem = out.name[: -len(SUFFIX)] if out.name.endswith(SUFFIX) else out.name
    return out.with_name(f"{stem}.cpu{cpu}{SUFFIX}")
