"""Versioned binary container for named float64 arrays.

Layout (all integers little-endian):

    magic b"DNBP" | u32 format version
    repeated until end of file:
        u32 name length | name utf-8
        u32 rank | u32 extent per axis
        float64 values, C order
        float64 first moment, float64 second moment (same extents)
        u64 step counter

The same container stores parameter checkpoints (moments carry the Adam
state) and plain array dumps such as particle sets (moments zero).
"""

import io
import struct
from dataclasses import dataclass, field

import numpy as np

MAGIC = b"DNBP"
VERSION = 1


class CheckpointError(Exception):
    pass


@dataclass
class Record:
    name: str
    values: np.ndarray
    moment1: np.ndarray = None
    moment2: np.ndarray = None
    step: int = 0

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=np.float64)
        if self.moment1 is None:
            self.moment1 = np.zeros_like(self.values)
        if self.moment2 is None:
            self.moment2 = np.zeros_like(self.values)


def _write_array(buf, a: np.ndarray):
    buf.write(np.ascontiguousarray(a, dtype="<f8").tobytes())


def _read_exact(buf, n: int) -> bytes:
    data = buf.read(n)
    if len(data) != n:
        raise CheckpointError("truncated container")
    return data


def save_records(path, records):
    buf = io.BytesIO()
    buf.write(MAGIC)
    buf.write(struct.pack("<I", VERSION))
    for rec in records:
        name = rec.name.encode("utf-8")
        buf.write(struct.pack("<I", len(name)))
        buf.write(name)
        shape = rec.values.shape
        buf.write(struct.pack("<I", len(shape)))
        for extent in shape:
            buf.write(struct.pack("<I", extent))
        _write_array(buf, rec.values)
        _write_array(buf, rec.moment1)
        _write_array(buf, rec.moment2)
        buf.write(struct.pack("<Q", rec.step))
    with open(path, "wb") as f:
        f.write(buf.getvalue())


def load_records(path) -> dict:
    with open(path, "rb") as f:
        data = f.read()
    buf = io.BytesIO(data)
    if buf.read(len(MAGIC)) != MAGIC:
        raise CheckpointError("bad magic, not a parameter container")
    (version,) = struct.unpack("<I", _read_exact(buf, 4))
    if version != VERSION:
        raise CheckpointError(f"unsupported container version {version}")
    records = {}
    while True:
        head = buf.read(4)
        if not head:
            break
        if len(head) != 4:
            raise CheckpointError("truncated container")
        (name_len,) = struct.unpack("<I", head)
        name = _read_exact(buf, name_len).decode("utf-8")
        (rank,) = struct.unpack("<I", _read_exact(buf, 4))
        shape = struct.unpack(f"<{rank}I", _read_exact(buf, 4 * rank)) if rank else ()
        count = int(np.prod(shape, dtype=np.int64)) if shape else 1
        nbytes = 8 * count

        def read_array():
            a = np.frombuffer(_read_exact(buf, nbytes), dtype="<f8").astype(np.float64)
            return a.reshape(shape)

        values = read_array()
        m1 = read_array()
        m2 = read_array()
        (step,) = struct.unpack("<Q", _read_exact(buf, 8))
        records[name] = Record(name, values, m1, m2, step)
    return records


def save_blocks(path, blocks):
    """Serialize parameter blocks; record names are <block>.<tensor>."""
    records = []
    for block in blocks:
        for tname, t in block.tensors.items():
            records.append(Record(
                f"{block.name}.{tname}", t.values,
                block.moment1[tname], block.moment2[tname], block.steps[tname]))
    save_records(path, records)


def load_blocks(path, blocks):
    """Restore values and Adam state into an existing block structure.

    The container must carry exactly the expected records with matching
    shapes; anything missing, extra, or mis-shaped is an error.
    """
    records = load_records(path)
    expected = {f"{b.name}.{t}" for b in blocks for t in b.tensors}
    present = set(records)
    if expected != present:
        missing = sorted(expected - present)
        extra = sorted(present - expected)
        raise CheckpointError(f"record mismatch: missing {missing}, unexpected {extra}")
    for block in blocks:
        for tname, t in block.tensors.items():
            rec = records[f"{block.name}.{tname}"]
            if rec.values.shape != t.values.shape:
                raise CheckpointError(
                    f"shape mismatch for {rec.name}: "
                    f"{rec.values.shape} vs {t.values.shape}")
            t.values[...] = rec.values
            block.moment1[tname][...] = rec.moment1
            block.moment2[tname][...] = rec.moment2
            block.steps[tname] = rec.step
