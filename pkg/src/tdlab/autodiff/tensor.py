"""Flat parameter vectors with a named segment layout, plus the TNSR file format."""

from __future__ import annotations

import struct
from dataclasses import dataclass
from pathlib import Path
from typing import Mapping

import numpy as np

TNSR_MAGIC = b"TNSR"
TNSR_VERSION = 1
DTYPE_F64 = 1


class LayoutMismatch(ValueError):
    pass


def as_tensor(x) -> np.ndarray:
    """Validate an input array: float64, finite."""
    arr = np.asarray(x, dtype=np.float64)
    if not np.all(np.isfinite(arr)):
        raise ValueError("tensor contains NaN or Inf")
    return arr


def is_valid(x) -> bool:
    """True when every value is finite (detects NaN/Inf propagation)."""
    data = x.data if isinstance(x, ParamVector) else np.asarray(x)
    return bool(np.all(np.isfinite(data)))


@dataclass(frozen=True)
class Segment:
    name: str
    offset: int
    shape: tuple[int, ...]

    @property
    def size(self) -> int:
        return int(np.prod(self.shape, dtype=np.int64))


Layout = tuple[Segment, ...]


def make_layout(shapes: Mapping[str, tuple]) -> Layout:
    segs, off = [], 0
    for name, shape in shapes.items():
        seg = Segment(name, off, tuple(int(d) for d in shape))
        segs.append(seg)
        off += seg.size
    return tuple(segs)


class ParamVector:
    """Immutable flat float64 vector viewed as named parameter blocks."""

    __slots__ = ("data", "layout")

    def __init__(self, data, layout: Layout):
        arr = np.array(data, dtype=np.float64).reshape(-1)
        total = sum(s.size for s in layout)
        if arr.size != total:
            raise LayoutMismatch(f"data has {arr.size} values, layout needs {total}")
        arr.setflags(write=False)
        self.data = arr
        self.layout = tuple(layout)

    @classmethod
    def from_blocks(cls, blocks: Mapping[str, np.ndarray]) -> "ParamVector":
        layout = make_layout({k: np.shape(v) for k, v in blocks.items()})
        flat = np.concatenate([np.asarray(v, dtype=np.float64).reshape(-1) for v in blocks.values()]) \
            if blocks else np.zeros(0)
        return cls(flat, layout)

    @classmethod
    def zeros(cls, layout: Layout) -> "ParamVector":
        return cls(np.zeros(sum(s.size for s in layout)), layout)

    def __len__(self):
        return self.data.size

    def __repr__(self):
        names = ", ".join(f"{s.name}{list(s.shape)}" for s in self.layout)
        return f"ParamVector({names})"

    def blocks(self) -> dict[str, np.ndarray]:
        """Read-only views of each segment, reshaped."""
        return {s.name: self.data[s.offset:s.offset + s.size].reshape(s.shape) for s in self.layout}

    def block(self, name: str) -> np.ndarray:
        for s in self.layout:
            if s.name == name:
                return self.data[s.offset:s.offset + s.size].reshape(s.shape)
        raise KeyError(name)

    def same_layout(self, other: "ParamVector") -> bool:
        return self.layout == other.layout

    def check_layout(self, other: "ParamVector"):
        if not self.same_layout(other):
            raise LayoutMismatch("parameter layouts differ")

    def with_data(self, data) -> "ParamVector":
        return ParamVector(data, self.layout)

    def replace_block(self, name: str, value) -> "ParamVector":
        data = self.data.copy()
        for s in self.layout:
            if s.name == name:
                data[s.offset:s.offset + s.size] = np.asarray(value, dtype=np.float64).reshape(-1)
                return ParamVector(data, self.layout)
        raise KeyError(name)

    # vector arithmetic, layout-checked
    def __add__(self, other: "ParamVector") -> "ParamVector":
        self.check_layout(other)
        return self.with_data(self.data + other.data)

    def __sub__(self, other: "ParamVector") -> "ParamVector":
        self.check_layout(other)
        return self.with_data(self.data - other.data)

    def __mul__(self, c: float) -> "ParamVector":
        return self.with_data(self.data * float(c))

    __rmul__ = __mul__

    def __neg__(self) -> "ParamVector":
        return self.with_data(-self.data)

    def norm(self) -> float:
        return float(np.sqrt(dot(self, self)))

    def equals(self, other: "ParamVector") -> bool:
        """Bit-for-bit equality."""
        return self.same_layout(other) and self.data.tobytes() == other.data.tobytes()


def dot(a: ParamVector, b: ParamVector) -> float:
    """Inner product of two parameter vectors with identical layout."""
    a.check_layout(b)
    return float(np.dot(a.data, b.data))


# ---------------------------------------------------------------------------
# TNSR: magic, u32 version, u8 dtype, u8 rank, rank x u64 dims, row-major f64 LE


def tnsr_bytes(array) -> bytes:
    arr = np.asarray(array, dtype="<f8", order="C")  # ascontiguousarray would promote 0-d to 1-d
    if arr.ndim > 255:
        raise ValueError("rank too large for TNSR")
    head = TNSR_MAGIC + struct.pack("<IBB", TNSR_VERSION, DTYPE_F64, arr.ndim)
    head += struct.pack(f"<{arr.ndim}Q", *arr.shape)
    return head + arr.tobytes(order="C")


def tnsr_from_bytes(buf: bytes) -> np.ndarray:
    if buf[:4] != TNSR_MAGIC:
        raise ValueError("not a TNSR file (bad magic)")
    version, dtype, rank = struct.unpack_from("<IBB", buf, 4)
    if version != TNSR_VERSION:
        raise ValueError(f"unsupported TNSR version {version}")
    if dtype != DTYPE_F64:
        raise ValueError(f"unsupported TNSR dtype code {dtype}")
    off = 10
    dims = struct.unpack_from(f"<{rank}Q", buf, off)
    off += 8 * rank
    count = int(np.prod(dims, dtype=np.int64)) if rank else 1
    payload = buf[off:]
    if len(payload) != 8 * count:
        raise ValueError(f"TNSR payload has {len(payload)} bytes, expected {8 * count}")
    return np.frombuffer(payload, dtype="<f8").reshape(dims).astype(np.float64)


def save_tnsr(path, array):
    Path(path).write_bytes(tnsr_bytes(array))


def load_tnsr(path) -> np.ndarray:
    return tnsr_from_bytes(Path(path).read_bytes())
