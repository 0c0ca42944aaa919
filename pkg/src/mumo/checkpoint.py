"""Named-parameter store with a small binary on-disk format.

Layout (all integers little-endian):

    magic   4 bytes  b"MUMO"
    version u32      currently 1
    count   u32      number of entries
    entry   name_len u64 | name UTF-8 | rank u64 | dims u64 each |
            values as raw 32-bit little-endian floats, C order

Values are always stored in 32 bits; a 64-bit run upcasts after loading.
save -> load -> save is bit-identical.
"""

from __future__ import annotations

import struct
from collections import OrderedDict

import numpy as np

from .errors import CheckpointCorrupt

MAGIC = b"MUMO"
VERSION = 1


class Checkpoint:
    """Ordered name -> array mapping for model state."""

    def __init__(self, entries: "OrderedDict[str, np.ndarray] | None" = None):
        self.entries: OrderedDict[str, np.ndarray] = entries or OrderedDict()

    def __getitem__(self, name: str) -> np.ndarray:
        return self.entries[name]

    def __setitem__(self, name: str, value: np.ndarray) -> None:
        self.entries[name] = np.asarray(value)

    def __contains__(self, name: str) -> bool:
        return name in self.entries

    def __len__(self) -> int:
        return len(self.entries)

    def names(self) -> list[str]:
        return list(self.entries.keys())

    def n_params(self) -> int:
        return sum(int(v.size) for v in self.entries.values())

    def astype(self, dtype) -> "Checkpoint":
        out = OrderedDict()
        for k, v in self.entries.items():
            out[k] = v.astype(dtype)
        return Checkpoint(out)

    def save(self, path: str) -> None:
        with open(path, "wb") as fh:
            fh.write(MAGIC)
            fh.write(struct.pack("<II", VERSION, len(self.entries)))
            for name, value in self.entries.items():
                raw = name.encode("utf-8")
                fh.write(struct.pack("<Q", len(raw)))
                fh.write(raw)
                fh.write(struct.pack("<Q", value.ndim))
                for dim in value.shape:
                    fh.write(struct.pack("<Q", dim))
                fh.write(np.ascontiguousarray(value, dtype="<f4").tobytes())

    @classmethod
    def load(cls, path: str) -> "Checkpoint":
        with open(path, "rb") as fh:
            blob = fh.read()
        pos = 0

        def take(n: int) -> bytes:
            nonlocal pos
            if pos + n > len(blob):
                raise CheckpointCorrupt(f"truncated checkpoint at byte {pos}")
            chunk = blob[pos:pos + n]
            pos += n
            return chunk

        if take(4) != MAGIC:
            raise CheckpointCorrupt("bad magic")
        version, count = struct.unpack("<II", take(8))
        if version != VERSION:
            raise CheckpointCorrupt(f"unsupported version {version}")
        entries: OrderedDict[str, np.ndarray] = OrderedDict()
        for _ in range(count):
            (name_len,) = struct.unpack("<Q", take(8))
            name = take(name_len).decode("utf-8")
            (rank,) = struct.unpack("<Q", take(8))
            shape = tuple(struct.unpack("<Q", take(8))[0] for _ in range(rank))
            n_values = int(np.prod(shape)) if shape else 1
            values = np.frombuffer(take(4 * n_values), dtype="<f4").reshape(shape)
            entries[name] = values.astype(np.float32)
        if pos != len(blob):
            raise CheckpointCorrupt(f"{len(blob) - pos} trailing bytes")
        return cls(entries)
