"""Bounds-checked reading of little-endian binary files."""

import numpy as np

from .errors import FormatError


class BinaryReader:
    def __init__(self, buf: bytes, path):
        self.buf, self.path, self.pos = buf, path, 0

    def take(self, nbytes: int, what: str) -> memoryview:
        end = self.pos + nbytes
        if end > len(self.buf):
            raise FormatError(
                f"{self.path}: truncated while reading {what} at offset {self.pos} "
                f"(need {nbytes} bytes, {len(self.buf) - self.pos} left)"
            )
        view = memoryview(self.buf)[self.pos : end]
        self.pos = end
        return view

    def expect(self, magic: bytes, what: str) -> None:
        if bytes(self.take(len(magic), "magic")) != magic:
            raise FormatError(f"{self.path}: not a {what} file (bad magic at offset 0)")

    def array(self, dtype: str, shape, what: str) -> np.ndarray:
        count = int(np.prod(shape))
        raw = self.take(count * np.dtype(dtype).itemsize, what)
        return np.frombuffer(raw, dtype=dtype).reshape(shape).astype(np.dtype(dtype).newbyteorder("="))

    def at_end(self) -> bool:
        return self.pos == len(self.buf)
