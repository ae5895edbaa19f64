"""Little-endian helpers for the SCN* binary file formats."""

import struct

import numpy as np

from .errors import FileFormatError, VersionError


class Writer:
    def __init__(self):
        self._parts = []

    def magic(self, tag: bytes):
        self._parts.append(tag)

    def u32(self, value: int):
        self._parts.append(struct.pack("<I", value))

    def text(self, value: str):
        raw = value.encode("utf-8")
        self.u32(len(raw))
        self._parts.append(raw)

    def blob(self, raw: bytes):
        self.u32(len(raw))
        self._parts.append(raw)

    def floats(self, arr):
        self._parts.append(np.ascontiguousarray(arr, dtype="<f4").tobytes())

    def getvalue(self) -> bytes:
        return b"".join(self._parts)


class Reader:
    def __init__(self, raw: bytes, kind: str):
        self._raw = raw
        self._pos = 0
        self.kind = kind

    def _take(self, n: int) -> bytes:
        if self._pos + n > len(self._raw):
            raise FileFormatError(f"{self.kind} file is truncated")
        chunk = self._raw[self._pos:self._pos + n]
        self._pos += n
        return chunk

    def expect_magic(self, tag: bytes):
        found = self._take(len(tag))
        if found != tag:
            raise FileFormatError(f"not a {self.kind} file (magic {found!r}, expected {tag!r})")

    def expect_version(self, expected: int) -> int:
        found = self.u32()
        if found != expected:
            raise VersionError(self.kind, found, expected)
        return found

    def u32(self) -> int:
        return struct.unpack("<I", self._take(4))[0]

    def text(self) -> str:
        n = self.u32()
        try:
            return self._take(n).decode("utf-8")
        except UnicodeDecodeError as exc:
            raise FileFormatError(f"{self.kind} file has an invalid string") from exc

    def blob(self) -> bytes:
        return self._take(self.u32())

    def floats(self, shape) -> np.ndarray:
        count = int(np.prod(shape, dtype=np.int64))
        raw = self._take(4 * count)
        return np.frombuffer(raw, dtype="<f4").astype(np.float32).reshape(shape)

    def at_end(self) -> bool:
        return self._pos == len(self._raw)

    def finish(self):
        if not self.at_end():
            raise FileFormatError(f"{self.kind} file has trailing bytes")
