"""Versioned binary container shared by every on-disk artifact.

Common layout:

    magic    4 bytes   b"SHVR"
    version  u32 LE
    body     format specific, starts with a kind tag byte
    crc32    u32 LE over every preceding byte

All integers are little-endian. Matrices are flat float64 row-major blocks.
Optional trailing data uses framed sections: tag u8, payload length u64,
payload bytes.
"""

from __future__ import annotations

import struct
import zlib

MAGIC = b"SHVR"
FORMAT_VERSION = 1

# Kind tag: first body byte, identifies what a file holds. Model checkpoints
# use the backbone tag directly; other artifact kinds live in a disjoint
# range so a mismatched load fails cleanly instead of misparsing.
TAG_MODEL_FM = 1
TAG_MODEL_DEEPFM = 2
TAG_VOCABULARY = 16
TAG_SCORES = 17
TAG_PRUNED = 18

MODEL_TAGS = (TAG_MODEL_FM, TAG_MODEL_DEEPFM)

# Section tags for optional framed payloads.
SECTION_MASK = 1
SECTION_CODEBOOK = 2
SECTION_CSR = 3
SECTION_METADATA = 4
SECTION_SCORES = 5


class CheckpointError(ValueError):
    """Malformed, truncated, corrupt, or wrong-kind container file."""


class ByteWriter:
    def __init__(self) -> None:
        self._parts: list[bytes] = []

    def raw(self, data: bytes) -> None:
        self._parts.append(bytes(data))

    def u8(self, value: int) -> None:
        self._parts.append(struct.pack("<B", value))

    def u32(self, value: int) -> None:
        self._parts.append(struct.pack("<I", value))

    def u64(self, value: int) -> None:
        self._parts.append(struct.pack("<Q", value))

    def f64(self, value: float) -> None:
        self._parts.append(struct.pack("<d", value))

    def text(self, value: str) -> None:
        data = value.encode("utf-8")
        self.u32(len(data))
        self.raw(data)

    def array(self, values) -> None:
        # caller fixes dtype; bytes are written exactly as laid out in memory
        self.raw(values.tobytes())

    def section(self, tag: int, payload: bytes) -> None:
        self.u8(tag)
        self.u64(len(payload))
        self.raw(payload)

    def getvalue(self) -> bytes:
        return b"".join(self._parts)


class ByteReader:
    def __init__(self, data: bytes) -> None:
        self._data = data
        self._pos = 0

    def take(self, count: int) -> bytes:
        if self._pos + count > len(self._data):
            raise CheckpointError("truncated file")
        out = self._data[self._pos : self._pos + count]
        self._pos += count
        return out

    def u8(self) -> int:
        return struct.unpack("<B", self.take(1))[0]

    def u32(self) -> int:
        return struct.unpack("<I", self.take(4))[0]

    def u64(self) -> int:
        return struct.unpack("<Q", self.take(8))[0]

    def f64(self) -> float:
        return struct.unpack("<d", self.take(8))[0]

    def text(self) -> str:
        return self.take(self.u32()).decode("utf-8")

    def sections(self):
        """Yield (tag, payload) for the framed sections occupying the rest
        of the body."""
        while not self.exhausted:
            tag = self.u8()
            length = self.u64()
            yield tag, self.take(length)

    @property
    def exhausted(self) -> bool:
        return self._pos >= len(self._data)


def seal(body: bytes) -> bytes:
    """Wrap a body with the magic, version header and CRC32 footer."""
    head = MAGIC + struct.pack("<I", FORMAT_VERSION) + body
    return head + struct.pack("<I", zlib.crc32(head))


def unseal(data: bytes) -> ByteReader:
    """Verify the envelope and return a reader positioned at the body."""
    if len(data) < len(MAGIC) + 8:
        raise CheckpointError("truncated file")
    if data[: len(MAGIC)] != MAGIC:
        raise CheckpointError("not a SHVR checkpoint")
    version = struct.unpack_from("<I", data, len(MAGIC))[0]
    if version != FORMAT_VERSION:
        raise CheckpointError(f"unsupported version {version}")
    stored = struct.unpack_from("<I", data, len(data) - 4)[0]
    if zlib.crc32(data[:-4]) != stored:
        raise CheckpointError("checksum mismatch, file is corrupt")
    return ByteReader(data[len(MAGIC) + 4 : -4])


def write_file(path, body: bytes) -> None:
    with open(path, "wb") as fh:
        fh.write(seal(body))


def read_file(path) -> ByteReader:
    with open(path, "rb") as fh:
        return unseal(fh.read())


def expect_kind(reader: ByteReader, expected: int, what: str) -> int:
    tag = reader.u8()
    if tag != expected:
        raise CheckpointError(f"file does not hold {what} (kind tag {tag})")
    return tag
