"""Stream container: one parseable file multiplexing all stream kinds.

Layout (little-endian): magic "VCM1", version u8, fps numerator u16, fps
denominator u16, width u16, height u16, frame count u16, stream count u8;
then per stream a kind byte, a u64 payload length and the payload; finally a
CRC-32 of everything prior. Payloads are opaque to the container.
"""

from __future__ import annotations

import struct
import zlib
from dataclasses import dataclass
from enum import IntEnum

from .errors import ChecksumError, ContractError, FormatError, OverrunError, TruncationError

MAGIC = b"VCM1"
VERSION = 1
_HEADER = struct.Struct("<HHHHHB")


class StreamKind(IntEnum):
    KEY_FRAME_VIDEO = 1
    FEATURE = 2
    RESIDUE = 3
    ENHANCEMENT = 4
    MODEL = 5
    PACKED_FEATURE_PLANES = 6


@dataclass(frozen=True)
class ContainerHeader:
    fps_num: int
    fps_den: int
    width: int
    height: int
    frame_count: int
    stream_count: int

    def __post_init__(self):
        for name in ("fps_num", "fps_den", "width", "height", "frame_count"):
            v = getattr(self, name)
            if not 0 <= v <= 0xFFFF:
                raise ContractError(f"{name}={v} does not fit in u16")
        if not 0 <= self.stream_count <= 0xFF:
            raise ContractError(f"stream_count={self.stream_count} does not fit in u8")


def mux(header: ContainerHeader, streams: list[tuple[StreamKind, bytes]]) -> bytes:
    if header.stream_count != len(streams):
        raise ContractError(
            f"header declares {header.stream_count} streams, got {len(streams)}"
        )
    seen = set()
    for kind, _ in streams:
        kind = StreamKind(kind)
        if kind in seen:
            raise ContractError(f"duplicate stream kind {kind.name}")
        seen.add(kind)
    out = bytearray(MAGIC)
    out += struct.pack("<B", VERSION)
    out += _HEADER.pack(
        header.fps_num,
        header.fps_den,
        header.width,
        header.height,
        header.frame_count,
        header.stream_count,
    )
    for kind, payload in streams:
        out += struct.pack("<BQ", int(kind), len(payload))
        out += payload
    out += struct.pack("<I", zlib.crc32(bytes(out)))
    return bytes(out)


def demux(data: bytes) -> tuple[ContainerHeader, dict[StreamKind, bytes]]:
    if len(data) < 16 + 4:
        raise TruncationError(20, len(data), "container")
    if data[:4] != MAGIC:
        raise FormatError(f"bad container magic {data[:4]!r}, expected {MAGIC!r}")
    if data[4] != VERSION:
        raise FormatError(f"unsupported container version {data[4]}")
    fields = _HEADER.unpack(data[5:16])
    header = ContainerHeader(*fields)
    body_end = len(data) - 4
    (stored_crc,) = struct.unpack("<I", data[body_end:])
    if zlib.crc32(data[:body_end]) != stored_crc:
        raise ChecksumError("container checksum mismatch")

    streams: dict[StreamKind, bytes] = {}
    pos = 16
    for i in range(header.stream_count):
        if pos + 9 > body_end:
            raise TruncationError(pos + 9, body_end, f"stream {i} header")
        kind_byte = data[pos]
        (length,) = struct.unpack("<Q", data[pos + 1 : pos + 9])
        pos += 9
        try:
            kind = StreamKind(kind_byte)
        except ValueError:
            raise FormatError(f"unknown stream kind byte {kind_byte}") from None
        if pos + length > body_end:
            raise OverrunError(
                f"stream {kind.name} declares {length} bytes, only {body_end - pos} remain"
            )
        if kind in streams:
            raise FormatError(f"duplicate stream kind {kind.name}")
        streams[kind] = data[pos : pos + int(length)]
        pos += int(length)
    if pos != body_end:
        raise FormatError(f"{body_end - pos} trailing bytes after declared streams")
    return header, streams


def stream_shares(streams: dict[StreamKind, bytes]) -> list[tuple[StreamKind, int, float]]:
    total = sum(len(v) for v in streams.values())
    return [
        (kind, len(payload), (100.0 * len(payload) / total) if total else 0.0)
        for kind, payload in sorted(streams.items())
    ]


def inspect_container(data: bytes) -> str:
    """Human-readable per-stream size and share summary."""
    header, streams = demux(data)
    lines = [
        f"container: {header.width}x{header.height}, {header.frame_count} frames, "
        f"fps {header.fps_num}/{header.fps_den}, {header.stream_count} streams"
    ]
    for kind, size, share in stream_shares(streams):
        lines.append(f"  {kind.name:<22} {size:>10d} B  {share:5.1f}%")
    return "\n".join(lines)
