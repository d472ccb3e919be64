"""Self-describing bitstream container.

Layout (all multi-byte fields big-endian):

    magic "GLC1" | version u8 | mode u8 (0 image, 1 video)
    width u32 | height u32 | pad_h u8 | pad_w u8 | q_index u8
    model_hash u64
    [video only] frame_count u32
    per frame:
        frame_type u8 (0 intra, 1 predicted)
        hyper_count u32 | hyper_data (fixed-length packed indices)
        main_len u32 | main_data | crc32(main_data) u32
        latent_hash u32
"""

from __future__ import annotations

import io
import struct
import zlib
from dataclasses import dataclass

MAGIC = b"GLC1"
VERSION = 1
MODE_IMAGE = 0
MODE_VIDEO = 1
FRAME_INTRA = 0
FRAME_PREDICTED = 1


class BitstreamError(Exception):
    pass


class ChecksumError(BitstreamError):
    pass


class ModelHashError(BitstreamError):
    pass


class StateDesyncError(BitstreamError):
    pass


@dataclass
class FrameSegment:
    frame_type: int
    hyper_count: int
    hyper_data: bytes
    main_data: bytes
    latent_hash: int

    @property
    def total_bytes(self) -> int:
        return 1 + 4 + len(self.hyper_data) + 4 + len(self.main_data) + 4 + 4


@dataclass
class ContainerHeader:
    mode: int
    width: int
    height: int
    pad_h: int
    pad_w: int
    q_index: int
    model_hash: int
    frame_count: int = 1


def crc32(data: bytes) -> int:
    return zlib.crc32(data) & 0xFFFFFFFF


def write_container(
    path_or_file, header: ContainerHeader, frames: list[FrameSegment]
) -> int:
    """Serialize the container; returns the byte count written."""
    buf = io.BytesIO()
    buf.write(MAGIC)
    buf.write(struct.pack(">BB", VERSION, header.mode))
    buf.write(struct.pack(">IIBBB", header.width, header.height,
                          header.pad_h, header.pad_w, header.q_index))
    buf.write(struct.pack(">Q", header.model_hash))
    if header.mode == MODE_VIDEO:
        buf.write(struct.pack(">I", len(frames)))
    elif len(frames) != 1:
        raise BitstreamError("image mode carries exactly one frame record")
    for seg in frames:
        buf.write(struct.pack(">B", seg.frame_type))
        buf.write(struct.pack(">I", seg.hyper_count))
        buf.write(seg.hyper_data)
        buf.write(struct.pack(">I", len(seg.main_data)))
        buf.write(seg.main_data)
        buf.write(struct.pack(">I", crc32(seg.main_data)))
        buf.write(struct.pack(">I", seg.latent_hash))
    data = buf.getvalue()
    if hasattr(path_or_file, "write"):
        path_or_file.write(data)
    else:
        with open(path_or_file, "wb") as f:
            f.write(data)
    return len(data)


class _Reader:
    def __init__(self, data: bytes):
        self.data = data
        self.pos = 0

    def take(self, n: int) -> bytes:
        if self.pos + n > len(self.data):
            raise BitstreamError("container truncated")
        out = self.data[self.pos : self.pos + n]
        self.pos += n
        return out

    def unpack(self, fmt: str):
        return struct.unpack(fmt, self.take(struct.calcsize(fmt)))


def read_container(
    path_or_bytes, hyper_bytes_for_count
) -> tuple[ContainerHeader, list[FrameSegment]]:
    """Parse a container.

    ``hyper_bytes_for_count(frame_type, count)`` maps a hyper segment's index
    count to its packed byte length, which depends on the codebook size of
    the checkpoint that produced the stream.
    """
    if isinstance(path_or_bytes, (bytes, bytearray)):
        data = bytes(path_or_bytes)
    else:
        with open(path_or_bytes, "rb") as f:
            data = f.read()
    r = _Reader(data)
    if r.take(4) != MAGIC:
        raise BitstreamError("bad magic; not a GLC1 container")
    version, mode = r.unpack(">BB")
    if version != VERSION:
        raise BitstreamError(f"unsupported container version {version}")
    if mode not in (MODE_IMAGE, MODE_VIDEO):
        raise BitstreamError(f"unknown mode byte {mode}")
    width, height, pad_h, pad_w, q_index = r.unpack(">IIBBB")
    (model_hash,) = r.unpack(">Q")
    frame_count = 1
    if mode == MODE_VIDEO:
        (frame_count,) = r.unpack(">I")
    header = ContainerHeader(mode, width, height, pad_h, pad_w, q_index,
                             model_hash, frame_count)
    frames = []
    for _ in range(frame_count):
        (frame_type,) = r.unpack(">B")
        (hyper_count,) = r.unpack(">I")
        hyper_data = r.take(hyper_bytes_for_count(frame_type, hyper_count))
        (main_len,) = r.unpack(">I")
        main_data = r.take(main_len)
        (stored_crc,) = r.unpack(">I")
        if crc32(main_data) != stored_crc:
            raise ChecksumError("main segment checksum mismatch")
        (latent_hash,) = r.unpack(">I")
        frames.append(FrameSegment(frame_type, hyper_count, hyper_data,
                                   main_data, latent_hash))
    if r.pos != len(data):
        raise BitstreamError(f"{len(data) - r.pos} trailing bytes after last frame")
    return header, frames
