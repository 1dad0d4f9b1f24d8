"""Code streams, their binary container and bitrate arithmetic.

Layout (little-endian)::

    magic       4s   b"LMLC"
    version     u8
    sample_rate u32
    k_semantic  u16
    k_pitch     u16
    rate_sem    f32
    rate_pitch  f32
    n_semantic  u32
    n_pitch     u32
    payload     semantic plane then pitch plane, each index in ceil(log2 K)
                bits, LSB first, zero-padded to a whole byte at the end
"""

from __future__ import annotations

import math
import struct
from dataclasses import dataclass

import numpy as np

from lmcodec.errors import BitstreamError

MAGIC = b"LMLC"
VERSION = 1
_HEADER = struct.Struct("<4sBIHHffII")
HEADER_BYTES = _HEADER.size


def bits_per_index(k: int) -> int:
    """Packed width of one index for a K-entry codebook."""
    return max(0, math.ceil(math.log2(k)))


def bitrate(k_semantic: int, rate_semantic: float, k_pitch: int, rate_pitch: float) -> float:
    """Information rate in bits per second using exact ``log2 K``.

    Packing uses ``ceil(log2 K)`` bits per index, which is larger for
    non-power-of-two codebooks; see :func:`packed_bitrate`.
    """
    if k_semantic < 1 or k_pitch < 1:
        raise ValueError("codebook sizes must be positive")
    if rate_semantic <= 0 or rate_pitch <= 0:
        raise ValueError("frame rates must be positive")
    return rate_semantic * math.log2(k_semantic) + rate_pitch * math.log2(k_pitch)


def packed_bitrate(k_semantic: int, rate_semantic: float, k_pitch: int, rate_pitch: float) -> float:
    return rate_semantic * bits_per_index(k_semantic) + rate_pitch * bits_per_index(k_pitch)


def _f32(x: float) -> float:
    return float(np.float32(x))


@dataclass(frozen=True)
class CodeStream:
    semantic_indices: tuple
    pitch_indices: tuple
    sample_rate: int
    k_semantic: int
    k_pitch: int
    rate_semantic: float
    rate_pitch: float
    version: int = VERSION

    def __post_init__(self):
        sem = tuple(int(i) for i in self.semantic_indices)
        pit = tuple(int(i) for i in self.pitch_indices)
        object.__setattr__(self, "semantic_indices", sem)
        object.__setattr__(self, "pitch_indices", pit)
        # rates travel as f32
        object.__setattr__(self, "rate_semantic", _f32(self.rate_semantic))
        object.__setattr__(self, "rate_pitch", _f32(self.rate_pitch))
        if not (1 <= self.k_semantic < 1 << 16 and 1 <= self.k_pitch < 1 << 16):
            raise BitstreamError("invalid", "codebook sizes must fit in u16 and be positive")
        if not 0 < self.sample_rate < 1 << 32:
            raise BitstreamError("invalid", "sample rate must fit in u32")
        if any(not 0 <= i < self.k_semantic for i in sem):
            raise BitstreamError("invalid", f"semantic index outside [0, {self.k_semantic})")
        if any(not 0 <= i < self.k_pitch for i in pit):
            raise BitstreamError("invalid", f"pitch index outside [0, {self.k_pitch})")

    @property
    def header(self) -> dict:
        return {
            "version": self.version,
            "sample_rate": self.sample_rate,
            "k_semantic": self.k_semantic,
            "k_pitch": self.k_pitch,
            "rate_semantic": self.rate_semantic,
            "rate_pitch": self.rate_pitch,
            "n_semantic": len(self.semantic_indices),
            "n_pitch": len(self.pitch_indices),
        }

    @property
    def payload_bits(self) -> int:
        return bits_per_index(self.k_semantic) * len(self.semantic_indices) + bits_per_index(self.k_pitch) * len(
            self.pitch_indices
        )


def _pack_plane(values, width: int) -> np.ndarray:
    if width == 0 or not values:
        return np.zeros(0, dtype=np.uint8)
    v = np.asarray(values, dtype=np.int64)[:, None]
    return ((v >> np.arange(width)) & 1).astype(np.uint8).reshape(-1)


def _unpack_plane(bits: np.ndarray, n: int, width: int) -> tuple:
    if width == 0:
        return (0,) * n
    b = bits.reshape(n, width).astype(np.int64)
    return tuple(int(x) for x in (b << np.arange(width)).sum(axis=1))


def pack_bitstream(cs: CodeStream) -> bytes:
    if cs.version != VERSION:
        raise BitstreamError("version_mismatch", f"cannot write version {cs.version}")
    header = _HEADER.pack(
        MAGIC,
        cs.version,
        cs.sample_rate,
        cs.k_semantic,
        cs.k_pitch,
        cs.rate_semantic,
        cs.rate_pitch,
        len(cs.semantic_indices),
        len(cs.pitch_indices),
    )
    bits = np.concatenate(
        [
            _pack_plane(cs.semantic_indices, bits_per_index(cs.k_semantic)),
            _pack_plane(cs.pitch_indices, bits_per_index(cs.k_pitch)),
        ]
    )
    return header + np.packbits(bits, bitorder="little").tobytes()


def unpack_bitstream(data: bytes) -> CodeStream:
    """Parse a packed stream.

    Raises:
        BitstreamError: with ``code`` ``bad_magic``, ``version_mismatch``,
            ``truncated``, ``trailing_data`` or ``invalid``.
    """
    if len(data) < HEADER_BYTES:
        if not MAGIC.startswith(bytes(data[:4])):
            raise BitstreamError("bad_magic", "not an LMLC bitstream")
        raise BitstreamError("truncated", f"header needs {HEADER_BYTES} bytes, got {len(data)}")
    magic, version, sr, k_sem, k_pitch, r_sem, r_pitch, n_sem, n_pitch = _HEADER.unpack_from(data)
    if magic != MAGIC:
        raise BitstreamError("bad_magic", f"bad magic {magic!r}")
    if version != VERSION:
        raise BitstreamError("version_mismatch", f"unsupported version {version}, expected {VERSION}")
    if k_sem < 1 or k_pitch < 1:
        raise BitstreamError("invalid", "zero codebook size in header")
    w_sem, w_pitch = bits_per_index(k_sem), bits_per_index(k_pitch)
    n_bits = w_sem * n_sem + w_pitch * n_pitch
    n_bytes = (n_bits + 7) // 8
    payload = data[HEADER_BYTES:]
    if len(payload) < n_bytes:
        raise BitstreamError("truncated", f"payload needs {n_bytes} bytes, got {len(payload)}")
    if len(payload) > n_bytes:
        raise BitstreamError("trailing_data", f"{len(payload) - n_bytes} unexpected trailing bytes")
    bits = np.unpackbits(np.frombuffer(payload, dtype=np.uint8), bitorder="little")[:n_bits]
    sem = _unpack_plane(bits[: w_sem * n_sem], n_sem, w_sem)
    pit = _unpack_plane(bits[w_sem * n_sem :], n_pitch, w_pitch)
    return CodeStream(sem, pit, sr, k_sem, k_pitch, r_sem, r_pitch, version)
