"""Bit-exact uplink wire format and communication accounting.

A client's integer update with entries in ``[-E, E]`` is stored offset-binary:
each value ``v`` becomes the unsigned ``v + E`` in ``w = ceil(log2(2E+1))``
bits, packed MSB-first within bytes and zero-padded to a byte boundary.  The
accompanying momentum travels as little-endian IEEE-754 float32; narrowing
from the in-memory float64 is measured, never hidden.

Packet layout (all header fields little-endian)::

    round: u32 | client_id: u32 | E: u16 | d: u32 | flags: u16
    delta_block:    ceil(d*w/8) bytes
    momentum_block: 4*d bytes, present iff flags bit 0 is set

A ``.packets`` capture file is a concatenation of u32-length-prefixed packets.
"""

from __future__ import annotations

import math
import struct
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .errors import CodecError
from .vectors import ParamVector

ALGORITHMS = ("fedlion", "fedavg", "mfl-sgdwm")

_HEADER = struct.Struct("<IIHIH")
FLAG_MOMENTUM = 0x0001


@dataclass(frozen=True)
class DeltaVector:
    """Integer-valued client update, every entry in ``[-E, E]``."""

    values: np.ndarray
    E: int

    def __post_init__(self):
        values = np.asarray(self.values)
        if values.ndim != 1:
            raise CodecError(f"delta must be 1-D, got shape {values.shape}")
        if not np.issubdtype(values.dtype, np.integer):
            raise CodecError(f"delta must be integer-valued, got dtype {values.dtype}")
        if self.E < 0:
            raise CodecError(f"E must be >= 0, got {self.E}")
        if values.size and int(np.abs(values).max()) > self.E:
            raise CodecError(
                f"delta value {int(values[np.abs(values).argmax()])} outside [-{self.E}, {self.E}]"
            )
        values = values.astype(np.int64, copy=True)
        values.setflags(write=False)
        object.__setattr__(self, "values", values)

    @property
    def d(self) -> int:
        return self.values.size


def bit_width(E: int) -> int:
    """Bits per coordinate: ceil(log2(2E+1))."""
    if E < 0:
        raise CodecError(f"E must be >= 0, got {E}")
    return 0 if E == 0 else math.ceil(math.log2(2 * E + 1))


def payload_nbytes(d: int, E: int) -> int:
    return (d * bit_width(E) + 7) // 8


def encode_delta(delta: DeltaVector) -> bytes:
    """Pack offset-binary values MSB-first; total ceil(d*w/8) bytes."""
    w = bit_width(delta.E)
    if delta.d == 0 or w == 0:
        return b""
    offsets = (delta.values + delta.E).astype(np.uint64)
    shifts = np.arange(w - 1, -1, -1, dtype=np.uint64)
    bits = ((offsets[:, None] >> shifts) & 1).astype(np.uint8).ravel()
    return np.packbits(bits).tobytes()


def decode_delta(payload: bytes, d: int, E: int) -> DeltaVector:
    """Inverse of :func:`encode_delta`; rejects truncated or out-of-range data."""
    w = bit_width(E)
    expected = payload_nbytes(d, E)
    if len(payload) != expected:
        raise CodecError(f"payload is {len(payload)} bytes, expected {expected}")
    if d == 0 or w == 0:
        return DeltaVector(np.zeros(d, dtype=np.int64), E)
    bits = np.unpackbits(np.frombuffer(payload, dtype=np.uint8))[: d * w]
    weights = (1 << np.arange(w - 1, -1, -1)).astype(np.int64)
    offsets = bits.reshape(d, w) @ weights
    if int(offsets.max()) > 2 * E:
        raise CodecError(f"decoded offset {int(offsets.max())} exceeds 2E={2 * E}")
    return DeltaVector(offsets - E, E)


def narrowing_error(m: ParamVector) -> float:
    """Max absolute error from narrowing momentum to the float32 wire format."""
    m64 = m.data
    return float(np.max(np.abs(m64 - m64.astype(np.float32).astype(np.float64)), initial=0.0))


@dataclass(frozen=True)
class UplinkPacket:
    round: int
    client_id: int
    delta: DeltaVector
    momentum: ParamVector | None = None

    @property
    def flags(self) -> int:
        return FLAG_MOMENTUM if self.momentum is not None else 0


def encode_packet(pkt: UplinkPacket) -> bytes:
    header = _HEADER.pack(pkt.round, pkt.client_id, pkt.delta.E, pkt.delta.d, pkt.flags)
    body = encode_delta(pkt.delta)
    if pkt.momentum is not None:
        if len(pkt.momentum) != pkt.delta.d:
            raise CodecError("momentum length differs from delta length")
        body += pkt.momentum.data.astype("<f4").tobytes()
    return header + body


def decode_packet(buf: bytes) -> UplinkPacket:
    if len(buf) < _HEADER.size:
        raise CodecError(f"packet truncated: {len(buf)} bytes")
    rnd, client_id, E, d, flags = _HEADER.unpack_from(buf)
    offset = _HEADER.size
    nbytes = payload_nbytes(d, E)
    delta_block = buf[offset : offset + nbytes]
    if len(delta_block) != nbytes:
        raise CodecError("packet truncated inside delta block")
    delta = decode_delta(delta_block, d, E)
    offset += nbytes
    momentum = None
    if flags & FLAG_MOMENTUM:
        mom_block = buf[offset : offset + 4 * d]
        if len(mom_block) != 4 * d:
            raise CodecError("packet truncated inside momentum block")
        momentum = ParamVector(np.frombuffer(mom_block, dtype="<f4").astype(np.float64))
        offset += 4 * d
    if offset != len(buf):
        raise CodecError(f"{len(buf) - offset} trailing bytes after packet body")
    return UplinkPacket(rnd, client_id, delta, momentum)


def write_packets(path: str | Path, packets: list[UplinkPacket]) -> None:
    with Path(path).open("wb") as fh:
        for pkt in packets:
            raw = encode_packet(pkt)
            fh.write(struct.pack("<I", len(raw)))
            fh.write(raw)


def read_packets(path: str | Path) -> list[UplinkPacket]:
    packets = []
    raw = Path(path).read_bytes()
    offset = 0
    while offset < len(raw):
        if offset + 4 > len(raw):
            raise CodecError("capture truncated inside a length prefix")
        (length,) = struct.unpack_from("<I", raw, offset)
        offset += 4
        if offset + length > len(raw):
            raise CodecError("capture truncated inside a packet")
        packets.append(decode_packet(raw[offset : offset + length]))
        offset += length
    return packets


class PacketWriter:
    """Streaming writer for a ``.packets`` capture file (single-writer).

    The float32 narrowing applied to momenta at this boundary is measured,
    not hidden: ``max_narrowing_error`` is the worst per-packet
    ``max |m64 - m32|`` seen so far.
    """

    def __init__(self, path: str | Path):
        self._fh = Path(path).open("wb")
        self.max_narrowing_error = 0.0

    def add(self, pkt: UplinkPacket) -> None:
        raw = encode_packet(pkt)
        if pkt.momentum is not None:
            self.max_narrowing_error = max(
                self.max_narrowing_error, narrowing_error(pkt.momentum)
            )
        self._fh.write(struct.pack("<I", len(raw)))
        self._fh.write(raw)

    def close(self) -> None:
        self._fh.close()


@dataclass(frozen=True)
class CommsAccount:
    """Per-round bit accounting; full-precision elements count 32 bits."""

    uplink_bits_per_client: int
    downlink_bits_per_client: int
    total_round_bits: int


def account_round(algorithm: str, d: int, E: int, n: int) -> CommsAccount:
    """Analytic pre-padding bit counts per round for the given algorithm.

    Uplink: fedlion sends the packed integer update plus a float32 momentum;
    fedavg a float32 model delta; mfl-sgdwm a float32 delta and momentum.
    Downlink is the uncompressed broadcast (model, plus momentum for the
    momentum-carrying algorithms).
    """
    if algorithm not in ALGORITHMS:
        raise ValueError(f"unknown algorithm {algorithm!r}")
    if d < 0 or E < 0 or n < 1:
        raise ValueError(f"bad accounting arguments d={d} E={E} n={n}")
    if algorithm == "fedlion":
        up = d * bit_width(E) + 32 * d
        down = 64 * d
    elif algorithm == "fedavg":
        up = 32 * d
        down = 32 * d
    else:  # mfl-sgdwm
        up = 64 * d
        down = 64 * d
    return CommsAccount(up, down, n * (up + down))


@dataclass(frozen=True)
class HistogramReport:
    """Counts of update values over the symbols -E..E plus empirical entropy."""

    E: int
    counts: np.ndarray
    entropy_bits: float

    def to_json_dict(self) -> dict:
        return {
            "E": self.E,
            "counts": [int(c) for c in self.counts],
            "entropy_bits": self.entropy_bits,
        }


def histogram_from_counts(counts: np.ndarray, E: int) -> HistogramReport:
    counts = np.asarray(counts, dtype=np.int64)
    if counts.shape != (2 * E + 1,):
        raise ValueError(f"counts must have 2E+1={2 * E + 1} entries")
    total = counts.sum()
    if total > 0:
        p = counts[counts > 0] / total
        entropy = float(-(p * np.log2(p)).sum())
    else:
        entropy = 0.0
    return HistogramReport(E, counts, entropy)


def delta_histogram(deltas: list[DeltaVector]) -> HistogramReport:
    """Exact symbol counts over ``[-E, E]`` and empirical entropy per coordinate."""
    if not deltas:
        raise ValueError("delta_histogram of an empty list")
    E = deltas[0].E
    if any(dv.E != E for dv in deltas):
        raise ValueError("all deltas must share the same E")
    counts = np.zeros(2 * E + 1, dtype=np.int64)
    for dv in deltas:
        counts += np.bincount(dv.values + E, minlength=2 * E + 1)
    return histogram_from_counts(counts, E)
