"""Minimal FLUTE-style framing for segment delivery.

Each segment is one transport object (TOI) and one FEC source block.  It is
announced by its own FDT instance that carries the FEC Object Transmission
Information (content length and symbol size) out of band.  Payloads are
synthetic: only their lengths matter, since decoding is adjudicated by the
analytic failure model rather than by real Raptor arithmetic.

Wire layout of a symbol datagram (big endian)::

    magic 0x464C (2) | version 1 (1) | toi u32 | esi u32 | payload_len u16 | payload

An FDT instance is a UTF-8 ``key=value`` block, one per datagram.
"""

from __future__ import annotations

import socket
import struct
from dataclasses import dataclass
from typing import Iterable, Optional, Sequence, Union

import numpy as np

from .fec import ErasureChannel, RaptorCode, decoder_failure_curve, decoder_failure_given_n

MAGIC = 0x464C
VERSION = 1
HEADER = struct.Struct(">HBIIH")
MAX_PAYLOAD = 0xFFFF

FDT_KEYS = ("toi", "content-location", "content-length", "k", "symbol-size", "instance-id")

SeedLike = Union[int, np.random.Generator, None]


class FramingError(ValueError):
    """Malformed or inconsistent FDT instance or symbol datagram."""


def _rng(seed: SeedLike) -> np.random.Generator:
    if isinstance(seed, np.random.Generator):
        return seed
    return np.random.default_rng(seed)


@dataclass(frozen=True)
class FdtInstance:
    toi: int
    content_location: str
    content_length: int
    k: int
    symbol_size: int
    instance_id: int

    def __post_init__(self) -> None:
        if self.toi < 1:
            raise FramingError(f"toi must be positive, got {self.toi}")
        if self.content_length < 1:
            raise FramingError(f"content_length must be >= 1, got {self.content_length}")
        if self.symbol_size < 1:
            raise FramingError(f"symbol_size must be >= 1, got {self.symbol_size}")
        if self.instance_id < 0:
            raise FramingError(f"instance_id must be >= 0, got {self.instance_id}")
        expected = -(-self.content_length // self.symbol_size)
        if self.k != expected:
            raise FramingError(
                f"k={self.k} does not match content_length={self.content_length} "
                f"at symbol_size={self.symbol_size} (expected {expected})"
            )
        if any(c in self.content_location for c in "\r\n"):
            raise FramingError("content_location must be a single line")

    def serialize(self) -> bytes:
        values = (
            self.toi,
            self.content_location,
            self.content_length,
            self.k,
            self.symbol_size,
            self.instance_id,
        )
        return "".join(f"{key}={val}\n" for key, val in zip(FDT_KEYS, values)).encode("utf-8")

    @classmethod
    def parse(cls, data: bytes) -> "FdtInstance":
        fields: dict[str, str] = {}
        try:
            text = data.decode("utf-8")
        except UnicodeDecodeError as exc:
            raise FramingError("FDT instance is not UTF-8") from exc
        for line in text.split("\n"):
            if not line:
                continue
            key, sep, value = line.partition("=")
            if not sep:
                raise FramingError(f"malformed FDT line {line!r}")
            fields[key] = value
        missing = [k for k in FDT_KEYS if k not in fields]
        if missing:
            raise FramingError(f"FDT instance missing {', '.join(missing)}")
        try:
            return cls(
                toi=int(fields["toi"]),
                content_location=fields["content-location"],
                content_length=int(fields["content-length"]),
                k=int(fields["k"]),
                symbol_size=int(fields["symbol-size"]),
                instance_id=int(fields["instance-id"]),
            )
        except ValueError as exc:
            if isinstance(exc, FramingError):
                raise
            raise FramingError(str(exc)) from exc


def build_fdt(
    toi: int,
    content_location: str,
    content_length: int,
    code: RaptorCode,
    instance_id: Optional[int] = None,
) -> FdtInstance:
    """FDT instance announcing one segment; ``instance_id`` defaults to ``toi``."""
    return FdtInstance(
        toi=toi,
        content_location=content_location,
        content_length=content_length,
        k=code.k,
        symbol_size=code.symbol_size,
        instance_id=toi if instance_id is None else instance_id,
    )


@dataclass(frozen=True)
class SymbolPacket:
    toi: int
    esi: int
    payload_len: int

    def __post_init__(self) -> None:
        if not (0 <= self.toi <= 0xFFFFFFFF and 0 <= self.esi <= 0xFFFFFFFF):
            raise FramingError("toi/esi must fit in 32 bits")
        if not (0 <= self.payload_len <= MAX_PAYLOAD):
            raise FramingError(f"payload_len {self.payload_len} does not fit in 16 bits")

    def is_source(self, k: int) -> bool:
        return self.esi < k

    def role(self, k: int) -> str:
        return "source" if self.esi < k else "repair"

    def serialize(self) -> bytes:
        return HEADER.pack(MAGIC, VERSION, self.toi, self.esi, self.payload_len) + bytes(self.payload_len)

    @classmethod
    def parse(cls, data: bytes) -> "SymbolPacket":
        if len(data) < HEADER.size:
            raise FramingError(f"datagram of {len(data)} bytes is shorter than the header")
        magic, version, toi, esi, payload_len = HEADER.unpack_from(data)
        if magic != MAGIC:
            raise FramingError(f"bad magic 0x{magic:04X}")
        if version != VERSION:
            raise FramingError(f"unsupported version {version}")
        if len(data) - HEADER.size != payload_len:
            raise FramingError(
                f"payload_len {payload_len} but {len(data) - HEADER.size} payload bytes present"
            )
        return cls(toi=toi, esi=esi, payload_len=payload_len)


@dataclass(frozen=True)
class SourceBlockPlan:
    toi: int
    code: RaptorCode
    content_length: Optional[int] = None

    def __post_init__(self) -> None:
        length = self.length
        if -(-length // self.code.symbol_size) != self.code.k:
            raise FramingError(f"content_length {length} does not fill k={self.code.k} symbols")

    @property
    def length(self) -> int:
        if self.content_length is None:
            return self.code.k * self.code.symbol_size
        return self.content_length

    @property
    def packet_count(self) -> int:
        return self.code.n_symbols


def packetize(plan: SourceBlockPlan) -> list[SymbolPacket]:
    """All ``k + r`` symbol packets of a block, in ESI order.

    Only the last source symbol may be short; repair symbols are full size.
    """
    k, size = plan.code.k, plan.code.symbol_size
    tail = plan.length - (k - 1) * size
    packets = []
    for esi in range(plan.packet_count):
        payload = tail if esi == k - 1 else size
        packets.append(SymbolPacket(toi=plan.toi, esi=esi, payload_len=payload))
    return packets


def survival_mask(count: int, channel: ErasureChannel, rng: SeedLike) -> np.ndarray:
    """Boolean mask, True where an independent packet survives."""
    return _rng(rng).random(count) >= channel.per


def apply_channel(packets: Sequence, channel: ErasureChannel, rng_seed: SeedLike) -> list:
    """Drop each packet independently with probability ``channel.per``."""
    keep = survival_mask(len(packets), channel, rng_seed)
    return [p for p, kept in zip(packets, keep) if kept]


def adjudicate_decode(code: RaptorCode, n_received: int, rng_seed: SeedLike) -> bool:
    """Bernoulli draw of decode success from the analytic failure model."""
    p_fail = decoder_failure_given_n(code, n_received)
    return bool(_rng(rng_seed).random() >= p_fail)


def adjudicate_decode_many(code: RaptorCode, n_received: np.ndarray, rng: np.random.Generator) -> np.ndarray:
    """Vectorized form of :func:`adjudicate_decode` for a batch of blocks."""
    p_fail = decoder_failure_curve(code)[np.asarray(n_received)]
    return rng.random(p_fail.shape) >= p_fail


class LoopbackTransport:
    """UDP transport over the loopback interface for FDT and symbol datagrams.

    One instance owns one receiving socket and one sending socket.
    """

    def __init__(self, host: str = "127.0.0.1", port: int = 0, timeout: float = 1.0):
        self.rx = socket.socket(socket.AF_INET, socket.SOCK_DGRAM)
        self.rx.bind((host, port))
        self.rx.settimeout(timeout)
        self.tx = socket.socket(socket.AF_INET, socket.SOCK_DGRAM)
        self.address = self.rx.getsockname()

    def __enter__(self) -> "LoopbackTransport":
        return self

    def __exit__(self, *exc) -> None:
        self.close()

    def close(self) -> None:
        self.rx.close()
        self.tx.close()

    def send_fdt(self, fdt: FdtInstance) -> None:
        self.tx.sendto(fdt.serialize(), self.address)

    def send_packets(self, packets: Iterable[SymbolPacket]) -> int:
        sent = 0
        for packet in packets:
            self.tx.sendto(packet.serialize(), self.address)
            sent += 1
        return sent

    def receive(self, max_datagrams: int) -> tuple[list[FdtInstance], list[SymbolPacket]]:
        """Read up to ``max_datagrams`` datagrams, stopping at the socket timeout."""
        fdts, packets = [], []
        for _ in range(max_datagrams):
            try:
                data, _addr = self.rx.recvfrom(HEADER.size + MAX_PAYLOAD)
            except socket.timeout:
                break
            if len(data) >= 2 and int.from_bytes(data[:2], "big") == MAGIC:
                packets.append(SymbolPacket.parse(data))
            else:
                fdts.append(FdtInstance.parse(data))
        return fdts, packets
