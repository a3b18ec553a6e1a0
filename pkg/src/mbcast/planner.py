"""Closed-form dimensioning of the client buffer and MPD timing fields.

The chain is: segment loss probability -> longest burst of consecutive
losses whose probability still reaches the disruption threshold -> buffer
that hides the unicast recovery of such a burst.
"""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass, field
from typing import Iterable, Optional, Sequence

from .fec import (
    DEFAULT_SYMBOL_SIZE,
    ErasureChannel,
    RaptorCode,
    code_for_segment,
    segment_loss_probability,
)

DEFAULT_THRESHOLD = 1e-5

# Tolerance used when rounding seconds up to whole segments.
_SEG_EPS = 1e-9


class UnsatisfiablePlan(ValueError):
    """No finite burst length meets the threshold."""


class SustainabilityWarning(UserWarning):
    """The coded segment takes longer to broadcast than it lasts."""


def _non_negative(name: str, value: float) -> None:
    if value < 0:
        raise ValueError(f"{name} must be >= 0, got {value!r}")


def _positive(name: str, value: float) -> None:
    if not value > 0:
        raise ValueError(f"{name} must be > 0, got {value!r}")


@dataclass(frozen=True)
class DelayBudget:
    """Fixed pipeline delays ahead of the broadcast, in seconds."""

    d_se: float = 0.0  # segment generation
    d_fe: float = 0.0  # FEC encoding
    d_fd: float = 0.0  # FEC decoding
    d_pvs: float = 0.0  # safety margin against delay variation

    def __post_init__(self) -> None:
        for name in ("d_se", "d_fe", "d_fd", "d_pvs"):
            _non_negative(name, getattr(self, name))


@dataclass(frozen=True)
class ServiceConfig:
    t_seg: float
    r_embms: float
    media_bitrate: float
    code_rate: float = 1.0
    symbol_size: int = DEFAULT_SYMBOL_SIZE

    def __post_init__(self) -> None:
        _positive("t_seg", self.t_seg)
        _positive("r_embms", self.r_embms)
        _positive("media_bitrate", self.media_bitrate)
        if not (0.0 < self.code_rate <= 1.0):
            raise ValueError(f"code_rate must lie in (0, 1], got {self.code_rate!r}")
        if self.symbol_size < 1:
            raise ValueError(f"symbol_size must be >= 1, got {self.symbol_size!r}")
        if self.d_vs > self.t_seg:
            warnings.warn(
                f"coded segment needs {self.d_vs:.6g} s on a {self.t_seg:.6g} s "
                "segment cadence; the live service cannot keep up",
                SustainabilityWarning,
                stacklevel=3,
            )

    @property
    def segment_bits(self) -> float:
        return self.media_bitrate * self.t_seg

    @property
    def segment_bytes(self) -> int:
        return max(1, math.ceil(self.segment_bits / 8))

    @property
    def d_vs(self) -> float:
        """Broadcast time of one segment including its repair symbols."""
        return self.segment_bits / self.code_rate / self.r_embms

    def code(self) -> RaptorCode:
        return code_for_segment(self.segment_bytes, self.symbol_size, self.code_rate)


@dataclass(frozen=True)
class UnicastLink:
    """HTTP recovery path; give either ``d_t`` or ``unicast_rate``."""

    rtt: float = 0.0
    d_t: Optional[float] = None
    unicast_rate: Optional[float] = None

    def __post_init__(self) -> None:
        _non_negative("rtt", self.rtt)
        if (self.d_t is None) == (self.unicast_rate is None):
            raise ValueError("exactly one of d_t / unicast_rate must be given")
        if self.d_t is not None:
            _non_negative("d_t", self.d_t)
        else:
            _positive("unicast_rate", self.unicast_rate)

    def transmission_delay(self, segment_bits: Optional[float] = None) -> float:
        if self.d_t is not None:
            return self.d_t
        if segment_bits is None:
            raise ValueError("segment_bits is required when the link is rate-based")
        return segment_bits / self.unicast_rate

    def resolved(self, segment_bits: Optional[float] = None) -> "UnicastLink":
        """Same link with ``d_t`` fixed."""
        return UnicastLink(rtt=self.rtt, d_t=self.transmission_delay(segment_bits))


@dataclass(frozen=True)
class BufferPlan:
    m: int
    d_b_seconds: float
    d_b_segments: int
    t_seg: float
    p_loss: Optional[float] = field(default=None, compare=False)

    @property
    def buffer_seconds(self) -> float:
        """Buffer rounded up to whole segments, in seconds."""
        return self.d_b_segments * self.t_seg


def max_protected_burst(p_loss: float, threshold: float = DEFAULT_THRESHOLD) -> int:
    """Smallest ``m >= 1`` with ``p_loss ** m < threshold``."""
    if not (0.0 < threshold < 1.0):
        raise ValueError(f"threshold must lie in (0, 1), got {threshold!r}")
    if p_loss < 0.0:
        raise ValueError(f"p_loss must be >= 0, got {p_loss!r}")
    if p_loss >= 1.0:
        raise UnsatisfiablePlan(f"p_loss={p_loss!r}: no finite burst length meets the threshold")
    if p_loss == 0.0 or p_loss < threshold:
        return 1
    m = max(1, math.floor(math.log(threshold) / math.log(p_loss)))
    # The log ratio is only a starting point; settle the boundary exactly.
    while m > 1 and p_loss ** (m - 1) < threshold:
        m -= 1
    while not p_loss**m < threshold:
        m += 1
    return m


def min_buffer(
    m: int,
    link: UnicastLink,
    t_seg: float,
    segment_bits: Optional[float] = None,
) -> float:
    """Seconds of buffer that hide unicast recovery of ``m`` consecutive losses."""
    if m < 1:
        raise ValueError(f"m must be >= 1, got {m!r}")
    _positive("t_seg", t_seg)
    d_t = link.transmission_delay(segment_bits)
    if d_t > t_seg:
        return link.rtt + m * d_t - (m - 1) * t_seg
    return link.rtt + d_t


def segments_for(seconds: float, t_seg: float) -> int:
    return max(0, math.ceil(seconds / t_seg - _SEG_EPS))


def plan_for_burst(
    m: int,
    link: UnicastLink,
    t_seg: float,
    segment_bits: Optional[float] = None,
    p_loss: Optional[float] = None,
) -> BufferPlan:
    d_b = min_buffer(m, link, t_seg, segment_bits)
    return BufferPlan(m=m, d_b_seconds=d_b, d_b_segments=segments_for(d_b, t_seg), t_seg=t_seg, p_loss=p_loss)


def plan_buffer_for_loss(
    p_loss: float,
    threshold: float,
    link: UnicastLink,
    t_seg: float,
    segment_bits: Optional[float] = None,
) -> BufferPlan:
    m = max_protected_burst(p_loss, threshold)
    return plan_for_burst(m, link, t_seg, segment_bits, p_loss=p_loss)


def plan_buffer(
    code: RaptorCode,
    channel: ErasureChannel,
    threshold: float,
    link: UnicastLink,
    t_seg: float,
) -> BufferPlan:
    """Minimum buffer for a code/channel pair.

    A rate-based link derives its per-segment delay from the source block
    size ``k * symbol_size``.
    """
    p_loss = segment_loss_probability(code, channel)
    segment_bits = code.k * code.symbol_size * 8
    return plan_buffer_for_loss(p_loss, threshold, link, t_seg, segment_bits)


def availability_start_time(budget: DelayBudget, svc: ServiceConfig) -> float:
    """Earliest instant a broadcast segment is guaranteed to be in the cache."""
    return budget.d_se + budget.d_fe + svc.d_vs + budget.d_fd + budget.d_pvs


def segment_availability(ast: float, index: int, t_seg: float) -> float:
    """Availability instant of segment ``index`` under live template timing."""
    return ast + index * t_seg


def playback_deadline(ast: float, d_b: float) -> float:
    _non_negative("ast", ast)
    _non_negative("d_b", d_b)
    return ast + d_b


def service_data_rate(r_embms: float, code_rate: float) -> float:
    _positive("r_embms", r_embms)
    if not (0.0 < code_rate <= 1.0):
        raise ValueError(f"code_rate must lie in (0, 1], got {code_rate!r}")
    return r_embms * code_rate


@dataclass(frozen=True)
class SweepRow:
    t_seg: float
    code_rate: float
    p_loss: float
    sdr: float
    code: RaptorCode


def sweep_code_rate(
    svc: ServiceConfig,
    channel: ErasureChannel,
    code_rates: Sequence[float],
    t_segs: Sequence[float],
) -> list[SweepRow]:
    """Loss probability and service rate over a (segment duration, code rate) grid.

    Rows come out sorted by ``t_seg`` then ``code_rate``.  The segment size
    for each duration is ``media_bitrate * t_seg``.
    """
    if not code_rates or not t_segs:
        raise ValueError("code_rates and t_segs must be non-empty")
    rows = []
    for t_seg in sorted(t_segs):
        _positive("t_seg", t_seg)
        seg_bytes = max(1, math.ceil(svc.media_bitrate * t_seg / 8))
        for rate in sorted(code_rates):
            code = code_for_segment(seg_bytes, svc.symbol_size, rate)
            rows.append(
                SweepRow(
                    t_seg=t_seg,
                    code_rate=rate,
                    p_loss=segment_loss_probability(code, channel),
                    sdr=service_data_rate(svc.r_embms, rate),
                    code=code,
                )
            )
    return rows


def max_code_rate(rows: Iterable[SweepRow], recovery_limit: float) -> dict[float, Optional[float]]:
    """Highest code rate per duration whose loss stays within ``recovery_limit``.

    Durations with no qualifying rate map to ``None``.
    """
    best: dict[float, Optional[float]] = {}
    for row in rows:
        best.setdefault(row.t_seg, None)
        if row.p_loss <= recovery_limit:
            current = best[row.t_seg]
            if current is None or row.code_rate > current:
                best[row.t_seg] = row.code_rate
    return best
