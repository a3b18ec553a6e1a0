"""Population QoE statistics over per-user stall reports."""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from enum import Enum
from typing import Iterable, Sequence, Union

SEVERE_STALLS = 3
DEFAULT_PERCENTILES = (10, 50, 90)
HISTOGRAM_KEYS = ("0", "1", "2", "3plus")


class Severity(str, Enum):
    ACCEPTABLE = "acceptable"
    DEGRADED = "degraded"
    SEVERE = "severe"


@dataclass(frozen=True)
class StallEvent:
    start: float
    duration: float
    first_missing_segment: int


@dataclass(frozen=True)
class UserReport:
    user_id: Union[int, str]
    stall_count: int
    total_stall_seconds: float
    startup_seconds: float
    end_to_end_latency_seconds: float
    empirical_loss_rate: float
    stalls: tuple[StallEvent, ...] = field(default=(), compare=False, repr=False)

    def __post_init__(self) -> None:
        if self.stall_count < 0:
            raise ValueError("stall_count must be >= 0")


@dataclass(frozen=True)
class SummaryReport:
    n_users: int
    stall_count_histogram: dict[str, int]
    severe_fraction: float
    percentile_loss: dict[int, float]
    percentile_stalls: dict[int, int]


def user_sort_key(user_id) -> tuple:
    """Numeric ids in numeric order, then string ids lexicographically."""
    if isinstance(user_id, (int, float)) and not isinstance(user_id, bool):
        return (0, user_id, "")
    return (1, 0, str(user_id))


def classify_severity(report: UserReport) -> Severity:
    if report.stall_count >= SEVERE_STALLS:
        return Severity.SEVERE
    if report.stall_count > 0:
        return Severity.DEGRADED
    return Severity.ACCEPTABLE


def _nearest_rank_worst(values: Sequence[float], percentile: float):
    if not values:
        raise ValueError("empty population")
    if not (0 < percentile < 100):
        raise ValueError(f"percentile must lie in (0, 100), got {percentile!r}")
    ordered = sorted(values, reverse=True)
    rank = max(1, math.ceil(percentile / 100.0 * len(ordered) - 1e-12))
    return ordered[rank - 1]


def worst_percentile_loss(reports: Iterable, percentile: float = 10) -> float:
    """Loss rate met or exceeded by ``percentile`` percent of users.

    Accepts reports or bare loss rates.  Uses the nearest-rank method on
    the list sorted worst first, so ``percentile=10`` over 10 users is the
    single worst user.
    """
    rates = [r.empirical_loss_rate if isinstance(r, UserReport) else float(r) for r in reports]
    return _nearest_rank_worst(rates, percentile)


def worst_percentile_stalls(reports: Iterable[UserReport], percentile: float = 10) -> int:
    return _nearest_rank_worst([r.stall_count for r in reports], percentile)


def stall_histogram(reports: Iterable[UserReport]) -> dict[str, int]:
    hist = dict.fromkeys(HISTOGRAM_KEYS, 0)
    for r in reports:
        hist[HISTOGRAM_KEYS[min(r.stall_count, SEVERE_STALLS)]] += 1
    return hist


def summarize(reports: Sequence[UserReport], percentiles: Sequence[int] = DEFAULT_PERCENTILES) -> SummaryReport:
    if not reports:
        raise ValueError("cannot summarize an empty population")
    reports = sorted(reports, key=lambda r: user_sort_key(r.user_id))
    hist = stall_histogram(reports)
    return SummaryReport(
        n_users=len(reports),
        stall_count_histogram=hist,
        severe_fraction=hist["3plus"] / len(reports),
        percentile_loss={p: worst_percentile_loss(reports, p) for p in percentiles},
        percentile_stalls={p: worst_percentile_stalls(reports, p) for p in percentiles},
    )
