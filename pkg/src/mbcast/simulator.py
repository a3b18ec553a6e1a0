"""Discrete-event simulation of broadcast delivery with unicast repair.

Per user, segment ``i`` becomes available at ``AST + i * t_seg``.  If the
broadcast copy survives (FDT received and decode successful) it sits in the
local cache from that instant.  Otherwise the DASH client requests it over a
persistent HTTP connection at exactly that instant; requests are served one
at a time, so a burst of losses queues behind itself.  Playback starts at
``AST + buffer`` and consumes one segment every ``t_seg``.

Users are independent state machines with their own seeded random stream,
so they can run on worker threads without changing the results.
"""

from __future__ import annotations

import hashlib
import heapq
import math
import os
from collections import deque
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from enum import Enum, IntEnum
from typing import Optional, Sequence, Union

import numpy as np

from .fec import ErasureChannel, RaptorCode, segment_loss_probability
from .flute import adjudicate_decode_many, survival_mask
from .metrics import StallEvent, UserReport, user_sort_key, worst_percentile_loss
from .planner import (
    DEFAULT_THRESHOLD,
    DelayBudget,
    ServiceConfig,
    UnicastLink,
    availability_start_time,
    plan_buffer_for_loss,
)

# Stall shorter than this is float noise around an exact deadline.
TIME_EPS = 1e-9

# Segments adjudicated per vectorized batch in PER mode.
_BATCH_SYMBOLS = 1 << 20


class ScenarioError(ValueError):
    """Invalid scenario; ``field`` names the offending key."""

    def __init__(self, field: str, message: str):
        super().__init__(f"{field}: {message}")
        self.field = field


class StallPolicy(str, Enum):
    RESUME = "resume"  # play as soon as the missing segment arrives
    REBUFFER = "rebuffer"  # wait until a full buffer of segments is cached again


class EventKind(IntEnum):
    # Value order is the tie-break order at equal timestamps.
    BROADCAST = 0
    RECOVERED = 1
    REQUEST = 2
    NEED = 3


@dataclass(frozen=True)
class UserSpec:
    user_id: Union[int, str]
    per: Optional[float] = None
    p_loss: Optional[float] = None

    def __post_init__(self) -> None:
        where = f"users[{self.user_id}]"
        if (self.per is None) == (self.p_loss is None):
            raise ScenarioError(where, "give exactly one of per / p_loss")
        value = self.per if self.per is not None else self.p_loss
        if not (0.0 <= value <= 1.0):
            raise ScenarioError(where, f"loss probability {value!r} outside [0, 1]")


@dataclass(frozen=True)
class ForcedBurst:
    user_id: Union[int, str]
    start_index: int
    length: int

    def __post_init__(self) -> None:
        if self.start_index < 0 or self.length < 0:
            raise ScenarioError("forced_bursts", "start_index and length must be >= 0")


@dataclass(frozen=True)
class Scenario:
    svc: ServiceConfig
    budget: DelayBudget
    link: UnicastLink
    users: tuple[UserSpec, ...]
    n_segments: int
    threshold: float = DEFAULT_THRESHOLD
    buffer_seconds: Union[float, str] = "auto"
    master_seed: int = 0
    forced_bursts: tuple[ForcedBurst, ...] = ()
    stall_policy: StallPolicy = StallPolicy.RESUME
    fdt_loss: bool = True
    design_percentile: float = 10.0

    def __post_init__(self) -> None:
        if self.n_segments < 1:
            raise ScenarioError("n_segments", "must be >= 1")
        if not self.users:
            raise ScenarioError("users", "at least one user is required")
        ids = [u.user_id for u in self.users]
        if len(set(ids)) != len(ids):
            raise ScenarioError("users", "user_id values must be unique")
        if not (0.0 < self.threshold < 1.0):
            raise ScenarioError("threshold", "must lie in (0, 1)")
        if isinstance(self.buffer_seconds, str):
            if self.buffer_seconds != "auto":
                raise ScenarioError("buffer_seconds", "must be a number or 'auto'")
        elif self.buffer_seconds < 0:
            raise ScenarioError("buffer_seconds", "must be >= 0")
        known = set(ids)
        for burst in self.forced_bursts:
            if burst.user_id not in known:
                raise ScenarioError("forced_bursts", f"unknown user_id {burst.user_id!r}")
        if not (0 < self.design_percentile < 100):
            raise ScenarioError("design_percentile", "must lie in (0, 100)")

    @property
    def ast(self) -> float:
        return availability_start_time(self.budget, self.svc)

    @property
    def code(self) -> RaptorCode:
        return self.svc.code()

    @property
    def d_t(self) -> float:
        return self.link.transmission_delay(self.svc.segment_bits)


@dataclass(frozen=True)
class Recovery:
    index: int
    treq: float
    trec: float


@dataclass
class ClientState:
    """Mutable per-user client: cache, request FIFO, playback and stall log."""

    cache: dict[int, float] = field(default_factory=dict)
    pending_requests: deque = field(default_factory=deque)
    play_position: float = 0.0
    playback_started_at: float = math.nan
    stall_log: list[StallEvent] = field(default_factory=list)
    recoveries: list[Recovery] = field(default_factory=list)

    @property
    def total_stall_seconds(self) -> float:
        return sum(e.duration for e in self.stall_log)


@dataclass(frozen=True)
class UserTrace:
    report: UserReport
    arrivals: np.ndarray
    client: ClientState
    buffer_seconds: float


def user_rng(master_seed: int, user_id) -> np.random.Generator:
    """Random stream for one user, stable across runs and worker layouts."""
    digest = hashlib.sha256(repr(user_sort_key(user_id)).encode()).digest()
    key = int.from_bytes(digest[:8], "big")
    return np.random.default_rng(np.random.SeedSequence(entropy=int(master_seed), spawn_key=(key,)))


def analytic_user_loss(scenario: Scenario, user: UserSpec) -> float:
    """Model-level loss probability of one broadcast segment for ``user``."""
    if user.p_loss is not None:
        return user.p_loss
    channel = ErasureChannel(user.per)
    p_fail = segment_loss_probability(scenario.code, channel)
    if not scenario.fdt_loss:
        return p_fail
    return 1.0 - (1.0 - user.per) * (1.0 - p_fail)


def broadcast_arrivals(
    scenario: Scenario,
    user: UserSpec,
    rng: Optional[np.random.Generator] = None,
) -> np.ndarray:
    """Cache-entry time of every segment's broadcast copy, NaN where lost."""
    if rng is None:
        rng = user_rng(scenario.master_seed, user.user_id)
    n = scenario.n_segments
    if user.p_loss is not None:
        lost = rng.random(n) < user.p_loss
    else:
        lost = _per_mode_losses(scenario, ErasureChannel(user.per), rng)
    for burst in scenario.forced_bursts:
        if burst.user_id == user.user_id:
            lost[burst.start_index : burst.start_index + burst.length] = True
    times = scenario.ast + np.arange(n) * scenario.svc.t_seg
    return np.where(lost, np.nan, times)


def _per_mode_losses(scenario: Scenario, channel: ErasureChannel, rng: np.random.Generator) -> np.ndarray:
    code = scenario.code
    n = scenario.n_segments
    per_segment = code.n_symbols + (1 if scenario.fdt_loss else 0)
    batch = max(1, _BATCH_SYMBOLS // per_segment)
    lost = np.empty(n, dtype=bool)
    for lo in range(0, n, batch):
        hi = min(n, lo + batch)
        alive = survival_mask((hi - lo) * per_segment, channel, rng).reshape(hi - lo, per_segment)
        if scenario.fdt_loss:
            fdt_ok, symbols = alive[:, 0], alive[:, 1:]
        else:
            fdt_ok, symbols = np.ones(hi - lo, dtype=bool), alive
        decoded = adjudicate_decode_many(code, symbols.sum(axis=1), rng)
        lost[lo:hi] = ~(fdt_ok & decoded)
    return lost


def unicast_recovery(
    lost_indices: Sequence[int],
    ast: float,
    t_seg: float,
    link: UnicastLink,
) -> list[Recovery]:
    """Request and completion times for segments fetched over HTTP.

    Each request leaves at its segment's availability instant and the
    persistent connection serves one segment at a time in request order.
    """
    d_t = link.transmission_delay()
    free_at = -math.inf
    out = []
    for i in sorted(lost_indices):
        treq = ast + i * t_seg
        trec = max(treq + link.rtt, free_at) + d_t
        free_at = trec
        out.append(Recovery(index=i, treq=treq, trec=trec))
    return out


def playback(
    arrivals: np.ndarray,
    ast: float,
    t_seg: float,
    link: UnicastLink,
    buffer_seconds: float,
    policy: StallPolicy = StallPolicy.RESUME,
) -> ClientState:
    """Run one client's event loop over broadcast arrivals and HTTP repairs."""
    if buffer_seconds < 0:
        raise ValueError("buffer_seconds must be >= 0")
    n = len(arrivals)
    d_t = link.transmission_delay()
    client = ClientState()
    queue: list[tuple[float, int, int]] = []
    for i, arrival in enumerate(arrivals):
        if math.isnan(arrival):
            heapq.heappush(queue, (ast + i * t_seg, i, EventKind.REQUEST))
        else:
            heapq.heappush(queue, (float(arrival), i, EventKind.BROADCAST))
    start = ast + buffer_seconds
    client.playback_started_at = start
    heapq.heappush(queue, (start, 0, EventKind.NEED))

    refill = max(1, math.ceil(buffer_seconds / t_seg - TIME_EPS))
    free_at = -math.inf
    waiting: Optional[int] = None
    stall_start = 0.0

    def ready(i: int) -> bool:
        if policy is StallPolicy.RESUME:
            return i in client.cache
        return all(j in client.cache for j in range(i, min(n, i + refill)))

    def play(i: int, now: float) -> None:
        client.play_position = i * t_seg
        if i + 1 < n:
            heapq.heappush(queue, (now + t_seg, i + 1, EventKind.NEED))
        else:
            client.play_position = n * t_seg

    while queue:
        now, i, kind = heapq.heappop(queue)
        if kind is EventKind.REQUEST:
            client.pending_requests.append((i, now))
            trec = max(now + link.rtt, free_at) + d_t
            free_at = trec
            client.recoveries.append(Recovery(index=i, treq=now, trec=trec))
            heapq.heappush(queue, (trec, i, EventKind.RECOVERED))
            continue
        if kind is EventKind.NEED:
            if i in client.cache:
                play(i, now)
            else:
                waiting, stall_start = i, now
            continue
        if kind is EventKind.RECOVERED:
            head, _treq = client.pending_requests.popleft()
            assert head == i, "recoveries complete in request order"
        client.cache[i] = now
        if waiting is not None and ready(waiting):
            duration = now - stall_start
            if duration > TIME_EPS:
                client.stall_log.append(StallEvent(stall_start, duration, waiting))
            resume, waiting = waiting, None
            play(resume, now)
    return client


def resolve_buffer(scenario: Scenario) -> float:
    """Buffer in seconds; ``auto`` plans for the design-percentile user.

    The planned buffer is rounded up to whole segments.
    """
    if not isinstance(scenario.buffer_seconds, str):
        return float(scenario.buffer_seconds)
    losses = [analytic_user_loss(scenario, u) for u in scenario.users]
    design = worst_percentile_loss(losses, scenario.design_percentile)
    plan = plan_buffer_for_loss(
        design,
        scenario.threshold,
        scenario.link,
        scenario.svc.t_seg,
        segment_bits=scenario.svc.segment_bits,
    )
    return plan.buffer_seconds


def simulate_user(scenario: Scenario, user: UserSpec, buffer_seconds: Optional[float] = None) -> UserTrace:
    if buffer_seconds is None:
        buffer_seconds = resolve_buffer(scenario)
    ast = scenario.ast
    arrivals = broadcast_arrivals(scenario, user)
    link = scenario.link.resolved(scenario.svc.segment_bits)
    client = playback(arrivals, ast, scenario.svc.t_seg, link, buffer_seconds, scenario.stall_policy)
    total = client.total_stall_seconds
    report = UserReport(
        user_id=user.user_id,
        stall_count=len(client.stall_log),
        total_stall_seconds=total,
        startup_seconds=client.playback_started_at,
        end_to_end_latency_seconds=client.playback_started_at + total,
        empirical_loss_rate=float(np.isnan(arrivals).mean()),
        stalls=tuple(client.stall_log),
    )
    return UserTrace(report=report, arrivals=arrivals, client=client, buffer_seconds=buffer_seconds)


def default_workers() -> int:
    env = os.environ.get("MBCAST_THREADS")
    if env:
        try:
            return max(1, int(env))
        except ValueError:
            raise ScenarioError("MBCAST_THREADS", f"not an integer: {env!r}") from None
    return min(8, os.cpu_count() or 1)


def run_scenario(scenario: Scenario, workers: Optional[int] = None) -> list[UserReport]:
    """Simulate every user; reports come back sorted by ``user_id``."""
    buffer_seconds = resolve_buffer(scenario)
    workers = default_workers() if workers is None else max(1, workers)

    def one(user: UserSpec) -> UserReport:
        return simulate_user(scenario, user, buffer_seconds).report

    if workers == 1:
        reports = [one(u) for u in scenario.users]
    else:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            reports = list(pool.map(one, scenario.users))
    return sorted(reports, key=lambda r: user_sort_key(r.user_id))
