"""Runtime cross-checks of the analytic model against simulation and brute force."""

from __future__ import annotations

import math
from dataclasses import dataclass
from itertools import product
from typing import Callable

import numpy as np

from .fec import ErasureChannel, RaptorCode, decoder_failure_given_n, segment_loss_probability
from .planner import DelayBudget, ServiceConfig, UnicastLink, min_buffer, plan_buffer_for_loss, plan_for_burst
from .simulator import Scenario, UserSpec, broadcast_arrivals, playback, unicast_recovery


@dataclass(frozen=True)
class CheckResult:
    name: str
    passed: bool
    measured: str
    expected: str
    tolerance: str

    def line(self) -> str:
        status = "PASS" if self.passed else "FAIL"
        return f"{status} {self.name}: measured={self.measured} expected={self.expected} tol={self.tolerance}"


def enumerate_loss(code: RaptorCode, per: float) -> float:
    """Segment loss by summing over every one of the 2**(k+r) erasure patterns."""
    total = 0.0
    for pattern in product((False, True), repeat=code.n_symbols):
        received = sum(pattern)
        weight = (1.0 - per) ** received * per ** (code.n_symbols - received)
        total += weight * decoder_failure_given_n(code, received)
    return total


def check_eq3(trials: int) -> CheckResult:
    worst = 0.0
    for n in range(1, 13):
        for k in range(1, n + 1):
            code = RaptorCode(k=k, r=n - k)
            for per in (0.1, 0.3, 0.5):
                worst = max(worst, abs(segment_loss_probability(code, ErasureChannel(per)) - enumerate_loss(code, per)))
    return CheckResult("eq3", worst <= 1e-10, f"{worst:.3g}", "0 (max abs diff vs enumeration)", "1e-10")


def check_eq4(trials: int) -> CheckResult:
    code = RaptorCode(k=10, r=4)
    got = (decoder_failure_given_n(code, 9), decoder_failure_given_n(code, 10), decoder_failure_given_n(code, 12))
    want = (1.0, 0.85, 0.85 * 0.567**2)
    ok = all(abs(g - w) <= 1e-9 for g, w in zip(got, want))
    return CheckResult("eq4", ok, ",".join(f"{g:.6g}" for g in got), ",".join(f"{w:.6g}" for w in want), "1e-9")


def _per_scenario(per: float, n_segments: int, seed: int) -> Scenario:
    # 10 KiB segments at rate 10/14 -> k=10, r=4.
    svc = ServiceConfig(t_seg=1.0, r_embms=1e6, media_bitrate=81920, code_rate=10 / 14)
    return Scenario(
        svc=svc,
        budget=DelayBudget(),
        link=UnicastLink(rtt=0.0, d_t=0.5),
        users=(UserSpec(user_id=1, per=per),),
        n_segments=n_segments,
        buffer_seconds=1.0,
        master_seed=seed,
    )


def check_eq5(trials: int) -> CheckResult:
    """Simulated loss frequency vs analytic value, 3 binomial sigmas, over 20 seeds."""
    runs, hits = 20, 0
    scenario = _per_scenario(0.1, trials, 0)
    user = scenario.users[0]
    p = 1.0 - (1.0 - 0.1) * (1.0 - segment_loss_probability(scenario.code, ErasureChannel(0.1)))
    sigma = math.sqrt(p * (1.0 - p) / trials)
    freqs = []
    for seed in range(runs):
        rng = np.random.default_rng(seed)
        freq = float(np.isnan(broadcast_arrivals(scenario, user, rng)).mean())
        freqs.append(freq)
        hits += abs(freq - p) <= 3 * sigma
    # at most one excursion beyond 3 sigma in 20 runs
    return CheckResult("eq5", hits >= runs - 1, f"{hits}/{runs} within, mean={np.mean(freqs):.6g}", f"{p:.6g}", f"3*sigma={3 * sigma:.3g}")


def check_eq7(trials: int) -> CheckResult:
    t_seg, d_t = 2.0, 3.0
    worst = 0.0
    for rtt in (0.0, 0.1):
        recs = unicast_recovery([5, 6, 7], ast=1.0, t_seg=t_seg, link=UnicastLink(rtt=rtt, d_t=d_t))
        last = recs[-1]
        worst = max(worst, abs((last.trec - last.treq) - (rtt + 3 * d_t - 2 * t_seg)))
    return CheckResult("eq7", worst <= 1e-9, f"{worst:.3g}", "0 (abs error of trec-treq)", "1e-9")


def burst_soundness_cases():
    t_seg = 2.0
    for m in range(1, 9):
        for factor in (0.5, 1.25, 1.5, 1.75, 2.0):
            for rtt in (0.0, 0.1):
                yield m, factor, rtt, t_seg


def run_forced_burst(m_lost: int, factor: float, rtt: float, t_seg: float, buffer_seconds: float, ast: float = 1.0):
    n = m_lost + 12
    arrivals = ast + np.arange(n) * t_seg
    arrivals[5 : 5 + m_lost] = np.nan
    return playback(arrivals, ast, t_seg, UnicastLink(rtt=rtt, d_t=factor * t_seg), buffer_seconds)


def check_burst(trials: int) -> CheckResult:
    failures = []
    total = 0
    for m, factor, rtt, t_seg in burst_soundness_cases():
        link = UnicastLink(rtt=rtt, d_t=factor * t_seg)
        d_b = min_buffer(m, link, t_seg)
        total += 1
        ok = not run_forced_burst(m, factor, rtt, t_seg, d_b).stall_log
        if factor > 1.0:
            ok = ok and bool(run_forced_burst(m + 1, factor, rtt, t_seg, d_b).stall_log)
        if not ok:
            failures.append((m, factor, rtt))
    return CheckResult("burst", not failures, f"{total - len(failures)}/{total} cases hold", f"{total}/{total}", "exact")


def check_fig4(trials: int) -> CheckResult:
    got = []
    for factor in (1.25, 1.5, 1.75, 2.0):
        plan = plan_buffer_for_loss(0.0387, 1e-5, UnicastLink(rtt=0.0, d_t=factor * 2.0), 2.0)
        got.append((plan.m, plan.d_b_segments))
    want = [(4, 2), (4, 3), (4, 4), (4, 5)]
    return CheckResult("fig4", got == want, str(got), str(want), "exact")


def check_fig6(trials: int) -> CheckResult:
    got = [plan_for_burst(5, UnicastLink(rtt=0.0, d_t=f * 2.0), 2.0).buffer_seconds for f in (1.25, 2.0)]
    want = [6.0, 12.0]
    return CheckResult("fig6", got == want, str(got), str(want), "exact")


CHECKS: dict[str, Callable[[int], CheckResult]] = {
    "eq3": check_eq3,
    "eq4": check_eq4,
    "eq5": check_eq5,
    "eq7": check_eq7,
    "burst": check_burst,
    "fig4": check_fig4,
    "fig6": check_fig6,
}


def run_checks(names=None, trials: int = 100_000) -> list[CheckResult]:
    names = list(CHECKS) if not names else list(names)
    unknown = [n for n in names if n not in CHECKS]
    if unknown:
        raise KeyError(f"unknown check(s): {', '.join(unknown)}")
    return [CHECKS[n](trials) for n in names]
