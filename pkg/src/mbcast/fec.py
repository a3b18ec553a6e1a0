"""Analytic model of AL-FEC protected segment delivery over an erasure channel.

One encoding symbol travels in one packet, so packet loss and symbol loss
are the same event.  Decoder behaviour follows the usual empirical Raptor
model: certain failure below ``k`` received symbols, and a failure
probability of ``0.85 * 0.567**(n - k)`` from ``k`` upwards.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

DEFAULT_SYMBOL_SIZE = 1024

# Empirical Raptor decoder failure model.
FAILURE_AT_K = 0.85
FAILURE_DECAY = 0.567

# Slack for floating-point noise in k / code_rate (e.g. 9 / 0.9).
_RATE_EPS = 1e-12


class DomainError(ValueError):
    """An argument lies outside the domain of an FEC model function."""


@dataclass(frozen=True)
class RaptorCode:
    """Source block layout: ``k`` source and ``r`` repair symbols."""

    k: int
    r: int = 0
    symbol_size: int = DEFAULT_SYMBOL_SIZE

    def __post_init__(self) -> None:
        if int(self.k) != self.k or self.k < 1:
            raise DomainError(f"k must be a positive integer, got {self.k!r}")
        if int(self.r) != self.r or self.r < 0:
            raise DomainError(f"r must be a non-negative integer, got {self.r!r}")
        if int(self.symbol_size) != self.symbol_size or self.symbol_size < 1:
            raise DomainError(f"symbol_size must be >= 1, got {self.symbol_size!r}")

    @property
    def n_symbols(self) -> int:
        return self.k + self.r

    @property
    def code_rate(self) -> float:
        return self.k / (self.k + self.r)


@dataclass(frozen=True)
class ErasureChannel:
    """i.i.d. packet erasure channel with loss probability ``per``."""

    per: float

    def __post_init__(self) -> None:
        if not (0.0 <= self.per <= 1.0):
            raise DomainError(f"per must lie in [0, 1], got {self.per!r}")


def _check_count(code: RaptorCode, n: int) -> None:
    if n < 0 or n > code.n_symbols:
        raise DomainError(f"n={n} outside [0, {code.n_symbols}] for {code}")


def decoder_failure_given_n(code: RaptorCode, n: int) -> float:
    """Probability that decoding fails after receiving ``n`` symbols."""
    _check_count(code, n)
    if n < code.k:
        return 1.0
    return FAILURE_AT_K * FAILURE_DECAY ** (n - code.k)


def decoder_failure_curve(code: RaptorCode) -> np.ndarray:
    """Failure probability for every ``n`` in ``0..k+r`` as an array."""
    n = np.arange(code.n_symbols + 1)
    excess = np.maximum(n - code.k, 0)
    return np.where(n < code.k, 1.0, FAILURE_AT_K * FAILURE_DECAY ** excess)


_LOG_2PI = math.log(2.0 * math.pi)


def _stirling_error(n: np.ndarray) -> np.ndarray:
    """``log(n!) - log(sqrt(2 pi n) (n/e)**n)`` for integer ``n >= 1``."""
    n = np.asarray(n, dtype=float)
    out = np.empty_like(n)
    small = n <= 15
    ns = n[small]
    out[small] = [math.lgamma(v + 1.0) for v in ns] - (ns + 0.5) * np.log(ns) + ns - 0.5 * _LOG_2PI
    nb = n[~small]
    nn = nb * nb
    out[~small] = (1 / 12 - (1 / 360 - (1 / 1260 - (1 / 1680 - 1 / 1188 / nn) / nn) / nn) / nn) / nb
    return out


def _deviance(x: np.ndarray, mean: float) -> np.ndarray:
    """``x log(x / mean) + mean - x``, summed as a series when ``x`` is near ``mean``."""
    x = np.asarray(x, dtype=float)
    out = np.empty_like(x)
    near = np.abs(x - mean) < 0.1 * (x + mean)
    xf = x[~near]
    out[~near] = xf * np.log(xf / mean) + mean - xf
    xn = x[near]
    v = (xn - mean) / (xn + mean)
    acc = (xn - mean) * v
    term = 2.0 * xn * v
    v2 = v * v
    for j in range(1, 40):
        term = term * v2
        acc = acc + term / (2 * j + 1)
    out[near] = acc
    return out


def _binomial_pmf(x: np.ndarray, size: int, p_success: float) -> np.ndarray:
    # Saddle-point form: the huge log-factorials cancel analytically, so
    # relative accuracy stays near machine precision for size ~ 1e5.
    x = np.asarray(x, dtype=float)
    q = 1.0 - p_success
    out = np.zeros_like(x)
    if q == 0.0 or p_success == 0.0:
        # 1 - per rounded to an endpoint: a point mass
        out[x == (size if q == 0.0 else 0)] = 1.0
        return out
    lo, hi = x == 0, x == size
    out[lo] = math.exp(size * math.log1p(-p_success))
    out[hi] = math.exp(size * math.log1p(-q))
    mid = ~(lo | hi)
    xm = x[mid]
    if xm.size:
        log_core = (
            _stirling_error(np.array([size]))[0]
            - _stirling_error(xm)
            - _stirling_error(size - xm)
            - _deviance(xm, size * p_success)
            - _deviance(size - xm, size * q)
        )
        log_scale = _LOG_2PI + np.log(xm) + np.log1p(-xm / size)
        out[mid] = np.exp(log_core - 0.5 * log_scale)
    return out


def symbols_received_distribution(code: RaptorCode, channel: ErasureChannel) -> np.ndarray:
    """Binomial pmf of the received-symbol count, indexed by ``n``."""
    total = code.n_symbols
    pmf = np.zeros(total + 1)
    if channel.per == 0.0:
        pmf[total] = 1.0
    elif channel.per == 1.0:
        pmf[0] = 1.0
    else:
        pmf = _binomial_pmf(np.arange(total + 1), total, 1.0 - channel.per)
    return pmf


def symbols_received_pmf(code: RaptorCode, channel: ErasureChannel, n: int) -> float:
    """Probability of receiving exactly ``n`` of the ``k + r`` symbols."""
    _check_count(code, n)
    total = code.n_symbols
    if channel.per == 0.0:
        return 1.0 if n == total else 0.0
    if channel.per == 1.0:
        return 1.0 if n == 0 else 0.0
    return float(_binomial_pmf(np.array([n]), total, 1.0 - channel.per)[0])


def segment_loss_probability(code: RaptorCode, channel: ErasureChannel) -> float:
    """Probability that a segment cannot be recovered from the broadcast."""
    pmf = symbols_received_distribution(code, channel)
    p = float(np.dot(pmf, decoder_failure_curve(code)))
    return min(max(p, 0.0), 1.0)


def code_for_segment(
    segment_bytes: int,
    symbol_size: int = DEFAULT_SYMBOL_SIZE,
    code_rate: float = 1.0,
) -> RaptorCode:
    """Smallest code carrying ``segment_bytes`` at no more than ``code_rate``.

    ``r`` is rounded up, so the realized rate never exceeds the request.
    """
    if not (0.0 < code_rate <= 1.0):
        raise DomainError(f"code_rate must lie in (0, 1], got {code_rate!r}")
    if segment_bytes < 1:
        raise DomainError(f"segment_bytes must be >= 1, got {segment_bytes!r}")
    if symbol_size < 1:
        raise DomainError(f"symbol_size must be >= 1, got {symbol_size!r}")
    k = -(-int(segment_bytes) // int(symbol_size))
    total = math.ceil(k / code_rate * (1.0 - _RATE_EPS))
    if k / total > code_rate + _RATE_EPS:
        total += 1
    return RaptorCode(k=k, r=total - k, symbol_size=int(symbol_size))
