"""Independent reference computations used only by the tests."""

from fractions import Fraction
from itertools import product
from math import comb


def failure(k, n):
    return 1.0 if n < k else 0.85 * 0.567 ** (n - k)


def brute_force_loss(k, r, per):
    """Enumerate every erasure pattern of k + r packets."""
    total = 0.0
    for pattern in product((0, 1), repeat=k + r):
        p = 1.0
        for got in pattern:
            p *= (1 - per) if got else per
        total += p * failure(k, sum(pattern))
    return total


def exact_pmf(n_total, n, per):
    """Binomial pmf in exact rational arithmetic."""
    per = Fraction(per)
    return float(comb(n_total, n) * (1 - per) ** n * per ** (n_total - n))
