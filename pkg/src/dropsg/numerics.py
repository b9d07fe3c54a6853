"""Small numerical helpers: compensated summation and fixed Gauss-Legendre nodes."""

import numpy as np


class KahanSum:
    """Compensated running sum.

    Keeps a carry term so that adding many near-cancelling values does not
    lose the small residual to round-off.
    """

    __slots__ = ("total", "_carry")

    def __init__(self, initial=0.0):
        self.total = float(initial)
        self._carry = 0.0

    def add(self, value):
        y = value - self._carry
        t = self.total + y
        self._carry = (t - self.total) - y
        self.total = t
        return self


def kahan_sum(values):
    acc = KahanSum()
    for v in values:
        acc.add(v)
    return acc.total


# 5-point Gauss-Legendre rule on [-1, 1]; exact for polynomials up to degree 9.
# For a harmonic arc with omega*dt < 0.01 the quadrature error is far below
# double-precision resolution, so per-segment integrals are effectively exact.
GL5_NODES, GL5_WEIGHTS = np.polynomial.legendre.leggauss(5)
