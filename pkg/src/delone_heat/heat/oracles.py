"""Closed-form heat kernels used as independent references.

Both are evaluated from their series with plain floating point arithmetic
so they share no code path with the solvers they check.
"""

from __future__ import annotations

import math


def bessel_i(k: int, z: float, rtol: float = 1e-17) -> float:
    """Modified Bessel function ``I_k(z) = Σ_j (z/2)^(2j+k) / (j! (j+k)!)`` for ``z > 0``."""
    k = abs(int(k))
    if z <= 0:
        return 1.0 if (k == 0 and z == 0) else 0.0
    log_half = math.log(z / 2.0)
    terms: list[float] = []
    j = 0
    while True:
        term = math.exp((2 * j + k) * log_half - math.lgamma(j + 1) - math.lgamma(j + k + 1))
        terms.append(term)
        # terms decrease once j exceeds z/2
        if j > z and term < rtol * math.fsum(terms):
            return math.fsum(terms)
        j += 1


def z2_kernel(t: float, m: int, n: int) -> float:
    """Heat kernel of the unit-weight Laplacian on ``Z^2`` between the origin and ``(m, n)``."""
    return math.exp(-4.0 * t) * bessel_i(m, 2.0 * t) * bessel_i(n, 2.0 * t)


def interval_neumann_kernel(x: float, y: float, t: float, length: float = 1.0, rtol: float = 1e-16) -> float:
    """Heat kernel of ``-d²/dx²`` on ``[0, length]`` with Neumann ends."""
    total = 1.0 / length
    k = 1
    while True:
        decay = math.exp(-((k * math.pi / length) ** 2) * t)
        total += 2.0 / length * decay * math.cos(k * math.pi * x / length) * math.cos(k * math.pi * y / length)
        if decay < rtol:
            return total
        k += 1
