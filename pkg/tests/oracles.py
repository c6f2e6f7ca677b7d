"""Reference constructions that share no code with the package.

Operators are assembled from explicit Kronecker products with qubit 0 as
the rightmost factor (least significant bit).
"""

from functools import reduce

import numpy as np

I2 = np.eye(2, dtype=complex)
X = np.array([[0, 1], [1, 0]], dtype=complex)
Y = np.array([[0, -1j], [1j, 0]], dtype=complex)
Z = np.diag([1.0, -1.0]).astype(complex)


def site_op(L, ops):
    return reduce(np.kron, [ops.get(q, I2) for q in reversed(range(L))])


def xxz(L, delta):
    return sum(
        site_op(L, {i: X, (i + 1) % L: X})
        + site_op(L, {i: Y, (i + 1) % L: Y})
        + delta * site_op(L, {i: Z, (i + 1) % L: Z})
        for i in range(L)
    )


def j1j2(L, j1, j2):
    nnn = sum(site_op(L, {i: P, (i + 2) % L: P}) for i in range(L) for P in (X, Y, Z))
    return j1 * xxz(L, 1.0) + j2 * nnn


def tfim(L, B, C):
    return sum(site_op(L, {i: X, (i + 1) % L: X}) for i in range(L)) + sum(
        B[i] * site_op(L, {i: Z}) + C[i] * site_op(L, {i: X}) for i in range(L)
    )


def ising_energy(alpha, beta, bits):
    z = [1 - 2 * b for b in bits]
    L = len(bits)
    return sum(alpha[a] * z[a] + beta[a] * z[a] * z[(a + 1) % L] for a in range(L))


def power_ground_energy(h, iters=100000):
    """Lowest eigenvalue by power iteration on a positive shift of ``-h``."""
    c = np.abs(h).sum(axis=1).max()
    m = c * np.eye(len(h)) - h
    v = np.random.default_rng(1).normal(size=len(h)).astype(complex)
    v /= np.linalg.norm(v)
    for _ in range(iters):
        w = m @ v
        w /= np.linalg.norm(w)
        if np.linalg.norm(w - v) < 1e-13:
            break
        v = w
    return float(np.vdot(v, h @ v).real)


def loglog_slope(xs, ys):
    return float(np.polyfit(np.log(xs), np.log(ys), 1)[0])
