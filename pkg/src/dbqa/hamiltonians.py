"""Model Hamiltonians and diagonal generators as Pauli sums.

Lattice sites are 0-based here; the ring closes with site ``L-1`` coupled
to site ``0``.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass, field
from typing import Literal, Sequence

import numpy as np

from .errors import ContractError, UnsupportedTermError
from .qcore import PauliSum


def _bond(L: int, i: int, j: int, p: str, q: str | None = None) -> dict[int, str]:
    q = p if q is None else q
    return {i % L: p, j % L: q}


def _ring_pairs(L: int, distance: int, boundary: str) -> list[tuple[int, int]]:
    if boundary == "periodic":
        return [(i, (i + distance) % L) for i in range(L)]
    return [(i, i + distance) for i in range(L - distance)]


@dataclass(frozen=True)
class XxzSpec:
    L: int
    delta: float
    boundary: Literal["periodic", "open"] = "periodic"

    def __post_init__(self):
        if self.L < 2:
            raise ContractError("XXZ chain needs L >= 2")
        if self.boundary not in ("periodic", "open"):
            raise ContractError(f"unknown boundary {self.boundary!r}")


@dataclass(frozen=True)
class J1J2Spec:
    """Nearest plus next-nearest neighbour Heisenberg ring.

    ``delta`` is the anisotropy inside the nearest-neighbour part and defaults
    to the isotropic point.
    """

    L: int
    j1: float = 1.0
    j2: float = 0.2
    delta: float = 1.0

    def __post_init__(self):
        if self.L < 4:
            raise ContractError("J1-J2 ring needs L >= 4 for distinct next-nearest bonds")


@dataclass(frozen=True)
class IsingDiagonalSpec:
    """Classical Ising generator sum_a alpha_a Z_a + beta_a Z_a Z_{a+1} on a ring."""

    alpha: np.ndarray
    beta: np.ndarray = field(default=None)

    def __post_init__(self):
        a = np.asarray(self.alpha, dtype=float).copy()
        b = np.zeros_like(a) if self.beta is None else np.asarray(self.beta, dtype=float).copy()
        if a.ndim != 1 or b.shape != a.shape:
            raise ContractError(f"alpha and beta must be vectors of equal length, got {a.shape}, {b.shape}")
        if not (np.all(np.isfinite(a)) and np.all(np.isfinite(b))):
            raise ContractError("Ising parameters must be finite")
        a.setflags(write=False)
        b.setflags(write=False)
        object.__setattr__(self, "alpha", a)
        object.__setattr__(self, "beta", b)

    @property
    def L(self) -> int:
        return len(self.alpha)

    @classmethod
    def uniform(cls, L: int, value: float = 1.0) -> "IsingDiagonalSpec":
        return cls(np.full(L, value), np.zeros(L))

    @classmethod
    def from_vector(cls, x: Sequence[float]) -> "IsingDiagonalSpec":
        x = np.asarray(x, dtype=float)
        L = len(x) // 2
        return cls(x[:L], x[L:])

    def as_vector(self) -> np.ndarray:
        return np.concatenate([self.alpha, self.beta])

    def scaled(self, factor: float) -> "IsingDiagonalSpec":
        return IsingDiagonalSpec(factor * self.alpha, factor * self.beta)

    def diagonal(self, basis: np.ndarray | None = None) -> np.ndarray:
        """Diagonal entries on the given computational-basis indices (all by default)."""
        z, zz = ising_features(self.L, basis)
        return z @ self.alpha + zz @ self.beta


def ising_features(L: int, basis: np.ndarray | None = None) -> tuple[np.ndarray, np.ndarray]:
    """Spin values z_a(x) = +-1 and ring products z_a z_{a+1} for each basis index."""
    idx = np.arange(2**L) if basis is None else np.asarray(basis)
    z = 1.0 - 2.0 * ((idx[:, None] >> np.arange(L)[None, :]) & 1)
    zz = z * np.roll(z, -1, axis=1)
    return z, zz


@dataclass(frozen=True)
class TfimSpec:
    L: int
    B: np.ndarray
    C: np.ndarray | None = None
    boundary: Literal["periodic", "open"] = "periodic"

    def __post_init__(self):
        B = np.asarray(self.B, dtype=float)
        C = np.zeros(self.L) if self.C is None else np.asarray(self.C, dtype=float)
        if B.shape != (self.L,) or C.shape != (self.L,):
            raise ContractError("TFIM field vectors must have length L")
        object.__setattr__(self, "B", B)
        object.__setattr__(self, "C", C)


def build_xxz(spec: XxzSpec) -> PauliSum:
    L = spec.L
    if L == 2 and spec.boundary == "periodic":
        warnings.warn("periodic XXZ with L=2 double-counts the single bond", stacklevel=2)
    terms = []
    for i, j in _ring_pairs(L, 1, spec.boundary):
        terms += [
            (1.0, _bond(L, i, j, "X")),
            (1.0, _bond(L, i, j, "Y")),
            (spec.delta, _bond(L, i, j, "Z")),
        ]
    return PauliSum.from_sparse(L, terms)


def build_j1j2(spec: J1J2Spec) -> PauliSum:
    L = spec.L
    nn = spec.j1 * build_xxz(XxzSpec(L, spec.delta))
    terms = []
    for i, j in _ring_pairs(L, 2, "periodic"):
        terms += [(spec.j2, _bond(L, i, j, p)) for p in "XYZ"]
    return nn + PauliSum.from_sparse(L, terms)


def build_ising_diagonal(spec: IsingDiagonalSpec) -> PauliSum:
    L = spec.L
    terms = [(spec.alpha[a], {a: "Z"}) for a in range(L)]
    if L >= 2:
        terms += [(spec.beta[a], _bond(L, a, a + 1, "Z")) for a in range(L)]
    elif np.any(spec.beta):
        raise ContractError("ring coupling undefined for a single site")
    return PauliSum.from_sparse(L, terms)


def build_tfim(spec: TfimSpec) -> PauliSum:
    """sum_a X_a X_{a+1} + B_a Z_a + C_a X_a."""
    L = spec.L
    terms = []
    for i, j in _ring_pairs(L, 1, spec.boundary):
        terms.append((1.0, _bond(L, i, j, "X")))
    for a in range(L):
        terms += [(spec.B[a], {a: "Z"}), (spec.C[a], {a: "X"})]
    return PauliSum.from_sparse(L, terms)


def build_xxz_with_field(spec: XxzSpec, B: Sequence[float]) -> PauliSum:
    """Isotropic Heisenberg bonds plus a longitudinal field sum_a B_a Z_a.

    The local groups are X X + Y Y + Z Z + B_a Z_a, so the anisotropy of
    ``spec`` is ignored.
    """
    B = np.asarray(B, dtype=float)
    if B.shape != (spec.L,):
        raise ContractError("field vector must have length L")
    base = build_xxz(XxzSpec(spec.L, 1.0, spec.boundary))
    return base + PauliSum.from_sparse(spec.L, [(B[a], {a: "Z"}) for a in range(spec.L)])


def group_bonds(p: PauliSum) -> dict[tuple[int, int], PauliSum]:
    """Split a 2-local Pauli sum into bond groups keyed by ``(a, b)``.

    Two-qubit terms define the bonds (in first-seen order, oriented as the
    ring ``(a, a+1 mod L)`` when possible). Single-qubit terms on site ``a``
    join the first bond that starts at ``a``, or else any bond touching it.
    """
    L = p.n_qubits
    bonds: dict[tuple[int, int], list[tuple[float, str]]] = {}
    key_of: dict[frozenset, tuple[int, int]] = {}
    singles = []
    for coeff, label in p.terms:
        sup = PauliSum.support(label)
        if len(sup) > 2:
            raise UnsupportedTermError(f"term {label} acts on {len(sup)} qubits")
        if len(sup) == 2:
            a, b = sup
            if a == 0 and b == L - 1 and L > 2:
                a, b = L - 1, 0  # wrap-around ring bond
            fs = frozenset(sup)
            key = key_of.setdefault(fs, (a, b))
            bonds.setdefault(key, []).append((coeff, label))
        elif len(sup) == 1:
            singles.append((coeff, label, sup[0]))
    for coeff, label, q in singles:
        target = next((k for k in bonds if k[0] == q), None) or next((k for k in bonds if q in k), None)
        if target is None:
            target = (q, (q + 1) % L)
            bonds[target] = []
        bonds[target].append((coeff, label))
    return {k: PauliSum(L, v) for k, v in bonds.items()}
