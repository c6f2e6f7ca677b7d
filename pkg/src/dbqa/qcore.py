"""Dense linear algebra and the statevector engine.

Convention used everywhere in the package: qubit 0 is the least significant
bit of the computational-basis index, so ``|b_{L-1} ... b_1 b_0>`` has index
``sum_q b_q 2**q``.
"""

from __future__ import annotations

from collections import OrderedDict
from dataclasses import dataclass
from functools import reduce
from typing import Iterable, Sequence

import numpy as np
import scipy.sparse as sps

from .circuit import CircuitIR, Gate
from .errors import CapacityError, ContractError, DimensionError

MAX_DENSE_QUBITS = 14
HERMITIAN_TOL = 1e-12
UNITARY_TOL = 1e-10

PAULI = {
    "I": np.eye(2, dtype=complex),
    "X": np.array([[0, 1], [1, 0]], dtype=complex),
    "Y": np.array([[0, -1j], [1j, 0]], dtype=complex),
    "Z": np.array([[1, 0], [0, -1]], dtype=complex),
}


def _guard(n_qubits: int) -> None:
    if n_qubits > MAX_DENSE_QUBITS:
        raise CapacityError(f"{n_qubits} qubits exceeds dense limit of {MAX_DENSE_QUBITS}")


@dataclass(frozen=True)
class Statevector:
    n_qubits: int
    amplitudes: np.ndarray

    def __post_init__(self):
        amp = np.asarray(self.amplitudes, dtype=complex)
        if amp.shape != (2**self.n_qubits,):
            raise DimensionError(f"expected {2**self.n_qubits} amplitudes, got {amp.shape}")
        norm = np.vdot(amp, amp).real
        if abs(norm - 1.0) > 1e-12:
            raise ContractError(f"statevector not normalized (|psi|^2 = {norm})")
        object.__setattr__(self, "amplitudes", amp)

    @classmethod
    def basis(cls, n_qubits: int, index: int = 0) -> "Statevector":
        amp = np.zeros(2**n_qubits, dtype=complex)
        amp[index] = 1.0
        return cls(n_qubits, amp)

    @classmethod
    def from_bits(cls, bits: Sequence[int]) -> "Statevector":
        """``bits[q]`` is the value of qubit q."""
        return cls.basis(len(bits), sum(int(b) << q for q, b in enumerate(bits)))

    def overlap(self, other: "Statevector") -> complex:
        return complex(np.vdot(self.amplitudes, other.amplitudes))


@dataclass(frozen=True)
class DenseOperator:
    n_qubits: int
    matrix: np.ndarray
    hermitian: bool = False

    def __post_init__(self):
        m = np.asarray(self.matrix, dtype=complex)
        dim = 2**self.n_qubits
        if m.shape != (dim, dim):
            raise DimensionError(f"expected {dim}x{dim} matrix, got {m.shape}")
        if self.hermitian and np.max(np.abs(m - m.conj().T), initial=0.0) > HERMITIAN_TOL:
            raise ContractError("matrix flagged Hermitian is not Hermitian")
        object.__setattr__(self, "matrix", m)

    @property
    def dim(self) -> int:
        return 2**self.n_qubits

    @classmethod
    def hermitian_from(cls, matrix: np.ndarray) -> "DenseOperator":
        m = np.asarray(matrix, dtype=complex)
        n = int(round(np.log2(m.shape[0])))
        return cls(n, 0.5 * (m + m.conj().T), hermitian=True)

    @classmethod
    def from_matrix(cls, matrix: np.ndarray, hermitian: bool = False) -> "DenseOperator":
        m = np.asarray(matrix, dtype=complex)
        n = int(round(np.log2(m.shape[0])))
        return cls(n, m, hermitian=hermitian)


class PauliSum:
    """Real-weighted sum of Pauli strings.

    Strings are written with character ``j`` acting on qubit ``j``
    (``"XZI"`` puts X on qubit 0 and Z on qubit 1). Repeated strings are
    merged on construction and exact zeros dropped.
    """

    def __init__(self, n_qubits: int, terms: Iterable[tuple[float, str]] = ()):
        self.n_qubits = int(n_qubits)
        merged: "OrderedDict[str, float]" = OrderedDict()
        for coeff, label in terms:
            label = label.upper()
            if len(label) != self.n_qubits or set(label) - set("IXYZ"):
                raise ContractError(f"bad Pauli string {label!r} for {self.n_qubits} qubits")
            merged[label] = merged.get(label, 0.0) + float(coeff)
        self.terms: list[tuple[float, str]] = [(c, s) for s, c in merged.items() if c != 0.0]

    @classmethod
    def from_sparse(cls, n_qubits: int, terms: Iterable[tuple[float, dict[int, str]]]) -> "PauliSum":
        """Build from ``(coeff, {qubit: 'X'|'Y'|'Z'})`` entries."""
        out = []
        for coeff, ops in terms:
            label = ["I"] * n_qubits
            for q, p in ops.items():
                label[q] = p
            out.append((coeff, "".join(label)))
        return cls(n_qubits, out)

    def __len__(self) -> int:
        return len(self.terms)

    def __iter__(self):
        return iter(self.terms)

    def __add__(self, other: "PauliSum") -> "PauliSum":
        if other.n_qubits != self.n_qubits:
            raise DimensionError("qubit counts differ")
        return PauliSum(self.n_qubits, self.terms + other.terms)

    def __mul__(self, scalar: float) -> "PauliSum":
        return PauliSum(self.n_qubits, [(scalar * c, s) for c, s in self.terms])

    __rmul__ = __mul__

    def __eq__(self, other) -> bool:
        if not isinstance(other, PauliSum) or other.n_qubits != self.n_qubits:
            return False
        return dict((s, c) for c, s in self.terms) == dict((s, c) for c, s in other.terms)

    def isclose(self, other: "PauliSum", atol: float = 1e-12) -> bool:
        a = {s: c for c, s in self.terms}
        b = {s: c for c, s in other.terms}
        return all(abs(a.get(k, 0.0) - b.get(k, 0.0)) <= atol for k in set(a) | set(b))

    def coefficient(self, label: str) -> float:
        return next((c for c, s in self.terms if s == label), 0.0)

    @staticmethod
    def support(label: str) -> tuple[int, ...]:
        return tuple(q for q, ch in enumerate(label) if ch != "I")

    def __repr__(self) -> str:
        body = " + ".join(f"{c:g}*{s}" for c, s in self.terms[:6])
        more = "" if len(self.terms) <= 6 else f" + ... ({len(self.terms)} terms)"
        return f"PauliSum({self.n_qubits}, {body}{more})"


def _string_matrix(label: str) -> np.ndarray:
    # kron runs from the most significant qubit down to qubit 0
    return reduce(np.kron, [PAULI[ch] for ch in reversed(label)])


def pauli_to_dense(p: PauliSum) -> DenseOperator:
    _guard(p.n_qubits)
    dim = 2**p.n_qubits
    mat = np.zeros((dim, dim), dtype=complex)
    for coeff, label in p.terms:
        mat += coeff * _pauli_string_sparse(label).toarray()
    return DenseOperator(p.n_qubits, mat, hermitian=True)


def _pauli_string_sparse(label: str) -> sps.csr_matrix:
    """Pauli string as a permutation-with-phase sparse matrix."""
    n = len(label)
    idx = np.arange(2**n)
    flip = 0
    phase = np.ones(2**n, dtype=complex)
    for q, ch in enumerate(label):
        bit = (idx >> q) & 1
        if ch in "XY":
            flip |= 1 << q
        if ch == "Z":
            phase *= 1 - 2 * bit
        elif ch == "Y":
            # Y|0> = i|1>, Y|1> = -i|0>: column index carries the input bit
            phase *= np.where(bit == 0, 1j, -1j)
    rows = idx ^ flip
    return sps.csr_matrix((phase, (rows, idx)), shape=(2**n, 2**n))


def pauli_to_sparse(p: PauliSum) -> sps.csr_matrix:
    dim = 2**p.n_qubits
    out = sps.csr_matrix((dim, dim), dtype=complex)
    for coeff, label in p.terms:
        out = out + coeff * _pauli_string_sparse(label)
    return out.tocsr()


def is_hermitian(m: np.ndarray, tol: float = HERMITIAN_TOL) -> bool:
    return bool(np.max(np.abs(m - m.conj().T), initial=0.0) < tol)


def is_unitary(m: np.ndarray, tol: float = UNITARY_TOL) -> bool:
    return bool(np.max(np.abs(m.conj().T @ m - np.eye(m.shape[0])), initial=0.0) < tol)


class EigenExp:
    """Cached eigendecomposition of a Hermitian matrix for repeated exp(-i t h)."""

    def __init__(self, h: np.ndarray):
        self.values, self.vectors = np.linalg.eigh(h)

    def unitary(self, t: float) -> np.ndarray:
        return (self.vectors * np.exp(-1j * t * self.values)) @ self.vectors.conj().T

    def apply(self, t: float, v: np.ndarray) -> np.ndarray:
        coeffs = np.exp(-1j * t * self.values)
        if v.ndim == 2:
            coeffs = coeffs[:, None]
        return self.vectors @ (coeffs * (self.vectors.conj().T @ v))


def expm_hermitian(h: DenseOperator | np.ndarray, t: float) -> DenseOperator | np.ndarray:
    """``exp(-i t h)`` for Hermitian ``h`` via its eigendecomposition."""
    raw = h.matrix if isinstance(h, DenseOperator) else np.asarray(h, dtype=complex)
    if isinstance(h, DenseOperator):
        if not h.hermitian and not is_hermitian(raw):
            raise ContractError("expm_hermitian needs a Hermitian generator")
    elif not is_hermitian(raw, tol=1e-10):
        raise ContractError("expm_hermitian needs a Hermitian generator")
    u = EigenExp(raw).unitary(t)
    if isinstance(h, DenseOperator):
        return DenseOperator(h.n_qubits, u)
    return u


def conjugate(a: DenseOperator, u: DenseOperator) -> DenseOperator:
    """``U^dagger A U``."""
    if a.matrix.shape != u.matrix.shape:
        raise DimensionError("operator and unitary dimensions differ")
    if not is_unitary(u.matrix):
        raise ContractError("conjugating operator is not unitary")
    m = u.matrix.conj().T @ a.matrix @ u.matrix
    if a.hermitian:
        m = 0.5 * (m + m.conj().T)
    return DenseOperator(a.n_qubits, m, hermitian=a.hermitian)


def expectation(s: Statevector, h: DenseOperator) -> float:
    if s.amplitudes.shape[0] != h.matrix.shape[0]:
        raise DimensionError("state and operator dimensions differ")
    val = np.vdot(s.amplitudes, h.matrix @ s.amplitudes)
    if abs(val.imag) > 1e-10:
        raise ContractError(f"expectation has imaginary part {val.imag:g}; operator not Hermitian?")
    return float(val.real)


def hs_inner(a: np.ndarray, b: np.ndarray) -> complex:
    """Hilbert-Schmidt product tr(A^dagger B)."""
    return complex(np.vdot(a.ravel(), b.ravel()))


def hs_norm(a: DenseOperator | np.ndarray) -> float:
    m = a.matrix if isinstance(a, DenseOperator) else a
    return float(np.linalg.norm(m))


def apply_matrix(amplitudes: np.ndarray, mat: np.ndarray, qubits: Sequence[int], n_qubits: int) -> np.ndarray:
    """Apply a ``2^k x 2^k`` matrix to the listed qubits (first = most significant).

    ``amplitudes`` may carry a trailing batch axis.
    """
    k = len(qubits)
    batch = amplitudes.shape[1:]
    psi = amplitudes.reshape((2,) * n_qubits + batch)
    axes = [n_qubits - 1 - q for q in qubits]
    op = mat.reshape((2,) * (2 * k))
    out = np.tensordot(op, psi, axes=(list(range(k, 2 * k)), axes))
    # tensordot puts the gate's output axes first; move them back in place
    out = np.moveaxis(out, list(range(k)), axes)
    return out.reshape(amplitudes.shape)


def apply_gate(s: Statevector, gate: Gate) -> Statevector:
    for q in gate.qubits:
        if not 0 <= q < s.n_qubits:
            raise ContractError(f"qubit {q} out of range for {s.n_qubits} qubits")
    amp = apply_matrix(s.amplitudes, gate.matrix(), gate.qubits, s.n_qubits)
    amp = amp / np.sqrt(np.vdot(amp, amp).real)
    return Statevector(s.n_qubits, amp)


def run_circuit(c: CircuitIR, amplitudes: np.ndarray, include_phase: bool = True) -> np.ndarray:
    """Apply every gate of ``c`` to a raw amplitude array (vector or column batch)."""
    out = np.array(amplitudes, dtype=complex)
    for g in c.gates:
        out = apply_matrix(out, g.matrix(), g.qubits, c.n_qubits)
    if include_phase and c.phase:
        out = out * np.exp(1j * c.phase)
    return out


def circuit_dense(c: CircuitIR) -> np.ndarray:
    _guard(c.n_qubits)
    return run_circuit(c, np.eye(2**c.n_qubits, dtype=complex))


def haar_unitary(dim: int, rng: np.random.Generator) -> np.ndarray:
    z = (rng.standard_normal((dim, dim)) + 1j * rng.standard_normal((dim, dim))) / np.sqrt(2)
    q, r = np.linalg.qr(z)
    d = np.diag(r)
    return q * (d / np.abs(d))


def random_hermitian(dim: int, rng: np.random.Generator) -> np.ndarray:
    z = rng.standard_normal((dim, dim)) + 1j * rng.standard_normal((dim, dim))
    return 0.5 * (z + z.conj().T)


def random_state(n_qubits: int, rng: np.random.Generator) -> Statevector:
    z = rng.standard_normal(2**n_qubits) + 1j * rng.standard_normal(2**n_qubits)
    return Statevector(n_qubits, z / np.linalg.norm(z))


def hamming_sector(n_qubits: int, weight: int) -> np.ndarray:
    """Sorted computational-basis indices with the given Hamming weight."""
    idx = np.arange(2**n_qubits)
    pop = np.zeros_like(idx)
    for q in range(n_qubits):
        pop += (idx >> q) & 1
    return idx[pop == weight]


def conserves_weight(h: sps.spmatrix | np.ndarray, n_qubits: int) -> bool:
    """True when ``h`` commutes with total Z, i.e. it is block diagonal in Hamming weight."""
    idx = np.arange(2**n_qubits)
    pop = np.zeros_like(idx)
    for q in range(n_qubits):
        pop += (idx >> q) & 1
    coo = sps.coo_matrix(h)
    mask = np.abs(coo.data) > 1e-14
    return bool(np.all(pop[coo.row[mask]] == pop[coo.col[mask]]))
