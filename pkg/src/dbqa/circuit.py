"""Gate-level intermediate representation.

A :class:`CircuitIR` is an ordered gate list in time order (first gate is
applied first). Two-qubit gate matrices are written in the local basis
``|b(q_first) b(q_second)>``, i.e. the first listed qubit is the most
significant bit of the 4x4 matrix. Globally, qubit 0 is the least
significant bit of a computational-basis index.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace
from typing import Iterable, Sequence

import numpy as np

from .errors import ContractError

ONE_QUBIT = ("X", "RX", "RY", "RZ")
TWO_QUBIT = ("CZ", "CNOT", "RBS")
PARAMETRIC = ("RX", "RY", "RZ", "RBS")


@dataclass(frozen=True)
class Gate:
    name: str
    qubits: tuple[int, ...]
    angle: float = 0.0

    def __post_init__(self):
        if self.name not in ONE_QUBIT + TWO_QUBIT:
            raise ContractError(f"unknown gate {self.name!r}")
        want = 1 if self.name in ONE_QUBIT else 2
        if len(self.qubits) != want:
            raise ContractError(f"{self.name} acts on {want} qubit(s), got {self.qubits}")
        if want == 2 and self.qubits[0] == self.qubits[1]:
            raise ContractError(f"{self.name} needs distinct qubits, got {self.qubits}")
        if not math.isfinite(self.angle):
            raise ContractError(f"non-finite angle on {self.name}")

    @property
    def is_two_qubit(self) -> bool:
        return self.name in TWO_QUBIT

    def matrix(self) -> np.ndarray:
        return gate_matrix(self.name, self.angle)

    def inverse(self) -> "Gate":
        if self.name in PARAMETRIC:
            return replace(self, angle=-self.angle)
        return self


@dataclass
class CircuitIR:
    """Ordered list of primitive gates acting on ``n_qubits`` qubits.

    ``phase`` is a global phase ``e^{i phase}`` carried so that dense
    unitaries of synthesized blocks match their targets exactly. It has no
    QASM representation and is dropped on emission.
    """

    n_qubits: int
    gates: list[Gate] = field(default_factory=list)
    phase: float = 0.0

    def __post_init__(self):
        for g in self.gates:
            self._check(g)

    def _check(self, g: Gate) -> None:
        for q in g.qubits:
            if not 0 <= q < self.n_qubits:
                raise ContractError(f"qubit {q} out of range for {self.n_qubits} qubits")

    def append(self, name: str, qubits: Sequence[int], angle: float = 0.0) -> None:
        g = Gate(name, tuple(int(q) for q in qubits), float(angle))
        self._check(g)
        self.gates.append(g)

    def extend(self, other: "CircuitIR") -> None:
        if other.n_qubits != self.n_qubits:
            raise ContractError("cannot concatenate circuits of different width")
        self.gates.extend(other.gates)
        self.phase += other.phase

    def inverse(self) -> "CircuitIR":
        return CircuitIR(self.n_qubits, [g.inverse() for g in reversed(self.gates)], -self.phase)

    def copy(self) -> "CircuitIR":
        return CircuitIR(self.n_qubits, list(self.gates), self.phase)

    def __len__(self) -> int:
        return len(self.gates)

    def __iter__(self):
        return iter(self.gates)

    def count(self, *names: str) -> int:
        return sum(1 for g in self.gates if g.name in names)

    @property
    def n_two_qubit(self) -> int:
        """CZ-equivalent count: CZ and CNOT are interchangeable up to local gates."""
        return sum(1 for g in self.gates if g.name in ("CZ", "CNOT")) + 2 * self.count("RBS")

    def two_qubit_per_qubit(self) -> np.ndarray:
        touched = np.zeros(self.n_qubits, dtype=int)
        for g in self.gates:
            if g.is_two_qubit:
                weight = 2 if g.name == "RBS" else 1
                for q in g.qubits:
                    touched[q] += weight
        return touched


def concat(n_qubits: int, parts: Iterable[CircuitIR]) -> CircuitIR:
    out = CircuitIR(n_qubits)
    for p in parts:
        out.extend(p)
    return out


_X = np.array([[0, 1], [1, 0]], dtype=complex)


def gate_matrix(name: str, angle: float = 0.0) -> np.ndarray:
    c, s = math.cos(angle / 2), math.sin(angle / 2)
    if name == "X":
        return _X.copy()
    if name == "RX":
        return np.array([[c, -1j * s], [-1j * s, c]])
    if name == "RY":
        return np.array([[c, -s], [s, c]], dtype=complex)
    if name == "RZ":
        return np.diag([complex(c, -s), complex(c, s)])
    if name == "CZ":
        return np.diag([1, 1, 1, -1]).astype(complex)
    if name == "CNOT":
        return np.array([[1, 0, 0, 0], [0, 1, 0, 0], [0, 0, 0, 1], [0, 0, 1, 0]], dtype=complex)
    if name == "RBS":
        ct, st = math.cos(angle), math.sin(angle)
        return np.array(
            [[1, 0, 0, 0], [0, ct, st, 0], [0, -st, ct, 0], [0, 0, 0, 1]], dtype=complex
        )
    raise ContractError(f"unknown gate {name!r}")


def rbs_lowered(q1: int, q2: int, theta: float) -> list[Gate]:
    """RBS(theta) as 2 CZ plus rotations; both RY angles are tied to theta.

    Uses RBS = (H x H) CZ (RY(theta) x RY(-theta)) CZ (H x H) with H = X RY(pi/2).
    """
    h = [Gate("RY", (q1,), math.pi / 2), Gate("X", (q1,)), Gate("RY", (q2,), math.pi / 2), Gate("X", (q2,))]
    core = [Gate("CZ", (q1, q2)), Gate("RY", (q1,), theta), Gate("RY", (q2,), -theta), Gate("CZ", (q1, q2))]
    return h + core + h


def lower_rbs(c: CircuitIR) -> CircuitIR:
    out = CircuitIR(c.n_qubits, phase=c.phase)
    for g in c.gates:
        if g.name == "RBS":
            out.gates.extend(rbs_lowered(g.qubits[0], g.qubits[1], g.angle))
        else:
            out.gates.append(g)
    return out
