"""Variational warm-start circuits and their training.

Two families are provided. The weight-preserving family (``HWP``) is a
network of RBS gates on nearest- and next-nearest-neighbour pairs of a ring;
it starts from the bitstring with qubits ``0..S-1`` set, ``S = L/2``. The
hardware-efficient family (``HEA``) alternates RY/RZ layers with CZ
half-rings and starts from ``|0...0>``.

Simulation runs on a list of computational-basis indices. For HWP circuits
that list can be the single Hamming-weight sector of the initial bitstring,
which is exact and much smaller than the full space.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace
from typing import Callable, Sequence

import numpy as np
import scipy.sparse as sps

from .circuit import CircuitIR, lower_rbs
from .errors import ContractError, TrainingError
from .qcore import (
    DenseOperator,
    PauliSum,
    Statevector,
    _guard,
    circuit_dense,
    hamming_sector,
    pauli_to_sparse,
    run_circuit,
)

HWP = "HWP"
HEA = "HEA"


def hwp_pairs(L: int, layers: int) -> list[tuple[int, int]]:
    """RBS placement: per layer a nearest-neighbour brick ring then a next-nearest ring."""
    out = []
    for _ in range(layers):
        out += [(i, i + 1) for i in range(0, L, 2)]
        out += [(i, (i + 1) % L) for i in range(1, L, 2)]
        out += [(i, (i + 2) % L) for i in range(L)]
    return out


def hea_ops(L: int, layers: int) -> list[tuple[str, tuple[int, ...]]]:
    """Gate skeleton of the hardware-efficient ansatz in time order."""
    even = [(i, i + 1) for i in range(0, L, 2)]
    odd = [(i, (i + 1) % L) for i in range(1, L, 2)]
    ops: list[tuple[str, tuple[int, ...]]] = []
    for _ in range(layers):
        for ring in (even, odd):
            for q in range(L):
                ops += [("RY", (q,)), ("RZ", (q,))]
            ops += [("CZ", p) for p in ring]
    ops += [("RY", (q,)) for q in range(L)]
    return ops


@dataclass(frozen=True)
class AnsatzCircuit:
    kind: str
    L: int
    layers: int
    thetas: np.ndarray

    def __post_init__(self):
        if self.kind not in (HWP, HEA):
            raise ContractError(f"unknown ansatz kind {self.kind!r}")
        t = np.asarray(self.thetas, dtype=float).copy()
        if t.shape != (self.n_params,):
            raise ContractError(f"{self.kind} with L={self.L}, layers={self.layers} needs {self.n_params} parameters")
        t.setflags(write=False)
        object.__setattr__(self, "thetas", t)

    @property
    def n_params(self) -> int:
        if self.kind == HWP:
            return 2 * self.L * self.layers
        return 4 * self.L * self.layers + self.L

    @property
    def shift_multiplier(self) -> int:
        """Energy evaluations per parameter in the shift-rule gradient."""
        return 4 if self.kind == HWP else 2

    @property
    def weight(self) -> int:
        return self.L // 2 if self.kind == HWP else 0

    @property
    def initial_bitstring(self) -> tuple[int, ...]:
        return tuple(1 if q < self.weight else 0 for q in range(self.L))

    @property
    def initial_index(self) -> int:
        return sum(1 << q for q, b in enumerate(self.initial_bitstring) if b)

    @property
    def n_cz(self) -> int:
        return 4 * self.L * self.layers if self.kind == HWP else self.L * self.layers

    @property
    def depth(self) -> float:
        return self.n_cz / self.L

    def with_thetas(self, thetas: np.ndarray) -> "AnsatzCircuit":
        return replace(self, thetas=np.asarray(thetas, dtype=float))

    def to_circuit(self, lowered: bool = False) -> CircuitIR:
        """``U_theta`` without the initial-bitstring preparation."""
        c = CircuitIR(self.L)
        if self.kind == HWP:
            for (a, b), t in zip(hwp_pairs(self.L, self.layers), self.thetas):
                c.append("RBS", (a, b), t)
            return lower_rbs(c) if lowered else c
        it = iter(self.thetas)
        for name, qs in hea_ops(self.L, self.layers):
            c.append(name, qs, 0.0 if name == "CZ" else next(it))
        return c

    def preparation(self, lowered: bool = True) -> CircuitIR:
        """X gates for the initial bitstring followed by ``U_theta``."""
        c = CircuitIR(self.L)
        for q, b in enumerate(self.initial_bitstring):
            if b:
                c.append("X", (q,))
        c.extend(self.to_circuit(lowered))
        return c

    def basis(self) -> np.ndarray:
        """Smallest exact simulation basis: the weight sector for HWP, else everything."""
        if self.kind == HWP:
            return hamming_sector(self.L, self.weight)
        return np.arange(2**self.L)


def build_hwp(L: int, layers: int, thetas: np.ndarray | None = None) -> AnsatzCircuit:
    if L % 2 or L < 4:
        raise ContractError(f"HWP ansatz needs even L >= 4, got {L}")
    if layers < 1:
        raise ContractError("layers must be >= 1")
    thetas = np.zeros(2 * L * layers) if thetas is None else thetas
    return AnsatzCircuit(HWP, L, layers, thetas)


def build_hea(L: int, layers: int, thetas: np.ndarray | None = None) -> AnsatzCircuit:
    if L < 2 or L % 2:
        raise ContractError(f"HEA ansatz needs even L >= 2, got {L}")
    if layers < 1:
        raise ContractError("layers must be >= 1")
    thetas = np.zeros(4 * L * layers + L) if thetas is None else thetas
    return AnsatzCircuit(HEA, L, layers, thetas)


def circuit_unitary(c: AnsatzCircuit) -> DenseOperator:
    _guard(c.L)
    return DenseOperator(c.L, circuit_dense(c.to_circuit()))


def prepare_state(c: AnsatzCircuit) -> Statevector:
    _guard(c.L)
    e = np.zeros(2**c.L, dtype=complex)
    e[c.initial_index] = 1.0
    return Statevector(c.L, run_circuit(c.to_circuit(), e))


# ------------------------------------------------------------ fast kernel


class AnsatzKernel:
    """Forward and adjoint-gradient simulation on a basis subset.

    ``h`` is restricted to ``basis``; the caller guarantees the circuit keeps
    the state inside it.
    """

    def __init__(self, c: AnsatzCircuit, h: PauliSum | sps.spmatrix | np.ndarray, basis: np.ndarray | None = None):
        self.circuit = c
        self.basis = c.basis() if basis is None else np.asarray(basis)
        L = c.L
        pos = np.full(2**L, -1)
        pos[self.basis] = np.arange(len(self.basis))
        self._pos = pos
        full = pauli_to_sparse(h) if isinstance(h, PauliSum) else sps.csr_matrix(h)
        hb = full[self.basis][:, self.basis]
        self.h = hb.toarray() if len(self.basis) <= 512 else hb.tocsr()
        self.ops = self._compile_ops()
        self.initial = np.zeros(len(self.basis), dtype=complex)
        p0 = pos[c.initial_index]
        if p0 < 0:
            raise ContractError("initial bitstring lies outside the simulation basis")
        self.initial[p0] = 1.0

    def _pairs(self, a: int, b: int | None) -> tuple[np.ndarray, np.ndarray]:
        idx = self.basis
        if b is None:
            lo = idx[((idx >> a) & 1) == 0]
            hi = lo | (1 << a)
        else:
            lo = idx[(((idx >> a) & 1) == 0) & (((idx >> b) & 1) == 1)]
            hi = lo ^ ((1 << a) | (1 << b))
        pl, ph = self._pos[lo], self._pos[hi]
        if np.any(pl < 0) or np.any(ph < 0):
            raise ContractError("gate maps the state outside the simulation basis")
        return pl, ph

    def _compile_ops(self) -> list:
        c = self.circuit
        ops = []
        if c.kind == HWP:
            for a, b in hwp_pairs(c.L, c.layers):
                ops.append(("RBS", self._pairs(a, b)))
            return ops
        idx = self.basis
        for name, qs in hea_ops(c.L, c.layers):
            if name == "CZ":
                a, b = qs
                ops.append(("CZ", np.where(((idx >> a) & 1) & ((idx >> b) & 1), -1.0, 1.0)))
            elif name == "RY":
                ops.append(("RY", self._pairs(qs[0], None)))
            else:
                ops.append(("RZ", 1.0 - 2.0 * ((idx >> qs[0]) & 1)))
        return ops

    @staticmethod
    def _apply(op, t: float | None, psi: np.ndarray, inverse: bool = False) -> None:
        """In-place gate action on a vector or on the columns of a matrix."""
        name, data = op
        if name in ("CZ", "RZ") and psi.ndim == 2:
            data = data[:, None]
        if name == "CZ":
            psi *= data
            return
        if inverse:
            t = -t
        if name == "RZ":
            psi *= np.exp(-0.5j * t * data)
            return
        lo, hi = data
        if name == "RBS":
            c, s = math.cos(t), math.sin(t)
            a, b = psi[lo], psi[hi]
            psi[lo], psi[hi] = c * a + s * b, -s * a + c * b
        else:  # RY
            c, s = math.cos(t / 2), math.sin(t / 2)
            a, b = psi[lo], psi[hi]
            psi[lo], psi[hi] = c * a - s * b, s * a + c * b

    @staticmethod
    def _derivative(op, t: float, psi: np.ndarray) -> np.ndarray:
        name, data = op
        out = np.zeros_like(psi)
        if name == "RZ":
            return -0.5j * data * np.exp(-0.5j * t * data) * psi
        lo, hi = data
        a, b = psi[lo], psi[hi]
        if name == "RBS":
            c, s = math.cos(t), math.sin(t)
            out[lo], out[hi] = -s * a + c * b, -c * a - s * b
        else:
            c, s = 0.5 * math.cos(t / 2), 0.5 * math.sin(t / 2)
            out[lo], out[hi] = -s * a - c * b, c * a - s * b
        return out

    def _param_iter(self, thetas: np.ndarray):
        it = iter(thetas)
        for op in self.ops:
            yield op, (None if op[0] == "CZ" else next(it))

    def state(self, thetas: np.ndarray | None = None) -> np.ndarray:
        thetas = self.circuit.thetas if thetas is None else thetas
        psi = self.initial.copy()
        for op, t in self._param_iter(thetas):
            self._apply(op, t, psi)
        return psi

    def unitary(self, thetas: np.ndarray | None = None) -> np.ndarray:
        """``U_theta`` restricted to the simulation basis."""
        thetas = self.circuit.thetas if thetas is None else thetas
        u = np.eye(len(self.basis), dtype=complex)
        for op, t in self._param_iter(thetas):
            self._apply(op, t, u)
        return u

    def embed(self, v: np.ndarray) -> np.ndarray:
        """Full-space amplitudes of a vector given in basis coordinates."""
        out = np.zeros(2**self.circuit.L, dtype=complex)
        out[self.basis] = v
        return out

    def energy(self, thetas: np.ndarray | None = None) -> float:
        psi = self.state(thetas)
        return float(np.vdot(psi, self.h @ psi).real)

    def energy_and_gradient(self, thetas: np.ndarray) -> tuple[float, np.ndarray]:
        """Energy and exact gradient by reverse-mode (adjoint) sweep."""
        psi = self.state(thetas)
        lam = self.h @ psi
        e = float(np.vdot(psi, lam).real)
        grad = np.zeros(len(thetas))
        seq = list(self._param_iter(thetas))
        gi = len(thetas)
        for op, t in reversed(seq):
            self._apply(op, t, psi, inverse=True)
            if t is not None:
                gi -= 1
                grad[gi] = 2.0 * np.vdot(lam, self._derivative(op, t, psi)).real
            self._apply(op, t, lam, inverse=True)
        return e, grad


def parameter_shift_gradient(c: AnsatzCircuit, h: PauliSum) -> np.ndarray:
    """Gradient from +-pi/2 shifts of every rotation in the lowered circuit.

    In the lowered HWP circuit each RBS angle drives two RY gates with
    coefficients +1 and -1, giving four energy evaluations per parameter.
    """
    _guard(c.L)
    hm = pauli_to_sparse(h)
    circ = c.to_circuit(lowered=True)
    e0 = np.zeros(2**c.L, dtype=complex)
    e0[c.initial_index] = 1.0
    occurrences = _parameter_occurrences(c, circ)

    def energy(gates) -> float:
        psi = run_circuit(CircuitIR(c.L, gates), e0, include_phase=False)
        return float(np.vdot(psi, hm @ psi).real)

    grad = np.zeros(c.n_params)
    for gidx, (pidx, coeff) in occurrences.items():
        g = circ.gates[gidx]
        shifted = []
        for sgn in (1.0, -1.0):
            gates = list(circ.gates)
            gates[gidx] = replace(g, angle=g.angle + sgn * math.pi / 2)
            shifted.append(energy(gates))
        grad[pidx] += coeff * 0.5 * (shifted[0] - shifted[1])
    return grad


def _parameter_occurrences(c: AnsatzCircuit, circ: CircuitIR) -> dict[int, tuple[int, float]]:
    """Map gate index in the lowered circuit to (parameter index, angle coefficient)."""
    out = {}
    if c.kind == HWP:
        # each lowered RBS is 12 gates; its RY(theta)/RY(-theta) sit at offsets 5 and 6
        for p in range(c.n_params):
            out[12 * p + 5] = (p, 1.0)
            out[12 * p + 6] = (p, -1.0)
        return out
    p = 0
    for i, g in enumerate(circ.gates):
        if g.name != "CZ":
            out[i] = (p, 1.0)
            p += 1
    return out


# ---------------------------------------------------------------- training


@dataclass
class TrainLog:
    energies: np.ndarray
    epochs: int
    thetas: np.ndarray
    seed: int
    n_cz: int
    initial_thetas: np.ndarray = field(default=None)
    checkpoints: dict[int, np.ndarray] = field(default_factory=dict)

    @property
    def final_energy(self) -> float:
        return float(self.energies[-1])


def random_thetas(c: AnsatzCircuit, seed: int) -> np.ndarray:
    return np.random.default_rng(seed).uniform(-math.pi, math.pi, c.n_params)


def adam_train(
    c: AnsatzCircuit,
    h: PauliSum | AnsatzKernel,
    epochs: int,
    lr: float = 0.05,
    seed: int = 0,
    beta1: float = 0.9,
    beta2: float = 0.999,
    eps: float = 1e-8,
    checkpoints: Sequence[int] = (),
    thetas0: np.ndarray | None = None,
) -> TrainLog:
    """Adam on the exact energy, starting from ``U(-pi, pi)`` angles.

    ``energies[e]`` is the energy after ``e`` updates, so the log has
    ``epochs + 1`` entries. ``checkpoints`` lists epochs whose angles are kept.
    """
    if epochs < 0:
        raise ContractError("epochs must be >= 0")
    kernel = h if isinstance(h, AnsatzKernel) else AnsatzKernel(c, h)
    th = random_thetas(c, seed) if thetas0 is None else np.array(thetas0, dtype=float)
    start = th.copy()
    m = np.zeros_like(th)
    v = np.zeros_like(th)
    energies = np.empty(epochs + 1)
    keep = set(int(x) for x in checkpoints)
    saved: dict[int, np.ndarray] = {}
    for e in range(epochs + 1):
        if e in keep:
            saved[e] = th.copy()
        if e == epochs:
            energies[e] = kernel.energy(th)
            break
        en, g = kernel.energy_and_gradient(th)
        if not (math.isfinite(en) and np.all(np.isfinite(g))):
            raise TrainingError(f"non-finite loss or gradient at epoch {e} (seed {seed})")
        energies[e] = en
        m = beta1 * m + (1 - beta1) * g
        v = beta2 * v + (1 - beta2) * g * g
        mh = m / (1 - beta1 ** (e + 1))
        vh = v / (1 - beta2 ** (e + 1))
        th = th - lr * mh / (np.sqrt(vh) + eps)
    if not math.isfinite(energies[-1]):
        raise TrainingError(f"non-finite final energy (seed {seed})")
    return TrainLog(energies, epochs, th, seed, c.n_cz, start, saved)
