"""Exact-diagonalization reference values and trial statistics."""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .errors import ContractError
from .qcore import PauliSum, Statevector, _guard, pauli_to_dense

DEGENERACY_TOL = 1e-9
MAD_SCALE = 1.4826


@dataclass(frozen=True)
class SpectrumFixture:
    E0: float
    E1: float
    gs: Statevector
    ground_space: np.ndarray

    def __post_init__(self):
        if self.E1 < self.E0:
            raise ContractError("E1 must not lie below E0")

    @property
    def gap(self) -> float:
        return self.E1 - self.E0

    @property
    def degeneracy(self) -> int:
        return self.ground_space.shape[1]

    def overlap(self, psi: np.ndarray) -> float:
        """Weight of ``psi`` on the ground space (the fidelity for a unique ground state)."""
        amp = self.ground_space.conj().T @ np.asarray(psi, dtype=complex)
        return float(np.vdot(amp, amp).real)


def exact_diag(h: PauliSum | np.ndarray, n_qubits: int | None = None) -> SpectrumFixture:
    """Full eigendecomposition; ``E1`` is the lowest level above ``E0 + 1e-9``."""
    if isinstance(h, PauliSum):
        _guard(h.n_qubits)
        n_qubits = h.n_qubits
        m = pauli_to_dense(h).matrix
    else:
        m = np.asarray(h, dtype=complex)
        n_qubits = n_qubits or int(round(math.log2(m.shape[0])))
        _guard(n_qubits)
    vals, vecs = np.linalg.eigh(m)
    e0 = float(vals[0])
    ground = np.flatnonzero(vals <= e0 + DEGENERACY_TOL)
    above = vals[vals > e0 + DEGENERACY_TOL]
    if above.size == 0:
        raise ContractError("spectrum has a single distinct level; E1 is undefined")
    gs = vecs[:, 0]
    return SpectrumFixture(e0, float(above[0]), Statevector(n_qubits, gs / np.linalg.norm(gs)), vecs[:, ground])


def rel_diff(e_tilde: float, e0: float) -> float:
    """``1 - E~/E0``: relative distance of an energy estimate from the ground energy."""
    if e0 == 0:
        raise ContractError("relative difference undefined for E0 = 0")
    return 1.0 - e_tilde / e0


def fidelity_bound(e_tilde: float, fixture: SpectrumFixture) -> float:
    """``1 - (E~ - E0)/(E1 - E0)``; negative values above ``E1`` are returned as is."""
    if fixture.gap <= DEGENERACY_TOL:
        raise ContractError("fidelity bound needs a non-degenerate gap")
    return 1.0 - (e_tilde - fixture.E0) / fixture.gap


def median_mad(values) -> tuple[float, float]:
    """Median and scaled median absolute deviation."""
    x = np.asarray(list(values), dtype=float)
    if x.size == 0:
        raise ContractError("median of an empty list")
    med = float(np.median(x))
    return med, float(MAD_SCALE * np.median(np.abs(x - med)))


@dataclass
class TrialRecord:
    """One seed's trajectory: stage 0 is the warm start, stage j after j refinement steps."""

    seed: int
    energies: list[float]
    rel_diffs: list[float]
    fidelity_bounds: list[float]
    true_fidelities: list[float]
    ledgers: list = field(default_factory=list)
    extras: list[dict] = field(default_factory=list)

    def __post_init__(self):
        for j, d in enumerate(self.rel_diffs):
            if d < -1e-9:
                raise ContractError(f"stage {j} energy undershoots the ground energy (dE={d})")

    @property
    def warm_rel_diff(self) -> float:
        return self.rel_diffs[0]

    @property
    def step_rel_diffs(self) -> list[float]:
        return self.rel_diffs[1:]

    def rows(self) -> list[dict]:
        out = []
        for j in range(len(self.energies)):
            row = {
                "seed": self.seed,
                "stage": j,
                "energy": self.energies[j],
                "rel_diff": self.rel_diffs[j],
                "fidelity_bound": self.fidelity_bounds[j],
                "true_fidelity": self.true_fidelities[j],
            }
            if j < len(self.ledgers):
                row["ledger"] = self.ledgers[j].to_dict()
            if j < len(self.extras):
                row.update(self.extras[j])
            out.append(row)
        return out
