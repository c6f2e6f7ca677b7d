"""Group-commutator iterations: product formulas, unfolding, query counts.

A GCI step replaces the DBR unitary ``exp(-s[D, A])`` by a short product of
evolutions under ``A`` and ``D`` with ``r = sqrt(s)``. Since
``A_k = U_k^dagger Q^dagger H0 Q U_k``, evolutions under ``A_k`` unfold
recursively into evolutions under the input Hamiltonian ``H0``, warm-start
calls and diagonal evolutions.
"""

from __future__ import annotations

import enum
import math
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np

from .circuit import CircuitIR
from .dbi import (
    CostKind,
    DbiState,
    DbrStep,
    _minimize_1d,
    diagonal_bracket,
    initial_guess,
    matrix_cost,
    run_optimizer,
)
from .errors import ContractError, DimensionError
from .hamiltonians import IsingDiagonalSpec, ising_features
from .qcore import circuit_dense, expm_hermitian, is_hermitian

PHI = (math.sqrt(5) - 1) / 2
MAX_STEPS = 3


class GciVariant(str, enum.Enum):
    GC = "GC"
    RGC = "RGC"
    HOPF = "HOPF"
    RHOPF = "RHOPF"

    @property
    def phi(self) -> float:
        return PHI

    @property
    def factors(self) -> tuple[tuple[str, float], ...]:
        """Factors ``exp(i c X)`` in operator order (leftmost acts last)."""
        return _FACTORS[self]

    @property
    def n_a(self) -> int:
        return sum(1 for x, _ in self.factors if x == "A")

    @property
    def n_b(self) -> int:
        return sum(1 for x, _ in self.factors if x == "B")


_FACTORS = {
    GciVariant.GC: (("A", 1.0), ("B", 1.0), ("A", -1.0), ("B", -1.0)),
    GciVariant.RGC: (("B", 1.0), ("A", -1.0), ("B", -1.0)),
    GciVariant.HOPF: (("A", PHI), ("B", PHI), ("A", -1.0), ("B", -(PHI + 1)), ("A", 1 - PHI), ("B", 1.0)),
    GciVariant.RHOPF: (("B", PHI), ("A", -1.0), ("B", -(PHI + 1)), ("A", 1 - PHI), ("B", 1.0)),
}


def gc_unitary(variant: GciVariant | str, a: np.ndarray, b: np.ndarray) -> np.ndarray:
    """Product of ``exp(i c a)`` / ``exp(i c b)`` factors for the variant."""
    variant = GciVariant(variant)
    a = np.asarray(a, dtype=complex)
    b = np.asarray(b, dtype=complex)
    if not (is_hermitian(a, 1e-9) and is_hermitian(b, 1e-9)):
        raise ContractError("group-commutator generators must be Hermitian")
    out = np.eye(a.shape[0], dtype=complex)
    for which, c in variant.factors:
        out = out @ expm_hermitian(a if which == "A" else b, -c)
    return out


class GciEvaluator:
    """Applies one GCI rotation of a fixed ``A_k`` for many ``(r, D)`` choices.

    ``A_k`` is diagonalized once; diagonal generators are elementwise.
    """

    def __init__(self, a: np.ndarray, variant: GciVariant | str):
        self.a = np.asarray(a, dtype=complex)
        self.variant = GciVariant(variant)
        self.values, self.vectors = np.linalg.eigh(self.a)

    def _exp_a(self, x: float, v: np.ndarray) -> np.ndarray:
        # exp(i x A) v
        ph = np.exp(1j * x * self.values)
        if v.ndim == 2:
            ph = ph[:, None]
        return self.vectors @ (ph * (self.vectors.conj().T @ v))

    def apply(self, r: float, dvec: np.ndarray, v: np.ndarray) -> np.ndarray:
        """``V v`` with ``V`` the variant's product for ``(rA, -rD)``."""
        out = np.array(v, dtype=complex)
        for which, c in reversed(self.variant.factors):
            if which == "A":
                out = self._exp_a(c * r, out)
            else:
                ph = np.exp(-1j * c * r * dvec)
                out = (ph[:, None] * out) if out.ndim == 2 else ph * out
        return out

    def unitary(self, r: float, dvec: np.ndarray) -> np.ndarray:
        return self.apply(r, dvec, np.eye(self.a.shape[0], dtype=complex))

    def cost(self, r: float, dvec: np.ndarray, kind: CostKind, reference: int) -> float:
        kind = CostKind(kind)
        if kind is CostKind.OFFDIAG_HS:
            v = self.unitary(r, dvec)
            return matrix_cost(v.conj().T @ self.a @ v, kind, reference)
        e = np.zeros(self.a.shape[0], dtype=complex)
        e[reference] = 1.0
        y = self.vectors.conj().T @ self.apply(r, dvec, e)
        p = np.abs(y) ** 2
        mean = float(p @ self.values)
        if kind is CostKind.ENERGY:
            return mean
        return math.sqrt(max(float(p @ self.values**2) - mean**2, 0.0))


def gci_rotate(a_k: np.ndarray, r: float, dvec: np.ndarray, variant: GciVariant | str) -> np.ndarray:
    """``V^dagger A_k V`` for one GCI step."""
    if r < 0:
        raise ContractError("GCI step parameter r must be >= 0")
    v = GciEvaluator(a_k, variant).unitary(r, dvec)
    out = v.conj().T @ a_k @ v
    return 0.5 * (out + out.conj().T)


@dataclass(frozen=True)
class GciStepSpec:
    r: float
    d: IsingDiagonalSpec
    variant: GciVariant = GciVariant.RHOPF

    def __post_init__(self):
        if not (math.isfinite(self.r) and self.r >= 0):
            raise ContractError(f"GCI step parameter r must be finite and >= 0, got {self.r}")
        object.__setattr__(self, "variant", GciVariant(self.variant))

    @property
    def s(self) -> float:
        return self.r**2


@dataclass(frozen=True)
class GciPlan:
    """Warm start plus up to three GCI steps.

    ``reference`` is the computational-basis index prepared before the warm
    start (0 for ``|0...0>``).
    """

    n_qubits: int
    warm_start: CircuitIR | np.ndarray
    steps: tuple[GciStepSpec, ...] = ()
    reference: int = 0

    def __post_init__(self):
        object.__setattr__(self, "steps", tuple(self.steps))
        if len(self.steps) > MAX_STEPS:
            raise ContractError(f"at most {MAX_STEPS} GCI steps are supported, got {len(self.steps)}")
        for st in self.steps:
            if st.d.L != self.n_qubits:
                raise DimensionError("diagonal generator width differs from the plan")
        if isinstance(self.warm_start, CircuitIR) and self.warm_start.n_qubits != self.n_qubits:
            raise DimensionError("warm-start circuit width differs from the plan")

    @property
    def k(self) -> int:
        return len(self.steps)

    def warm_dense(self) -> np.ndarray:
        if isinstance(self.warm_start, CircuitIR):
            return circuit_dense(self.warm_start)
        return np.asarray(self.warm_start, dtype=complex)

    @classmethod
    def from_state(cls, state: DbiState, warm_start, reference: int | None = None) -> "GciPlan":
        """Plan that replays the GCI steps recorded on ``state``."""
        steps = []
        for st in state.steps:
            if st.r is None:
                raise ContractError("state history contains a non-GCI step")
            steps.append(GciStepSpec(st.r, st.d, GciVariant(st.variant)))
        ref = int(state.basis[state.reference]) if reference is None else reference
        return cls(state.n_qubits, warm_start, tuple(steps), ref)


def gci_step(plan: GciPlan, a_k: np.ndarray, k: int | None = None) -> np.ndarray:
    """Apply plan step ``k`` (default: the last one) to the full-space ``A_k``."""
    k = plan.k - 1 if k is None else k
    if not 0 <= k < plan.k:
        raise ContractError(f"plan has no step {k}")
    st = plan.steps[k]
    return gci_rotate(np.asarray(a_k, dtype=complex), st.r, st.d.diagonal(), st.variant)


def plan_unitary(plan: GciPlan, h0: np.ndarray) -> np.ndarray:
    """Dense ``Q V_0 ... V_{k-1}`` with each ``V_j`` built from ``A_j``."""
    q = plan.warm_dense()
    a = q.conj().T @ h0 @ q
    u = q.copy()
    for st in plan.steps:
        ev = GciEvaluator(a, st.variant)
        v = ev.unitary(st.r, st.d.diagonal())
        u = u @ v
        a = v.conj().T @ a @ v
    return u


# ---------------------------------------------------------------- unfolding


@dataclass(frozen=True)
class H0Evolution:
    """``exp(-i t H0)``."""

    t: float
    omissible: bool = False


@dataclass(frozen=True)
class DiagonalEvolution:
    """``exp(-i t D)``."""

    d: IsingDiagonalSpec
    t: float
    omissible: bool = False


@dataclass(frozen=True)
class WarmStart:
    omissible: bool = False


@dataclass(frozen=True)
class WarmStartInverse:
    omissible: bool = False


Primitive = H0Evolution | DiagonalEvolution | WarmStart | WarmStartInverse


@dataclass
class PrimitiveSequence:
    """Primitives in time order: ``items[0]`` acts first on the reference state."""

    n_qubits: int
    items: list = field(default_factory=list)

    def __len__(self) -> int:
        return len(self.items)

    def __iter__(self):
        return iter(self.items)

    def counts(self) -> tuple[int, int, int]:
        h = sum(isinstance(p, H0Evolution) for p in self.items)
        d = sum(isinstance(p, DiagonalEvolution) for p in self.items)
        w = sum(isinstance(p, (WarmStart, WarmStartInverse)) for p in self.items)
        return h, d, w

    def dense(self, h0: np.ndarray, warm: np.ndarray, skip_omissible: bool = False) -> np.ndarray:
        """Dense product of the sequence (later primitives multiply on the left)."""
        dim = h0.shape[0]
        out = np.eye(dim, dtype=complex)
        cache: dict[float, np.ndarray] = {}
        vals, vecs = np.linalg.eigh(h0)
        for p in self.items:
            if skip_omissible and p.omissible:
                continue
            if isinstance(p, H0Evolution):
                if p.t not in cache:
                    cache[p.t] = (vecs * np.exp(-1j * p.t * vals)) @ vecs.conj().T
                f = cache[p.t]
                out = f @ out
            elif isinstance(p, DiagonalEvolution):
                out = np.exp(-1j * p.t * p.d.diagonal())[:, None] * out
            elif isinstance(p, WarmStart):
                out = warm @ out
            else:
                out = warm.conj().T @ out
        return out


def _exp_a_ops(plan: GciPlan, k: int, c: float) -> list:
    """Operator-order primitives for ``exp(i c A_k)``."""
    if k == 0:
        return [WarmStartInverse(), H0Evolution(-c), WarmStart()]
    return _v_ops(plan, k - 1, dagger=True) + _exp_a_ops(plan, k - 1, c) + _v_ops(plan, k - 1, dagger=False)


def _v_ops(plan: GciPlan, j: int, dagger: bool) -> list:
    """Operator-order primitives for ``V_j`` or its adjoint."""
    st = plan.steps[j]
    factors = st.variant.factors
    sign = 1.0
    if dagger:
        factors = tuple(reversed(factors))
        sign = -1.0
    out = []
    for which, c in factors:
        if which == "A":
            out += _exp_a_ops(plan, j, sign * c * st.r)
        else:
            # exp(i c B) with B = -r D is exp(-i (c r) D)
            out.append(DiagonalEvolution(st.d, sign * c * st.r))
    return out


def unfold(plan: GciPlan) -> PrimitiveSequence:
    """Recursive expansion of ``Q V_0 ... V_{k-1}`` into primitives.

    No cancellation is applied between adjacent warm-start calls, so counts
    agree with the symbolic recursion of :func:`count_queries`. The first
    diagonal evolution in time acts on the reference bitstring and only
    contributes a phase; it is flagged omissible.
    """
    if plan.k > MAX_STEPS:
        raise ContractError(f"at most {MAX_STEPS} GCI steps are supported")
    ops = [WarmStart()]
    for j in range(plan.k):
        ops += _v_ops(plan, j, dagger=False)
    items = list(reversed(ops))
    if items and isinstance(items[0], DiagonalEvolution):
        first = items[0]
        items[0] = DiagonalEvolution(first.d, first.t, omissible=True)
    return PrimitiveSequence(plan.n_qubits, items)


def count_queries(plan: GciPlan) -> tuple[int, int, int]:
    """``(h0_queries, diagonal_evolutions, warm_start_calls)`` by symbolic recursion."""
    q_a = np.array([1, 0, 2])
    total = np.array([0, 0, 1])
    for st in plan.steps:
        q_v = st.variant.n_a * q_a + np.array([0, st.variant.n_b, 0])
        total = total + q_v
        q_a = 2 * q_v + q_a
    return tuple(int(x) for x in total)


# ------------------------------------------------------------- optimization


@dataclass(frozen=True)
class GciStepResult:
    r: float
    d: IsingDiagonalSpec
    value: float
    initial_value: float
    n_fval: int


def optimize_gci_step(
    state: DbiState,
    variant: GciVariant | str = GciVariant.RHOPF,
    cost: CostKind = CostKind.ENERGY,
    budget: int = 2000,
    method: str = "powell",
    seed: int = 0,
    r_max: float = 0.5,
    guess_scale: float = 0.1,
    r0: float = 0.1,
) -> GciStepResult:
    """Jointly tune ``(r, alpha, beta)`` of one GCI step on ``state.current``.

    Returns ``r = 0`` whenever no candidate beats the unrotated cost.
    """
    cost = CostKind(cost)
    L = state.n_qubits
    z, zz = ising_features(L, state.basis)
    ev = GciEvaluator(state.current, variant)
    ref = state.reference
    base = matrix_cost(state.current, cost, ref)
    tol = 1e-12 * max(1.0, abs(base))
    guess = initial_guess(state, guess_scale)

    def objective(x: np.ndarray) -> float:
        return ev.cost(float(x[0]), z @ x[1 : L + 1] + zz @ x[L + 1 :], cost, ref)

    start = np.concatenate([[min(r0, r_max)], guess.as_vector()])
    lower = np.concatenate([[0.0], np.full(2 * L, -np.inf)])
    upper = np.concatenate([[r_max], np.full(2 * L, np.inf)])
    tr = run_optimizer(objective, start, lower, upper, max(budget, 1), method, seed)
    if tr.best_y >= base - tol:
        return GciStepResult(0.0, guess, base, base, tr.n)
    d = IsingDiagonalSpec.from_vector(tr.best_x[1:])
    dvec = d.diagonal(state.basis)
    r_pol, v_pol = _minimize_1d(lambda r: ev.cost(r, dvec, cost, ref), r_max, 32, 1e-6)
    r, v = (r_pol, v_pol) if v_pol < tr.best_y else (float(tr.best_x[0]), tr.best_y)
    if v >= base - tol:
        return GciStepResult(0.0, guess, base, base, tr.n)
    return GciStepResult(r, d, v, base, tr.n)


def gci_advance(
    state: DbiState,
    r: float,
    d: IsingDiagonalSpec,
    variant: GciVariant | str = GciVariant.RHOPF,
    cost: CostKind = CostKind.ENERGY,
    n_fval: int = 0,
) -> DbiState:
    """Rotate ``state`` by one GCI step and record it in the history."""
    if state.k >= MAX_STEPS:
        raise ContractError(f"at most {MAX_STEPS} GCI steps are supported")
    variant = GciVariant(variant)
    dvec = state.diagonal_of(d)
    v = GciEvaluator(state.current, variant).unitary(r, dvec)
    before = matrix_cost(state.current, cost, state.reference)
    after_m = v.conj().T @ state.current @ v
    after = matrix_cost(after_m, cost, state.reference)
    w_norm = float(np.linalg.norm(diagonal_bracket(dvec, state.current)))
    step = DbrStep(r * r, d, w_norm, before, after, CostKind(cost), variant=variant.value, r=float(r), n_fval=n_fval)
    return state.advanced(v, step)
