"""Exact double-bracket iteration engine.

All routines act on dense matrices. A :class:`DbiState` may hold the full
``2^L`` space or a block of it: ``basis`` lists the computational-basis
indices of the block and ``reference`` is the position of the reference
bitstring inside it. Restricting to a block is exact whenever the rotated
operator is block diagonal, e.g. a weight-conserving Hamiltonian dressed
by a weight-preserving warm start.
"""

from __future__ import annotations

import enum
import math
from dataclasses import dataclass, field, replace
from typing import Callable, Sequence

import numpy as np
from scipy.optimize import minimize
from scipy.sparse.linalg import expm_multiply

from .errors import ContractError, DimensionError, StepSizeError
from .hamiltonians import IsingDiagonalSpec, ising_features
from .qcore import DenseOperator, EigenExp, Statevector, hs_inner, is_hermitian

GOLDEN = (math.sqrt(5) - 1) / 2


class CostKind(str, enum.Enum):
    ENERGY = "energy"
    OFFDIAG_HS = "offdiag_hs"
    FLUCTUATION = "fluctuation"


def _raw(m) -> np.ndarray:
    return m.matrix if isinstance(m, DenseOperator) else np.asarray(m, dtype=complex)


def _wrap_like(template, m: np.ndarray, hermitian: bool = False):
    if isinstance(template, DenseOperator):
        return DenseOperator(template.n_qubits, m, hermitian=hermitian)
    return m


@dataclass(frozen=True)
class DbrStep:
    s: float
    d: IsingDiagonalSpec
    w_norm: float
    cost_before: float
    cost_after: float
    cost_kind: CostKind = CostKind.ENERGY
    variant: str = "DBI"
    r: float | None = None
    n_fval: int = 0

    def __post_init__(self):
        if not math.isfinite(self.s) or self.s < 0:
            raise ContractError(f"step duration must be finite and >= 0, got {self.s}")


@dataclass(frozen=True)
class DbiState:
    """Current rotated operator plus its history.

    ``unitary`` accumulates the rotation so that
    ``current = unitary^dagger a0 unitary`` and the prepared state in the
    warm-started frame is ``unitary |reference>``.
    """

    a0: np.ndarray
    current: np.ndarray
    n_qubits: int
    basis: np.ndarray
    reference: int = 0
    steps: tuple[DbrStep, ...] = ()
    unitary: np.ndarray | None = None

    @classmethod
    def start(cls, a0, reference: int = 0, basis: np.ndarray | None = None, n_qubits: int | None = None) -> "DbiState":
        """``reference`` is a computational-basis index of the full space."""
        m = _raw(a0)
        if not is_hermitian(m, tol=1e-9):
            raise ContractError("DBI input must be Hermitian")
        m = 0.5 * (m + m.conj().T)
        if n_qubits is None:
            n_qubits = a0.n_qubits if isinstance(a0, DenseOperator) else int(round(math.log2(m.shape[0])))
        if basis is None:
            basis = np.arange(m.shape[0])
        basis = np.asarray(basis)
        if basis.shape != (m.shape[0],):
            raise DimensionError("basis size must match the operator dimension")
        pos = np.flatnonzero(basis == reference)
        if pos.size != 1:
            raise ContractError(f"reference index {reference} is not in the basis")
        return cls(m, m.copy(), n_qubits, basis, int(pos[0]), (), np.eye(m.shape[0], dtype=complex))

    @property
    def k(self) -> int:
        return len(self.steps)

    @property
    def dim(self) -> int:
        return self.current.shape[0]

    def diagonal_of(self, d: IsingDiagonalSpec) -> np.ndarray:
        if d.L != self.n_qubits:
            raise DimensionError(f"diagonal generator has {d.L} sites, state has {self.n_qubits} qubits")
        return d.diagonal(self.basis)

    def reference_vector(self) -> np.ndarray:
        e = np.zeros(self.dim, dtype=complex)
        e[self.reference] = 1.0
        return e

    def energy(self) -> float:
        return float(self.current[self.reference, self.reference].real)

    def prepared_vector(self) -> np.ndarray:
        """``unitary |reference>`` in block coordinates."""
        return self.unitary[:, self.reference].copy()

    def cost(self, kind: CostKind) -> float:
        return matrix_cost(self.current, kind, self.reference)

    def advanced(self, rotation: np.ndarray, step: DbrStep) -> "DbiState":
        """New state rotated by ``current -> rotation^dagger current rotation``."""
        cur = rotation.conj().T @ self.current @ rotation
        cur = 0.5 * (cur + cur.conj().T)
        return replace(self, current=cur, steps=self.steps + (step,), unitary=self.unitary @ rotation)


def bracket(d, a):
    """Commutator ``D A - A D``."""
    dm, am = _raw(d), _raw(a)
    if dm.shape != am.shape:
        raise DimensionError("bracket operands differ in shape")
    return _wrap_like(a, dm @ am - am @ dm)


def diagonal_bracket(dvec: np.ndarray, a: np.ndarray) -> np.ndarray:
    """``[diag(dvec), a]`` without forming the product."""
    return (dvec[:, None] - dvec[None, :]) * a


def _dbr_rotation(a: np.ndarray, dmat: np.ndarray, s: float) -> np.ndarray:
    """``exp(-s W)`` for ``W = [D, A]``."""
    w = dmat @ a - a @ dmat
    return EigenExp(1j * w).unitary(-s)


def dbr(a, d, s: float):
    """Double-bracket rotation ``exp(sW) A exp(-sW)`` with ``W = [D, A]``."""
    am, dm = _raw(a), _raw(d)
    if not (is_hermitian(am, 1e-9) and is_hermitian(dm, 1e-9)):
        raise ContractError("dbr needs Hermitian A and D")
    if s == 0:
        return a
    r = _dbr_rotation(am, dm, s)
    out = r.conj().T @ am @ r
    return _wrap_like(a, 0.5 * (out + out.conj().T), hermitian=True)


def offdiag(a: np.ndarray) -> np.ndarray:
    out = np.array(a, dtype=complex)
    np.fill_diagonal(out, 0.0)
    return out


def offdiag_hs_norm(a) -> float:
    m = _raw(a)
    return float(np.sqrt(max(np.vdot(m, m).real - np.sum(np.abs(np.diag(m)) ** 2), 0.0)))


def energy_fluctuation(state: Statevector | np.ndarray, h) -> float:
    """sqrt(<h^2> - <h>^2), evaluated as ||(h - <h>) v|| to avoid cancellation."""
    v = state.amplitudes if isinstance(state, Statevector) else np.asarray(state, dtype=complex)
    hm = _raw(h)
    if hm.shape[0] != v.shape[0]:
        raise DimensionError("state and operator dimensions differ")
    hv = hm @ v
    mean = np.vdot(v, hv).real
    return float(np.linalg.norm(hv - mean * v))


def matrix_cost(a: np.ndarray, kind: CostKind, reference: int = 0) -> float:
    kind = CostKind(kind)
    if kind is CostKind.ENERGY:
        return float(a[reference, reference].real)
    if kind is CostKind.OFFDIAG_HS:
        return offdiag_hs_norm(a)
    col = a[:, reference].copy()
    col[reference] -= col[reference].real
    return float(np.linalg.norm(col))


def _vector_cost(a: np.ndarray, v: np.ndarray, kind: CostKind) -> float:
    av = a @ v
    mean = np.vdot(v, av).real
    if kind is CostKind.ENERGY:
        return float(mean)
    return float(np.linalg.norm(av - mean * v))


def dbr_cost_function(state: DbiState, dvec: np.ndarray, kind: CostKind) -> Callable[[float], float]:
    """Cost of the rotated operator as a function of the step duration."""
    kind = CostKind(kind)
    a = state.current
    w = diagonal_bracket(dvec, a)
    gen = EigenExp(1j * w)
    if kind is CostKind.OFFDIAG_HS:
        a_eig = gen.vectors.conj().T @ a @ gen.vectors

        def f(s: float) -> float:
            # exp(sW) A exp(-sW) with exp(sW) = exp(-i s K)
            ph = np.exp(-1j * s * gen.values)
            rotated = gen.vectors @ (ph[:, None] * a_eig * np.conj(ph)[None, :]) @ gen.vectors.conj().T
            return offdiag_hs_norm(rotated)

        return f
    e = state.reference_vector()

    def f(s: float) -> float:
        # exp(-sW)|ref> = exp(i s K)|ref> with K = iW Hermitian
        return _vector_cost(a, gen.apply(-s, e), kind)

    return f


def optimize_s(
    state: DbiState,
    d: IsingDiagonalSpec,
    cost: CostKind = CostKind.ENERGY,
    s_max: float = 0.05,
    grid: int = 32,
    tol: float = 1e-6,
) -> float:
    """Grid then golden-section minimizer of the DBR cost over ``[0, s_max]``."""
    if s_max <= 0:
        raise ContractError("s_max must be positive")
    f = dbr_cost_function(state, state.diagonal_of(d), cost)
    return _minimize_1d(f, s_max, grid, tol)[0]


def _minimize_1d(f: Callable[[float], float], s_max: float, grid: int, tol: float) -> tuple[float, float]:
    xs = np.linspace(0.0, s_max, grid)
    ys = np.array([f(x) for x in xs])
    tol = 1e-12 * max(1.0, float(np.max(np.abs(ys))))
    # values within round-off of the minimum count as ties; keep the smallest s
    i = int(np.flatnonzero(ys <= ys.min() + tol)[0])
    best_x, best_y = float(xs[i]), float(ys[i])
    lo, hi = xs[max(i - 1, 0)], xs[min(i + 1, grid - 1)]
    a, b = lo, hi
    c, dd = b - GOLDEN * (b - a), a + GOLDEN * (b - a)
    fc, fd = f(c), f(dd)
    while b - a > tol:
        if fc <= fd:
            b, dd, fd = dd, c, fc
            c = b - GOLDEN * (b - a)
            fc = f(c)
        else:
            a, c, fc = c, dd, fd
            dd = a + GOLDEN * (b - a)
            fd = f(dd)
    x = c if fc <= fd else dd
    y = min(fc, fd)
    if y < best_y - tol:
        best_x, best_y = float(x), float(y)
    return best_x, best_y


def dbi_step(
    state: DbiState,
    d: IsingDiagonalSpec,
    s: float,
    cost: CostKind = CostKind.ENERGY,
    n_fval: int = 0,
) -> DbiState:
    a = state.current
    dvec = state.diagonal_of(d)
    w = diagonal_bracket(dvec, a)
    before = matrix_cost(a, cost, state.reference)
    rot = EigenExp(1j * w).unitary(-s) if s else np.eye(state.dim, dtype=complex)
    new_current = rot.conj().T @ a @ rot
    after = matrix_cost(0.5 * (new_current + new_current.conj().T), cost, state.reference)
    step = DbrStep(float(s), d, float(np.linalg.norm(w)), before, after, CostKind(cost), n_fval=n_fval)
    return state.advanced(rot, step)


def initial_guess(state: DbiState, scale: float = 0.1) -> IsingDiagonalSpec:
    """Single-Z projection of the current diagonal, with zero couplings.

    ``alpha_a`` is the mean over the basis of ``diag(A)_x * z_a(x)``; the
    overall ``scale`` only sets where the optimizer starts.
    """
    z, _ = ising_features(state.n_qubits, state.basis)
    diag = np.diag(state.current).real
    alpha = (z * diag[:, None]).mean(axis=0)
    return IsingDiagonalSpec(scale * alpha, np.zeros(state.n_qubits))


class _Tracker:
    """Counts objective calls and remembers the best point seen."""

    def __init__(self, f: Callable[[np.ndarray], float], budget: int):
        self.f = f
        self.budget = budget
        self.n = 0
        self.best_x: np.ndarray | None = None
        self.best_y = math.inf

    def __call__(self, x) -> float:
        x = np.asarray(x, dtype=float)
        y = float(self.f(x))
        self.n += 1
        if y < self.best_y:
            self.best_x, self.best_y = x.copy(), y
        return y


def run_optimizer(
    f: Callable[[np.ndarray], float],
    x0: np.ndarray,
    lower: np.ndarray,
    upper: np.ndarray,
    budget: int,
    method: str = "powell",
    seed: int = 0,
    sigma0: float = 0.05,
) -> _Tracker:
    """Bounded derivative-free minimization with an evaluation budget."""
    tr = _Tracker(f, budget)
    tr(x0)
    if budget <= 1:
        return tr
    if method == "powell":
        bounds = list(zip(lower, upper))
        minimize(tr, x0, method="Powell", bounds=bounds,
                 options={"maxfev": budget - 1, "xtol": 1e-6, "ftol": 1e-12})
    elif method == "cmaes":
        import cma

        lo = [float(v) if np.isfinite(v) else None for v in lower]
        hi = [float(v) if np.isfinite(v) else None for v in upper]
        opts = {"maxfevals": budget - 1, "seed": int(seed) + 1, "verbose": -9, "bounds": [lo, hi],
                "tolfun": 1e-13, "tolx": 1e-9}
        es = cma.CMAEvolutionStrategy(list(x0), sigma0, opts)
        while not es.stop() and tr.n < budget:
            xs = es.ask()
            if tr.n + len(xs) > budget:
                # spend the remainder without a partial update of the strategy
                for x in xs[: budget - tr.n]:
                    tr(x)
                break
            es.tell(xs, [tr(x) for x in xs])
    else:
        raise ContractError(f"unknown optimizer {method!r}")
    return tr


@dataclass(frozen=True)
class DOptResult:
    d: IsingDiagonalSpec
    s: float
    value: float
    initial_value: float
    n_fval: int


def optimize_d(
    state: DbiState,
    cost: CostKind = CostKind.ENERGY,
    budget: int = 2000,
    s_max: float = 0.05,
    method: str = "powell",
    seed: int = 0,
    x0: IsingDiagonalSpec | None = None,
    guess_scale: float = 0.1,
) -> DOptResult:
    """Jointly tune ``(s, alpha, beta)`` of one DBR step.

    The step duration is finally re-polished with :func:`optimize_s` for the
    chosen generator. The returned value never exceeds the initial guess's
    cost at its own best duration.
    """
    cost = CostKind(cost)
    L = state.n_qubits
    z, zz = ising_features(L, state.basis)
    guess = x0 if x0 is not None else initial_guess(state, guess_scale)
    a = state.current
    e = state.reference_vector()

    def cost_at(s: float, dvec: np.ndarray) -> float:
        if s == 0:
            return matrix_cost(a, cost, state.reference)
        w = diagonal_bracket(dvec, a)
        if cost is CostKind.OFFDIAG_HS:
            r = EigenExp(1j * w).unitary(-s)
            return offdiag_hs_norm(r.conj().T @ a @ r)
        return _vector_cost(a, expm_multiply(-s * w, e), cost)

    def objective(x: np.ndarray) -> float:
        return cost_at(float(x[0]), z @ x[1 : L + 1] + zz @ x[L + 1 :])

    s_guess, v_guess = _minimize_1d(dbr_cost_function(state, guess.diagonal(state.basis), cost), s_max, 32, 1e-6)
    start = np.concatenate([[s_guess if s_guess > 0 else 0.5 * s_max], guess.as_vector()])
    lower = np.concatenate([[0.0], np.full(2 * L, -np.inf)])
    upper = np.concatenate([[s_max], np.full(2 * L, np.inf)])
    tr = run_optimizer(objective, start, lower, upper, max(budget, 1), method, seed)
    if tr.best_y >= v_guess:
        return DOptResult(guess, s_guess, v_guess, v_guess, tr.n)
    d = IsingDiagonalSpec.from_vector(tr.best_x[1:])
    s_pol, v_pol = _minimize_1d(dbr_cost_function(state, d.diagonal(state.basis), cost), s_max, 32, 1e-6)
    s, v = (s_pol, v_pol) if v_pol < tr.best_y else (float(tr.best_x[0]), tr.best_y)
    return DOptResult(d, s, v, v_guess, tr.n)


def monotonicity_slope(a: np.ndarray, dvec: np.ndarray) -> float:
    """First-order change of ``||offdiag(A)||^2`` per unit step: ``-2 <W, [A, offdiag(A)]>``."""
    w = diagonal_bracket(dvec, a)
    sig = offdiag(a)
    return float((-2 * hs_inner(w, a @ sig - sig @ a)).real)


def brockett_euler(a0, n, dl: float, steps: int):
    """Explicit Euler integration of dA/dl = [[N, A], A]."""
    a = _raw(a0).copy()
    nm = _raw(n)
    if np.max(np.abs(offdiag(nm))) > 0:
        raise ContractError("Brockett generator N must be diagonal")
    start = np.linalg.norm(a)
    for _ in range(int(steps)):
        w = nm @ a - a @ nm
        a = a + dl * (w @ a - a @ w)
        if not np.all(np.isfinite(a)) or np.linalg.norm(a) > 10 * start + 1e-300:
            raise StepSizeError(f"Euler iteration diverged; reduce dl={dl}")
    return _wrap_like(a0, a, hermitian=False)
