"""Lowering of evolutions to CZ/CNOT plus single-qubit rotations.

Generic two-qubit unitaries use the canonical (KAK) form
``U = e^{i phi} (A1 x A2) exp(i(a XX + b YY + c ZZ)) (B1 x B2)`` whose
nonlocal core takes three CNOTs. Diagonal Ising and transverse-field bonds
have cheaper two-CNOT forms.
"""

from __future__ import annotations

import math
import re
from dataclasses import dataclass
from functools import lru_cache

import numpy as np

from .circuit import CircuitIR, Gate
from .errors import ContractError, LoweringRequiredError
from .gci import DiagonalEvolution, GciPlan, H0Evolution, PrimitiveSequence, WarmStart, WarmStartInverse, unfold
from .hamiltonians import IsingDiagonalSpec, group_bonds
from .qcore import PAULI, PauliSum, circuit_dense, expm_hermitian, is_unitary

PRUNE = 1e-12
_SQ2 = 1 / math.sqrt(2)
MAGIC = _SQ2 * np.array([[1, 0, 0, 1j], [0, 1j, 1, 0], [0, 1j, -1, 0], [1, 0, 0, -1j]], dtype=complex)


@dataclass(frozen=True)
class TrotterPlan:
    t: float
    order: int = 2
    M: int = 1

    def __post_init__(self):
        if self.order not in (1, 2):
            raise ContractError(f"Trotter order must be 1 or 2, got {self.order}")
        if self.M < 1:
            raise ContractError("Trotter step count M must be >= 1")
        if not math.isfinite(self.t):
            raise ContractError("evolution time must be finite")


def _emit(c: CircuitIR, name: str, qubits, angle: float = 0.0) -> None:
    if name in ("RX", "RY", "RZ") and abs(angle) < PRUNE:
        return
    c.append(name, qubits, angle)


# ------------------------------------------------------ single-qubit gates


def zyz_angles(u: np.ndarray) -> tuple[float, float, float, float]:
    """``(phase, alpha, beta, gamma)`` with ``u = e^{i phase} RZ(alpha) RY(beta) RZ(gamma)``."""
    u = np.asarray(u, dtype=complex)
    det = np.linalg.det(u)
    v = u / np.sqrt(det)
    # -v is the same rotation; pick the sign that keeps angles small
    if v[0, 0].real < 0 or (abs(v[0, 0]) < 1e-12 and v[1, 0].real < 0):
        v = -v
    beta = 2 * math.atan2(abs(v[1, 0]), abs(v[0, 0]))
    if abs(v[0, 0]) < 1e-12:
        plus, minus = 0.0, 2 * np.angle(v[1, 0])
    elif abs(v[1, 0]) < 1e-12:
        plus, minus = -2 * np.angle(v[0, 0]), 0.0
    else:
        plus, minus = -2 * np.angle(v[0, 0]), 2 * np.angle(v[1, 0])
    alpha, gamma = 0.5 * (plus + minus), 0.5 * (plus - minus)
    rz = lambda t: np.diag([np.exp(-0.5j * t), np.exp(0.5j * t)])
    c, s = math.cos(beta / 2), math.sin(beta / 2)
    w = rz(alpha) @ np.array([[c, -s], [s, c]]) @ rz(gamma)
    phase = float(np.angle(np.vdot(w.ravel(), u.ravel())))
    return phase, float(alpha), float(beta), float(gamma)


def compile_one_qubit(u: np.ndarray, q: int, n_qubits: int) -> CircuitIR:
    phase, a, b, g = zyz_angles(u)
    c = CircuitIR(n_qubits, phase=phase)
    _emit(c, "RZ", (q,), g)
    _emit(c, "RY", (q,), b)
    _emit(c, "RZ", (q,), a)
    return c


# --------------------------------------------------------- two-qubit gates


def _magic_signs() -> np.ndarray:
    """Eigenvalue signs of XX, YY, ZZ in the magic basis (rows: basis vectors)."""
    rows = []
    for p in "XYZ":
        m = MAGIC.conj().T @ np.kron(PAULI[p], PAULI[p]) @ MAGIC
        rows.append(np.real(np.diag(m)))
    return np.array(rows).T


_SIGNS = _magic_signs()


def _tensor_factor(u: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Best ``a x b`` approximation of a 4x4 matrix (first factor = first qubit)."""
    r = u.reshape(2, 2, 2, 2).transpose(0, 2, 1, 3).reshape(4, 4)
    w, s, vh = np.linalg.svd(r)
    a = math.sqrt(s[0]) * w[:, 0].reshape(2, 2)
    b = math.sqrt(s[0]) * vh[0].reshape(2, 2)
    return a, b


def _diagonalize_symmetric_unitary(m: np.ndarray) -> np.ndarray:
    """Real orthogonal ``O`` with ``O^T m O`` diagonal for a symmetric unitary ``m``."""
    re_m, im_m = m.real, m.imag
    rng = np.random.default_rng(1234)
    for _ in range(16):
        x, y = rng.uniform(0.5, 1.5, 2)
        _, o = np.linalg.eigh(x * re_m + y * im_m)
        d = o.T @ m @ o
        if np.max(np.abs(d - np.diag(np.diag(d)))) < 1e-10:
            return o
    raise ContractError("failed to diagonalize the magic-basis Gram matrix")


def kak_decompose(u: np.ndarray):
    """Return ``(phase, (A1, A2), (a, b, c), (B1, B2))`` for a 4x4 unitary."""
    u = np.asarray(u, dtype=complex)
    det = np.linalg.det(u)
    su = u / det**0.25
    um = MAGIC.conj().T @ su @ MAGIC
    o = _diagonalize_symmetric_unitary(um.T @ um)
    if np.linalg.det(o) < 0:
        o[:, 0] *= -1
    dvals = np.diag(o.T @ um.T @ um @ o)
    theta = np.sqrt(dvals)
    k1 = um @ o @ np.diag(1 / theta)
    if np.linalg.det(k1).real < 0:
        theta[0] *= -1
        k1 = um @ o @ np.diag(1 / theta)
    left = MAGIC @ k1 @ MAGIC.conj().T
    right = MAGIC @ o.T @ MAGIC.conj().T
    ang = np.angle(theta)
    sol = np.linalg.solve(np.column_stack([np.ones(4), _SIGNS]), ang)
    a1, a2 = _tensor_factor(left)
    b1, b2 = _tensor_factor(right)
    return sol[0], (a1, a2), (sol[1], sol[2], sol[3]), (b1, b2)


def _canonical_core(c: CircuitIR, q1: int, q2: int, a: float, b: float, cz: float) -> None:
    """Three-CNOT circuit equal to ``exp(i(-a XX - b YY + c ZZ))`` up to a left local factor.

    This is the Vatan-Williams template; the caller fixes the local factor
    and the phase by a dense fit.
    """
    _emit(c, "RZ", (q2,), math.pi / 2)
    c.append("CNOT", (q2, q1))
    _emit(c, "RZ", (q1,), -2 * cz - math.pi / 2)
    _emit(c, "RY", (q2,), -math.pi / 2 + 2 * a)
    c.append("CNOT", (q1, q2))
    _emit(c, "RY", (q2,), -2 * b + math.pi / 2)
    c.append("CNOT", (q2, q1))
    _emit(c, "RZ", (q1,), -math.pi / 2)


def _local_fix(target: np.ndarray, got: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Locals ``(L1, L2)`` with ``target = (L1 x L2) got``."""
    return _tensor_factor(target @ got.conj().T)


def compile_two_qubit_block(u: np.ndarray, q1: int, q2: int, n_qubits: int | None = None) -> CircuitIR:
    """At most three CNOTs plus single-qubit rotations equal to ``u`` (phase tracked)."""
    u = np.asarray(u, dtype=complex)
    if u.shape != (4, 4) or not is_unitary(u, 1e-10):
        raise ContractError("two-qubit block must be a 4x4 unitary")
    n = max(q1, q2) + 1 if n_qubits is None else n_qubits
    out = CircuitIR(n)
    # identity and product cases need no entangler
    a, b = _tensor_factor(u)
    if np.linalg.norm(np.kron(a, b) - u) < 1e-10:
        na = math.sqrt(abs(np.linalg.det(a)))
        a, b = a / na, b * na
        out.extend(compile_one_qubit(a, q1, n))
        out.extend(compile_one_qubit(b, q2, n))
        _fit_phase(out, u, q1, q2)
        return out
    phase, (a1, a2), (x, y, z), (b1, b2) = kak_decompose(u)
    nb = math.sqrt(abs(np.linalg.det(b1)))
    out.extend(compile_one_qubit(b1 / nb, q1, n))
    out.extend(compile_one_qubit(b2 * nb, q2, n))
    core = CircuitIR(n)
    _canonical_core(core, q1, q2, -x, -y, z)
    want = _expxyz(x, y, z)
    got = _local_dense(core, q1, q2)
    l1, l2 = _local_fix(want, got)
    nl = math.sqrt(abs(np.linalg.det(l1)))
    out.extend(core)
    out.extend(compile_one_qubit(l1 / nl, q1, n))
    out.extend(compile_one_qubit(l2 * nl, q2, n))
    na = math.sqrt(abs(np.linalg.det(a1)))
    out.extend(compile_one_qubit(a1 / na, q1, n))
    out.extend(compile_one_qubit(a2 * na, q2, n))
    _fit_phase(out, u, q1, q2)
    return out


def _expxyz(a: float, b: float, c: float) -> np.ndarray:
    h = a * np.kron(PAULI["X"], PAULI["X"]) + b * np.kron(PAULI["Y"], PAULI["Y"]) + c * np.kron(PAULI["Z"], PAULI["Z"])
    return expm_hermitian(h, -1.0)


def _local_dense(c: CircuitIR, q1: int, q2: int) -> np.ndarray:
    """4x4 matrix of a circuit supported on ``(q1, q2)`` in the ``|q1 q2>`` basis."""
    local = CircuitIR(2, phase=c.phase)
    remap = {q1: 0, q2: 1}
    for g in c.gates:
        local.gates.append(Gate(g.name, tuple(remap[q] for q in g.qubits), g.angle))
    # circuit_dense uses qubit 0 as least significant; reorder to q1-major
    m = circuit_dense(local)
    perm = [0, 2, 1, 3]
    return m[np.ix_(perm, perm)]


def _fit_phase(c: CircuitIR, target: np.ndarray, q1: int, q2: int) -> None:
    got = _local_dense(c, q1, q2)
    c.phase += float(np.angle(np.vdot(got.ravel(), target.ravel())))
    err = np.linalg.norm(_local_dense(c, q1, q2) - target)
    if err > 1e-8:
        raise ContractError(f"two-qubit synthesis residual {err:.2e} exceeds tolerance")


def bond_matrix(bond: PauliSum, a: int, b: int) -> np.ndarray:
    """4x4 matrix of a bond Hamiltonian in the ``|a b>`` basis."""
    m = np.zeros((4, 4), dtype=complex)
    for coeff, label in bond.terms:
        pa, pb = label[a], label[b]
        m += coeff * np.kron(PAULI[pa], PAULI[pb])
    return m


# ---------------------------------------------------------------- Trotter


def _ring_bipartition(keys, L: int) -> tuple[list, list] | None:
    """Bonds starting on even sites and on odd sites, if ``keys`` is a nearest-neighbour ring of even length."""
    if L % 2 or any(b != (a + 1) % L for a, b in keys):
        return None
    return [k for k in keys if k[0] % 2 == 0], [k for k in keys if k[0] % 2 == 1]


def trotterize(h: PauliSum, plan: TrotterPlan | float, order: int = 2, M: int = 1) -> CircuitIR:
    """Product-formula circuit for ``exp(-i t h)``.

    Order 1 applies every bond once per step. Order 2 on an even
    nearest-neighbour ring splits it into bonds starting on even sites and
    bonds starting on odd sites and uses ``even(tau/2) odd(tau) even(tau/2)``.
    Other bond sets (e.g. with next-nearest couplings) use the palindromic
    ordering ``b_1..b_n(tau/2)`` then ``b_n..b_1(tau/2)``. No merging across
    steps is done.
    """
    if not isinstance(plan, TrotterPlan):
        plan = TrotterPlan(float(plan), order, M)
    L = h.n_qubits
    out = CircuitIR(L)
    if plan.t == 0:
        return out
    bonds = group_bonds(h)
    keys = sorted(bonds)
    tau = plan.t / plan.M
    split = _ring_bipartition(keys, L)
    if plan.order == 1:
        pattern = [(keys, tau)]
    elif split is not None:
        pattern = [(split[0], tau / 2), (split[1], tau), (split[0], tau / 2)]
    else:
        pattern = [(keys, tau / 2), (keys[::-1], tau / 2)]
    mats = {k: bond_matrix(bonds[k], *k) for k in bonds}
    for _ in range(plan.M):
        for keys, dt in pattern:
            for k in keys:
                out.extend(_block_cached(mats[k].tobytes(), dt, k[0], k[1], L))
    return out


@lru_cache(maxsize=4096)
def _block_cached_impl(key: bytes, dt: float) -> CircuitIR:
    m = np.frombuffer(key, dtype=complex).reshape(4, 4)
    return compile_two_qubit_block(expm_hermitian(m, dt), 0, 1, 2)


def _block_cached(key: bytes, dt: float, a: int, b: int, L: int) -> CircuitIR:
    local = _block_cached_impl(key, dt)
    remap = {0: a, 1: b}
    return CircuitIR(L, [Gate(g.name, tuple(remap[q] for q in g.qubits), g.angle) for g in local.gates], local.phase)


# ----------------------------------------------------- cheap special cases


def compile_diagonal_ising(spec: IsingDiagonalSpec, t: float, n_qubits: int | None = None) -> CircuitIR:
    """``exp(-i t D)``: RZ per field term and CNOT-RZ-CNOT per ring coupling."""
    L = spec.L
    out = CircuitIR(L if n_qubits is None else n_qubits)
    for a in range(L):
        _emit(out, "RZ", (a,), 2 * t * spec.alpha[a])
    if L < 2:
        return out
    for a in range(L):
        ang = 2 * t * spec.beta[a]
        if abs(ang) < PRUNE:
            continue
        b = (a + 1) % L
        out.append("CNOT", (a, b))
        out.append("RZ", (b,), ang)
        out.append("CNOT", (a, b))
    return out


def compile_tfim_bond(B: float, t: float, q1: int, q2: int, n_qubits: int | None = None) -> CircuitIR:
    """``exp(-i t (X1 X2 + B Z1))`` as CNOT, one rotation on ``q1``, CNOT.

    Conjugation by a CNOT controlled on ``q1`` maps ``X1 X2`` to ``X1`` and
    fixes ``Z1``, so the bond becomes a single-qubit evolution.
    """
    n = max(q1, q2) + 1 if n_qubits is None else n_qubits
    out = CircuitIR(n)
    if t == 0:
        return out
    out.append("CNOT", (q1, q2))
    u = expm_hermitian(PAULI["X"] + B * PAULI["Z"], t)
    out.extend(compile_one_qubit(u, q1, n))
    out.append("CNOT", (q1, q2))
    return out


# --------------------------------------------------------- GCI lowering


def lower_sequence(
    seq: PrimitiveSequence,
    h0: PauliSum,
    warm: CircuitIR,
    reference: int = 0,
    order: int = 2,
    M: int = 1,
    skip_omissible: bool = False,
) -> CircuitIR:
    """Full gate-level circuit: reference preparation, then every primitive in time order."""
    L = seq.n_qubits
    out = CircuitIR(L)
    for q in range(L):
        if (reference >> q) & 1:
            out.append("X", (q,))
    winv = warm.inverse()
    h0_cache: dict[float, CircuitIR] = {}
    for p in seq:
        if skip_omissible and p.omissible:
            continue
        if isinstance(p, H0Evolution):
            if p.t not in h0_cache:
                h0_cache[p.t] = trotterize(h0, TrotterPlan(p.t, order, M))
            out.extend(h0_cache[p.t])
        elif isinstance(p, DiagonalEvolution):
            out.extend(compile_diagonal_ising(p.d, p.t))
        elif isinstance(p, WarmStart):
            out.extend(warm)
        elif isinstance(p, WarmStartInverse):
            out.extend(winv)
    return out


def lower_plan(plan: GciPlan, h0: PauliSum, order: int = 2, M: int = 1, skip_omissible: bool = False) -> CircuitIR:
    if not isinstance(plan.warm_start, CircuitIR):
        raise ContractError("lowering needs the warm start as a circuit")
    return lower_sequence(unfold(plan), h0, plan.warm_start, plan.reference, order, M, skip_omissible)


# ------------------------------------------------------------------ QASM

_QASM_NAMES = {"CZ": "cz", "CNOT": "cx", "RX": "rx", "RY": "ry", "RZ": "rz", "X": "x"}
_FROM_QASM = {v: k for k, v in _QASM_NAMES.items()}
HEADER = 'OPENQASM 2.0;\ninclude "qelib1.inc";\n'


def emit_qasm(c: CircuitIR) -> str:
    lines = [HEADER.rstrip("\n"), f"qreg q[{c.n_qubits}];"]
    for g in c.gates:
        if g.name not in _QASM_NAMES:
            raise LoweringRequiredError(f"gate {g.name} must be lowered before QASM emission")
        args = ",".join(f"q[{q}]" for q in g.qubits)
        name = _QASM_NAMES[g.name]
        if g.name in ("RX", "RY", "RZ"):
            lines.append(f"{name}({g.angle!r}) {args};")
        else:
            lines.append(f"{name} {args};")
    return "\n".join(lines) + "\n"


_STMT = re.compile(r"^(?P<name>[a-z]+)(?:\((?P<arg>[^)]*)\))?\s+(?P<qubits>q\[\d+\](?:\s*,\s*q\[\d+\])*)$")


def parse_qasm(text: str) -> CircuitIR:
    """Parse the OpenQASM 2.0 subset written by :func:`emit_qasm`."""
    body = re.sub(r"//[^\n]*", "", text)
    stmts = [s.strip() for s in body.split(";") if s.strip()]
    if len(stmts) < 2 or stmts[0] != "OPENQASM 2.0" or stmts[1] != 'include "qelib1.inc"':
        raise ContractError("missing OpenQASM 2.0 header")
    circ: CircuitIR | None = None
    for s in stmts[2:]:
        m = re.fullmatch(r"qreg\s+q\[(\d+)\]", s)
        if m:
            if circ is not None:
                raise ContractError("only one quantum register is supported")
            circ = CircuitIR(int(m.group(1)))
            continue
        m = _STMT.match(s)
        if not m or m.group("name") not in _FROM_QASM:
            raise ContractError(f"unsupported QASM statement: {s!r}")
        if circ is None:
            raise ContractError("gate before register declaration")
        qs = [int(x) for x in re.findall(r"q\[(\d+)\]", m.group("qubits"))]
        angle = float(m.group("arg")) if m.group("arg") is not None else 0.0
        circ.append(_FROM_QASM[m.group("name")], qs, angle)
    if circ is None:
        raise ContractError("no quantum register declared")
    return circ
