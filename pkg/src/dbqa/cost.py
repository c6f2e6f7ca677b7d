"""Two-qubit gate accounting and the depth-budget heuristic.

Depth is a count density: total CZ-equivalent gates divided by the number
of qubits. All arithmetic is exact (integers and fractions).
"""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass
from fractions import Fraction

from .errors import ContractError
from .gci import GciVariant


def _nonneg_int(name: str, v) -> int:
    if int(v) != v or v < 0:
        raise ContractError(f"{name} must be a non-negative integer, got {v}")
    return int(v)


def vqe_cost(k: int, p: int, e: int, n_cz: int) -> int:
    """Two-qubit gates spent by shift-rule training: ``k p e n_cz``."""
    return _nonneg_int("k", k) * _nonneg_int("p", p) * _nonneg_int("e", e) * _nonneg_int("n_cz", n_cz)


def total_cost(k: int, p: int, e: int, n_cz_vqe: int, n_fval: int = 0, n_cz_dbqa: int = 0) -> int:
    """Training cost plus ``n_fval`` evaluations of the refined circuit."""
    return vqe_cost(k, p, e, n_cz_vqe) + _nonneg_int("n_fval", n_fval) * _nonneg_int("n_cz_dbqa", n_cz_dbqa)


def implied_n_fval(total: float, vqe: float, n_cz_dbqa: int) -> float:
    """Evaluation count that reconciles a reported total with the training cost."""
    if n_cz_dbqa <= 0:
        raise ContractError("refined circuit must contain two-qubit gates")
    return (total - vqe) / n_cz_dbqa


def gci_depth(d_q, d_t, d_d, k: int, variant: GciVariant | str = GciVariant.RHOPF) -> Fraction:
    """Per-qubit depth of ``k`` unfolded RHOPF steps after the warm start.

    Step ``j+1`` queries the evolution under the Hamiltonian rotated by the
    whole circuit built so far, of depth ``P_j = d_Q + c_1 + ... + c_j``, so
    ``c_{j+1} = 3 d_D + 2 (2 P_j + d_T)``. The total is ``P_k``. For
    ``k <= 2`` this coincides with ``c_{j+1} = 3 d_D + 2 (2 c_j + 2 d_Q + d_T)``.
    """
    if GciVariant(variant) is not GciVariant.RHOPF:
        raise ContractError("closed-form depth is only derived for RHOPF")
    if not 0 <= k <= 3:
        raise ContractError("k must be between 0 and 3")
    d_q, d_t, d_d = Fraction(d_q), Fraction(d_t), Fraction(d_d)
    total = d_q
    for _ in range(k):
        total += 3 * d_d + 2 * (2 * total + d_t)
    return total


def count_cz(queries: tuple[int, int, int], n_cz_h0: int, n_cz_diag: int, n_cz_warm: int) -> int:
    """CZ count from ``(H0 queries, diagonal evolutions, warm-start calls)``."""
    h, d, w = queries
    return h * n_cz_h0 + d * n_cz_diag + w * n_cz_warm


@dataclass(frozen=True)
class CostLedger:
    """Gate budget of one pipeline stage.

    ``n_cz_circuit`` is the two-qubit count of the stage's state-preparation
    circuit; ``n_cz_vqe`` is that of the trained warm start. ``n_fval``
    evaluations of this stage's circuit were spent tuning it, and
    ``n_cz_prior`` carries the tuning cost of earlier stages.
    """

    L: int
    n_cz_circuit: int
    k: int
    p: int
    e: int
    n_cz_vqe: int
    n_fval: int = 0
    n_cz_prior: int = 0

    def __post_init__(self):
        for name in ("n_cz_circuit", "k", "p", "e", "n_cz_vqe", "n_fval", "n_cz_prior"):
            _nonneg_int(name, getattr(self, name))
        if self.L < 1:
            raise ContractError("L must be >= 1")

    @property
    def depth_per_qubit(self) -> Fraction:
        return Fraction(self.n_cz_circuit, self.L)

    @property
    def vqe(self) -> int:
        return vqe_cost(self.k, self.p, self.e, self.n_cz_vqe)

    @property
    def cumulative(self) -> int:
        return self.vqe + self.n_cz_prior + self.n_fval * self.n_cz_circuit

    def to_dict(self) -> dict:
        d = asdict(self)
        d["depth_per_qubit"] = float(self.depth_per_qubit)
        d["cumulative"] = self.cumulative
        return d


@dataclass(frozen=True)
class DepthBudget:
    N: int
    p_e: float
    p_e_prime: float
    success: float
    N_prime: int


def depth_equivalent(N: int, p_e: float, p_e_prime: float) -> DepthBudget:
    """Success ``(1-p_e)^N`` and the gate count with equal success at rate ``p_e_prime``."""
    for name, v in (("p_e", p_e), ("p_e_prime", p_e_prime)):
        if not 0 < v < 1:
            raise ContractError(f"{name} must lie in (0, 1), got {v}")
    _nonneg_int("N", N)
    success = (1 - p_e) ** N
    n_prime = round(N * math.log1p(-p_e) / math.log1p(-p_e_prime))
    return DepthBudget(int(N), p_e, p_e_prime, success, int(n_prime))
