import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

import oracles
from dbqa.ansatz import AnsatzKernel, adam_train, build_hwp
from dbqa.dbi import (
    CostKind,
    DbiState,
    DbrStep,
    bracket,
    brockett_euler,
    dbi_step,
    dbr,
    dbr_cost_function,
    energy_fluctuation,
    initial_guess,
    monotonicity_slope,
    offdiag_hs_norm,
    optimize_d,
    optimize_s,
)
from dbqa.errors import ContractError, DimensionError, StepSizeError
from dbqa.hamiltonians import IsingDiagonalSpec, XxzSpec, build_xxz
from dbqa.qcore import DenseOperator, Statevector, haar_unitary, pauli_to_dense, random_hermitian

seeds = st.integers(0, 2**32 - 1)


def random_ising(L, r, scale=1.0):
    return IsingDiagonalSpec(scale * r.normal(size=L), scale * r.normal(size=L))


def haar_warm_xxz(L, seed):
    h = pauli_to_dense(build_xxz(XxzSpec(L, 0.5))).matrix
    q = haar_unitary(2**L, np.random.default_rng(seed))
    return q.conj().T @ h @ q


@pytest.fixture(scope="module")
def warm_l6():
    """Sector-restricted A_0 of an XXZ L=6 ring dressed by a briefly trained HWP circuit."""
    h = build_xxz(XxzSpec(6, 0.5))
    c = build_hwp(6, 1)
    kernel = AnsatzKernel(c, h)
    log = adam_train(c, kernel, 40, seed=3)
    u = kernel.unitary(log.thetas)
    a0 = u.conj().T @ (kernel.h @ u)
    return DbiState.start(a0, reference=c.initial_index, basis=kernel.basis, n_qubits=6)


# -------------------------------------------------------------- bracket


def test_bracket_of_diagonals_vanishes(rng):
    d1, d2 = np.diag(rng.normal(size=4)), np.diag(rng.normal(size=4))
    assert not np.any(bracket(d1, d2))


def test_bracket_z_x():
    assert np.allclose(bracket(oracles.Z, oracles.X), 2j * oracles.Y)


def test_bracket_matches_elementwise_products(rng):
    d, a = random_hermitian(5, rng), random_hermitian(5, rng)
    ref = np.zeros((5, 5), dtype=complex)
    for i in range(5):
        for j in range(5):
            ref[i, j] = sum(d[i, k] * a[k, j] - a[i, k] * d[k, j] for k in range(5))
    w = bracket(d, a)
    assert np.allclose(w, ref, atol=1e-13)
    assert np.max(np.abs(w + w.conj().T)) < 1e-12


def test_bracket_dimension_check():
    with pytest.raises(DimensionError):
        bracket(np.eye(2), np.eye(4))


def test_bracket_keeps_dense_operator_type():
    w = bracket(DenseOperator(1, oracles.Z, True), DenseOperator(1, oracles.X, True))
    assert isinstance(w, DenseOperator)


# ------------------------------------------------------------------ dbr


def test_dbr_zero_duration(rng):
    a = random_hermitian(4, rng)
    assert np.array_equal(dbr(a, np.diag(rng.normal(size=4)), 0.0), a)


@given(seeds, st.floats(-2, 2))
def test_dbr_diagonal_fixed_point(seed, s):
    r = np.random.default_rng(seed)
    a = np.diag(r.normal(size=4)).astype(complex)
    assert np.allclose(dbr(a, np.diag(r.normal(size=4)), s), a, atol=1e-12)


def test_dbr_derivative_is_double_bracket(rng):
    a, d = random_hermitian(4, rng), np.diag(rng.normal(size=4))
    eps = 1e-5
    fd = (dbr(a, d, eps) - dbr(a, d, -eps)) / (2 * eps)
    w = bracket(d, a)
    assert np.allclose(fd, bracket(w, a), atol=1e-8)


def test_dbr_needs_hermitian_inputs():
    with pytest.raises(ContractError):
        dbr(np.array([[0, 1], [0, 0]], dtype=complex), oracles.Z, 0.1)


@given(seeds, st.floats(0, 1))
def test_dbr_is_isospectral(seed, s):
    r = np.random.default_rng(seed)
    a, d = random_hermitian(8, r), np.diag(r.normal(size=8))
    out = dbr(a, d, s)
    assert np.allclose(np.linalg.eigvalsh(out), np.linalg.eigvalsh(a), atol=1e-9)


# -------------------------------------------------------- off-diagonal norm


def test_offdiag_norm_cases(rng):
    assert offdiag_hs_norm(np.diag([1.0, 2.0, 3.0])) == 0.0
    assert offdiag_hs_norm(oracles.X) == pytest.approx(math.sqrt(2))
    m = rng.normal(size=(6, 6)) + 1j * rng.normal(size=(6, 6))
    ref = math.sqrt(sum(abs(m[i, j]) ** 2 for i in range(6) for j in range(6) if i != j))
    assert offdiag_hs_norm(m) == pytest.approx(ref, rel=1e-12)


# -------------------------------------------------------- energy fluctuation


def test_fluctuation_vanishes_on_eigenvectors(rng):
    h = random_hermitian(8, rng)
    _, vecs = np.linalg.eigh(h)
    for k in range(8):
        assert energy_fluctuation(vecs[:, k], h) < 1e-9


def test_fluctuation_of_plus_under_z():
    plus = Statevector(1, np.array([1, 1]) / math.sqrt(2))
    assert energy_fluctuation(plus, oracles.Z) == pytest.approx(1.0)


def test_fluctuation_matches_moments(rng):
    h = random_hermitian(8, rng)
    v = rng.normal(size=8) + 1j * rng.normal(size=8)
    v /= np.linalg.norm(v)
    m1 = np.vdot(v, h @ v).real
    m2 = np.vdot(v, h @ h @ v).real
    assert energy_fluctuation(v, h) == pytest.approx(math.sqrt(m2 - m1**2), rel=1e-10)
    with pytest.raises(DimensionError):
        energy_fluctuation(v, np.eye(4))


@given(seeds)
def test_fluctuation_zero_iff_reference_is_eigenvector(seed):
    r = np.random.default_rng(seed)
    h = random_hermitian(6, r)
    vals, vecs = np.linalg.eigh(h)
    # eigenvector direction: rotate h so that e_0 is an eigenvector
    q = np.linalg.qr(np.column_stack([vecs[:, 2], r.normal(size=(6, 5))]))[0]
    rotated = q.conj().T @ h @ q
    state = DbiState.start(0.5 * (rotated + rotated.conj().T))
    assert state.cost(CostKind.FLUCTUATION) < 1e-9
    # generic direction: a random rotation leaves e_0 off every eigenvector
    state2 = DbiState.start(h)
    assert state2.cost(CostKind.FLUCTUATION) > 1e-3


# ------------------------------------------------------------- optimize_s


def test_optimize_s_diagonal_returns_zero(rng):
    state = DbiState.start(np.diag(rng.normal(size=8)), n_qubits=3)
    s = optimize_s(state, random_ising(3, rng), CostKind.OFFDIAG_HS)
    assert s == 0.0


def test_optimize_s_two_level_matches_fine_scan():
    state = DbiState.start(oracles.X, n_qubits=1)
    d = IsingDiagonalSpec([1.0], [0.0])
    s_max = 1.0
    s_star = optimize_s(state, d, CostKind.OFFDIAG_HS, s_max=s_max)
    grid = np.linspace(0, s_max, 200001)
    scan = [offdiag_hs_norm(dbr(oracles.X, oracles.Z, s)) for s in grid[::100]]
    s_ref = grid[::100][int(np.argmin(scan))]
    assert abs(s_star - s_ref) < 1e-3
    assert offdiag_hs_norm(dbr(oracles.X, oracles.Z, s_star)) < math.sqrt(2) - 0.5
    # the closed form of this rotation reaches zero at s = pi / 8
    assert s_star == pytest.approx(math.pi / 8, abs=1e-5)


def test_optimize_s_never_worse_than_zero(warm_l6):
    for kind in CostKind:
        d = initial_guess(warm_l6, 1.0)
        s = optimize_s(warm_l6, d, kind)
        f = dbr_cost_function(warm_l6, warm_l6.diagonal_of(d), kind)
        assert f(s) <= f(0.0) + 1e-12


def test_optimize_s_requires_positive_interval(warm_l6):
    with pytest.raises(ContractError):
        optimize_s(warm_l6, initial_guess(warm_l6), s_max=0.0)


def test_monotonicity_seed(rng):
    a = random_hermitian(8, rng)
    dvec = np.sort(rng.normal(size=8))
    s = 1e-5
    f = dbr_cost_function(DbiState.start(a), dvec, CostKind.OFFDIAG_HS)
    slope = monotonicity_slope(a, dvec)
    assert (f(s) ** 2 - f(0) ** 2) / s == pytest.approx(slope, rel=1e-3)
    # D matched to diag(A) gives a descent direction
    matched = np.diag(a).real
    assert monotonicity_slope(a, matched) < 0


@given(seeds)
def test_first_order_expansion_property(seed):
    r = np.random.default_rng(seed)
    a = random_hermitian(4, r)
    dvec = r.normal(size=4)
    slope = monotonicity_slope(a, dvec)
    f = dbr_cost_function(DbiState.start(a), dvec, CostKind.OFFDIAG_HS)
    s = 1e-4
    est = (f(s) ** 2 - f(0) ** 2) / s
    scale = np.linalg.norm(bracket(np.diag(dvec), a)) ** 2 * np.linalg.norm(a) ** 2
    if abs(slope) > 1e-2 * math.sqrt(scale):
        assert abs(est - slope) < 0.05 * abs(slope)


# ------------------------------------------------------------- optimize_d


def test_optimize_d_budget_one_returns_guess(warm_l6):
    res = optimize_d(warm_l6, CostKind.ENERGY, budget=1)
    guess = initial_guess(warm_l6)
    assert np.allclose(res.d.as_vector(), guess.as_vector())
    assert res.n_fval == 1
    assert res.value <= res.initial_value


def test_optimize_d_beats_uniform_field_baseline():
    wins = 0
    trials = 10
    for seed in range(trials):
        state = DbiState.start(haar_warm_xxz(4, seed))
        res = optimize_d(state, CostKind.OFFDIAG_HS, budget=300, s_max=0.05, seed=seed)
        uniform = IsingDiagonalSpec.uniform(4, 1.0)
        s_u = optimize_s(state, uniform, CostKind.OFFDIAG_HS, s_max=0.05)
        base = dbr_cost_function(state, state.diagonal_of(uniform), CostKind.OFFDIAG_HS)(s_u)
        after = dbi_step(state, res.d, res.s, CostKind.OFFDIAG_HS).cost(CostKind.OFFDIAG_HS)
        assert after == pytest.approx(res.value, rel=1e-6)
        wins += after < base
    assert wins >= 0.9 * trials


def test_matched_field_guess_beats_uniform_field():
    wins = 0
    trials = 10
    for seed in range(trials):
        state = DbiState.start(haar_warm_xxz(4, 100 + seed))
        uniform = IsingDiagonalSpec.uniform(4, 1.0)
        guess = initial_guess(state, 1.0)
        # D and s trade scale exactly, so compare generators of equal norm
        guess = guess.scaled(np.linalg.norm(state.diagonal_of(uniform)) / np.linalg.norm(state.diagonal_of(guess)))
        results = []
        for d in (guess, uniform):
            s = optimize_s(state, d, CostKind.OFFDIAG_HS, s_max=0.05)
            results.append(dbr_cost_function(state, state.diagonal_of(d), CostKind.OFFDIAG_HS)(s))
        wins += results[0] < results[1]
    assert wins >= 0.9 * trials


def test_optimize_d_cmaes_path(warm_l6):
    res = optimize_d(warm_l6, CostKind.ENERGY, budget=150, method="cmaes", seed=7)
    assert res.value <= res.initial_value
    assert res.n_fval <= 150


def test_optimize_d_is_deterministic(warm_l6):
    r1 = optimize_d(warm_l6, CostKind.ENERGY, budget=200, seed=1)
    r2 = optimize_d(warm_l6, CostKind.ENERGY, budget=200, seed=1)
    assert r1.s == r2.s and np.array_equal(r1.d.as_vector(), r2.d.as_vector())


# --------------------------------------------------------------- dbi_step


def test_dbi_step_zero_duration_only_extends_history(warm_l6):
    out = dbi_step(warm_l6, initial_guess(warm_l6), 0.0)
    assert np.array_equal(out.current, warm_l6.current)
    assert out.k == warm_l6.k + 1
    assert out.steps[-1].s == 0.0


def test_three_optimized_steps_do_not_raise_energy(warm_l6):
    state = warm_l6
    energies = [state.energy()]
    for j in range(3):
        res = optimize_d(state, CostKind.ENERGY, budget=300, seed=j)
        state = dbi_step(state, res.d, res.s, CostKind.ENERGY, n_fval=res.n_fval)
        energies.append(state.energy())
        assert state.steps[-1].cost_after == pytest.approx(state.energy(), abs=1e-12)
    assert all(b <= a + 1e-12 for a, b in zip(energies, energies[1:]))
    assert energies[-1] < energies[0]
    assert np.allclose(np.linalg.eigvalsh(state.current), np.linalg.eigvalsh(warm_l6.a0), atol=1e-9)


def test_prepared_vector_reproduces_energy(warm_l6):
    res = optimize_d(warm_l6, CostKind.ENERGY, budget=100)
    st_ = dbi_step(warm_l6, res.d, res.s)
    v = st_.prepared_vector()
    assert np.vdot(v, warm_l6.a0 @ v).real == pytest.approx(st_.energy(), abs=1e-12)


@given(seeds, st.lists(st.floats(0, 0.3), min_size=1, max_size=3))
def test_dbi_isospectral_and_norm_preserving(seed, durations):
    r = np.random.default_rng(seed)
    state = DbiState.start(random_hermitian(8, r), n_qubits=3)
    for s in durations:
        state = dbi_step(state, random_ising(3, r), s)
    assert np.allclose(np.linalg.eigvalsh(state.current), np.linalg.eigvalsh(state.a0), atol=1e-9)
    assert abs(np.linalg.norm(state.current) - np.linalg.norm(state.a0)) < 1e-9


@given(seeds, st.floats(0, 5))
def test_dbi_fixed_point(seed, s):
    r = np.random.default_rng(seed)
    state = DbiState.start(np.diag(r.normal(size=8)), n_qubits=3)
    out = dbi_step(state, random_ising(3, r), s)
    assert np.max(np.abs(out.current - state.current)) < 1e-12


@given(seeds)
def test_offdiag_cost_monotone_under_optimized_steps(seed):
    r = np.random.default_rng(seed)
    state = DbiState.start(random_hermitian(8, r), n_qubits=3)
    for _ in range(2):
        d = random_ising(3, r)
        s = optimize_s(state, d, CostKind.OFFDIAG_HS, s_max=0.1)
        state = dbi_step(state, d, s, CostKind.OFFDIAG_HS)
        step = state.steps[-1]
        assert step.cost_after <= step.cost_before + 1e-12


def test_state_guards(rng):
    with pytest.raises(ContractError):
        DbiState.start(np.array([[0, 1], [0, 0]], dtype=complex))
    with pytest.raises(ContractError):
        DbiState.start(np.eye(4), reference=7, basis=np.array([0, 1, 2, 3]))
    state = DbiState.start(np.eye(8), n_qubits=3)
    with pytest.raises(DimensionError):
        state.diagonal_of(IsingDiagonalSpec.uniform(4))
    with pytest.raises(ContractError):
        DbrStep(-1.0, IsingDiagonalSpec.uniform(2), 0.0, 0.0, 0.0)


# ---------------------------------------------------------- Brockett flow


def test_brockett_diagonal_fixed_point():
    a = np.diag([3.0, 1.0, 2.0]).astype(complex)
    out = brockett_euler(a, np.diag([1.0, 2.0, 3.0]), 1e-3, 100)
    assert np.allclose(out, a, atol=1e-15)


def test_brockett_sorts_like_n():
    a0 = random_hermitian(3, np.random.default_rng(2024))
    n = np.diag([1.0, 2.0, 3.0])
    dl = 1e-3
    assert dl <= 1e-2 / np.linalg.norm(a0, 2) ** 2
    out = brockett_euler(a0, n, dl, 10_000)
    assert offdiag_hs_norm(out) < 1e-3
    assert offdiag_hs_norm(out) < offdiag_hs_norm(a0)
    diag = np.diag(out).real
    assert np.all(np.diff(diag) > 0)
    # explicit Euler is isospectral only up to its O(dl) truncation
    assert np.allclose(diag, np.linalg.eigvalsh(a0), atol=10 * dl)


def test_brockett_preserves_trace(rng):
    a0 = random_hermitian(4, rng)
    dl = 1e-3
    a = a0
    for _ in range(20):
        nxt = brockett_euler(a, np.diag([1.0, 2.0, 3.0, 4.0]), dl, 1)
        assert abs(np.trace(nxt) - np.trace(a)) < 1e-12
        a = nxt


def test_brockett_divergence_detected(rng):
    with pytest.raises(StepSizeError):
        brockett_euler(random_hermitian(4, rng), np.diag([1.0, 5.0, 9.0, 20.0]), 1.0, 50)
    with pytest.raises(ContractError):
        brockett_euler(np.eye(2), oracles.X, 1e-3, 1)
