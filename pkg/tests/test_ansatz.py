import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

import oracles
from dbqa.ansatz import (
    AnsatzKernel,
    adam_train,
    build_hea,
    build_hwp,
    circuit_unitary,
    parameter_shift_gradient,
    prepare_state,
    random_thetas,
)
from dbqa.circuit import CircuitIR, gate_matrix, rbs_lowered
from dbqa.errors import ContractError, TrainingError
from dbqa.hamiltonians import XxzSpec, build_xxz
from dbqa.qcore import PauliSum, circuit_dense, hamming_sector, pauli_to_dense

seeds = st.integers(0, 2**32 - 1)


def popcount(i):
    return bin(i).count("1")


# ------------------------------------------------------------- layouts


@pytest.mark.parametrize("layers, p, n_cz, depth", [(3, 60, 120, 12), (4, 80, 160, 16), (5, 100, 200, 20)])
def test_hwp_counts_at_l10(layers, p, n_cz, depth):
    c = build_hwp(10, layers)
    assert c.n_params == p
    assert c.to_circuit().count("RBS") == 2 * 10 * layers
    lowered = c.to_circuit(lowered=True)
    assert lowered.count("CZ") == n_cz == c.n_cz
    assert lowered.n_two_qubit // 10 == depth and c.depth == depth
    assert c.shift_multiplier == 4


def test_hwp_layer_has_nn_and_nnn_rings():
    pairs = [g.qubits for g in build_hwp(6, 1).to_circuit().gates]
    nn = {frozenset((i, (i + 1) % 6)) for i in range(6)}
    nnn = {frozenset((i, (i + 2) % 6)) for i in range(6)}
    assert {frozenset(p) for p in pairs[:6]} == nn
    assert {frozenset(p) for p in pairs[6:]} == nnn


def test_hwp_requires_even_l():
    with pytest.raises(ContractError):
        build_hwp(5, 1)
    with pytest.raises(ContractError):
        build_hwp(2, 1)


def test_hwp_zero_angles_keep_initial_bitstring():
    c = build_hwp(10, 3)
    assert c.initial_bitstring == (1,) * 5 + (0,) * 5
    psi = prepare_state(c).amplitudes
    assert psi[c.initial_index] == pytest.approx(1.0)
    assert c.initial_index == 0b0000011111
    assert np.allclose(circuit_unitary(build_hwp(4, 2)).matrix, np.eye(16))


@pytest.mark.parametrize("layers, p, n_cz", [(7, 290, 70), (8, 330, 80), (9, 370, 90)])
def test_hea_counts_at_l10(layers, p, n_cz):
    c = build_hea(10, layers)
    assert c.n_params == p
    assert c.to_circuit().count("CZ") == n_cz == c.n_cz
    assert c.depth == layers
    assert c.shift_multiplier == 2
    assert c.initial_index == 0


def test_hea_zero_angles_leave_zero_state():
    c = build_hea(4, 2)
    psi = prepare_state(c).amplitudes
    assert abs(psi[0]) == pytest.approx(1.0)


@given(seeds, st.sampled_from([4, 6]), st.integers(1, 2))
def test_circuits_are_unitary(seed, L, layers):
    for build in (build_hwp, build_hea):
        c = build(L, layers)
        c = c.with_thetas(random_thetas(c, seed))
        u = circuit_unitary(c).matrix
        assert np.max(np.abs(u.conj().T @ u - np.eye(2**L))) < 1e-10


@given(seeds, st.sampled_from([4, 6]))
def test_hwp_conserves_hamming_weight(seed, L):
    c = build_hwp(L, 2)
    c = c.with_thetas(random_thetas(c, seed))
    psi = prepare_state(c).amplitudes
    leak = sum(abs(psi[i]) ** 2 for i in range(2**L) if popcount(i) != L // 2)
    assert leak < 1e-12
    total_z = sum(oracles.site_op(L, {q: oracles.Z}) for q in range(L))
    assert np.vdot(psi, total_z @ psi).real == pytest.approx(0.0, abs=1e-12)
    # the lowered gate sequence conserves weight too
    e = np.zeros(2**L, dtype=complex)
    e[c.initial_index] = 1.0
    lowered = circuit_dense(c.to_circuit(lowered=True)) @ e
    assert np.allclose(lowered, psi, atol=1e-12)


@given(st.floats(-10, 10))
def test_rbs_lowering_equals_gate_matrix(theta):
    lowered = circuit_dense(CircuitIR(2, rbs_lowered(1, 0, theta)))
    # qubit 1 first = most significant, so the dense matrix is already |q1 q0>
    assert np.max(np.abs(lowered - gate_matrix("RBS", theta))) < 1e-12
    assert sum(g.name == "CZ" for g in rbs_lowered(0, 1, theta)) == 2


def test_rbs_lowering_hundred_angles():
    for theta in np.random.default_rng(0).uniform(-math.pi, math.pi, 100):
        lowered = circuit_dense(CircuitIR(2, rbs_lowered(1, 0, theta)))
        assert np.max(np.abs(lowered - gate_matrix("RBS", theta))) < 1e-12


# ----------------------------------------------------------- kernels


@pytest.mark.parametrize("build", [build_hwp, build_hea])
def test_kernel_agrees_with_dense_circuit(build):
    L = 4
    c = build(L, 2)
    c = c.with_thetas(random_thetas(c, 11))
    h = build_xxz(XxzSpec(L, 0.5))
    k = AnsatzKernel(c, h, basis=np.arange(2**L))
    psi = prepare_state(c).amplitudes
    assert np.allclose(k.state(), psi, atol=1e-12)
    assert np.allclose(k.unitary(), circuit_unitary(c).matrix, atol=1e-12)
    e = np.vdot(psi, pauli_to_dense(h).matrix @ psi).real
    assert k.energy() == pytest.approx(e, abs=1e-12)


def test_sector_kernel_matches_full_space():
    c = build_hwp(6, 2)
    c = c.with_thetas(random_thetas(c, 4))
    h = build_xxz(XxzSpec(6, 0.5))
    sector = AnsatzKernel(c, h)
    assert np.array_equal(sector.basis, hamming_sector(6, 3))
    full = AnsatzKernel(c, h, basis=np.arange(64))
    assert sector.energy() == pytest.approx(full.energy(), abs=1e-12)
    assert np.allclose(sector.embed(sector.state()), full.state(), atol=1e-12)


# ----------------------------------------------------------- gradients


def toy_ry_circuit(theta):
    """HEA with every angle zero except the final RY on qubit 0: RY(theta)|0>."""
    c = build_hea(2, 1)
    t = np.zeros(c.n_params)
    t[4 * 2 * 1] = theta
    return c.with_thetas(t)


def test_toy_gradient_critical_point_and_slope():
    h = PauliSum(2, [(1.0, "ZI")])
    assert parameter_shift_gradient(toy_ry_circuit(0.0), h)[8] == pytest.approx(0.0, abs=1e-14)
    assert parameter_shift_gradient(toy_ry_circuit(math.pi / 2), h)[8] == pytest.approx(-1.0, abs=1e-12)


def finite_difference(c, h, step=1e-5):
    k = AnsatzKernel(c, h, basis=np.arange(2**c.L))
    out = np.zeros(c.n_params)
    for i in range(c.n_params):
        tp, tm = c.thetas.copy(), c.thetas.copy()
        tp[i] += step
        tm[i] -= step
        out[i] = (k.energy(tp) - k.energy(tm)) / (2 * step)
    return out


@pytest.mark.parametrize("build, L", [(build_hwp, 4), (build_hea, 4), (build_hwp, 6)])
def test_shift_rule_matches_finite_differences(build, L):
    h = build_xxz(XxzSpec(L, 0.5))
    c = build(L, 1)
    c = c.with_thetas(random_thetas(c, 21))
    ps = parameter_shift_gradient(c, h)
    fd = finite_difference(c, h)
    assert np.linalg.norm(ps - fd) <= 1e-6 * np.linalg.norm(fd)


@given(seeds)
def test_adjoint_gradient_matches_shift_rule(seed):
    h = build_xxz(XxzSpec(4, 0.5))
    for build in (build_hwp, build_hea):
        c = build(4, 1)
        c = c.with_thetas(random_thetas(c, seed))
        k = AnsatzKernel(c, h, basis=np.arange(16))
        _, g = k.energy_and_gradient(c.thetas)
        assert np.allclose(g, parameter_shift_gradient(c, h), atol=1e-10)


# ------------------------------------------------------------ training


def test_zero_learning_rate_freezes_parameters():
    c = build_hwp(4, 1)
    log = adam_train(c, build_xxz(XxzSpec(4, 0.5)), 20, lr=0.0, seed=1)
    assert np.array_equal(log.thetas, log.initial_thetas)
    assert np.allclose(log.energies, log.energies[0], atol=1e-14)


def test_training_records_and_reproducibility():
    c = build_hwp(4, 1)
    h = build_xxz(XxzSpec(4, 0.5))
    a = adam_train(c, h, 30, seed=9, checkpoints=[0, 10, 30])
    b = adam_train(c, h, 30, seed=9)
    assert len(a.energies) == 31 and a.epochs == 30
    assert np.array_equal(a.energies, b.energies)
    assert np.array_equal(a.initial_thetas, random_thetas(c, 9))
    assert np.all(np.abs(a.initial_thetas) <= math.pi)
    assert sorted(a.checkpoints) == [0, 10, 30]
    assert np.array_equal(a.checkpoints[0], a.initial_thetas)
    assert np.array_equal(a.checkpoints[30], a.thetas)
    assert a.n_cz == c.n_cz
    assert a.final_energy == pytest.approx(AnsatzKernel(c, h).energy(a.thetas), abs=1e-12)
    assert a.final_energy < a.energies[0]


def test_non_finite_loss_aborts():
    c = build_hwp(4, 1)
    bad = np.full((16, 16), np.nan)
    with pytest.raises(TrainingError, match="non-finite"):
        adam_train(c, AnsatzKernel(c, bad), 5, seed=0)
    with pytest.raises(ContractError):
        adam_train(c, build_xxz(XxzSpec(4, 0.5)), -1)


def test_adam_moving_average_trend():
    h = build_xxz(XxzSpec(6, 0.5))
    c = build_hwp(6, 2)
    kernel = AnsatzKernel(c, h)
    trials, good = 10, 0
    for seed in range(trials):
        e = adam_train(c, kernel, 500, seed=seed).energies[:500]
        ma = np.convolve(e, np.ones(50) / 50, mode="valid")
        good += bool(np.all(np.diff(ma) <= 1e-12))
    assert good >= 0.9 * trials
