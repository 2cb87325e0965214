import numpy as np
import pytest

from stereosparse.core.errors import ConfigurationError, DomainError, ShapeError
from stereosparse.core.tensor import KernelStack, correlate, reconstruct
from stereosparse.data.synth import planted_atoms, planted_sparse_batches
from stereosparse.models.base import LcaConfig
from stereosparse.solvers.ista import (
    MAX_ORACLE_VARIABLES, OracleSizeError, dense_operator, ista_oracle, power_iteration,
)
from stereosparse.solvers.lca import (
    SolverDivergenceError, activation_shape, energy, init_state, lca_encode, lca_step, lipschitz_bound, soft_threshold,
    step_rate,
)

def random_dictionary(rng, features, kernel, channels=1, stride=(1, 1, 1)):
    weights = rng.standard_normal((features, *kernel, channels))
    weights /= np.linalg.norm(weights.reshape(features, -1), axis=1).reshape(features, 1, 1, 1, 1)
    return KernelStack(weights, stride)

def test_soft_threshold():
    np.testing.assert_array_equal(soft_threshold(np.array([-2.0, -0.5, 0.0, 0.5, 2.0]), 1.0),
                                  [-1.0, 0.0, 0.0, 0.0, 1.0])
    np.testing.assert_array_equal(soft_threshold(np.array([0.3, -0.3]), 0.0), [0.3, -0.3])
    with pytest.raises(DomainError):
        soft_threshold(np.zeros(3), -0.1)

def test_energy_matches_dense_evaluation(rng, small_dictionary):
    I = rng.standard_normal((1, 1, 6, 6, 1))
    a = rng.standard_normal(activation_shape(I, small_dictionary))
    D, _ = dense_operator(small_dictionary, I.shape)
    residual = I.ravel() - D @ a.ravel()
    expected = 0.5 * residual @ residual + 0.3 * np.abs(a).sum()
    report = energy(I, a, small_dictionary, 0.3)
    assert report.total == pytest.approx(expected, rel=1e-6)
    assert report.nnz == a.size
    with pytest.raises(ShapeError):
        energy(rng.standard_normal((1, 1, 9, 9, 1)), a, small_dictionary, 0.3)

def test_zero_input_gives_zero_activations(small_dictionary):
    state = lca_encode(np.zeros((1, 1, 6, 6, 1)), small_dictionary)
    assert state.converged
    assert np.count_nonzero(state.a) == 0
    assert state.energy.total == 0.0

def test_threshold_above_drive_returns_immediately(rng, small_dictionary):
    I = rng.standard_normal((1, 1, 6, 6, 1))
    lam = float(np.max(np.abs(correlate(I, small_dictionary)))) + 1e-9
    state = lca_encode(I, small_dictionary, LcaConfig(lam=lam))
    assert state.iterations == 0
    assert state.converged
    assert np.count_nonzero(state.a) == 0
    assert len(state.energy_trace) == 1

def test_single_atom_input_recovers_that_atom():
    phi = KernelStack(np.eye(4).reshape(4, 1, 2, 2, 1))
    I = (3.0 * phi.weights[2]).reshape(1, 1, 2, 2, 1)
    state = lca_encode(I, phi, LcaConfig(lam=0.1, max_iters=400))
    a = state.a.ravel()
    assert int(np.argmax(np.abs(a))) == 2
    assert a[2] == pytest.approx(2.9, abs=1e-2)

def test_energy_trace_is_monotone(rng):
    phi = random_dictionary(rng, 4, (1, 3, 3), stride=(1, 2, 2))
    for _ in range(5):
        I = rng.standard_normal((1, 1, 9, 9, 1))
        state = lca_encode(I, phi, LcaConfig(lam=0.1, max_iters=300))
        j0 = state.energy_trace[0].total
        totals = [r.total for r in state.energy_trace]
        assert all(b <= a + 1e-6 * j0 for a, b in zip(totals, totals[1:]))

def test_lca_matches_ista_oracle(rng):
    """Final energy within 1% of the dense proximal-gradient solution."""
    for _ in range(20):
        features = int(rng.integers(2, 6))
        phi = random_dictionary(rng, features, (1, 3, 3))
        I = rng.standard_normal((1, 1, 8, 8, 1))
        cfg = LcaConfig(lam=0.1, max_iters=3000, stop_tol=1e-8, residual_tol=1e-6)
        state = lca_encode(I, phi, cfg)
        reference = energy(I, ista_oracle(I, phi, 0.1, 3000, accelerated=True), phi, 0.1)
        assert state.energy.total <= reference.total * 1.01 + 1e-9

def test_fixed_point_residual_at_convergence(rng, small_dictionary):
    I = rng.standard_normal((1, 1, 8, 8, 1))
    state = lca_encode(I, small_dictionary, LcaConfig(lam=0.1, max_iters=5000))
    assert state.converged
    scale = np.max(np.abs(state.u))
    assert state.fixed_point_gap <= 1e-3 * scale
    gap = np.max(np.abs(state.u - (correlate(state.residual, small_dictionary) + state.a)))
    assert gap <= 2e-3 * scale

def test_batch_items_are_independent(rng, small_dictionary):
    """Each batch item follows its solo trajectory for the same number of steps."""
    I = rng.standard_normal((3, 1, 6, 6, 1))
    cfg = LcaConfig(lam=0.1, max_iters=40, stop_tol=0.0, residual_tol=0.0)
    batch = lca_encode(I, small_dictionary, cfg)
    for i in range(3):
        solo = lca_encode(I[i:i + 1], small_dictionary, cfg)
        np.testing.assert_allclose(batch.a[i], solo.a[0], rtol=1e-10, atol=1e-12)

def test_lca_step_rejects_mismatched_state(rng, small_dictionary):
    I = rng.standard_normal((1, 1, 6, 6, 1))
    state = init_state(I, small_dictionary, 0.1)
    with pytest.raises(ShapeError):
        lca_step(state, rng.standard_normal((1, 1, 7, 7, 1)), small_dictionary, LcaConfig())

def test_invalid_config_rejected(rng, small_dictionary):
    I = rng.standard_normal((1, 1, 6, 6, 1))
    with pytest.raises(ConfigurationError):
        lca_encode(I, small_dictionary, LcaConfig(lam=-1.0))
    with pytest.raises(ConfigurationError):
        lca_encode(I, small_dictionary, LcaConfig(dt=2.0, tau=1.0))

def test_divergence_names_integration_rate():
    """Unnormalized atoms with an uncapped full-size step overshoot."""
    phi = KernelStack(np.full((2, 1, 2, 2, 1), 5.0))
    I = np.ones((1, 1, 4, 4, 1))
    with pytest.raises(SolverDivergenceError, match="dt/tau"):
        lca_encode(I, phi, LcaConfig(lam=0.0, dt=1.0, tau=1.0, max_iters=50, stable_rate=False))

def test_dense_operator_matches_reconstruct(rng, small_dictionary):
    I = rng.standard_normal((2, 1, 5, 5, 1))
    D, act_shape = dense_operator(small_dictionary, I.shape)
    a = rng.standard_normal(act_shape)
    np.testing.assert_allclose(D @ a.ravel(), reconstruct(a, small_dictionary, (1, 5, 5)).ravel(), atol=1e-12)

def test_oracle_refuses_large_problems(rng):
    phi = random_dictionary(rng, 64, (1, 3, 3))
    I = rng.standard_normal((1, 1, 12, 12, 1))
    assert 64 * 10 * 10 > MAX_ORACLE_VARIABLES
    with pytest.raises(OracleSizeError):
        ista_oracle(I, phi, 0.1, 10)

def test_oracle_least_squares_when_unregularized(rng):
    """lambda = 0 with a square invertible dictionary solves the linear system."""
    weights = rng.standard_normal((4, 1, 2, 2, 1)) + 2.0 * np.eye(4).reshape(4, 1, 2, 2, 1)
    phi = KernelStack(weights)
    I = rng.standard_normal((1, 1, 2, 2, 1))
    a = ista_oracle(I, phi, 0.0, 20000, accelerated=True)
    D, _ = dense_operator(phi, I.shape)
    np.testing.assert_allclose(a.ravel(), np.linalg.solve(D, I.ravel()), atol=1e-4)

def test_power_iteration_largest_eigenvalue(rng):
    m = rng.standard_normal((6, 6))
    gram = m.T @ m
    assert power_iteration(gram, iters=5000) == pytest.approx(np.linalg.eigvalsh(gram)[-1], rel=1e-6)
    assert power_iteration(np.zeros((3, 3))) == 0.0

@pytest.mark.parametrize("scale", [0.5, 2.0, 7.0])
def test_soft_threshold_scale_covariance(rng, scale):
    u = rng.standard_normal(50)
    np.testing.assert_allclose(soft_threshold(scale * u, scale * 0.3), scale * soft_threshold(u, 0.3),
                               rtol=1e-12, atol=1e-12)

def test_lipschitz_bound_of_pointwise_dictionary_is_exact(rng):
    phi = KernelStack(rng.standard_normal((3, 1, 1, 1, 4)))
    I = rng.standard_normal((1, 1, 3, 3, 4))
    D, _ = dense_operator(phi, I.shape)
    assert lipschitz_bound(phi, (1, 3, 3)) == pytest.approx(np.linalg.eigvalsh(D.T @ D)[-1], rel=1e-9)

@pytest.mark.parametrize("stride", [(1, 1, 1), (1, 2, 2)])
def test_lipschitz_bound_dominates_dense_gram(rng, stride):
    phi = random_dictionary(rng, 4, (1, 3, 3), stride=stride)
    I = rng.standard_normal((1, 1, 9, 9, 1))
    D, _ = dense_operator(phi, I.shape)
    bound = lipschitz_bound(phi, activation_shape(I, phi)[1:4])
    assert np.linalg.eigvalsh(D.T @ D)[-1] <= bound * 1.05
    assert bound <= lipschitz_bound(phi) * (1 + 1e-9)

def test_coherent_dictionary_gets_a_capped_rate():
    """32 copies of one flat atom: L = 128, so dt/tau = 0.1 would overshoot."""
    phi = KernelStack(np.full((32, 1, 2, 2, 1), 0.5))
    I = np.ones((1, 1, 4, 4, 1))
    bound = lipschitz_bound(phi, (1, 3, 3))
    assert bound == pytest.approx(128.0)
    assert step_rate(phi, LcaConfig(), (1, 3, 3)) == pytest.approx(1.0 / 128.0)
    assert step_rate(phi, LcaConfig(stable_rate=False), (1, 3, 3)) == pytest.approx(0.1)

    state = lca_encode(I, phi)
    totals = [r.total for r in state.energy_trace]
    assert max(totals) <= totals[0] * (1 + 1e-9)
    assert totals[-1] < totals[0]
    with pytest.raises(SolverDivergenceError):
        lca_encode(I, phi, LcaConfig(stable_rate=False))

def test_small_dictionary_keeps_the_configured_rate(small_dictionary):
    assert step_rate(small_dictionary, LcaConfig(dt=0.05), (1, 4, 4)) == 0.05

def test_default_codes_are_sparse_on_planted_data():
    """Two of 32 atoms per sample: the codes stay well under 15% dense."""
    atoms = planted_atoms(32, (2, 6, 6), 1, seed=21)
    samples = planted_sparse_batches(atoms, k=2, noise=0.01, seed=22)
    I = np.stack([next(samples) for _ in range(16)])
    state = lca_encode(I, atoms)
    assert 0 < state.energy.nnz <= 0.15 * state.a.size
