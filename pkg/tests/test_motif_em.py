"""Tests for the correlation-motif EM: E-step, M-step, restarts and derived probabilities."""

import itertools
import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from core.errors import InvalidConfigError, PatternDimensionMismatchError
from core.limma import TStatMatrix, compute_t_stats
from core.simulation import preset, simulate_model_based
from methods.cormotif import FitOptions, FitResult, MotifModel, Responsibilities
from methods.cormotif.em import (
    e_step,
    fit,
    has_converged,
    initial_model,
    joint_config_prob,
    log_posterior,
    m_step,
    marginal_config_prob,
    observed_log_likelihood,
    posterior_matrix,
    run_chain,
)


SQRT7 = math.sqrt(7.0)


def model_of(pi, Q):
    return MotifModel(pi=np.asarray(pi, dtype=float), Q=np.atleast_2d(np.asarray(Q, dtype=float)))


def enumerate_joint(t_stats, model):
    """Brute force over (k, a): returns G x K x 2^D joint densities and the configurations."""
    configs = np.array(list(itertools.product((0, 1), repeat=t_stats.n_studies)))
    f0, f1 = np.exp(t_stats.log_f0), np.exp(t_stats.log_f1)
    joint = np.zeros((t_stats.n_genes, model.K, len(configs)))
    for g in range(t_stats.n_genes):
        for k in range(model.K):
            for c, config in enumerate(configs):
                value = model.pi[k]
                for d, a in enumerate(config):
                    q = model.Q[k, d]
                    value *= q * f1[g, d] if a else (1.0 - q) * f0[g, d]
                joint[g, k, c] = value
    return joint, configs


def draw_motif_data(seed, pi, Q, n_genes, df=8.0, scale=SQRT7):
    rng = np.random.default_rng(seed)
    Q = np.asarray(Q, dtype=float)
    labels = rng.choice(len(pi), size=n_genes, p=pi)
    states = rng.random((n_genes, Q.shape[1])) < Q[labels]
    t = rng.standard_t(df, size=states.shape)
    t = np.where(states, t * scale, t)
    return TStatMatrix.from_arrays(t, [df] * Q.shape[1], [scale] * Q.shape[1])


SMALL = TStatMatrix.from_arrays(
    np.array([[0.3, -2.0], [4.5, 3.1], [-0.1, 0.2], [1.7, -5.0], [0.0, 0.9]]),
    df_total=[8.0, 6.5],
    scale=[SQRT7, 2.2],
)
SMALL_MODEL = model_of([0.65, 0.35], [[0.1, 0.3], [0.8, 0.6]])


def test_has_converged_relative_rule():
    # |delta| / (|current| + 1) is just under 1e-12 here
    assert has_converged(-1000.0, -1000.0 + 1e-9, tol=1e-12)
    assert has_converged(-1000.0, -1000.0 + 1e-9, tol=1e-13) is False
    assert has_converged(-1.0, -2.0, tol=0.5) is True
    assert has_converged(0.0, 0.0, tol=0.0) is False


def test_single_class_responsibilities_are_one():
    resp = e_step(SMALL, model_of([1.0], [[0.4, 0.7]]))
    np.testing.assert_array_equal(resp.R, np.ones((5, 1)))


def test_identical_motifs_split_evenly():
    resp = e_step(SMALL, model_of([0.5, 0.5], [[0.3, 0.6], [0.3, 0.6]]))
    np.testing.assert_allclose(resp.R, 0.5, atol=1e-15)


def test_e_step_matches_enumeration():
    joint, configs = enumerate_joint(SMALL, SMALL_MODEL)
    total = joint.sum(axis=(1, 2))
    expected_R = joint.sum(axis=2) / total[:, None]
    expected_S = np.stack(
        [joint[:, :, configs[:, d] == 1].sum(axis=2) / total[:, None] for d in range(SMALL.n_studies)],
        axis=2,
    )
    resp = e_step(SMALL, SMALL_MODEL)
    np.testing.assert_allclose(resp.R, expected_R, rtol=1e-12, atol=1e-12)
    np.testing.assert_allclose(resp.S, expected_S, rtol=1e-12, atol=1e-12)


def test_observed_log_likelihood_matches_enumeration():
    joint, _ = enumerate_joint(SMALL, SMALL_MODEL)
    expected = float(np.log(joint.sum(axis=(1, 2))).sum())
    assert observed_log_likelihood(SMALL, SMALL_MODEL) == pytest.approx(expected, rel=1e-12)


def test_posterior_matrix_matches_enumeration():
    joint, configs = enumerate_joint(SMALL, SMALL_MODEL)
    total = joint.sum(axis=(1, 2))
    expected = np.column_stack(
        [joint[:, :, configs[:, d] == 1].sum(axis=(1, 2)) / total for d in range(SMALL.n_studies)]
    )
    posterior = posterior_matrix(SMALL, SMALL_MODEL)
    np.testing.assert_allclose(posterior.P, expected, rtol=1e-12, atol=1e-12)
    np.testing.assert_array_equal(posterior.abs_t, np.abs(SMALL.t))
    assert posterior.method == "cormotif"
    assert posterior.study_ids == SMALL.study_ids


def test_e_step_rejects_wrong_study_count():
    with pytest.raises(PatternDimensionMismatchError):
        e_step(SMALL, model_of([1.0], [[0.5, 0.5, 0.5]]))


def test_m_step_single_class_arithmetic():
    resp = Responsibilities(R=np.ones((2, 1)), S=np.array([[[0.5]], [[1.0]]]))
    model = m_step(resp)
    np.testing.assert_allclose(model.pi, [1.0])
    np.testing.assert_allclose(model.Q, [[0.625]])


def test_m_step_pseudo_counts():
    R = np.array([[1.0, 0.0], [0.0, 1.0], [0.5, 0.5]])
    S = np.zeros((3, 2, 1))
    S[0, 0, 0] = 1.0
    S[2, 1, 0] = 0.5
    model = m_step(Responsibilities(R=R, S=S))
    np.testing.assert_allclose(model.pi, [2.5 / 5.0, 2.5 / 5.0])
    np.testing.assert_allclose(model.Q, [[2.0 / 3.5], [1.5 / 3.5]])


def test_m_step_empty_class_gets_pseudo_counts():
    R = np.column_stack([np.ones(8), np.zeros(8)])
    S = np.zeros((8, 2, 2))
    S[:3, 0, 0] = 1.0
    model = m_step(Responsibilities(R=R, S=S))
    assert model.pi[1] == pytest.approx(0.1)
    np.testing.assert_allclose(model.Q[1], [0.5, 0.5])
    np.testing.assert_allclose(model.Q[0], [4.0 / 10.0, 1.0 / 10.0])


def test_m_step_four_genes_single_class():
    S = np.array([1.0, 1.0, 0.0, 0.0]).reshape(4, 1, 1)
    model = m_step(Responsibilities(R=np.ones((4, 1)), S=S))
    np.testing.assert_allclose(model.pi, [1.0])
    np.testing.assert_allclose(model.Q, [[0.5]])


@settings(deadline=None, max_examples=40)
@given(st.integers(0, 2**32 - 1), st.integers(1, 4), st.integers(1, 3))
def test_m_step_respects_pseudo_count_bounds(seed, n_classes, n_studies):
    n_genes = 20
    rng = np.random.default_rng(seed)
    R = rng.dirichlet(np.ones(n_classes), size=n_genes)
    # extreme responsibilities: one gene owns everything, S at its bounds
    R[0] = np.eye(n_classes)[0]
    S = R[:, :, None] * rng.choice([0.0, 1.0], size=(n_genes, n_classes, n_studies))
    model = m_step(Responsibilities(R=R, S=S))
    assert model.pi.sum() == pytest.approx(1.0)
    assert np.all(model.pi >= 1.0 / (n_genes + n_classes) - 1e-15)
    assert np.all(model.Q >= 1.0 / (n_genes + 2) - 1e-15)
    assert np.all(model.Q <= (n_genes + 1.0) / (n_genes + 2) + 1e-15)


def test_log_posterior_single_gene():
    t_stats = TStatMatrix.from_arrays([[0.0]], [8.0], [SQRT7])
    f0 = math.gamma(4.5) / (math.gamma(4.0) * math.sqrt(8.0 * math.pi))
    expected = math.log(0.5 * f0 / SQRT7 + 0.5 * f0) + 2.0 * math.log(0.5)
    assert log_posterior(t_stats, model_of([1.0], [[0.5]])) == pytest.approx(expected, abs=1e-12)


def test_prior_penalizes_extreme_motifs():
    t_stats = TStatMatrix.from_arrays([[0.0]], [8.0], [SQRT7])
    values = [log_posterior(t_stats, model_of([1.0], [[q]])) for q in (1e-3, 1e-6, 1e-9)]
    assert values[0] > values[1] > values[2]


@settings(deadline=None, max_examples=100)
@given(st.integers(0, 2**32 - 1), st.integers(1, 4))
def test_em_never_decreases_log_posterior(seed, n_classes):
    t_stats = draw_motif_data(seed, [0.6, 0.4], [[0.1, 0.1, 0.2], [0.9, 0.5, 0.8]], n_genes=150)
    start = initial_model(n_classes, t_stats.n_studies, np.random.default_rng(seed))
    _, trace, iterations, converged = run_chain(t_stats, start, max_iter=40, tol=0.0)
    assert iterations == 40 and not converged
    trace = np.asarray(trace)
    assert np.all(np.diff(trace) >= -1e-8 * (np.abs(trace[1:]) + 1.0))


def test_label_permutation_symmetry():
    swapped = model_of(SMALL_MODEL.pi[::-1], SMALL_MODEL.Q[::-1])
    assert log_posterior(SMALL, swapped) == pytest.approx(log_posterior(SMALL, SMALL_MODEL), rel=1e-14)
    np.testing.assert_allclose(e_step(SMALL, swapped).R, e_step(SMALL, SMALL_MODEL).R[:, ::-1], atol=1e-14)


def test_initial_model_ranges():
    model = initial_model(4, 3, np.random.default_rng(0))
    assert model.pi.shape == (4,) and model.pi.sum() == pytest.approx(1.0)
    assert np.all((model.Q >= 0.05) & (model.Q <= 0.95))


def test_sorted_by_abundance_is_stable():
    model = model_of([0.25, 0.5, 0.25], [[0.1], [0.2], [0.3]])
    ordered = model.sorted_by_abundance()
    np.testing.assert_array_equal(ordered.pi, [0.5, 0.25, 0.25])
    np.testing.assert_array_equal(ordered.Q[:, 0], [0.2, 0.1, 0.3])


def test_motif_model_validation():
    with pytest.raises(ValueError):
        model_of([0.5, 0.5], [[0.0, 0.5], [0.5, 0.5]])
    with pytest.raises(ValueError):
        model_of([0.7, 0.7], [[0.5], [0.5]])


def test_fit_is_deterministic_across_threads(t_stats_factory):
    t_stats = t_stats_factory(seed=4, n_genes=300, n_studies=3)
    opts = dict(max_iter=200, tol=1e-9, restarts=4, seed=99)
    serial = fit(t_stats, 3, FitOptions(threads=1, **opts))
    again = fit(t_stats, 3, FitOptions(threads=1, **opts))
    parallel = fit(t_stats, 3, FitOptions(threads=4, **opts))
    for other in (again, parallel):
        assert np.array_equal(other.model.pi, serial.model.pi)
        assert np.array_equal(other.model.Q, serial.model.Q)
        assert other.log_posterior_trace == serial.log_posterior_trace
        assert other.restart_index == serial.restart_index


def test_fit_keeps_best_chain(t_stats_factory):
    t_stats = t_stats_factory(seed=8, n_genes=200, n_studies=2)
    result = fit(t_stats, 2, FitOptions(max_iter=300, restarts=5, seed=3))
    assert len(result.chain_log_posteriors) == 5
    assert result.log_posterior == max(result.chain_log_posteriors)
    assert np.all(np.diff(result.model.pi) <= 0)
    assert result.K == 2 and result.seed == 3


def test_fit_rejects_bad_arguments(t_stats_factory):
    t_stats = t_stats_factory(seed=1, n_genes=50, n_studies=2)
    with pytest.raises(InvalidConfigError):
        fit(t_stats, 0)
    with pytest.raises(InvalidConfigError):
        fit(t_stats, 2, FitOptions(restarts=0))


def test_max_iter_without_convergence_is_reported(t_stats_factory):
    t_stats = t_stats_factory(seed=2, n_genes=200, n_studies=3)
    result = fit(t_stats, 2, FitOptions(max_iter=2, tol=0.0, restarts=1))
    assert result.iterations == 2
    assert result.converged is False


def test_single_motif_fixed_point(t_stats_factory):
    t_stats = t_stats_factory(seed=6, n_genes=400, n_studies=3)
    result = fit(t_stats, 1, FitOptions(max_iter=2000, tol=1e-14, restarts=1))
    model = result.model
    posterior = e_step(t_stats, model).posterior()
    # one more EM step moves Q by less than 1e-6
    np.testing.assert_allclose(model.Q[0], (posterior.sum(axis=0) + 1.0) / (t_stats.n_genes + 2.0), atol=1e-6)
    np.testing.assert_array_equal(model.pi, [1.0])


def test_recovers_two_well_separated_motifs():
    true_Q = np.array([[0.03, 0.03, 0.03, 0.03], [0.9, 0.9, 0.1, 0.1]])
    t_stats = draw_motif_data(21, [0.7, 0.3], true_Q, n_genes=4000, scale=math.sqrt(1.0 + 4.0 / (2.0 / 3.0)))
    result = fit(t_stats, 2, FitOptions(max_iter=1000, tol=1e-9, restarts=3, seed=5))
    assert result.model.pi[0] == pytest.approx(0.7, abs=0.1)
    assert np.max(np.abs(result.model.Q - true_Q)) < 0.15


def test_fit_result_serialization_keys(t_stats_factory):
    t_stats = t_stats_factory(seed=3, n_genes=100, n_studies=2)
    result = fit(t_stats, 2, FitOptions(max_iter=100, restarts=2, seed=1))
    data = result.to_dict()
    assert set(data) == {"K", "pi", "Q", "log_posterior", "iterations", "converged", "seed"}
    rebuilt = FitResult.from_dict(data)
    np.testing.assert_array_equal(rebuilt.model.Q, result.model.Q)
    assert rebuilt.log_posterior == result.log_posterior


@settings(deadline=None, max_examples=30)
@given(st.integers(0, 2**32 - 1), st.integers(1, 4), st.integers(1, 10))
def test_joint_config_probabilities_sum_to_one(seed, n_classes, n_studies):
    model = initial_model(n_classes, n_studies, np.random.default_rng(seed))
    total = sum(joint_config_prob(model, config) for config in itertools.product((0, 1), repeat=n_studies))
    assert total == pytest.approx(1.0, abs=1e-12)


def test_joint_config_single_motif_factorizes():
    model = model_of([1.0], [[0.2, 0.7, 0.4]])
    assert joint_config_prob(model, [1, 0, 1]) == pytest.approx(0.2 * 0.3 * 0.4)


def test_joint_config_example():
    model = model_of([0.6, 0.4], [[0.1, 0.2], [0.9, 0.8]])
    assert joint_config_prob(model, [1, 1]) == pytest.approx(0.6 * 0.02 + 0.4 * 0.72)


def test_joint_config_length_mismatch():
    with pytest.raises(PatternDimensionMismatchError):
        joint_config_prob(model_of([1.0], [[0.2, 0.7]]), [1, 0, 1])


def test_marginal_config_prob():
    model = model_of([0.6, 0.4], [[0.1, 0.2], [0.9, 0.8]])
    np.testing.assert_allclose(marginal_config_prob(model), [0.42, 0.44])


@pytest.mark.slow
def test_twenty_studies_fit_five_motifs():
    dataset, _ = simulate_model_based(preset("sim4", seed=2))
    t_stats = compute_t_stats(dataset)
    result = fit(t_stats, 5, FitOptions(max_iter=300, restarts=2, seed=0))
    assert result.model.Q.shape == (5, 20)
    assert np.all(np.isfinite(result.log_posterior_trace))
