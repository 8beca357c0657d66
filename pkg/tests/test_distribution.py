from typing import Tuple
import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from bubblesim.distribution import (evolve, evolve_batch, gamma_step, post_breakup, post_matching, post_mutation, transition_matrix,
                                    transition_matrix_entrywise)
from bubblesim.drivers import ScenarioBatch, ScenarioSampler, SeedScheme, constant_scenario
from bubblesim.errors import InvalidDistributionError, InvalidTableError, MisalignedInputError
from bubblesim.experiment.config import ExperimentConfig
from bubblesim.experiment.presets import figure2
from bubblesim.models.base import BreakupKernel, TransitionModel
from bubblesim.models.example1 import SIGMA_TERMS, Example1Model, Example1Params
from bubblesim.models.simulation_study import SimulationStudyModel, mirror_renaming
from bubblesim.types import ExtendedTypeDistribution, FloatArray, TimeGrid, keep_pair_sigma, keep_type_varsigma, validate_distribution

from tests.helpers import FixedModel, empty_scenario, identity_model, random_distribution


def _example1_model() -> Example1Model:
    return Example1Model(Example1Params(term_constants={name: 0.05 for name in SIGMA_TERMS}))


def _straight_line_step(prior: FloatArray, model: Example1Model) -> FloatArray:
    # Term by term evaluation of one period, with the tables queried at each stage
    size = 3
    unmatched = size
    scenario = empty_scenario()
    eta = model.eta(scenario, 1, prior)
    mutated = np.zeros((size, size + 1))
    for k in range(size):
        for l in range(size):
            mutated[k, l] = sum(eta[a, k] * eta[b, l] * prior[a, b] for a in range(size) for b in range(size))
        mutated[k, unmatched] = sum(prior[a, unmatched] * eta[a, k] for a in range(size))
    theta = model.theta(scenario, 1, mutated)
    matched = np.zeros((size, size + 1))
    for k in range(size):
        for l in range(size):
            matched[k, l] = mutated[k, l] + theta[k, l] * mutated[k, unmatched]
        matched[k, unmatched] = (1.0 - sum(theta[k, l] for l in range(size))) * mutated[k, unmatched]
    kernel = model.breakup(scenario, 1, matched)
    assert kernel.sigma is not None
    end = np.zeros((size, size + 1))
    for k in range(size):
        for l in range(size):
            end[k, l] = sum((1.0 - kernel.xi[a, b]) * kernel.sigma[a, b, k, l] * matched[a, b]
                            for a in range(size) for b in range(size))
        end[k, unmatched] = matched[k, unmatched] + sum(kernel.xi[a, b] * kernel.varsigma[a, b, k] * matched[a, b]
                                                        for a in range(size) for b in range(size))
    return end


def test_post_mutation_of_unmatched_agents() -> None:
    d = ExtendedTypeDistribution.all_unmatched([0.6, 0.4])
    result = post_mutation(d, np.array([[0.9, 0.1], [0.2, 0.8]]))
    np.testing.assert_allclose(result.unmatched, [0.62, 0.38])


def test_post_mutation_of_a_matched_pair() -> None:
    d = ExtendedTypeDistribution([[0.0, 0.5, 0.0], [0.5, 0.0, 0.0]])
    result = post_mutation(d, np.array([[0.0, 1.0], [1.0, 0.0]]))
    np.testing.assert_allclose(result.matched, [[0.0, 0.5], [0.5, 0.0]])


def test_post_matching() -> None:
    d = ExtendedTypeDistribution.all_unmatched([0.5, 0.5])
    theta = np.array([[0.0, 0.4], [0.4, 0.0]])
    result = post_matching(d, theta)
    np.testing.assert_allclose(result.entries, [[0.0, 0.2, 0.3], [0.2, 0.0, 0.3]])


def test_single_type_matches_completely() -> None:
    result = post_matching(ExtendedTypeDistribution([[0.0, 1.0]]), np.array([[1.0]]))
    np.testing.assert_allclose(result.entries, [[1.0, 0.0]])


def test_unbalanced_matching_is_rejected() -> None:
    d = ExtendedTypeDistribution.all_unmatched([0.5, 0.5])
    with pytest.raises(InvalidTableError):
        post_matching(d, np.array([[0.0, 0.4], [0.0, 0.0]]))


def test_immediate_separation_returns_everyone_to_the_pool() -> None:
    prior = ExtendedTypeDistribution(random_distribution(np.random.default_rng(1), 3))
    step = gamma_step(prior, identity_model(3, xi=1.0), empty_scenario(), 1)
    np.testing.assert_allclose(step.end.matched, np.zeros((3, 3)))
    np.testing.assert_allclose(step.end.unmatched, prior.entries.sum(axis=1), atol=1e-15)


def test_matching_without_separation() -> None:
    theta = np.array([[0.0, 0.4], [0.4, 0.0]])
    model = FixedModel(np.eye(2), theta, np.zeros((2, 2)), keep_pair_sigma(2), keep_type_varsigma(2))
    step = gamma_step(ExtendedTypeDistribution.all_unmatched([0.5, 0.5]), model, empty_scenario(), 1)
    np.testing.assert_allclose(step.end.entries, [[0.0, 0.2, 0.3], [0.2, 0.0, 0.3]])


def test_gamma_step_matches_term_by_term_evaluation() -> None:
    model = _example1_model()
    prior = ExtendedTypeDistribution.all_unmatched([0.5, 0.3, 0.2])
    current = prior
    expected = prior.entries
    for _ in range(3):
        current = gamma_step(current, model, empty_scenario(), 1).end
        expected = _straight_line_step(expected, model)
        np.testing.assert_allclose(current.entries, expected, rtol=0.0, atol=1e-12)


def test_gamma_step_is_the_composition_of_the_stages() -> None:
    model = _example1_model()
    prior = ExtendedTypeDistribution(random_distribution(np.random.default_rng(5), 3))
    step = gamma_step(prior, model, empty_scenario(), 1)
    table = step.table
    composed = post_breakup(post_matching(post_mutation(prior, table.eta), table.theta),
                            BreakupKernel(table.xi, table.sigma, table.varsigma))
    np.testing.assert_allclose(composed.entries, step.end.entries, rtol=0.0, atol=1e-15)
    np.testing.assert_allclose(step.post_matching.entries, post_matching(step.post_mutation, table.theta).entries, atol=1e-15)


def test_gamma_step_rejects_invalid_prior() -> None:
    with pytest.raises(InvalidDistributionError):
        gamma_step(ExtendedTypeDistribution.all_unmatched([0.5, 0.3, 0.3]), identity_model(3), empty_scenario(), 1)


def test_identity_transition_matrix() -> None:
    prior = ExtendedTypeDistribution.all_unmatched([0.5, 0.3, 0.2])
    z = transition_matrix(prior, identity_model(3), empty_scenario(), 1)
    np.testing.assert_allclose(z.matrix, np.eye(12), atol=1e-15)
    assert z.index(1, None) == 3
    assert z.index(2, 1) == 4


@settings(max_examples=50, deadline=None)
@given(st.integers(min_value=0, max_value=2**32 - 1))
def test_transition_matrix_is_consistent_with_gamma(seed: int) -> None:
    model = _example1_model()
    prior = ExtendedTypeDistribution(random_distribution(np.random.default_rng(seed), 3))
    step = gamma_step(prior, model, empty_scenario(), 1)
    z = transition_matrix(prior, model, empty_scenario(), 1)
    np.testing.assert_allclose(z.matrix.sum(axis=1), np.ones(12), atol=1e-12)
    assert np.all(z.matrix >= -1e-15)
    np.testing.assert_allclose(z.apply(prior).entries, step.end.entries, rtol=0.0, atol=1e-12)
    entrywise = transition_matrix_entrywise(step.table, 1)
    np.testing.assert_allclose(entrywise.matrix, z.matrix, rtol=0.0, atol=1e-12)


@settings(max_examples=100, deadline=None)
@given(st.integers(min_value=0, max_value=2**32 - 1))
def test_gamma_conserves_mass_and_symmetry(seed: int) -> None:
    rng = np.random.default_rng(seed)
    constants = {name: float(rng.uniform(0.0, 0.05)) for name in SIGMA_TERMS}
    model = Example1Model(Example1Params(term_constants=constants, xi=float(rng.uniform())))
    current = ExtendedTypeDistribution(random_distribution(rng, 3))
    for period in range(1, 6):
        current = gamma_step(current, model, empty_scenario(), period).end
        assert validate_distribution(current).ok
        np.testing.assert_allclose(current.matched, current.matched.T, rtol=0.0, atol=1e-15)


def _figure2_inputs() -> Tuple[ExperimentConfig, TransitionModel, ScenarioSampler]:
    config = figure2()
    model = config.build_model()
    spec = config.scenario_spec()
    sampler = ScenarioSampler(spec)
    return config, model, sampler


def test_evolution_stays_a_distribution() -> None:
    config, model, sampler = _figure2_inputs()
    path = sampler(config.seeds(), 0)
    evolution = evolve(config.initial(model), model, path)
    assert evolution.periods == 100
    totals = evolution.distributions.sum(axis=-1)
    assert np.all(totals >= 0.0)
    assert np.all(totals <= 1.0)
    np.testing.assert_allclose(totals.sum(axis=-1), np.ones(101), atol=1e-12)
    np.testing.assert_allclose(evolution.gap, totals[:, 0] - totals[:, 2])


def test_mirrored_scenario_mirrors_the_evolution() -> None:
    config, model, sampler = _figure2_inputs()
    path = sampler(config.seeds(), 3)
    initial = ExtendedTypeDistribution.all_unmatched([1 / 3, 1 / 3, 1 / 3])
    forward = evolve(initial, model, path)
    mirrored = evolve(initial, model, path.relabeled(mirror_renaming()))
    swapped = forward.distributions[:, ::-1][:, :, [2, 1, 0, 3]]
    np.testing.assert_allclose(mirrored.distributions, swapped, rtol=0.0, atol=1e-12)
    np.testing.assert_allclose(mirrored.gap, -forward.gap, rtol=0.0, atol=1e-12)


def test_constant_distribution_is_a_fixed_point() -> None:
    initial = ExtendedTypeDistribution(random_distribution(np.random.default_rng(2), 3))
    path = constant_scenario(TimeGrid.uniform(10, 1.0), {})
    evolution = evolve(initial, identity_model(3), path)
    for period in range(11):
        np.testing.assert_allclose(evolution.at(period).entries, initial.entries, atol=1e-15)


def test_batch_matches_single_paths() -> None:
    config, model, sampler = _figure2_inputs()
    paths = [sampler(config.seeds(), index) for index in range(4)]
    initial = config.initial(model)
    batched = evolve_batch(initial, model, ScenarioBatch(paths))
    for row, path in enumerate(paths):
        single = evolve(initial, model, path)
        np.testing.assert_allclose(batched.distributions[row], single.distributions, rtol=0.0, atol=1e-13)
        np.testing.assert_allclose(batched.gap[row], single.gap, rtol=0.0, atol=1e-13)


def test_misaligned_inputs_are_rejected() -> None:
    path = constant_scenario(TimeGrid.uniform(10, 1.0), {})
    initial = ExtendedTypeDistribution.all_unmatched([0.5, 0.3, 0.2])
    with pytest.raises(MisalignedInputError):
        evolve(initial, identity_model(3), path, TimeGrid.uniform(5, 1.0))
    with pytest.raises(MisalignedInputError):
        evolve(ExtendedTypeDistribution.all_unmatched([0.5, 0.5]), identity_model(3), path)


def test_evolution_csv() -> None:
    path = constant_scenario(TimeGrid.uniform(2, 1.0), {})
    evolution = evolve(ExtendedTypeDistribution.all_unmatched([0.5, 0.3, 0.2]), identity_model(3), path)
    lines = evolution.to_csv().splitlines()
    assert len(lines) == 4
    assert lines[0].startswith("period,1_1,1_2,1_3,1_J")
    assert lines[0].endswith(",p1_minus_p3")
    assert lines[1].endswith(",0.3")


def test_study_model_keeps_everyone_unmatched_at_period_end() -> None:
    config, model, sampler = _figure2_inputs()
    evolution = evolve(config.initial(model), model, sampler(SeedScheme(8), 0))
    assert np.all(evolution.distributions[:, :, :3] == 0.0)
    assert isinstance(model, SimulationStudyModel)


def _slightly_negative_eta_model() -> FixedModel:
    # Mass stays non-negative for the start below, only the eta range is violated
    eta = np.eye(3)
    eta[0] = [1.01, -0.01, 0.0]
    return FixedModel(eta, np.zeros((3, 3)), np.zeros((3, 3)), None, keep_type_varsigma(3))


def test_table_validation_is_opt_in() -> None:
    path = constant_scenario(TimeGrid.uniform(3, 1.0), {})
    initial = ExtendedTypeDistribution.all_unmatched([0.3, 0.4, 0.3])
    model = _slightly_negative_eta_model()
    evolve(initial, model, path)
    with pytest.raises(InvalidTableError, match="Period 1: .*eta range"):
        evolve(initial, model, path, validate_tables=True)
    with pytest.raises(InvalidTableError):
        evolve_batch(initial, model, ScenarioBatch([path, path]), validate_tables=True)


def test_validated_batch_of_the_study_model() -> None:
    config, model, sampler = _figure2_inputs()
    paths = [sampler(config.seeds(), index) for index in range(3)]
    checked = evolve_batch(config.initial(model), model, ScenarioBatch(paths), validate_tables=True)
    unchecked = evolve_batch(config.initial(model), model, ScenarioBatch(paths))
    np.testing.assert_array_equal(checked.distributions, unchecked.distributions)
