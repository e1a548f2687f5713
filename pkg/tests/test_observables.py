import math

import numpy as np
import pytest
from numpy.testing import assert_allclose

from conftest import random_density, random_model
from src.decoherence import DecoherenceParams
from src.errors import HermiticityError, NonUniformImpact, ShapeMismatchError
from src.evolution import reduced_density
from src.observables import (
    Observable,
    coherence_l1,
    diagonal_ensemble,
    equilibration_bound,
    expectation_direct,
    expectation_factorized,
)
from src.protocol import PulseShape, continuous_protocol, instantaneous_protocol

SX = Observable([[0.0, 1.0], [1.0, 0.0]], label="sx")
SZ = Observable([[1.0, 0.0], [0.0, -1.0]], label="sz")


def test_observable_must_be_hermitian():
    with pytest.raises(HermiticityError):
        Observable([[0.0, 1.0], [0.0, 0.0]], label="bad")


def test_dimension_mismatch(plus_state_model):
    series = reduced_density(plus_state_model, [0.0])
    with pytest.raises(ShapeMismatchError):
        expectation_direct(series, Observable(np.eye(3)))


class TestExpectationDirect:
    def test_initial_value_is_trace(self):
        model = random_model(1, N=3, K=2, pulses=(PulseShape.delta(1.0),))
        rng = np.random.default_rng(0)
        a = random_density(rng, 3) * 4.0
        series = expectation_direct(reduced_density(model, [0.0, 1.0]), Observable(a))
        assert_allclose(series.values[0], np.trace(model.rho0.marginal() @ a).real, atol=1e-14)

    def test_identity_is_one(self):
        model = random_model(2, N=4, K=3, pulses=(PulseShape.constant(0.0, 2.0),), state="composite")
        series = expectation_direct(reduced_density(model, np.linspace(0.0, 3.0, 7)), Observable(np.eye(4)))
        assert_allclose(series.values, 1.0, atol=1e-12)

    def test_diagonal_observable_is_constant(self):
        model = random_model(3, N=3, K=3, pulses=(PulseShape.delta(0.5),))
        series = expectation_direct(reduced_density(model, np.linspace(0.0, 3.0, 7)), Observable(np.diag([1.0, -2.0, 0.5])))
        assert_allclose(series.values, series.values[0], atol=1e-12)
        assert_allclose(series.coherent_part, 0.0, atol=1e-15)

    def test_split_adds_up_and_diagonal_part_is_constant(self):
        model = random_model(4, N=3, K=4, pulses=(PulseShape.delta(0.5),), state="composite")
        a = Observable(random_density(np.random.default_rng(1), 3))
        series = expectation_direct(reduced_density(model, np.linspace(0.0, 2.0, 9)), a)
        assert_allclose(series.values, series.diagonal_part + series.coherent_part, atol=1e-15)
        assert_allclose(series.diagonal_part, diagonal_ensemble(model, a), atol=1e-12)
        assert list(series.to_frame().columns) == ["t", "value", "diagonal_part", "coherent_part"]


class TestExpectationFactorized:
    def test_continuous_gaussian_plus_state(self, plus_state_model):
        times = np.linspace(0.0, 6.0, 61)
        series = expectation_factorized(plus_state_model, SX, continuous_protocol(10.0), times,
                                        DecoherenceParams("gaussian", sigma=1.0))
        assert_allclose(series.values, np.cos(times) * np.exp(-times ** 2 / 2), atol=1e-12)

    def test_kicks_plateau_times_precession(self, plus_state_model):
        times = np.linspace(1.0, 5.0, 9)
        series = expectation_factorized(plus_state_model, SX, instantaneous_protocol([0.5, 1.0]), times,
                                        DecoherenceParams("gaussian", sigma=1.0))
        assert_allclose(series.values, np.cos(times) * math.exp(-2.0), atol=1e-12)

    def test_large_sigma_leaves_diagonal_part(self, plus_state_model):
        series = expectation_factorized(plus_state_model, SX, instantaneous_protocol([0.5]), [1.0, 2.0],
                                        DecoherenceParams("gaussian", sigma=50.0))
        assert_allclose(series.values, 0.0, atol=1e-12)

    def test_matches_direct_under_uniform_impact(self):
        pulses = (PulseShape.constant(0.0, 4.0), PulseShape.constant(0.0, 4.0))
        model = random_model(5, N=4, K=5, pulses=pulses, state="composite")
        a = Observable(random_density(np.random.default_rng(2), 4) * 3.0)
        times = np.linspace(0.0, 6.0, 31)
        direct = expectation_direct(reduced_density(model, times), a)
        factorized = expectation_factorized(model, a, model.protocol, times)
        assert_allclose(factorized.values, direct.values, atol=1e-10)

    def test_non_uniform_passthrough(self):
        model = random_model(6, N=2, K=2, pulses=(PulseShape.delta(1.0), PulseShape.delta(2.0)))
        with pytest.raises(NonUniformImpact):
            expectation_factorized(model, SX, model.protocol, [0.0, 1.5])


class TestDiagonalEnsemble:
    def test_sz_on_plus_state(self, plus_state_model):
        assert diagonal_ensemble(plus_state_model, SZ) == pytest.approx(0.0, abs=1e-15)

    def test_identity(self):
        assert diagonal_ensemble(random_model(7, N=3, K=2), Observable(np.eye(3))) == pytest.approx(1.0, abs=1e-12)

    def test_long_time_limit_under_continuous_gaussian(self):
        model = random_model(8, N=4, K=6, pulses=(PulseShape.constant(0.0, 100.0),))
        a = Observable(random_density(np.random.default_rng(3), 4) * 5.0)
        params = DecoherenceParams("gaussian", sigma=1.0)
        series = expectation_factorized(model, a, model.protocol, [10.0], params)
        assert abs(series.values[0] - diagonal_ensemble(model, a)) < 1e-3 * np.abs(a.matrix).max()

    def test_independent_of_protocol(self, plus_state_model):
        limits = set()
        for sigma in (0.5, 1.0, 3.0):
            for kicks in ([1.0], [1.0, 1.5, 2.0]):
                series = expectation_factorized(plus_state_model, SZ, instantaneous_protocol(kicks), [3.0],
                                                DecoherenceParams("lorentz", sigma=sigma))
                limits.add(round(float(series.diagonal_part[0]), 15))
        assert limits == {round(diagonal_ensemble(plus_state_model, SZ), 15)}


def test_equilibration_bound_holds_and_decreases():
    model = random_model(9, N=4, K=6, pulses=(PulseShape.constant(0.0, 100.0),))
    a = Observable(random_density(np.random.default_rng(4), 4) * 2.0)
    params = DecoherenceParams("gaussian", sigma=1.0)
    times = np.linspace(0.0, 10.0, 101)
    series = expectation_factorized(model, a, model.protocol, times, params)
    bound = equilibration_bound(model, a, model.protocol, times, params)
    deviation = np.abs(series.values - diagonal_ensemble(model, a))
    assert np.all(deviation <= bound + 1e-12)
    late = times >= 5.0
    assert np.all(np.diff(bound[late]) <= 0.0)


def test_cancelled_coherence_enters_factorized_expectation(cancelled_coherence_model):
    model = cancelled_coherence_model
    times = np.linspace(0.0, 4.0, 41)
    direct = expectation_direct(reduced_density(model, times), SX)
    factorized = expectation_factorized(model, SX, model.protocol, times)
    assert_allclose(factorized.values, np.sin(times) ** 2, rtol=0, atol=1e-12)
    assert_allclose(factorized.values, direct.values, rtol=0, atol=1e-12)
    bound = equilibration_bound(model, SX, model.protocol, times)
    assert np.all(np.abs(direct.values - diagonal_ensemble(model, SX)) <= bound + 1e-12)
    assert bound.max() > 0.9


def test_coherence_l1(plus_state_model):
    series = reduced_density(plus_state_model, [0.0, 1.0])
    assert_allclose(coherence_l1(series), 1.0, atol=1e-15)
