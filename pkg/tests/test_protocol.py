import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from numpy.testing import assert_allclose
from scipy.integrate import quad

from src.errors import ValidationError
from src.protocol import (
    Protocol,
    PulseShape,
    all_phases,
    continuous_protocol,
    instantaneous_protocol,
    phase_integral,
    phase_integrals,
    phase_matrix,
    pulse_value,
    uniform_impacts,
)


class TestPhaseIntegral:
    def test_delta_after_kick(self):
        assert phase_integral(PulseShape.delta(1.0), 2.0) == 1.0

    def test_delta_before_kick(self):
        assert phase_integral(PulseShape.delta(1.0), 0.5) == 0.0

    def test_delta_at_kick_is_right_continuous(self):
        assert phase_integral(PulseShape.delta(1.0), 1.0) == 1.0

    def test_constant_long_horizon(self):
        assert phase_integral(PulseShape.constant(0.0, 1e9, 1.0), 3.5) == 3.5

    def test_constant_clamped_before_start_and_after_stop(self):
        pulse = PulseShape.constant(1.0, 3.0, 2.0)
        assert phase_integral(pulse, 0.5) == 0.0
        assert phase_integral(pulse, 2.0) == 2.0
        assert phase_integral(pulse, 10.0) == 4.0

    def test_piecewise_linear_ramp(self):
        pulse = PulseShape.piecewise_linear([[0.0, 0.0], [1.0, 2.0]])
        assert_allclose(phase_integral(pulse, 1.0), 1.0, rtol=0, atol=1e-15)
        reference, _ = quad(lambda s: 2.0 * s, 0.0, 1.0)
        assert_allclose(phase_integral(pulse, 1.0), reference, rtol=0, atol=1e-12)

    def test_smoothed_delta_has_unit_area(self):
        pulse = PulseShape.smoothed_delta(1.0, 0.01)
        assert phase_integral(pulse, 0.0) == 0.0
        assert_allclose(phase_integral(pulse, 1.0), 0.5, atol=1e-12)
        assert_allclose(phase_integral(pulse, 1.03), 1.0, atol=1e-15)

    def test_negative_time_rejected(self):
        with pytest.raises(ValidationError):
            phase_integral(PulseShape.delta(1.0), -0.1)

    @pytest.mark.parametrize("builder", [
        lambda: PulseShape.delta(-1.0),
        lambda: PulseShape.constant(2.0, 1.0),
        lambda: PulseShape.constant(0.0, 1.0, -1.0),
        lambda: PulseShape.constant(0.0, float("inf")),
        lambda: PulseShape.piecewise_linear([[0.0, 1.0], [0.0, 2.0]]),
        lambda: PulseShape.piecewise_linear([[0.0, -1.0], [1.0, 2.0]]),
        lambda: PulseShape.smoothed_delta(1.0, 0.0),
        lambda: PulseShape(kind="square"),
    ])
    def test_invalid_pulses(self, builder):
        with pytest.raises(ValidationError):
            builder()


knot_lists = st.lists(
    st.tuples(st.floats(0.01, 1.0), st.floats(0.0, 3.0)),
    min_size=2, max_size=8,
)


@settings(max_examples=50, deadline=None)
@given(steps=knot_lists, fraction=st.floats(0.0, 1.2))
def test_piecewise_matches_quadrature(steps, fraction):
    times = np.cumsum([s for s, _ in steps])
    values = [v for _, v in steps]
    pulse = PulseShape.piecewise_linear(list(zip(times, values)))
    t = float(fraction * times[-1])

    def f(s):
        return float(pulse_value(pulse, s))

    reference = 0.0
    if t > 0:
        inner = [x for x in times if x < t]
        reference, _ = quad(f, 0.0, t, points=inner or None, limit=200, epsabs=1e-14, epsrel=1e-14)
    assert_allclose(phase_integral(pulse, t), reference, rtol=0, atol=1e-12)


@settings(max_examples=50, deadline=None)
@given(start=st.floats(0.0, 5.0), length=st.floats(0.1, 5.0), amplitude=st.floats(0.0, 3.0))
def test_phases_nondecreasing(start, length, amplitude):
    grid = np.linspace(0.0, 12.0, 97)
    for pulse in (PulseShape.constant(start, start + length, amplitude),
                  PulseShape.delta(start + 0.1),
                  PulseShape.smoothed_delta(start + 0.1, 0.02)):
        phases = phase_integrals(pulse, grid)
        assert np.all(np.diff(phases) >= -1e-15)
        assert phases[0] == 0.0


class TestAllPhases:
    def test_identical_kicks_before_t(self):
        report = all_phases(instantaneous_protocol([0.5, 1.0, 1.5]), 2.0)
        assert_allclose(report.phases, [1.0, 1.0, 1.0])
        assert report.uniform and report.phi == 1.0

    def test_two_kicks_between(self):
        report = all_phases(instantaneous_protocol([1.0, 3.0]), 2.0)
        assert_allclose(report.phases, [1.0, 0.0])
        assert not report.uniform and report.phi is None

    def test_no_pulses_uniform_vacuously(self):
        report = all_phases(Protocol(()), 4.0)
        assert report.phases.shape == (0,)
        assert report.uniform and report.phi == 0.0

    def test_phase_matrix_and_mask(self):
        protocol = instantaneous_protocol([1.0, 2.0])
        grid = np.array([0.0, 1.0, 1.5, 2.0, 3.0])
        phases = phase_matrix(protocol, grid)
        mask, phi = uniform_impacts(phases)
        assert phases.shape == (5, 2)
        assert mask.tolist() == [True, False, False, True, True]
        assert_allclose(phi[mask], [0.0, 1.0, 1.0])


class TestProtocol:
    def test_descriptors(self):
        assert Protocol(()).descriptor == "none"
        assert instantaneous_protocol([1.0]).descriptor == "instantaneous"
        assert continuous_protocol(10.0).descriptor == "continuous"
        assert Protocol((PulseShape.constant(0.0, 1.0, 2.0),)).descriptor == "custom"
        assert Protocol(continuous_protocol(10.0).pulses * 3).descriptor == "continuous"
        assert Protocol((PulseShape.constant(0.0, 10.0), PulseShape.constant(0.0, 5.0))).descriptor == "custom"

    def test_last_time(self):
        assert Protocol(()).last_time is None
        assert instantaneous_protocol([1.0, 2.5]).last_time == 2.5
        assert continuous_protocol(7.0).last_time == 7.0

    def test_smoothed_replaces_kicks_only(self):
        protocol = Protocol((PulseShape.delta(1.0), PulseShape.constant(0.0, 2.0)))
        smoothed = protocol.smoothed(0.01)
        assert [p.kind for p in smoothed.pulses] == ["smoothed_delta", "constant"]
        assert smoothed.kick_windows(0.01) == [pytest.approx((0.97, 1.03))]

    def test_pulse_value_rejects_bare_delta(self):
        with pytest.raises(ValidationError):
            pulse_value(PulseShape.delta(1.0), 1.0)

    def test_round_trip_dicts(self):
        protocol = Protocol((
            PulseShape.delta(1.0),
            PulseShape.constant(0.0, 2.0, 0.5),
            PulseShape.piecewise_linear([[0.0, 0.0], [1.0, 1.0]]),
            PulseShape.smoothed_delta(1.0, 0.01),
        ))
        assert [p["kind"] for p in protocol.to_list()] == [
            "delta", "constant", "piecewise_linear", "smoothed_delta",
        ]
