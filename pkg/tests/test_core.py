import numpy as np
import pytest

from rtinterp.core import (Action, Interval, IntervalSequence, NegativeHalfWidth, NonMonotoneTimestamps, RtiState,
                           SignalState, Spline, SplineConfig, ValidationError, as_sequence, validate_sequence)


def test_valid_sequence_passes():
    assert validate_sequence([(0, 0, 0.1), (1, 0, 0.1)]) is None


def test_equal_timestamps_rejected_with_index():
    with pytest.raises(NonMonotoneTimestamps) as err:
        validate_sequence([(0, 0, 0.1), (0, 0, 0.1)])
    assert err.value.index == 1


def test_negative_half_width_rejected_with_index():
    with pytest.raises(NegativeHalfWidth) as err:
        validate_sequence([(0, 0, -0.1)])
    assert err.value.index == 0


def test_index_reported_deep_in_sequence():
    with pytest.raises(NegativeHalfWidth) as err:
        as_sequence([(0, 0, 0.1), (1, 0, 0.1), (2, 0, -1.0)])
    assert err.value.index == 2
    with pytest.raises(NonMonotoneTimestamps) as err:
        IntervalSequence.from_arrays([0, 1, 3, 2], [0] * 4, 0.1)
    assert err.value.index == 3


def test_zero_width_allowed():
    seq = as_sequence([(0, 1, 0.0), (1, 2, 0.0)])
    assert list(seq.eps) == [0.0, 0.0]


@pytest.mark.parametrize("d,phi", [(3, 3), (3, 0), (9, 2), (2.5, 1)])
def test_spline_config_rejects(d, phi):
    with pytest.raises(ValidationError):
        SplineConfig(d, phi)


def test_spline_config_sizes():
    cfg = SplineConfig(4, 2)
    assert (cfg.n_coeffs, cfg.n_free, cfg.n_cont) == (5, 2, 3)


def test_action_length_checked():
    Action([1, 2, 3, 4]).check(SplineConfig(3, 1))
    with pytest.raises(ValidationError):
        Action([1, 2, 3]).check(SplineConfig(3, 1))


def test_state_requires_increasing_time():
    with pytest.raises(NonMonotoneTimestamps):
        RtiState(Interval(1.0, 0.0, 0.1), SignalState(1.0, np.zeros(2)))
    st = RtiState(Interval(2.5, 0.0, 0.1), SignalState(1.0, np.zeros(2)))
    assert st.u == 1.5


def test_spline_validates_continuity():
    cfg = SplineConfig(3, 1)
    a1 = np.array([1.0, 2.0, 3.0, 4.0])
    # value 10 and slope 20 at u = 1
    Spline(cfg, [0.0, 1.0, 2.0], (a1, np.array([10.0, 20.0, 0.0, 0.0])))
    with pytest.raises(ValidationError):
        Spline(cfg, [0.0, 1.0, 2.0], (a1, np.array([10.0, 19.0, 0.0, 0.0])))
    with pytest.raises(ValidationError):
        Spline(cfg, [0.0, 1.0], (a1, a1))
    with pytest.raises(NonMonotoneTimestamps):
        Spline(cfg, [0.0, 0.0], (a1,))


def test_types_are_immutable():
    iv = Interval(0.0, 1.0, 0.1)
    with pytest.raises(AttributeError):
        iv.x = 3.0
    st = SignalState(0.0, [1.0, 2.0])
    with pytest.raises(ValueError):
        st.e[0] = 5.0
