import numpy as np
import pytest

from HOSSNET.hossnet.core import ChannelKind, FieldFrame, SampleSequence
from HOSSNET.hossnet.postproc import enforce_positive_direction, monotone_running_max


def _pixel_sequence(values, start_index=0):
    array = np.asarray(values, dtype=float)[:, None, None]
    return SampleSequence.from_array("s", array, ChannelKind.FRACTURE_DAMAGE, start_index=start_index)


def test_decreases_are_replaced_by_the_previous_value():
    out = enforce_positive_direction(_pixel_sequence([0.2, 0.1, 0.3]))
    np.testing.assert_allclose(out.as_array().ravel(), [0.2, 0.2, 0.3])


def test_anchor_floors_the_first_frame():
    anchor = FieldFrame(np.full((1, 1), 0.25), ChannelKind.FRACTURE_DAMAGE, 4)
    out = enforce_positive_direction(_pixel_sequence([0.2, 0.1, 0.3], start_index=5), anchor)
    np.testing.assert_allclose(out.as_array().ravel(), [0.25, 0.25, 0.3])
    assert out.time_indices == [5, 6, 7]


def test_running_max_properties():
    rng = np.random.default_rng(0)
    values = rng.random((10, 4, 5))
    anchor = rng.random((4, 5))
    out = monotone_running_max(values, anchor)
    assert np.all(np.diff(out, axis=0) >= 0)
    assert np.all(out >= values)
    assert np.all(out >= anchor)
    np.testing.assert_array_equal(monotone_running_max(out, anchor), out)


def test_monotone_input_is_unchanged(growing_sequence):
    out = enforce_positive_direction(growing_sequence)
    np.testing.assert_array_equal(out.as_array(), growing_sequence.as_array())
    assert out.metadata == growing_sequence.metadata


def test_invalid_inputs():
    with pytest.raises(ValueError):
        monotone_running_max(np.zeros((0, 2)))
    with pytest.raises(ValueError):
        monotone_running_max(np.zeros((3, 2)), anchor=np.zeros(3))
    stress = SampleSequence.from_array("s", np.zeros((2, 2, 2, 3)), ChannelKind.CAUCHY_STRESS)
    with pytest.raises(ValueError):
        enforce_positive_direction(stress)
    anchor = FieldFrame(np.zeros((3, 3)), ChannelKind.FRACTURE_DAMAGE, 0)
    with pytest.raises(ValueError):
        enforce_positive_direction(_pixel_sequence([0.1, 0.2], start_index=1), anchor)
