from dataclasses import replace

import numpy as np
import pytest
from scipy.ndimage import gaussian_filter

from HOSSNET.hossnet.core import ChannelKind, SampleSequence
from HOSSNET.hossnet.datagen import (
    CrackSpec,
    build_benchmark_set,
    central_gradients,
    derive_stress_channels,
    generate_sample,
)


def test_sample_shape_and_range(growing_sequence, small_spec):
    values = growing_sequence.as_array()
    assert values.shape == (small_spec.n_steps,) + small_spec.grid + (1,)
    assert growing_sequence.channel_kind is ChannelKind.FRACTURE_DAMAGE
    assert values.min() >= 0.0
    assert values.max() <= 1.0
    assert values[-1].sum() > values[0].sum()


def test_damage_never_heals(growing_sequence):
    assert np.all(np.diff(growing_sequence.as_array(), axis=0) >= 0.0)


def test_generation_is_deterministic(small_spec):
    a = generate_sample(small_spec).as_array()
    b = generate_sample(small_spec).as_array()
    np.testing.assert_array_equal(a, b)
    c = generate_sample(replace(small_spec, seed=small_spec.seed + 1)).as_array()
    assert not np.array_equal(a, c)


def test_zero_growth_keeps_initial_cracks(small_spec):
    values = generate_sample(replace(small_spec, growth_rate=0.0)).as_array()
    for frame in values[1:]:
        np.testing.assert_array_equal(frame, values[0])
    assert values[0].max() > 0.5


def test_too_many_cracks_for_the_grid():
    with pytest.raises(ValueError):
        generate_sample(CrackSpec(n_initial_cracks=5, grid=(6, 6), n_steps=3))


def test_crack_spec_validation():
    with pytest.raises(ValueError):
        CrackSpec(n_initial_cracks=0)
    with pytest.raises(ValueError):
        CrackSpec(n_steps=1)
    with pytest.raises(ValueError):
        CrackSpec(growth_rate=-1.0)
    with pytest.raises(ValueError):
        CrackSpec.from_dict({"seed": 1, "colour": "red"})
    spec = CrackSpec.from_dict({"grid": [8, 12], "seed": 4})
    assert spec.grid == (8, 12)
    assert CrackSpec.from_dict(spec.to_dict()) == spec


def test_metadata_records_generator_settings(growing_sequence, small_spec):
    metadata = growing_sequence.metadata
    assert metadata["crack_spec"] == small_spec.to_dict()
    assert metadata["loading"] == "uniaxial_tension_vertical"


def test_stress_channels(growing_sequence):
    stress = derive_stress_channels(growing_sequence)
    values = stress.as_array()
    assert stress.channel_kind is ChannelKind.CAUCHY_STRESS
    assert stress.sample_id == growing_sequence.sample_id
    assert values.shape == growing_sequence.as_array().shape[:-1] + (3,)
    assert values.min() >= 0.0
    assert values.max() <= 1.0
    assert stress.time_indices == growing_sequence.time_indices


def test_stress_channels_need_damage_input(growing_sequence):
    stress = derive_stress_channels(growing_sequence)
    with pytest.raises(ValueError):
        derive_stress_channels(stress)


def _finite_differences(plane: np.ndarray):
    height, width = plane.shape
    gx = np.zeros_like(plane)
    gy = np.zeros_like(plane)
    for i in range(height):
        for j in range(width):
            gx[i, j] = (plane[i, min(j + 1, width - 1)] - plane[i, max(j - 1, 0)]) / 2.0
            gy[i, j] = (plane[min(i + 1, height - 1), j] - plane[max(i - 1, 0), j]) / 2.0
    return gx, gy


def test_stress_channels_of_a_single_vertical_crack():
    values = np.zeros((2, 16, 16))
    values[1, :, 8] = 1.0
    damage = SampleSequence.from_array("crack_000", values, ChannelKind.FRACTURE_DAMAGE)
    stress = derive_stress_channels(damage, smoothing_sigma=1.0).as_array()

    gx, gy = _finite_differences(gaussian_filter(values[1], sigma=1.0, mode="nearest"))
    np.testing.assert_allclose(stress[1, :, :, 0], np.abs(gx) / np.abs(gx).max(), atol=1e-12)
    np.testing.assert_allclose(gy, 0.0, atol=1e-12)
    np.testing.assert_allclose(stress[..., 1:], 0.0, atol=1e-12)
    np.testing.assert_allclose(stress[0], 0.0, atol=1e-12)

    assert set(np.argmax(stress[1, :, :, 0], axis=1)) <= {7, 9}
    np.testing.assert_allclose(stress[1, :, 7, 0], 1.0)
    np.testing.assert_allclose(stress[1, :, 9, 0], 1.0)
    np.testing.assert_allclose(stress[1, :, 8, 0], 0.0, atol=1e-12)


def test_central_gradients_of_a_ramp():
    field = np.tile(np.arange(6, dtype=float), (4, 1))
    gx, gy = central_gradients(field)
    np.testing.assert_allclose(gx[:, 1:-1], 1.0)
    np.testing.assert_allclose(gx[:, 0], 0.5)
    np.testing.assert_allclose(gy, 0.0)


def test_benchmark_set_ids_and_seeds(small_spec):
    samples = build_benchmark_set(3, small_spec)
    assert [s.sample_id for s in samples] == ["crack_000", "crack_001", "crack_002"]
    seeds = [s.metadata["crack_spec"]["seed"] for s in samples]
    assert seeds == [small_spec.seed, small_spec.seed + 1, small_spec.seed + 2]
    with pytest.raises(ValueError):
        build_benchmark_set(0, small_spec)
