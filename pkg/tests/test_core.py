import numpy as np
import pytest
import torch

from HOSSNET.hossnet.core import (
    ChannelKind,
    FieldFrame,
    FlowField,
    NormStats,
    RegionKind,
    RegionMask,
    SampleSequence,
    denormalize_dataset,
    frames_to_tensor,
    normalize_dataset,
    tensor_to_frames,
)


def test_field_frame_promotes_single_channel_planes():
    frame = FieldFrame(np.zeros((4, 6)), ChannelKind.FRACTURE_DAMAGE, 0)
    assert frame.values.shape == (4, 6, 1)
    assert frame.shape == (4, 6)
    assert frame.plane.shape == (4, 6)


def test_field_frame_rejects_wrong_channel_count():
    with pytest.raises(ValueError):
        FieldFrame(np.zeros((4, 4, 2)), ChannelKind.CAUCHY_STRESS, 0)
    with pytest.raises(ValueError):
        FieldFrame(np.zeros((4, 4, 3)), ChannelKind.FRACTURE_DAMAGE, 0)


def test_field_frame_rejects_negative_time():
    with pytest.raises(ValueError):
        FieldFrame(np.zeros((2, 2)), ChannelKind.FRACTURE_DAMAGE, -1)


def test_field_frame_values_are_read_only():
    source = np.zeros((2, 2))
    frame = FieldFrame(source, "fracture_damage", 3)
    source[0, 0] = 1.0
    assert frame.values[0, 0, 0] == 0.0
    assert frame.channel_kind is ChannelKind.FRACTURE_DAMAGE
    with pytest.raises(ValueError):
        frame.values[0, 0, 0] = 1.0


def test_sequence_requires_consecutive_indices():
    a = FieldFrame(np.zeros((2, 2)), ChannelKind.FRACTURE_DAMAGE, 0)
    c = FieldFrame(np.zeros((2, 2)), ChannelKind.FRACTURE_DAMAGE, 2)
    with pytest.raises(ValueError):
        SampleSequence("s", (a, c))
    with pytest.raises(ValueError):
        SampleSequence("s", ())


def test_sequence_rejects_mixed_shapes():
    a = FieldFrame(np.zeros((2, 2)), ChannelKind.FRACTURE_DAMAGE, 0)
    b = FieldFrame(np.zeros((2, 4)), ChannelKind.FRACTURE_DAMAGE, 1)
    with pytest.raises(ValueError):
        SampleSequence("s", (a, b))


def test_sequence_from_array_and_access():
    values = np.arange(5 * 3 * 2, dtype=float).reshape(5, 3, 2)
    seq = SampleSequence.from_array("s", values, ChannelKind.FRACTURE_DAMAGE, start_index=10)
    assert seq.n_steps == 5
    assert seq.shape == (3, 2)
    assert seq.time_indices == [10, 11, 12, 13, 14]
    np.testing.assert_array_equal(seq.frame_at(12).plane, values[2])
    np.testing.assert_array_equal(seq.as_array()[..., 0], values)
    with pytest.raises(IndexError):
        seq.frame_at(15)

    part = seq.window(11, 13)
    assert part.time_indices == [11, 12]


def test_flow_field_validation():
    flow = FlowField(np.full((2, 2), 3.0), np.full((2, 2), 4.0))
    np.testing.assert_allclose(flow.magnitude(), 5.0)
    with pytest.raises(ValueError):
        FlowField(np.zeros((2, 2)), np.zeros((2, 3)))
    with pytest.raises(ValueError):
        FlowField(np.array([[np.nan]]), np.zeros((1, 1)))


def test_region_mask_complement():
    mask = RegionMask(np.eye(3, dtype=bool), RegionKind.DYNAMIC)
    fixed = mask.complement()
    assert fixed.kind is RegionKind.FIXED
    assert mask.n_pixels + fixed.n_pixels == 9
    assert fixed.complement().kind is RegionKind.DYNAMIC
    assert RegionMask.full((2, 3)).n_pixels == 6
    sub_region = RegionMask.full((2, 3))
    assert sub_region.kind is RegionKind.SUB_REGION
    assert sub_region.complement().kind is RegionKind.SUB_REGION
    assert sub_region.complement().is_empty()
    assert RegionMask(np.zeros((2, 2)), "dynamic").is_empty()


def _stress_sequence(sample_id, values):
    return SampleSequence.from_array(sample_id, values, ChannelKind.CAUCHY_STRESS)


def test_norm_stats_fit_apply_invert():
    rng = np.random.default_rng(0)
    a = _stress_sequence("a", rng.uniform(-2.0, 5.0, size=(4, 3, 3, 3)))
    b = _stress_sequence("b", rng.uniform(-2.0, 5.0, size=(4, 3, 3, 3)))
    stats = NormStats.fit([a, b])
    normalised = stats.apply(a).as_array()
    assert normalised.min() >= 0.0 and normalised.max() <= 1.0
    np.testing.assert_allclose(stats.invert(stats.apply(a)).as_array(), a.as_array(), atol=1e-12)


def test_norm_stats_constant_channel_maps_to_zero():
    values = np.zeros((3, 2, 2, 3))
    values[..., 0] = np.linspace(0, 1, 3)[:, None, None]
    values[..., 1] = 4.0
    stats = NormStats.fit([_stress_sequence("a", values)])
    assert len(stats.warnings) == 2
    out = stats.apply_array(values)
    np.testing.assert_array_equal(out[..., 1], 0.0)
    np.testing.assert_array_equal(out[..., 2], 0.0)


def test_norm_stats_restricted_to_training_steps_and_clipped():
    values = np.linspace(0.0, 10.0, 11)[:, None, None] * np.ones((11, 2, 2))
    seq = SampleSequence.from_array("a", values, ChannelKind.FRACTURE_DAMAGE)
    stats = NormStats.fit([seq], {"a": [0, 1, 2, 3, 4, 5]})
    assert stats.minimum == [0.0]
    assert stats.maximum == [5.0]
    out = stats.apply(seq).as_array()
    assert out.max() == 1.0
    assert out[3].max() == pytest.approx(0.6)

    restored = stats.invert(stats.apply(seq)).as_array()
    np.testing.assert_allclose(restored[:6], values[:6, :, :, None], atol=1e-12)
    np.testing.assert_array_equal(restored[6:], 5.0)
    assert stats.apply_array(values, clip=False).max() == pytest.approx(2.0)


def test_norm_stats_reapply_byte_identically():
    rng = np.random.default_rng(4)
    train = _stress_sequence("a", rng.normal(size=(3, 4, 4, 3)))
    test = _stress_sequence("b", 2.0 * rng.normal(size=(3, 4, 4, 3)))
    stats = NormStats.fit([train])
    reloaded = NormStats.from_dict(stats.to_dict())
    first = stats.apply(test).as_array()
    assert first.tobytes() == reloaded.apply(test).as_array().tobytes()
    assert first.tobytes() == stats.apply(test).as_array().tobytes()


def test_norm_stats_dict_round_trip():
    values = np.random.default_rng(1).normal(size=(2, 2, 2, 3))
    stats = NormStats.fit([_stress_sequence("a", values)])
    assert NormStats.from_dict(stats.to_dict()) == stats


def test_norm_stats_rejects_other_kind():
    stats = NormStats(ChannelKind.CAUCHY_STRESS, [0.0] * 3, [1.0] * 3)
    seq = SampleSequence.from_array("a", np.zeros((2, 2, 2)), ChannelKind.FRACTURE_DAMAGE)
    with pytest.raises(ValueError):
        stats.apply(seq)


def test_normalize_dataset_reuses_training_statistics():
    train = [SampleSequence.from_array("a", np.full((2, 2, 2), 2.0) + np.arange(2)[:, None, None], "fracture_damage")]
    test = [SampleSequence.from_array("b", np.full((2, 2, 2), 5.0), "fracture_damage")]
    normalised, stats = normalize_dataset(train)
    assert stats.minimum == [2.0] and stats.maximum == [3.0]
    applied, same = normalize_dataset(test, stats)
    assert same is stats
    np.testing.assert_array_equal(applied[0].as_array(), 1.0)
    restored = denormalize_dataset(normalised, stats)
    np.testing.assert_allclose(restored[0].as_array(), train[0].as_array())


def test_frames_tensor_conversion():
    values = np.random.default_rng(2).normal(size=(5, 4, 6, 3))
    tensor = frames_to_tensor(values, torch.float64)
    assert tensor.shape == (5, 3, 4, 6)
    np.testing.assert_array_equal(tensor_to_frames(tensor), values)
