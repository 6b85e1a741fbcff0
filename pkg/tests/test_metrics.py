import math

import numpy as np
import pytest

from HOSSNET.hossnet.core import ChannelKind, RegionKind, RegionMask, SampleSequence
from HOSSNET.hossnet.metrics import (
    EvalRecord,
    MetricName,
    detect_dynamic_region,
    evaluate_frame,
    read_records_csv,
    region_rmse,
    rmse,
    sort_records,
    ssim,
    summarize,
    temporal_curve,
    wfe,
    write_records_csv,
)

from conftest import ramp_sequence

C1 = 0.01**2


def _records():
    return [
        EvalRecord("b", 3, 0.3, 0.7, 1.0),
        EvalRecord("a", 1, 0.1, 0.9, 0.5),
        EvalRecord("b", 1, 0.3, 0.5, 1.5),
        EvalRecord("a", 2, 0.2, 0.8, 0.25),
    ]


def test_rmse_examples():
    assert rmse(np.zeros((2, 2)), np.zeros((2, 2))) == 0.0
    assert rmse(np.array([[0.0, 1.0]]), np.array([[0.0, 0.0]])) == pytest.approx(math.sqrt(0.5))
    with pytest.raises(ValueError):
        rmse(np.zeros((2, 2)), np.zeros((2, 3)))


def test_ssim_of_identical_frames_is_one():
    frame = np.random.default_rng(0).random((16, 16))
    assert ssim(frame, frame) == pytest.approx(1.0)


def test_ssim_of_opposite_constant_frames():
    assert ssim(np.zeros((9, 9)), np.ones((9, 9))) == pytest.approx(C1 / (1 + C1), rel=1e-6)


def test_ssim_is_symmetric_and_bounded():
    rng = np.random.default_rng(1)
    a, b = rng.random((12, 12)), rng.random((12, 12))
    assert ssim(a, b) == pytest.approx(ssim(b, a))
    assert -1.0 <= ssim(a, b) <= 1.0
    assert ssim(a, b) < ssim(a, a)


def test_ssim_argument_errors():
    frame = np.zeros((8, 8))
    with pytest.raises(ValueError):
        ssim(frame, frame, window=4)
    with pytest.raises(ValueError):
        ssim(frame, frame, data_range=0.0)
    with pytest.raises(ValueError):
        ssim(np.zeros((5, 5)), np.zeros((5, 5)), window=7)


def test_dynamic_region_follows_changing_pixels():
    seq = ramp_sequence("a", 5)
    region = detect_dynamic_region(seq, (0, 4), dilation=0)
    assert region.kind is RegionKind.DYNAMIC
    assert region.n_pixels == 1
    assert region.mask[4, 4]
    grown = detect_dynamic_region(seq, (0, 4), dilation=1)
    assert grown.n_pixels == 9


def test_dynamic_region_of_a_static_sequence_is_empty():
    seq = SampleSequence.from_array("a", np.full((4, 6, 6), 0.3), ChannelKind.FRACTURE_DAMAGE)
    assert detect_dynamic_region(seq, (0, 3)).is_empty()


def test_dynamic_region_window_errors():
    seq = ramp_sequence("a", 5)
    with pytest.raises(ValueError):
        detect_dynamic_region(seq, (3, 3))
    with pytest.raises(ValueError):
        detect_dynamic_region(seq, (0, 9))


def test_wfe_weights_the_dynamic_region():
    truth = np.zeros((2, 2))
    pred = np.array([[0.02, 0.01], [0.01, 0.01]])
    dynamic = np.zeros((2, 2), dtype=bool)
    dynamic[0, 0] = True
    assert wfe(pred, truth, RegionMask(dynamic, RegionKind.DYNAMIC)) == pytest.approx(0.21)


def test_wfe_of_a_constructed_8x8_case():
    truth = np.full((8, 8), 0.25)
    pred = truth.copy()
    dynamic = np.zeros((8, 8), dtype=bool)
    dynamic[2:4, 3:6] = True
    pred[dynamic] += 0.3
    # 29 of the 58 fixed pixels are off by 0.1
    fixed_rows, fixed_cols = np.nonzero(~dynamic)
    pred[fixed_rows[::2], fixed_cols[::2]] -= 0.1

    expected = 10.0 * 0.3 + math.sqrt(29 * 0.1**2 / 58)
    value = wfe(pred, truth, RegionMask(dynamic, RegionKind.DYNAMIC))
    assert value == pytest.approx(expected, abs=1e-12)


def test_wfe_matches_a_pixel_loop_on_random_8x8_frames():
    rng = np.random.default_rng(7)
    pred, truth = rng.random((8, 8)), rng.random((8, 8))
    dynamic = rng.random((8, 8)) < 0.3

    sums = {True: 0.0, False: 0.0}
    counts = {True: 0, False: 0}
    for r in range(8):
        for c in range(8):
            key = bool(dynamic[r, c])
            sums[key] += (pred[r, c] - truth[r, c]) ** 2
            counts[key] += 1
    expected = 10.0 * math.sqrt(sums[True] / counts[True]) + math.sqrt(sums[False] / counts[False])
    value = wfe(pred, truth, RegionMask(dynamic, RegionKind.DYNAMIC))
    assert value == pytest.approx(expected, abs=1e-12)


def test_wfe_with_empty_dynamic_region_is_the_plain_rmse():
    rng = np.random.default_rng(2)
    pred, truth = rng.random((4, 4)), rng.random((4, 4))
    empty = RegionMask(np.zeros((4, 4)), RegionKind.DYNAMIC)
    assert wfe(pred, truth, empty) == pytest.approx(rmse(pred, truth))
    assert region_rmse(pred, truth, np.zeros((4, 4))) == 0.0


def test_evaluate_frame_of_a_perfect_prediction():
    frame = np.random.default_rng(3).random((8, 8))
    region = RegionMask.full((8, 8))
    record = evaluate_frame(frame, frame, region, "a", 4)
    assert record.rmse == 0.0
    assert record.wfe == 0.0
    assert record.ssim == pytest.approx(1.0)
    assert record.lead_time == 4


def test_record_validation():
    with pytest.raises(ValueError):
        EvalRecord("a", -1, 0.0, 1.0, 0.0)
    with pytest.raises(ValueError):
        EvalRecord("a", 1, -0.1, 1.0, 0.0)
    with pytest.raises(ValueError):
        EvalRecord("a", 1, 0.0, 1.5, 0.0)
    assert EvalRecord("a", 1, 0.5, 0.25, 1.0).value("ssim") == 0.25


def test_temporal_curve():
    curve = temporal_curve(_records(), MetricName.RMSE, interval=2, max_lead=60)
    assert curve == {1: pytest.approx(0.2), 3: pytest.approx(0.3)}
    assert temporal_curve(_records(), "wfe", interval=1, max_lead=2) == {
        1: pytest.approx(1.0),
        2: pytest.approx(0.25),
    }
    with pytest.raises(ValueError):
        temporal_curve([], MetricName.RMSE)
    with pytest.raises(ValueError):
        temporal_curve(_records(), MetricName.RMSE, interval=0)


def test_summarize_over_the_first_steps():
    summary = summarize(_records(), first_n=2)
    assert summary["n_records"] == 3
    assert summary["rmse"] == pytest.approx(0.2)
    assert summary["ssim"] == pytest.approx(2.2 / 3)
    assert summary["wfe"] == pytest.approx(0.75)
    with pytest.raises(ValueError):
        summarize(_records(), first_n=0)


def test_records_are_sorted():
    ordered = sort_records(_records())
    assert [(r.sample_id, r.lead_time) for r in ordered] == [("a", 1), ("a", 2), ("b", 1), ("b", 3)]


def test_records_csv_is_deterministic(tmp_path):
    records = _records() + [EvalRecord("c", 1, 1 / 3, 0.1, math.pi)]
    first = write_records_csv(records, tmp_path / "one" / "records.csv")
    second = write_records_csv(list(reversed(records)), tmp_path / "two" / "records.csv")
    assert first.read_bytes() == second.read_bytes()
    assert read_records_csv(first) == sort_records(records)


def test_records_csv_requires_columns(tmp_path):
    path = tmp_path / "bad.csv"
    path.write_text("sample_id,lead_time\na,1\n")
    with pytest.raises(ValueError):
        read_records_csv(path)
