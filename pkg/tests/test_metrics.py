import json

import numpy as np
import pytest

from heightlane.exceptions import DegenerateLane, ParseError
from heightlane.metrics.schemas import EvalProtocol, Lane3D
from heightlane.metrics.service import (
    compute_report,
    evaluate_lane_sets,
    format_report_table,
    match_lanes,
    merge_matchings,
    read_lanes,
    resample_lane,
    write_lanes,
)


def straight(y, z=0.0, x0=0.0, x1=100.0, n=51):
    xs = np.linspace(x0, x1, n)
    return Lane3D(points=[(float(x), float(y), float(z)) for x in xs])


@pytest.fixture
def two_gt():
    return [straight(-1.75), straight(1.75)]


def test_resample_interpolates_and_flags_span():
    lane = Lane3D(points=[(10.0, 0.0, 0.0), (20.0, 1.0, 2.0)])
    y, z, valid = resample_lane(lane, [5.0, 10.0, 15.0, 20.0, 25.0])
    assert valid.tolist() == [False, True, True, True, False]
    assert y[2] == pytest.approx(0.5)
    assert z[2] == pytest.approx(1.0)


def test_resample_sorts_points_by_x():
    lane = Lane3D(points=[(20.0, 1.0, 0.0), (10.0, 0.0, 0.0)])
    y, _, valid = resample_lane(lane, [15.0])
    assert valid[0] and y[0] == pytest.approx(0.5)


def test_resample_needs_two_points():
    with pytest.raises(DegenerateLane):
        resample_lane(Lane3D(points=[(1.0, 0.0, 0.0)]), [1.0])


def test_protocol_stations():
    stations = EvalProtocol().stations()
    assert stations[0] == 0.0 and stations[-1] == 100.0
    assert len(stations) == 201


def test_perfect_prediction(two_gt):
    report = evaluate_lane_sets(two_gt, two_gt)
    assert report.f_score == 1.0
    assert report.x_error_near == 0.0 and report.z_error_far == 0.0
    assert (report.tp, report.fp, report.fn) == (2, 0, 0)


def test_one_of_two_matched(two_gt):
    preds = [straight(-1.75), straight(8.0)]
    report = evaluate_lane_sets(preds, two_gt)
    assert report.precision == 0.5
    assert report.recall == 0.5
    assert report.f_score == pytest.approx(0.5)
    assert (report.tp, report.fp, report.fn) == (1, 1, 1)


def test_lateral_shift_is_reported_as_x_error(two_gt):
    preds = [straight(-1.55), straight(1.95)]
    report = evaluate_lane_sets(preds, two_gt)
    assert report.f_score == 1.0
    assert report.x_error_near == pytest.approx(0.2)
    assert report.x_error_far == pytest.approx(0.2)
    assert report.z_error_near == pytest.approx(0.0)


def test_height_offset_is_reported_as_z_error(two_gt):
    preds = [straight(-1.75, z=0.3), straight(1.75, z=0.3)]
    report = evaluate_lane_sets(preds, two_gt)
    assert report.z_error_near == pytest.approx(0.3)
    assert report.z_error_far == pytest.approx(0.3)
    assert report.x_error_far == pytest.approx(0.0)


def test_far_only_error():
    gt = [straight(0.0)]
    bent = Lane3D(points=[(0.0, 0.0, 0.0), (40.0, 0.0, 0.0), (100.0, 0.6, 0.0)])
    report = evaluate_lane_sets([bent], gt)
    assert report.f_score == 1.0
    assert report.x_error_near == pytest.approx(0.0)
    assert report.x_error_far == pytest.approx(0.3, abs=0.01)


def test_empty_predictions(two_gt):
    report = evaluate_lane_sets([], two_gt)
    assert report.f_score == 0.0 and report.precision == 0.0 and report.recall == 0.0
    assert report.fn == 2
    assert report.x_error_near == 0.0


def test_short_prediction_is_scored_on_shared_stations():
    m = match_lanes([straight(0.0, x1=50.0)], [straight(0.0)])
    assert m.pairs[0].covered == 1.0
    assert m.tp == 1
    assert len(m.station_x) == 101


def test_partial_overlap_counts_only_close_shared_stations():
    # shared stations 40..60 m; the prediction leaves the threshold past 50 m
    pred = Lane3D(points=[(40.0, 0.0, 0.0), (50.0, 0.0, 0.0), (60.0, 4.0, 0.0)])
    m = match_lanes([pred], [straight(0.0, x1=60.0)])
    # 28 of the 41 shared stations (40.0 .. 53.5 m) stay within 1.5 m
    assert m.pairs[0].covered == pytest.approx(28 / 41)
    assert m.tp == 0


def test_lanes_without_shared_stations_cover_nothing():
    m = match_lanes([straight(0.0, x1=40.0)], [straight(0.0, x0=60.0)])
    assert m.pairs[0].covered == 0.0
    assert m.tp == 0 and m.fp == 1 and m.fn == 1


def test_far_prediction_is_not_matched():
    m = match_lanes([straight(3.0)], [straight(0.0)])
    assert m.tp == 0 and m.fp == 1 and m.fn == 1


def test_assignment_is_one_to_one():
    gt = [straight(0.0)]
    m = match_lanes([straight(0.1), straight(0.2)], gt)
    assert m.tp == 1 and m.fp == 1


def test_assignment_prefers_more_true_positives():
    # greedy pairing of pred 0 with gt 1 would leave gt 0 unmatched
    gts = [straight(0.0), straight(1.4)]
    preds = [straight(0.9), straight(2.6)]
    m = match_lanes(preds, gts)
    assert m.tp == 2


def test_merged_frames_pool_counts(two_gt):
    a = match_lanes(two_gt, two_gt)
    b = match_lanes([], two_gt)
    report = compute_report(merge_matchings([a, b]))
    assert (report.tp, report.fp, report.fn) == (2, 0, 2)
    assert report.precision == 1.0 and report.recall == 0.5


def test_lane_file_round_trip(two_gt, tmp_path):
    path = tmp_path / "lanes.json"
    write_lanes(two_gt, path)
    loaded = read_lanes(path)
    assert [l.points for l in loaded] == [l.points for l in two_gt]


@pytest.mark.parametrize("content", ["not json", json.dumps({"lines": []}), json.dumps({"lanes": [{"points": [[1, 2]]}]})])
def test_invalid_lane_files(tmp_path, content):
    path = tmp_path / "lanes.json"
    path.write_text(content)
    with pytest.raises(ParseError):
        read_lanes(path)


def test_missing_lane_file(tmp_path):
    with pytest.raises(FileNotFoundError):
        read_lanes(tmp_path / "missing.json")


def test_report_table(two_gt):
    table = format_report_table({"overall": evaluate_lane_sets(two_gt, two_gt)}, extra={"height_mae": 0.125})
    assert "overall" in table
    assert "1.0000" in table
    assert "height_mae" in table
