import numpy as np
import pytest
import torch

from heightlane.bev.schemas import BevGridSpec
from heightlane.bev.service import make_height_anchor
from heightlane.exceptions import GridMismatch, SpecInvalid
from heightlane.geometry.service import make_calibration, project_points
from heightlane.model.decode import decode_lanes, targets_as_outputs
from heightlane.synth.dataset import (
    build_samples,
    load_dataset,
    load_scene,
    ordered_map,
    read_manifest,
    scene_specs,
    split_indices,
    write_dataset,
)
from heightlane.synth.schemas import DataConfig, HeightProfile, LaneCurve, SceneSpec
from heightlane.synth.service import (
    generate_scene,
    is_painted,
    profile_height,
    profile_heightmap,
    random_scene_spec,
    scenario_label,
)


@pytest.fixture
def scene_calib():
    return make_calibration(fx=220.0, fy=220.0, cx=160.0, cy=80.0, height=1.5)


def _scene(calib, profile=None, lanes=None, **kwargs):
    lanes = lanes or [LaneCurve(c0=-1.75), LaneCurve(c0=1.75, dashed=True)]
    return SceneSpec(profile=profile or HeightProfile(), lanes=lanes, calibration=calib, **kwargs)


def test_flat_profile_is_zero():
    hm = profile_heightmap(HeightProfile(kind="flat"), BevGridSpec())
    assert not hm.values.any()


def test_constant_slope_profile_equals_anchor():
    spec = BevGridSpec()
    hm = profile_heightmap(HeightProfile(kind="constant_slope", theta=4.0), spec)
    assert np.allclose(hm.values, make_height_anchor(spec, 4.0).values)


def test_transition_profile_is_continuous_with_two_grades():
    profile = HeightProfile(kind="transition", theta=1.0, theta2=6.0, x0=30.0)
    z = profile_height(profile, [29.9, 30.0, 30.1, 60.0])
    assert abs(z[1] - z[0]) < 0.01 and abs(z[2] - z[1]) < 0.02
    assert z[3] - z[1] == pytest.approx(30.0 * np.tan(np.radians(6.0)))


def test_dash_pattern():
    lane = LaneCurve(c0=0.0, dashed=True)
    painted = is_painted(lane, [1.0, 3.0, 5.0, 9.5, 13.0], dash_length=3.0, gap_length=6.0)
    # nothing is painted in front of the bumper
    assert painted.tolist() == [False, False, False, True, False]
    assert is_painted(LaneCurve(c0=0.0), [5.0, 50.0], 3.0, 6.0).all()


@pytest.mark.parametrize(
    "kwargs",
    [
        {"profile": HeightProfile(kind="constant_slope", theta=12.0)},
        {"profile": HeightProfile(kind="sinusoidal", amplitude=5.0, wavelength=20.0)},
        {"lanes": [LaneCurve(c0=0.0), LaneCurve(c0=0.5)]},
        {"lanes": [LaneCurve(c0=30.0)]},
        {"image_height": 100},
    ],
)
def test_invalid_scenes(scene_calib, kwargs):
    with pytest.raises(SpecInvalid):
        generate_scene(_scene(scene_calib, **kwargs))


def test_scene_outputs_are_consistent(scene_calib):
    sample = generate_scene(_scene(scene_calib, HeightProfile(kind="constant_slope", theta=3.0)), "s0")
    assert sample.image.shape == (3, 192, 320)
    assert 0.0 <= float(sample.image.min()) and float(sample.image.max()) <= 1.0
    assert sample.mask2d.shape == (12, 20)
    assert sample.mask2d.any()
    assert sample.marking_mask.shape == (192, 320)
    # one keypoint per row for each lane
    assert int(sample.targets.confidence.sum()) == sum(len(l.points) for l in sample.lanes) == 400
    assert set(np.unique(sample.targets.instance)) == {0, 1, 2}
    assert np.allclose(sample.heightmap.values, make_height_anchor(sample.heightmap.spec, 3.0).values)
    assert sample.scenario == "constant_slope"


def test_painted_points_land_on_rendered_markings(scene_calib):
    spec = _scene(scene_calib, HeightProfile(kind="transition", theta=-1.0, theta2=4.0, x0=35.0))
    sample = generate_scene(spec)
    mask = sample.marking_mask
    checked = 0
    for lane, painted in zip(sample.lanes, sample.painted):
        u, v, _, valid = project_points(lane.as_array(), spec.calibration)
        cols, rows = np.round(u).astype(int), np.round(v).astype(int)
        inside = valid & painted & (cols >= 1) & (cols < 319) & (rows >= 1) & (rows < 191)
        for r, c in zip(rows[inside], cols[inside]):
            assert mask[r - 1 : r + 2, c - 1 : c + 2].any()
            checked += 1
    assert checked > 50


def test_ideal_targets_decode_back_to_lane(scene_calib):
    spec = _scene(scene_calib, HeightProfile(kind="constant_slope", theta=2.0), lanes=[LaneCurve(c0=2.0)])
    sample = generate_scene(spec)
    lanes = decode_lanes(targets_as_outputs(sample.targets), sample.heightmap.spec)
    assert len(lanes) == 1
    pts = lanes[0].as_array()
    assert np.allclose(pts[:, 1], 2.0, atol=1e-5)
    assert np.allclose(pts[:, 2], profile_height(spec.profile, pts[:, 0]))


def test_curved_scene_label(scene_calib):
    spec = _scene(scene_calib, lanes=[LaneCurve(c0=-1.75, c2=1e-4), LaneCurve(c0=1.75, c2=1e-4)])
    assert scenario_label(spec) == "flat+curve"


def test_scene_generation_is_deterministic(scene_calib):
    spec = _scene(scene_calib, seed=11)
    a, b = generate_scene(spec), generate_scene(spec)
    assert torch.equal(a.image, b.image)
    assert np.array_equal(a.marking_mask, b.marking_mask)


def test_random_specs_depend_only_on_index():
    cfg = DataConfig(count=10, seed=4)
    specs = scene_specs(cfg)
    assert random_scene_spec(7, cfg) == specs[7]
    assert random_scene_spec(7, cfg.model_copy(update={"count": 50})) == specs[7]
    assert random_scene_spec(7, cfg.model_copy(update={"seed": 5})) != specs[7]


def test_sloped_only_excludes_flat():
    cfg = DataConfig(count=40, seed=2, sloped_only=True)
    assert all(s.profile.kind != "flat" for s in scene_specs(cfg))


def test_split_is_80_20_and_disjoint():
    train, val = split_indices(100, 0.2)
    assert len(train) == 80 and len(val) == 20
    assert not set(train) & set(val)
    assert sorted(train + val) == list(range(100))
    assert split_indices(100, 0.2) == (train, val)


def test_ordered_map_keeps_input_order():
    out = list(ordered_map(lambda x: x * x, range(20), workers=4, prefetch=3))
    assert out == [x * x for x in range(20)]


def test_written_dataset_reloads(tiny_data_cfg, small_grid, tmp_path):
    manifest = write_dataset(tiny_data_cfg, tmp_path, small_grid)
    assert len(manifest["scenes"]) == tiny_data_cfg.count
    assert read_manifest(tmp_path)["seed"] == tiny_data_cfg.seed
    generated = build_samples(tiny_data_cfg, "val", small_grid)
    loaded = list(load_dataset(tmp_path, "val", small_grid, workers=1))
    assert [s.scene_id for s in loaded] == [s.scene_id for s in generated]
    for a, b in zip(generated, loaded):
        assert torch.allclose(a.image, b.image, atol=1.0 / 255.0)
        assert np.array_equal(a.targets.confidence, b.targets.confidence)
        assert np.array_equal(a.targets.instance, b.targets.instance)
        assert np.allclose(a.heightmap.values, b.heightmap.values, atol=1e-5)
        assert np.array_equal(a.mask2d, b.mask2d)
        assert a.scenario == b.scenario


def test_loading_on_another_grid_fails(tiny_data_cfg, small_grid, tmp_path):
    write_dataset(tiny_data_cfg.model_copy(update={"count": 1}), tmp_path, small_grid)
    with pytest.raises(GridMismatch):
        load_scene(tmp_path / "scenes" / "000000", BevGridSpec())
