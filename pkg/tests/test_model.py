import numpy as np
import pytest
import torch

from heightlane.bev.schemas import AnchorSet, BevGridSpec, Heightmap
from heightlane.bev.service import make_height_anchor, project_anchor_grid
from heightlane.diffcore.determinism import seeded_generator, set_determinism
from heightlane.diffcore.ops import bilinear_sample_batched
from heightlane.exceptions import GridMismatch, ShapeMismatch
from heightlane.geometry.service import make_calibration
from heightlane.losses.service import confidence_loss, embedding_loss, height_loss, offset_loss
from heightlane.metrics.schemas import Lane3D
from heightlane.model.decode import decode_lanes, targets_as_outputs
from heightlane.model.height import height_extraction, sample_anchor_features
from heightlane.model.network import build_model
from heightlane.model.schemas import LaneHeadOutput, ModelConfig
from heightlane.model.transform import PositionalEncoding, positional_encoding, reference_points, spatial_transform
from heightlane.synth.service import rasterize_targets


@pytest.fixture
def tiny_calib():
    return make_calibration(fx=110.0, fy=110.0, cx=80.0, cy=40.0, height=1.5)


def _images(batch, cfg, seed=0):
    return torch.rand(batch, 3, cfg.image_height, cfg.image_width, generator=seeded_generator(seed))


def test_forward_shapes(tiny_model_cfg, tiny_calib):
    set_determinism(0)
    model = build_model(tiny_model_cfg)
    out = model(_images(2, tiny_model_cfg), [tiny_calib, tiny_calib])
    rows, cols = tiny_model_cfg.grid.shape
    assert out.lanes.confidence.shape == (2, rows, cols)
    assert out.lanes.offset.shape == (2, rows, cols)
    assert out.lanes.embedding.shape == (2, tiny_model_cfg.embedding_dim, rows, cols)
    assert out.lanes.height.shape == (2, rows, cols)
    assert out.aux2d.shape == (2, 1, 96 // 16, 160 // 16)
    assert out.f_height.shape == (2, tiny_model_cfg.feature_channels * 3, rows, cols)
    assert out.f_bev.shape == (2, 2 * tiny_model_cfg.query_channels, rows, cols)


def test_forward_is_deterministic(tiny_model_cfg, tiny_calib):
    outs = []
    for _ in range(2):
        set_determinism(5)
        model = build_model(tiny_model_cfg)
        outs.append(model(_images(1, tiny_model_cfg, seed=1), [tiny_calib]).lanes.confidence)
    assert torch.equal(outs[0], outs[1])


def test_calibration_count_must_match_batch(tiny_model_cfg, tiny_calib):
    model = build_model(tiny_model_cfg)
    with pytest.raises(ShapeMismatch):
        model(_images(2, tiny_model_cfg), [tiny_calib])


def test_gt_heightmap_mode_uses_given_heights(tiny_model_cfg, tiny_calib):
    model = build_model(tiny_model_cfg)
    gt = torch.full((1,) + tiny_model_cfg.grid.shape, 0.7)
    out = model(_images(1, tiny_model_cfg), [tiny_calib], gt_heights=gt, use_gt_heightmap=True)
    assert torch.equal(out.lanes.height, gt)
    assert not torch.equal(out.lanes.predicted_height, gt)
    with pytest.raises(ShapeMismatch):
        model(_images(1, tiny_model_cfg), [tiny_calib], use_gt_heightmap=True)


@pytest.mark.parametrize("detach", [False, True])
def test_height_gradient_from_lane_head(tiny_model_cfg, tiny_calib, detach):
    cfg = tiny_model_cfg.model_copy(update={"detach_height_grad": detach})
    set_determinism(1)
    model = build_model(cfg)
    out = model(_images(1, cfg), [tiny_calib])
    psi_weight = model.height.psi[-1].weight
    (grad,) = torch.autograd.grad(out.lanes.confidence.sum(), [psi_weight], allow_unused=True)
    if detach:
        assert grad is None or not grad.abs().any()
    else:
        assert grad is not None and grad.abs().sum() > 0


def test_flat_reference_points_match_flat_anchor(tiny_calib):
    spec = BevGridSpec(rows=40, cols=16, resolution=1.0, x_min=0.0, y_min=-8.0)
    feat_shape, img_shape = (6, 10), (96, 160)
    refs, valid = reference_points(torch.zeros(1, *spec.shape, dtype=torch.float64), [tiny_calib], spec, 16)
    proj = project_anchor_grid(make_height_anchor(spec, 0.0), tiny_calib, feat_shape, img_shape)
    expected = np.stack([proj.u, proj.v], axis=-1).reshape(-1, 2)
    in_front = valid[0].numpy()
    assert np.allclose(refs[0].numpy()[in_front], expected[in_front], atol=1e-9)

    feat = torch.randn(1, 4, *feat_shape, generator=seeded_generator(2), dtype=torch.float64)
    anchor_samples = sample_anchor_features(feat, [tiny_calib], spec, AnchorSet(slopes=[0.0]), img_shape)
    direct = bilinear_sample_batched(feat, refs).transpose(1, 2).reshape(1, 4, *spec.shape)
    inside = torch.as_tensor(proj.valid)
    assert torch.allclose(anchor_samples[0][:, inside], direct[0][:, inside], atol=1e-6)
    assert not anchor_samples[0][:, ~inside].any()


def test_uphill_heights_move_reference_points_up(tiny_calib):
    spec = BevGridSpec(rows=40, cols=16, resolution=1.0, x_min=0.0, y_min=-8.0)
    flat, _ = reference_points(torch.zeros(1, *spec.shape), [tiny_calib], spec, 16)
    hills, _ = reference_points(torch.full((1, *spec.shape), 1.0), [tiny_calib], spec, 16)
    assert (hills[0, :, 1] < flat[0, :, 1]).all()


def test_wrappers_check_grid(tiny_model_cfg, tiny_calib):
    model = build_model(tiny_model_cfg)
    pyramid = model.backbone(_images(1, tiny_model_cfg))
    hm, f_height = height_extraction(model.height, pyramid, tiny_calib, tiny_model_cfg.grid, tiny_model_cfg.anchors)
    assert hm.values.shape == tiny_model_cfg.grid.shape
    assert f_height.shape[1] == tiny_model_cfg.feature_channels * 3
    with pytest.raises(GridMismatch):
        height_extraction(model.height, pyramid, tiny_calib, BevGridSpec(), tiny_model_cfg.anchors)
    f_bev = spatial_transform(model.transform, pyramid, hm, tiny_calib)
    assert f_bev.shape[-2:] == tiny_model_cfg.grid.shape


def test_view_relation_variant(tiny_model_cfg, tiny_calib):
    cfg = tiny_model_cfg.model_copy(update={"height_extractor": "view_relation"})
    model = build_model(cfg)
    out = model(_images(1, cfg), [tiny_calib])
    assert out.f_height.shape == (1, cfg.feature_channels) + cfg.grid.shape


def test_ideal_output_decodes_to_lanes(small_grid):
    heights = np.tile(np.linspace(0.0, 4.0, small_grid.rows)[:, None], (1, small_grid.cols))
    hm = Heightmap(spec=small_grid, values=heights)
    xs = small_grid.x_centers()
    lanes = [
        Lane3D(points=[[x, -3.3, 0.0] for x in xs], instance_id=1),
        Lane3D(points=[[x, 2.0 + 0.01 * x, 0.0] for x in xs], instance_id=2),
    ]
    targets = rasterize_targets(lanes, hm, np.zeros((6, 10)))
    decoded = decode_lanes(targets_as_outputs(targets), small_grid)
    assert len(decoded) == 2
    left, right = decoded[0].as_array(), decoded[1].as_array()
    assert np.allclose(left[:, 1], -3.3, atol=1e-5)
    assert np.allclose(right[:, 1], 2.0 + 0.01 * right[:, 0], atol=1e-5)
    assert np.allclose(left[:, 2], heights[:, 0])


def test_low_confidence_decodes_nothing(small_grid):
    targets = rasterize_targets([], Heightmap(spec=small_grid, values=np.zeros(small_grid.shape)), np.zeros((6, 10)))
    assert decode_lanes(targets_as_outputs(targets), small_grid) == []


def test_default_query_grid_is_downsampled():
    cfg = ModelConfig()
    assert cfg.query_downsample == 4
    assert cfg.query_grid().shape == (cfg.grid.rows // 4, cfg.grid.cols // 4)


def _encoder(small_grid):
    set_determinism(3)
    return PositionalEncoding(8, small_grid).double()


def test_positional_encoding_depends_only_on_position(small_grid):
    pe = _encoder(small_grid)
    x = torch.tensor([10.0, 10.0, 42.5], dtype=torch.float64)
    y = torch.tensor([-3.0, -3.0, 5.0], dtype=torch.float64)
    h = torch.tensor([0.4, 0.4, 0.4], dtype=torch.float64)
    out = positional_encoding(pe, x, y, h)
    assert out.shape == (3, 8)
    assert torch.equal(out[0], out[1])
    assert not torch.allclose(out[0], out[2])


def test_positional_encoding_sees_height(small_grid):
    pe = _encoder(small_grid)
    low = positional_encoding(pe, [20.0], [1.0], [0.0])
    high = positional_encoding(pe, [20.0], [1.0], [1.5])
    assert not torch.allclose(low, high)


def test_positional_encoding_gradcheck(small_grid):
    pe = _encoder(small_grid)
    g = seeded_generator(4)
    x = (torch.rand(6, generator=g, dtype=torch.float64) * 100.0).requires_grad_()
    y = (torch.rand(6, generator=g, dtype=torch.float64) * 24.0 - 12.0).requires_grad_()
    h = (torch.rand(6, generator=g, dtype=torch.float64) * 4.0 - 2.0).requires_grad_()
    assert torch.autograd.gradcheck(lambda a, b, c: pe(a, b, c), (x, y, h))


def test_second_transform_layer_changes_output(tiny_model_cfg, tiny_calib):
    set_determinism(6)
    two = build_model(tiny_model_cfg.model_copy(update={"layers": 2})).eval()
    one = build_model(tiny_model_cfg).eval()
    one.load_state_dict(two.state_dict(), strict=False)
    images = _images(1, tiny_model_cfg, seed=2)
    with torch.no_grad():
        f_one = one(images, [tiny_calib]).f_bev
        f_two = two(images, [tiny_calib]).f_bev
    assert f_one.shape == f_two.shape
    assert not torch.allclose(f_one, f_two)


def _anchor_samples(small_grid, tiny_calib, slopes):
    feat = torch.randn(1, 4, 6, 10, generator=seeded_generator(8), dtype=torch.float64)
    return sample_anchor_features(feat, [tiny_calib], small_grid, AnchorSet(slopes=slopes), (96, 160))


def test_slope_order_permutes_channel_blocks(small_grid, tiny_calib):
    forward = _anchor_samples(small_grid, tiny_calib, [-5.0, 0.0, 5.0])
    reverse = _anchor_samples(small_grid, tiny_calib, [5.0, 0.0, -5.0])
    blocks = forward.split(4, dim=1)
    assert torch.equal(reverse, torch.cat([blocks[2], blocks[1], blocks[0]], dim=1))


def test_flat_slice_matches_single_flat_anchor(small_grid, tiny_calib):
    three = _anchor_samples(small_grid, tiny_calib, [-5.0, 0.0, 5.0])
    flat = _anchor_samples(small_grid, tiny_calib, [0.0])
    assert torch.equal(three[:, 4:8], flat)
    assert not torch.equal(three[:, 0:4], flat)


def test_height_loss_gradient_reaches_backbone(tiny_model_cfg, tiny_calib):
    set_determinism(2)
    model = build_model(tiny_model_cfg)
    out = model(_images(1, tiny_model_cfg), [tiny_calib])
    gt = torch.full_like(out.lanes.predicted_height, 0.5)
    height_loss(out.lanes.predicted_height, gt).backward()
    grads = [p.grad for p in model.backbone.parameters() if p.grad is not None]
    assert grads and sum(float(g.abs().sum()) for g in grads) > 0


def test_lane_losses_reach_bev_features(tiny_model_cfg, tiny_calib, small_grid):
    set_determinism(2)
    model = build_model(tiny_model_cfg)
    out = model(_images(1, tiny_model_cfg), [tiny_calib])
    hm = Heightmap(spec=small_grid, values=np.zeros(small_grid.shape))
    xs = small_grid.x_centers()
    lanes = [
        Lane3D(points=[[x, -3.3, 0.0] for x in xs], instance_id=1),
        Lane3D(points=[[x, 2.2, 0.0] for x in xs], instance_id=2),
    ]
    t = rasterize_targets(lanes, hm, np.zeros((6, 10)))
    conf = torch.as_tensor(t.confidence, dtype=torch.float32).unsqueeze(0)
    offset = torch.as_tensor(t.offset, dtype=torch.float32).unsqueeze(0)
    instance = torch.as_tensor(t.instance).unsqueeze(0)
    losses = {
        "confidence": confidence_loss(out.lanes.confidence, conf),
        "offset": offset_loss(out.lanes.offset, offset, conf),
        "embedding": embedding_loss(out.lanes.embedding, instance, delta_d=100.0),
    }
    for name, loss in losses.items():
        (grad,) = torch.autograd.grad(loss, [out.f_bev], retain_graph=True)
        assert grad.abs().sum() > 0, name


def test_decode_keeps_the_most_confident_cell_per_row():
    spec = BevGridSpec(rows=4, cols=4, resolution=1.0, x_min=0.0, y_min=-2.0)
    conf = torch.full((1, 4, 4), -10.0)
    conf[0, 0, 1] = conf[0, 1, 1] = conf[0, 2, 1] = 10.0
    conf[0, 1, 2] = 5.0
    out = LaneHeadOutput(
        confidence=conf,
        offset=torch.zeros(1, 4, 4),
        embedding=torch.zeros(1, 2, 4, 4),
        height=torch.zeros(1, 4, 4),
    )
    (lane,) = decode_lanes(out, spec)
    pts = lane.as_array()
    assert pts[:, 0].tolist() == [0.5, 1.5, 2.5]
    assert pts[:, 1].tolist() == [-0.5, -0.5, -0.5]
