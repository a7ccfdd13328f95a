import math

import numpy as np
import pytest
from pydantic import ValidationError

from heightlane.bev.io import _HEADER, decode_heightmap, encode_heightmap, read_heightmap, write_heightmap
from heightlane.bev.schemas import AnchorSet, BevGridSpec, Heightmap
from heightlane.bev.service import cell_of, make_height_anchor, project_anchor_grid
from heightlane.exceptions import OutOfGrid, ParseError, ShapeMismatch, SlopeOutOfRange


def test_default_grid_covers_100m_by_24m():
    spec = BevGridSpec()
    assert spec.shape == (200, 48)
    assert spec.x_max == pytest.approx(100.0)
    assert spec.y_max == pytest.approx(12.0)
    assert spec.x_centers()[0] == pytest.approx(0.25)


def test_five_degree_anchor_at_far_edge():
    spec = BevGridSpec()
    anchor = make_height_anchor(spec, 5.0)
    far = anchor.values[-1]
    assert np.allclose(far, 99.75 * math.tan(math.radians(5.0)))
    assert far[0] == pytest.approx(8.727, abs=1e-3)
    # every column of an anchor is identical
    assert np.ptp(anchor.values, axis=1).max() == 0.0


@pytest.mark.parametrize("theta", [0.5, 3.0, 5.0, 30.0])
def test_anchor_heights_are_odd_in_slope(theta):
    spec = BevGridSpec()
    up, down = make_height_anchor(spec, theta).values, make_height_anchor(spec, -theta).values
    assert np.allclose(down, -up, rtol=0.0, atol=1e-12)
    assert (up > 0).all()


def test_flat_anchor_is_zero():
    anchor = make_height_anchor(BevGridSpec(), 0.0)
    assert not anchor.values.any()


@pytest.mark.parametrize("theta", [45.0, -50.0])
def test_steep_anchor_rejected(theta):
    with pytest.raises(SlopeOutOfRange):
        make_height_anchor(BevGridSpec(), theta)


@pytest.mark.parametrize("slopes", [[], [-5.0, 5.0], [0.0, 0.0], [0.0, 45.0]])
def test_invalid_anchor_sets(slopes):
    with pytest.raises(ValidationError):
        AnchorSet(slopes=slopes)


def test_anchor_label():
    assert AnchorSet(slopes=[-5.0, 0.0, 5.0]).label() == "-5,0,5"
    assert AnchorSet(slopes=[0.0, 2.5]).label() == "0,2.5"


def test_cell_binning_is_half_open(small_grid):
    assert cell_of(small_grid, 0.0, -12.0) == (0, 0)
    assert cell_of(small_grid, 99.99, 11.99) == (99, 23)
    with pytest.raises(OutOfGrid):
        cell_of(small_grid, 100.0, 0.0)
    with pytest.raises(OutOfGrid):
        cell_of(small_grid, 10.0, 12.0)


def test_anchor_projection_rises_toward_horizon(calib):
    spec = BevGridSpec()
    proj = project_anchor_grid(make_height_anchor(spec, 0.0), calib, (12, 20), (192, 320))
    assert proj.stride == 16
    center = spec.cols // 2
    v = proj.v[:, center]
    # far rows map higher in the image than near rows on flat ground
    assert v[-1] < v[20]
    # the near rows are hidden below the image bottom
    assert not proj.valid[0].any()


def test_uphill_anchor_projects_above_flat(calib):
    spec = BevGridSpec()
    flat = project_anchor_grid(make_height_anchor(spec, 0.0), calib, (12, 20), (192, 320))
    up = project_anchor_grid(make_height_anchor(spec, 5.0), calib, (12, 20), (192, 320))
    assert (up.v[100:] < flat.v[100:]).all()


def test_projection_rejects_non_integer_stride(calib):
    with pytest.raises(ShapeMismatch):
        project_anchor_grid(make_height_anchor(BevGridSpec(), 0.0), calib, (12, 21), (192, 320))


def test_heightmap_shape_validated(small_grid):
    with pytest.raises(ValidationError):
        Heightmap(spec=small_grid, values=np.zeros((10, 10)))


def test_heightmap_file_preserves_values_and_nan(small_grid, tmp_path):
    values = np.linspace(-1.0, 3.0, small_grid.rows * small_grid.cols).reshape(small_grid.shape)
    values[5, 7] = np.nan
    path = tmp_path / "h.bevh"
    write_heightmap(Heightmap(spec=small_grid, values=values), path)
    loaded = read_heightmap(path)
    assert loaded.spec == small_grid
    assert np.isnan(loaded.values[5, 7])
    assert np.allclose(np.nan_to_num(loaded.values), np.nan_to_num(values), atol=1e-6)


def test_heightmap_decoder_errors(small_grid):
    blob = encode_heightmap(Heightmap(spec=small_grid, values=np.zeros(small_grid.shape)))
    with pytest.raises(ParseError, match="truncated"):
        decode_heightmap(blob[: _HEADER.size - 1])
    with pytest.raises(ParseError, match="magic"):
        decode_heightmap(b"XXXX" + blob[4:])
    with pytest.raises(ParseError, match="expected"):
        decode_heightmap(blob[:-4])
    with pytest.raises(ParseError, match="version"):
        decode_heightmap(blob[:4] + (7).to_bytes(4, "little") + blob[8:])
