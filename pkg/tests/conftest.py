import os
import tempfile
from pathlib import Path

# The run registry binds its engine at import time; point it at a throwaway file first.
_REGISTRY_DIR = tempfile.mkdtemp(prefix="heightlane-tests-")
os.environ["HEIGHTLANE_DATABASE_URL"] = f"sqlite:///{Path(_REGISTRY_DIR) / 'registry.db'}"
os.environ.pop("HEIGHTLANE_SEED", None)

import pytest  # noqa: E402
import torch  # noqa: E402

from heightlane.bev.schemas import AnchorSet, BevGridSpec  # noqa: E402
from heightlane.geometry.service import make_calibration  # noqa: E402
from heightlane.metrics.schemas import EvalProtocol  # noqa: E402
from heightlane.model.schemas import ModelConfig  # noqa: E402
from heightlane.synth.schemas import DataConfig  # noqa: E402
from heightlane.trainer.schemas import TrainConfig  # noqa: E402


@pytest.fixture
def calib():
    """Forward-looking camera 1.5 m above flat ground, horizon at row 80 of 192x320."""
    return make_calibration(fx=220.0, fy=220.0, cx=160.0, cy=80.0, height=1.5)


@pytest.fixture
def small_grid() -> BevGridSpec:
    return BevGridSpec(rows=100, cols=24, resolution=1.0, x_min=0.0, y_min=-12.0)


@pytest.fixture
def tiny_model_cfg(small_grid) -> ModelConfig:
    return ModelConfig(
        image_height=96,
        image_width=160,
        backbone_width=8,
        feature_channels=8,
        grid=small_grid,
        anchors=AnchorSet(slopes=[-5.0, 0.0, 5.0]),
        psi_channels=8,
        query_channels=8,
        query_downsample=4,
        layers=1,
        heads=2,
        points=2,
        ffn_channels=16,
        head_channels=8,
    )


@pytest.fixture
def tiny_data_cfg() -> DataConfig:
    return DataConfig(
        count=6,
        seed=3,
        val_fraction=0.34,
        image_height=96,
        image_width=160,
        focal=110.0,
        horizon_row=40.0,
        workers=1,
    )


@pytest.fixture
def tiny_train_cfg(tiny_model_cfg, tiny_data_cfg, tmp_path) -> TrainConfig:
    return TrainConfig(
        name="tiny",
        iterations=2,
        batch_size=2,
        lr=1e-3,
        seed=7,
        eval_interval=2,
        log_interval=1,
        checkpoint_dir=str(tmp_path / "run"),
        register_run=False,
        model=tiny_model_cfg,
        data=tiny_data_cfg,
        protocol=EvalProtocol(),
    )


@pytest.fixture(autouse=True)
def _single_thread():
    torch.set_num_threads(1)
    yield
