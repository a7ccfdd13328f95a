import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Dict, List, Optional

from pydantic import BaseModel, ConfigDict, Field, field_validator, model_validator

from heightlane.losses.schemas import LossWeights
from heightlane.metrics.schemas import EvalProtocol, EvalReport
from heightlane.model.schemas import ModelConfig
from heightlane.synth.schemas import DataConfig


class TrainConfig(BaseModel):
    """Everything a training run depends on; one YAML file."""

    model_config = ConfigDict(extra="forbid", protected_namespaces=())

    name: str = "heightlane"
    iterations: int = 2000
    batch_size: int = 4
    lr: float = 1e-3
    seed: int = 0
    eval_interval: int = 200
    log_interval: int = 20
    checkpoint_dir: str = "runs/default"
    conf_thresh: float = 0.5
    embed_margin: float = 1.5
    use_gt_heightmap: bool = False
    detach_height_grad: bool = False
    register_run: bool = True
    weights: LossWeights = Field(default_factory=LossWeights)
    model: ModelConfig = Field(default_factory=ModelConfig)
    data: DataConfig = Field(default_factory=DataConfig)
    protocol: EvalProtocol = Field(default_factory=EvalProtocol)

    @field_validator("iterations", "batch_size", "eval_interval", "log_interval")
    @classmethod
    def _positive_count(cls, v: int) -> int:
        if v <= 0:
            raise ValueError("must be > 0")
        return v

    @field_validator("lr")
    @classmethod
    def _positive_lr(cls, v: float) -> float:
        if not v > 0:
            raise ValueError("learning rate must be > 0")
        return v

    @model_validator(mode="after")
    def _push_flags(self):
        self.model = self.model.model_copy(
            update={
                "use_gt_heightmap": self.use_gt_heightmap or self.model.use_gt_heightmap,
                "detach_height_grad": self.detach_height_grad or self.model.detach_height_grad,
            }
        )
        return self


@dataclass
class EvalResult:
    report: EvalReport
    height_mae: float
    scenarios: Dict[str, EvalReport] = field(default_factory=dict)
    use_gt_heightmap: bool = False

    def as_dict(self) -> dict:
        return {
            "report": self.report.model_dump(),
            "height_mae": self.height_mae,
            "use_gt_heightmap": self.use_gt_heightmap,
            "scenarios": {k: v.model_dump() for k, v in sorted(self.scenarios.items())},
        }


class TrainLog:
    """
    Append-only line-delimited JSON log of loss parts and evaluations.

    Records are also kept in memory; iteration indices must not decrease.
    """

    def __init__(self, path: Optional[Path] = None):
        self.path = Path(path) if path is not None else None
        self.records: List[dict] = []
        if self.path is not None:
            self.path.parent.mkdir(parents=True, exist_ok=True)
            self.path.write_text("", encoding="utf-8")

    def _append(self, record: dict) -> None:
        if self.records and record["iteration"] < self.records[-1]["iteration"]:
            raise ValueError("train log iterations must be monotone")
        self.records.append(record)
        if self.path is not None:
            with open(self.path, "a", encoding="utf-8") as f:
                f.write(json.dumps(record, sort_keys=True) + "\n")

    def log_iteration(self, iteration: int, parts: Dict[str, float], total: float) -> None:
        self._append({"kind": "iteration", "iteration": iteration, "parts": parts, "total": total})

    def log_eval(self, iteration: int, result: EvalResult) -> None:
        self._append({"kind": "eval", "iteration": iteration, **result.as_dict()})

    def totals(self) -> List[float]:
        return [r["total"] for r in self.records if r["kind"] == "iteration"]

    def evals(self) -> List[dict]:
        return [r for r in self.records if r["kind"] == "eval"]

    def smoothed_ratio(self, window: int = 100) -> float:
        """
        Mean total loss over the last `window` iterations divided by the mean over the first.

        Raises:
            ValueError: If fewer than `window` iterations were logged
        """
        totals = self.totals()
        if window < 1 or len(totals) < window:
            raise ValueError(f"need at least {window} logged iterations, have {len(totals)}")
        return (sum(totals[-window:]) / window) / (sum(totals[:window]) / window)


@dataclass
class TrainResult:
    log: TrainLog
    checkpoint: Path
    run_id: Optional[int] = None


class AblationRow(BaseModel):
    anchors: str
    result: dict
    checkpoint: str
