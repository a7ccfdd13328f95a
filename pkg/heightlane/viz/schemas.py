from typing import Dict, Optional, Tuple

from pydantic import BaseModel, ConfigDict, Field, field_validator


class RenderJob(BaseModel):
    """
    What to render and where.

    inputs keys: scene (dataset scene dir), checkpoint and config (optional model),
    pred_lanes (optional lane file). outputs keys: heightmap, profile, overlay.
    """

    model_config = ConfigDict(extra="forbid")

    inputs: Dict[str, str]
    outputs: Dict[str, str]
    value_range: Tuple[float, float] = (-5.0, 10.0)
    gt_color: str = "#1a9641"
    pred_color: str = "#d7191c"
    use_gt_heightmap: bool = False
    scale: int = Field(default=3, ge=1)
    z_range: Optional[Tuple[float, float]] = None

    @field_validator("value_range")
    @classmethod
    def _ordered(cls, v):
        if not v[0] < v[1]:
            raise ValueError("colormap range needs min < max")
        return v
