from typing import List

from pydantic import BaseModel


class InferRequest(BaseModel):
    scene_dir: str
    use_gt_heightmap: bool = False


class LaneOut(BaseModel):
    points: List[List[float]]


class HeightmapStats(BaseModel):
    min: float
    max: float
    mean: float


class InferResponse(BaseModel):
    scene_id: str
    lanes: List[LaneOut]
    heightmap: HeightmapStats
