"""
Metrics Service Module

3D lane evaluation:
- Resampling lanes at fixed longitudinal stations
- One-to-one matching of predictions to ground truth
- F-score and near/far X/Z errors
- Lane file I/O and report tables
"""

import json
import logging
from pathlib import Path
from typing import Dict, Iterable, List, Optional, Sequence

import numpy as np
from jinja2 import Environment, FileSystemLoader
from scipy.optimize import linear_sum_assignment

from heightlane.exceptions import DegenerateLane, ParseError
from heightlane.metrics.schemas import EvalProtocol, EvalReport, Lane3D, Matching, PairScore

logger = logging.getLogger(__name__)

TEMPLATE_DIR = Path(__file__).resolve().parent.parent / "templates"
DEFAULT_PROTOCOL = EvalProtocol()


def resample_lane(lane: Lane3D, x_positions: Sequence[float]):
    """
    Linearly interpolate (y, z) at each station inside the lane's x-span.

    Returns:
        tuple: y, z and valid arrays, one entry per station

    Raises:
        DegenerateLane: If the lane has fewer than two points
    """
    pts = lane.as_array()
    if pts.shape[0] < 2:
        raise DegenerateLane(f"lane has {pts.shape[0]} point(s), need at least 2")
    pts = pts[np.argsort(pts[:, 0], kind="stable")]
    xs = np.asarray(x_positions, dtype=np.float64)
    valid = (xs >= pts[0, 0]) & (xs <= pts[-1, 0])
    y = np.interp(xs, pts[:, 0], pts[:, 1])
    z = np.interp(xs, pts[:, 0], pts[:, 2])
    return y, z, valid


def match_lanes(
    preds: Sequence[Lane3D],
    gts: Sequence[Lane3D],
    stations: Optional[Sequence[float]] = None,
    point_thresh: float = DEFAULT_PROTOCOL.point_thresh,
    coverage: float = DEFAULT_PROTOCOL.coverage,
) -> Matching:
    """
    Optimal one-to-one assignment of predictions to GT lanes.

    The covered fraction of a pair is the share of its co-valid stations (inside both
    lanes' x-spans) at which the (y, z) distance is within point_thresh; lanes
    without a shared station cover nothing. The
    assignment maximizes the number of pairs reaching `coverage`, then the total
    covered fraction.

    Returns:
        Matching: Pair scores and the absolute errors at co-valid stations of TP pairs
    """
    xs = DEFAULT_PROTOCOL.stations() if stations is None else np.asarray(stations, dtype=np.float64)
    matching = Matching(num_pred=len(preds), num_gt=len(gts))
    if not preds or not gts:
        return matching
    P = [resample_lane(p, xs) for p in preds]
    G = [resample_lane(g, xs) for g in gts]
    covered = np.zeros((len(P), len(G)))
    for a, (py, pz, pv) in enumerate(P):
        for b, (gy, gz, gv) in enumerate(G):
            both = pv & gv
            dist = np.hypot(py - gy, pz - gz)
            close = both & (dist <= point_thresh)
            covered[a, b] = close.sum() / both.sum() if both.any() else 0.0
    bonus = float(min(len(P), len(G)) + 1)
    weight = np.where(covered >= coverage, bonus, 0.0) + covered
    rows, cols = linear_sum_assignment(weight, maximize=True)

    xs_parts, dy_parts, dz_parts = [], [], []
    for a, b in zip(rows.tolist(), cols.tolist()):
        tp = bool(covered[a, b] >= coverage)
        matching.pairs.append(PairScore(pred=a, gt=b, covered=float(covered[a, b]), true_positive=tp))
        if tp:
            both = P[a][2] & G[b][2]
            xs_parts.append(xs[both])
            dy_parts.append(np.abs(P[a][0][both] - G[b][0][both]))
            dz_parts.append(np.abs(P[a][1][both] - G[b][1][both]))
    if xs_parts:
        matching.station_x = np.concatenate(xs_parts)
        matching.abs_dy = np.concatenate(dy_parts)
        matching.abs_dz = np.concatenate(dz_parts)
    return matching


def merge_matchings(matchings: Iterable[Matching]) -> Matching:
    """Pool per-frame matchings into one (pair indices keep their frame-local meaning)."""
    merged = Matching(num_pred=0, num_gt=0)
    xs, dy, dz = [merged.station_x], [merged.abs_dy], [merged.abs_dz]
    for m in matchings:
        merged.num_pred += m.num_pred
        merged.num_gt += m.num_gt
        merged.pairs.extend(m.pairs)
        xs.append(m.station_x)
        dy.append(m.abs_dy)
        dz.append(m.abs_dz)
    merged.station_x = np.concatenate(xs)
    merged.abs_dy = np.concatenate(dy)
    merged.abs_dz = np.concatenate(dz)
    return merged


def _mean(values: np.ndarray) -> float:
    return float(values.mean()) if values.size else 0.0


def compute_report(matching: Matching, protocol: EvalProtocol = DEFAULT_PROTOCOL) -> EvalReport:
    """
    F-score from TP/FP/FN; X/Z errors averaged over matched stations, split at
    protocol.near_far_split into near [x_start, split) and far [split, x_end].
    """
    tp, fp, fn = matching.tp, matching.fp, matching.fn
    precision = tp / matching.num_pred if matching.num_pred else 0.0
    recall = tp / matching.num_gt if matching.num_gt else 0.0
    f_score = 2 * precision * recall / (precision + recall) if precision + recall > 0 else 0.0
    near = (matching.station_x >= protocol.x_start) & (matching.station_x < protocol.near_far_split)
    far = (matching.station_x >= protocol.near_far_split) & (matching.station_x <= protocol.x_end)
    return EvalReport(
        f_score=f_score,
        precision=precision,
        recall=recall,
        x_error_near=_mean(matching.abs_dy[near]),
        x_error_far=_mean(matching.abs_dy[far]),
        z_error_near=_mean(matching.abs_dz[near]),
        z_error_far=_mean(matching.abs_dz[far]),
        tp=tp,
        fp=fp,
        fn=fn,
    )


def evaluate_lane_sets(
    preds: Sequence[Lane3D], gts: Sequence[Lane3D], protocol: EvalProtocol = DEFAULT_PROTOCOL
) -> EvalReport:
    matching = match_lanes(preds, gts, protocol.stations(), protocol.point_thresh, protocol.coverage)
    return compute_report(matching, protocol)


def lanes_to_dict(lanes: Sequence[Lane3D]) -> dict:
    return {"lanes": [{"points": [list(p) for p in lane.points]} for lane in lanes]}


def write_lanes(lanes: Sequence[Lane3D], path: Path) -> None:
    Path(path).write_text(json.dumps(lanes_to_dict(lanes), indent=2), encoding="utf-8")


def read_lanes(path: Path) -> List[Lane3D]:
    """
    Read a lane file ({"lanes": [{"points": [[x, y, z], ...]}]}).

    Raises:
        ParseError: If the file is not valid lane JSON
    """
    try:
        data = json.loads(Path(path).read_text(encoding="utf-8"))
        return [Lane3D(points=[tuple(p) for p in lane["points"]]) for lane in data["lanes"]]
    except (KeyError, TypeError, ValueError) as exc:
        raise ParseError(f"{path}: invalid lane file ({exc})") from exc


def format_report_table(reports: Dict[str, EvalReport], extra: Optional[Dict[str, float]] = None) -> str:
    """Fixed-width table, one row per named report."""
    env = Environment(loader=FileSystemLoader(str(TEMPLATE_DIR)), trim_blocks=True, lstrip_blocks=True)
    return env.get_template("eval_table.txt.j2").render(reports=reports, extra=extra or {})
