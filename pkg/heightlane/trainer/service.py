"""
Trainer Service Module

Training and evaluation of the lane network:
- Deterministic batching and Adam optimization of the total loss
- Line-delimited JSON train log and HLCK checkpoints at eval intervals
- Evaluation with predicted or GT heightmaps, overall and per scenario
- Anchor-set ablation sweeps
"""

import json
import logging
import re
from collections import defaultdict
from pathlib import Path
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np
import torch
from jinja2 import Environment, FileSystemLoader

from heightlane.bev.schemas import AnchorSet, Heightmap
from heightlane.config import load_model, seed_override
from heightlane.database.service import finish_run, record_eval, register_run
from heightlane.diffcore.checkpoint import load_checkpoint, load_into, save_checkpoint
from heightlane.diffcore.determinism import set_determinism
from heightlane.diffcore.optim import AdamState, adam_step
from heightlane.exceptions import ConfigError, NonFinite, NonFiniteLoss
from heightlane.losses.service import loss_parts, stack_targets, total_loss
from heightlane.metrics.schemas import Lane3D, Matching
from heightlane.metrics.service import compute_report, match_lanes, merge_matchings
from heightlane.model.decode import decode_lanes, targets_as_outputs
from heightlane.model.network import HeightLaneNet, build_model
from heightlane.synth.schemas import Sample
from heightlane.trainer.schemas import AblationRow, EvalResult, TrainConfig, TrainLog, TrainResult

logger = logging.getLogger(__name__)

TEMPLATE_DIR = Path(__file__).resolve().parent.parent / "templates"
FINAL_CHECKPOINT = "final.hlck"


def load_train_config(path: Path, overrides: Optional[dict] = None) -> TrainConfig:
    """
    Read a TrainConfig YAML; HEIGHTLANE_SEED replaces the run and data seeds.

    Raises:
        ConfigError: If the file is unreadable or invalid
    """
    cfg = load_model(path, TrainConfig, overrides)
    seed = seed_override()
    if seed is not None:
        cfg = cfg.model_copy(update={"seed": seed, "data": cfg.data.model_copy(update={"seed": seed})})
    return cfg


def collate(samples: Sequence[Sample]):
    images = torch.stack([s.image for s in samples])
    calibs = [s.calibration for s in samples]
    return images, calibs, stack_targets([s.targets for s in samples], dtype=images.dtype)


def batch_order(n_samples: int, batch_size: int, seed: int, iteration: int) -> List[int]:
    """
    Sample indices of 1-based `iteration`: consecutive slices of a per-epoch
    permutation seeded by (seed, epoch), wrapping into the next epoch.
    """
    start = (iteration - 1) * batch_size
    picks = []
    for pos in range(start, start + batch_size):
        epoch, k = divmod(pos, n_samples)
        perm = np.random.default_rng([seed, epoch]).permutation(n_samples)
        picks.append(int(perm[k]))
    return picks


def _check_finite_params(model: torch.nn.Module) -> None:
    for name, p in model.state_dict().items():
        if not torch.isfinite(p).all():
            raise NonFinite(f"parameter {name} holds NaN/Inf")


def _dump_batch(out_dir: Path, iteration: int, samples: Sequence[Sample], parts: Dict[str, float]) -> Path:
    path = out_dir / f"nonfinite_batch_{iteration:06d}.json"
    path.write_text(
        json.dumps({"iteration": iteration, "scenes": [s.scene_id for s in samples], "parts": parts}, indent=2),
        encoding="utf-8",
    )
    return path


def train(
    cfg: TrainConfig,
    train_samples: Sequence[Sample],
    val_samples: Sequence[Sample] = (),
    out_dir: Optional[Path] = None,
) -> TrainResult:
    """
    Adam optimization of the total loss, deterministic given cfg.seed.

    Writes train_log.jsonl, ckpt_<iteration>.hlck at every eval interval and
    final.hlck into out_dir (cfg.checkpoint_dir by default).

    Raises:
        NonFiniteLoss: If a loss part turns NaN/Inf; the offending batch is dumped first
        ConfigError: If there are no training samples
    """
    if not train_samples:
        raise ConfigError("training needs at least one sample")
    out_dir = Path(out_dir or cfg.checkpoint_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    set_determinism(cfg.seed)
    model = build_model(cfg.model)
    params = [p for p in model.parameters()]
    state = AdamState()
    log = TrainLog(out_dir / "train_log.jsonl")
    run_id = None
    if cfg.register_run:
        run_id = register_run(cfg.name, cfg.model_dump(mode="json"), cfg.seed, cfg.model.anchors.label(), cfg.iterations)

    total_value = float("nan")
    for iteration in range(1, cfg.iterations + 1):
        picks = batch_order(len(train_samples), cfg.batch_size, cfg.seed, iteration)
        batch_samples = [train_samples[i] for i in picks]
        images, calibs, targets = collate(batch_samples)
        out = model(images, calibs, gt_heights=targets.height)
        parts = loss_parts(out, targets, cfg.weights)
        try:
            loss = total_loss(parts, cfg.weights)
        except NonFinite as exc:
            dump = _dump_batch(out_dir, iteration, batch_samples, parts.as_dict())
            raise NonFiniteLoss(f"iteration {iteration}: {exc} (batch dumped to {dump})", batch_id=iteration) from exc
        grads = torch.autograd.grad(loss, params, allow_unused=True)
        adam_step(params, grads, state, lr=cfg.lr)
        total_value = float(loss)
        log.log_iteration(iteration, parts.as_dict(), total_value)
        if iteration % cfg.log_interval == 0 or iteration == 1:
            logger.info("iter %d/%d loss %.4f %s", iteration, cfg.iterations, total_value, parts.as_dict())

        if iteration % cfg.eval_interval == 0 or iteration == cfg.iterations:
            _check_finite_params(model)
            ckpt = out_dir / f"ckpt_{iteration:06d}.hlck"
            save_checkpoint(model, ckpt)
            if val_samples:
                result = evaluate_model(model, val_samples, cfg)
                log.log_eval(iteration, result)
                logger.info(
                    "eval @%d: F %.4f height MAE %.4f", iteration, result.report.f_score, result.height_mae
                )
                if run_id is not None:
                    record_eval(result.as_dict(), run_id=run_id, checkpoint_path=str(ckpt), iteration=iteration)

    final = out_dir / FINAL_CHECKPOINT
    save_checkpoint(model, final)
    finish_run(run_id, total_value, str(final))
    return TrainResult(log=log, checkpoint=final, run_id=run_id)


def _scenario_tags(scenario: str) -> List[str]:
    return [t for t in scenario.split("+") if t]


@torch.no_grad()
def predict(model: HeightLaneNet, samples: Sequence[Sample], use_gt_heightmap: bool, conf_thresh: float, embed_margin: float):
    """
    Decoded lanes and predicted heightmaps, one per sample.

    Returns:
        list: (lanes, Heightmap) pairs in sample order
    """
    results = []
    for sample in samples:
        images, calibs, targets = collate([sample])
        out = model(images, calibs, gt_heights=targets.height, use_gt_heightmap=use_gt_heightmap)
        spec = sample.heightmap.spec
        lanes = decode_lanes(out.lanes, spec, conf_thresh, embed_margin)
        predicted = Heightmap(spec=spec, values=out.lanes.predicted_height[0].double().cpu().numpy())
        results.append((lanes, predicted))
    return results


def _summarize(
    per_sample: Sequence[Tuple[List[Lane3D], Optional[Heightmap]]],
    samples: Sequence[Sample],
    cfg: TrainConfig,
    use_gt_heightmap: bool,
) -> EvalResult:
    protocol = cfg.protocol
    matchings: List[Matching] = []
    by_scenario: Dict[str, List[Matching]] = defaultdict(list)
    abs_errors = []
    for (lanes, predicted), sample in zip(per_sample, samples):
        m = match_lanes(lanes, sample.lanes, protocol.stations(), protocol.point_thresh, protocol.coverage)
        matchings.append(m)
        for tag in _scenario_tags(sample.scenario):
            by_scenario[tag].append(m)
        if predicted is not None:
            abs_errors.append(np.abs(predicted.values - sample.heightmap.values).mean())
    return EvalResult(
        report=compute_report(merge_matchings(matchings), protocol),
        height_mae=float(np.mean(abs_errors)) if abs_errors else 0.0,
        scenarios={tag: compute_report(merge_matchings(ms), protocol) for tag, ms in sorted(by_scenario.items())},
        use_gt_heightmap=use_gt_heightmap,
    )


def evaluate_model(
    model: HeightLaneNet, samples: Sequence[Sample], cfg: TrainConfig, use_gt_heightmap: Optional[bool] = None
) -> EvalResult:
    """
    Inference, decoding and metrics over `samples`.

    With use_gt_heightmap the GT heightmap drives both the spatial transform and
    the decoded z; height MAE always measures the predicted heightmap.
    """
    use_gt = cfg.model.use_gt_heightmap if use_gt_heightmap is None else use_gt_heightmap
    per_sample = predict(model, samples, use_gt, cfg.conf_thresh, cfg.embed_margin)
    return _summarize(per_sample, samples, cfg, use_gt)


def evaluate(
    checkpoint: Path,
    cfg: TrainConfig,
    samples: Sequence[Sample],
    use_gt_heightmap: bool = False,
    run_id: Optional[int] = None,
) -> EvalResult:
    """
    Evaluate a checkpoint built for cfg.model.

    Raises:
        CheckpointMismatch: If tensor names or shapes differ from the configured model
        ParseError: If the checkpoint file is corrupt
    """
    set_determinism(cfg.seed)
    model = build_model(cfg.model)
    load_into(model, load_checkpoint(checkpoint))
    result = evaluate_model(model, samples, cfg, use_gt_heightmap)
    if cfg.register_run:
        record_eval(result.as_dict(), run_id=run_id, checkpoint_path=str(checkpoint))
    return result


def evaluate_oracle(samples: Sequence[Sample], cfg: TrainConfig) -> EvalResult:
    """Decode each sample's ideal targets through the same metric path."""
    per_sample = [
        (decode_lanes(targets_as_outputs(s.targets), s.heightmap.spec, cfg.conf_thresh, cfg.embed_margin), None)
        for s in samples
    ]
    return _summarize(per_sample, samples, cfg, use_gt_heightmap=True)


_SLOPE_TOKEN = re.compile(r"^(±|\+-|\+/-)?\s*(-?\d+(?:\.\d+)?)$")


def parse_anchor_sets(text: str) -> List[AnchorSet]:
    """
    Parse "0;0,±3;0,±5": sets separated by ';', slopes by ','; '±a' (or '+-a')
    expands to -a and a. Slopes are sorted ascending.

    Raises:
        ConfigError: On an unparsable token or an invalid set
    """
    sets = []
    for chunk in text.split(";"):
        slopes = []
        for token in chunk.split(","):
            token = token.strip()
            match = _SLOPE_TOKEN.match(token)
            if not match:
                raise ConfigError(f"cannot parse anchor slope {token!r}")
            value = float(match.group(2))
            slopes.extend([-value, value] if match.group(1) else [value])
        try:
            sets.append(AnchorSet(slopes=sorted(set(slopes))))
        except ValueError as exc:
            raise ConfigError(f"invalid anchor set {chunk!r}: {exc}") from exc
    return sets


def ablate_anchors(
    base_cfg: TrainConfig,
    anchor_sets: Sequence[AnchorSet],
    train_samples: Sequence[Sample],
    val_samples: Sequence[Sample],
    out_dir: Path,
) -> List[AblationRow]:
    """One training run per anchor set with shared seed and data, evaluated on val_samples."""
    rows = []
    for anchors in anchor_sets:
        cfg = base_cfg.model_copy(update={"model": base_cfg.model.model_copy(update={"anchors": anchors})})
        run_dir = Path(out_dir) / f"anchors_{anchors.label().replace(',', '_')}"
        logger.info("ablation: training with anchors %s", anchors.label())
        result = train(cfg, train_samples, (), run_dir)
        set_determinism(cfg.seed)
        model = build_model(cfg.model)
        load_into(model, load_checkpoint(result.checkpoint))
        evaluation = evaluate_model(model, val_samples, cfg)
        if cfg.register_run:
            record_eval(evaluation.as_dict(), run_id=result.run_id, checkpoint_path=str(result.checkpoint))
        rows.append(AblationRow(anchors=anchors.label(), result=evaluation.as_dict(), checkpoint=str(result.checkpoint)))
    return rows


def format_ablation_table(rows: Sequence[AblationRow]) -> str:
    env = Environment(loader=FileSystemLoader(str(TEMPLATE_DIR)), trim_blocks=True, lstrip_blocks=True)
    return env.get_template("ablation_table.txt.j2").render(rows=rows)
