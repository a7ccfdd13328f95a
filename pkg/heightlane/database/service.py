"""
Run Registry Service Module

Writes training runs and evaluation records. Registry failures are logged and
never abort training or evaluation.
"""

import json
import logging
from contextlib import contextmanager
from typing import Iterator, Optional

from sqlalchemy.exc import SQLAlchemyError
from sqlalchemy.orm import Session

from heightlane.database.database import SessionLocal, init_db
from heightlane.database.models import EvalRecord, TrainRun

logger = logging.getLogger(__name__)


@contextmanager
def registry_session() -> Iterator[Session]:
    init_db()
    db = SessionLocal()
    try:
        yield db
        db.commit()
    except Exception:
        db.rollback()
        raise
    finally:
        db.close()


def register_run(
    name: str, config: dict, seed: int, anchors: str, iterations: int
) -> Optional[int]:
    """
    Insert a TrainRun row.

    Returns:
        int: The new run id, or None when the registry is unavailable
    """
    try:
        with registry_session() as db:
            run = TrainRun(
                name=name,
                config=json.dumps(config, sort_keys=True),
                seed=seed,
                anchors=anchors,
                iterations=iterations,
            )
            db.add(run)
            db.flush()
            return int(run.id)
    except SQLAlchemyError as exc:
        logger.warning("run registry unavailable: %s", exc)
        return None


def finish_run(run_id: Optional[int], final_loss: float, checkpoint_path: str) -> None:
    if run_id is None:
        return
    try:
        with registry_session() as db:
            run = db.get(TrainRun, run_id)
            if run is not None:
                run.final_loss = final_loss
                run.checkpoint_path = checkpoint_path
    except SQLAlchemyError as exc:
        logger.warning("could not update run %s: %s", run_id, exc)


def record_eval(
    result_dict: dict,
    run_id: Optional[int] = None,
    checkpoint_path: Optional[str] = None,
    iteration: Optional[int] = None,
) -> Optional[int]:
    """
    Insert an EvalRecord from EvalResult.as_dict() output.

    Returns:
        int: The record id, or None when the registry is unavailable
    """
    report = result_dict["report"]
    try:
        with registry_session() as db:
            record = EvalRecord(
                run_id=run_id,
                checkpoint_path=checkpoint_path,
                iteration=iteration,
                use_gt_heightmap=bool(result_dict.get("use_gt_heightmap", False)),
                f_score=report["f_score"],
                precision=report["precision"],
                recall=report["recall"],
                x_error_near=report["x_error_near"],
                x_error_far=report["x_error_far"],
                z_error_near=report["z_error_near"],
                z_error_far=report["z_error_far"],
                height_mae=result_dict["height_mae"],
                scenarios=json.dumps(result_dict.get("scenarios", {}), sort_keys=True),
            )
            db.add(record)
            db.flush()
            return int(record.id)
    except SQLAlchemyError as exc:
        logger.warning("could not record evaluation: %s", exc)
        return None
