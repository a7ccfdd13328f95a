from sqlalchemy import TIMESTAMP, Boolean, Column, Double, ForeignKey, Integer, String, Text
from sqlalchemy.orm import relationship
from sqlalchemy.sql import func

from heightlane.database.database import Base


class TrainRun(Base):
    __tablename__ = "train_runs"

    id = Column(Integer, primary_key=True, index=True, autoincrement=True)
    name = Column(String(255), nullable=False)
    config = Column(Text, nullable=False)  # TrainConfig as JSON
    seed = Column(Integer, nullable=False)
    anchors = Column(String(255), nullable=False)
    iterations = Column(Integer, nullable=False)
    final_loss = Column(Double, nullable=True)
    checkpoint_path = Column(Text, nullable=True)
    created_at = Column(TIMESTAMP, nullable=False, default=func.now())

    evals = relationship("EvalRecord", back_populates="run", order_by="EvalRecord.id")


class EvalRecord(Base):
    __tablename__ = "eval_records"

    id = Column(Integer, primary_key=True, autoincrement=True)
    run_id = Column(Integer, ForeignKey("train_runs.id"), nullable=True, index=True)
    checkpoint_path = Column(Text, nullable=True)
    iteration = Column(Integer, nullable=True)
    use_gt_heightmap = Column(Boolean, nullable=False, default=False)
    f_score = Column(Double, nullable=False)
    precision = Column(Double, nullable=False)
    recall = Column(Double, nullable=False)
    x_error_near = Column(Double, nullable=False)
    x_error_far = Column(Double, nullable=False)
    z_error_near = Column(Double, nullable=False)
    z_error_far = Column(Double, nullable=False)
    height_mae = Column(Double, nullable=False)
    scenarios = Column(Text, nullable=True)  # per-scenario reports as JSON
    created_at = Column(TIMESTAMP, nullable=False, default=func.now())

    run = relationship("TrainRun", back_populates="evals")
