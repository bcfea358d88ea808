"""Training event records, rendered as line-delimited JSON."""

import json
from enum import Enum
from typing import Any

from pydantic import BaseModel, Field


class TrainingEventType(str, Enum):
    """Training event types."""

    EPOCH_COMPLETE = "epoch_complete"
    CHECKPOINT_SAVED = "checkpoint_saved"
    TRAINING_COMPLETE = "training_complete"


class TrainingEvent(BaseModel):
    """Base training event model."""

    event: TrainingEventType = Field(description="Event type identifier")
    data: dict[str, Any] = Field(description="Event payload data")

    def format(self) -> str:
        """Format as one JSON line: the payload object followed by a newline."""
        return json.dumps(self.data) + "\n"


class EpochCompleteEvent(TrainingEvent):
    """Event emitted after every epoch; this is the training log record."""

    event: TrainingEventType = TrainingEventType.EPOCH_COMPLETE
    data: dict[str, Any] = Field(
        description="Epoch index, cumulative optimizer steps, learning rate and mean batch loss",
        examples=[{"epoch": 0, "step": 82, "lr": 0.001, "loss": 10543.2}],
    )


class CheckpointSavedEvent(TrainingEvent):
    """Event emitted when a checkpoint file is written."""

    event: TrainingEventType = TrainingEventType.CHECKPOINT_SAVED
    data: dict[str, Any] = Field(
        description="Checkpoint path and the role it was saved under",
        examples=[{"path": "runs/desk/best.mrln", "role": "best", "epoch": 12}],
    )


class TrainingCompleteEvent(TrainingEvent):
    """Event emitted once when the loop finishes."""

    event: TrainingEventType = TrainingEventType.TRAINING_COMPLETE
    data: dict[str, Any] = Field(
        description="Run summary",
        examples=[{"epochs": 30, "steps": 2460, "final_loss": 9876.5, "duration_ms": 912345}],
    )
