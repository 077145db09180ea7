import logging
from dataclasses import dataclass, field

import numpy as np
import pandas as pd
from scipy.stats import linregress

from src.run_config import write_versioned_csv

logger = logging.getLogger(__name__)

TRACE_SCHEMA = ("trace", 1)


@dataclass
class TraceEvent:
    epoch: int
    active_mask: np.ndarray
    loss_before: float
    loss_after: float

    @property
    def moved_count(self) -> int:
        return int(np.count_nonzero(self.active_mask))


def record_event(theta_before, theta_after, epoch: int, losses: tuple[float, float]) -> TraceEvent:
    """An event whose mask marks every component whose value changed; moving among equal values is inactive."""
    theta_before = np.asarray(theta_before, dtype=np.float64)
    theta_after = np.asarray(theta_after, dtype=np.float64)
    if theta_before.shape != theta_after.shape:
        raise ValueError("theta_before and theta_after must have the same shape.")
    return TraceEvent(epoch=int(epoch), active_mask=theta_before != theta_after,
                      loss_before=float(losses[0]), loss_after=float(losses[1]))


@dataclass
class TraceLog:
    """Permutation events of one training run, optionally capped at max_events."""
    n: int
    strategy: str = ""
    seed: int = 0
    max_events: int | None = None
    events: list[TraceEvent] = field(default_factory=list)
    first_theta: np.ndarray | None = None
    last_theta: np.ndarray | None = None

    def record_event(self, theta_before, theta_after, epoch: int, losses) -> TraceEvent | None:
        if self.max_events is not None and len(self.events) >= self.max_events:
            return None
        event = record_event(theta_before, theta_after, epoch, losses)
        if self.first_theta is None:
            self.first_theta = np.array(theta_before, dtype=np.float64)
        self.last_theta = np.array(theta_after, dtype=np.float64)
        self.events.append(event)
        return event

    @property
    def moved_counts(self) -> np.ndarray:
        return np.array([e.moved_count for e in self.events], dtype=np.int64)

    def ever_active(self) -> np.ndarray:
        if not self.events:
            return np.zeros(0, dtype=bool)
        return np.logical_or.reduce([e.active_mask for e in self.events])

    def is_consistent(self) -> bool:
        """Positions never marked active hold their first recorded value at the end of the log."""
        if not self.events:
            return True
        still = ~self.ever_active()
        return bool(np.array_equal(self.first_theta[still], self.last_theta[still]))


def encode_mask(mask) -> str:
    """Run lengths separated by '.', alternating inactive/active and starting with inactive."""
    mask = np.asarray(mask, dtype=bool)
    if len(mask) == 0:
        return ""
    change = np.flatnonzero(np.diff(mask.astype(np.int8))) + 1
    bounds = np.concatenate(([0], change, [len(mask)]))
    runs = np.diff(bounds).tolist()
    if mask[0]:
        runs = [0] + runs
    return ".".join(str(r) for r in runs)


def decode_mask(text: str) -> np.ndarray:
    if not text:
        return np.zeros(0, dtype=bool)
    runs = [int(r) for r in text.split(".")]
    return np.concatenate([np.full(r, i % 2 == 1) for i, r in enumerate(runs)]).astype(bool)


def summarize(log: TraceLog, window: int = 10) -> pd.DataFrame:
    """
    Windowed activity series: mean moved count and loss slope per window of events.

    Stages are left to the reader; no labels are assigned.
    """
    if window < 1:
        raise ValueError(f"window must be positive, got {window}.")
    rows = []
    for w, start in enumerate(range(0, len(log.events), window)):
        chunk = log.events[start:start + window]
        epochs = np.array([e.epoch for e in chunk], dtype=np.float64)
        losses = np.array([e.loss_after for e in chunk], dtype=np.float64)
        slope = linregress(epochs, losses).slope if len(chunk) > 1 and np.ptp(epochs) > 0 else 0.0
        rows.append({
            "window": w,
            "first_epoch": int(epochs[0]),
            "last_epoch": int(epochs[-1]),
            "mean_moved": float(np.mean([e.moved_count for e in chunk])),
            "loss_slope": float(slope),
        })
    return pd.DataFrame(rows, columns=["window", "first_epoch", "last_epoch", "mean_moved", "loss_slope"])


def trace_frame(log: TraceLog) -> pd.DataFrame:
    return pd.DataFrame(
        [{
            "epoch": e.epoch,
            "moved_count": e.moved_count,
            "loss_before": e.loss_before,
            "loss_after": e.loss_after,
            "mask_rle": encode_mask(e.active_mask),
        } for e in log.events],
        columns=["epoch", "moved_count", "loss_before", "loss_after", "mask_rle"],
    )


def export_csv(log: TraceLog, path: str) -> None:
    write_versioned_csv(trace_frame(log), path, *TRACE_SCHEMA)
    logger.info(f"Wrote {len(log.events)} permutation events to {path}")
