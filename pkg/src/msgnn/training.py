"""Training loops: single-level baseline, coarse-to-fine, sub-to-full.

One model owns its weights for the whole run; multiscale modes move the same
weight stack across scales without re-initialization.  Metric rows carry the
scale being trained on, while validation/test accuracy is always measured on
the original (finest) data, since coarse masks may drop evaluation nodes.
"""

from __future__ import annotations

import csv
import time
from dataclasses import dataclass, field

import numpy as np

from .coarsening import CoarsenPlan, LevelHierarchy, build_hierarchy
from .engine import (
    FlopCounter,
    Model,
    OptimizerState,
    adam_step,
    backward,
    forward,
    nll_loss_with_grad,
)
from .graphs import GraphData


class TrainingError(RuntimeError):
    """Raised on divergence or on inconsistent training setup."""


@dataclass(frozen=True)
class TrainSchedule:
    """Epoch budgets per level, finest first (index 0 is the original graph)."""

    epochs_per_level: tuple[int, ...]
    learning_rate: float = 1e-3
    eval_every: int = 10
    seed: int = 0

    def __post_init__(self):
        object.__setattr__(
            self, "epochs_per_level", tuple(int(e) for e in self.epochs_per_level)
        )
        if len(self.epochs_per_level) == 0:
            raise TrainingError("schedule needs at least one level")
        if any(e < 1 for e in self.epochs_per_level):
            raise TrainingError("every epoch budget must be >= 1")
        if self.eval_every < 1:
            raise TrainingError("eval_every must be >= 1")


def doubling_schedule(fine_epochs: int, levels: int) -> tuple[int, ...]:
    """Budget doubled at each coarsening step: (E, 2E, 4E, ...), finest first."""
    return tuple(fine_epochs * 2**r for r in range(levels))


@dataclass
class MetricRecord:
    level: int
    epoch: int  # global epoch index, 1-based across the whole run
    train_loss: float
    val_acc: float
    test_acc: float
    cum_flops: int
    wall_ms: int


CSV_HEADER = ["level", "epoch", "train_loss", "val_acc", "test_acc",
              "cum_flops", "wall_ms"]


@dataclass
class MetricLog:
    """Per-epoch training records; cumulative FLOPs are nondecreasing."""

    records: list[MetricRecord] = field(default_factory=list)

    def append(self, rec: MetricRecord) -> None:
        if self.records and rec.cum_flops < self.records[-1].cum_flops:
            raise TrainingError("cumulative FLOPs must be nondecreasing")
        self.records.append(rec)

    @property
    def final(self) -> MetricRecord:
        return self.records[-1]

    def total_flops(self) -> int:
        return self.records[-1].cum_flops if self.records else 0

    def to_csv(self, path, include_timing: bool = False) -> None:
        """Write records; wall_ms is zeroed unless timing is requested, so a
        fixed seed reproduces byte-identical files."""
        with open(path, "w", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow(CSV_HEADER)
            for r in self.records:
                writer.writerow(
                    [
                        r.level,
                        r.epoch,
                        repr(r.train_loss),
                        repr(r.val_acc),
                        repr(r.test_acc),
                        r.cum_flops,
                        r.wall_ms if include_timing else 0,
                    ]
                )

    @classmethod
    def from_csv(cls, path) -> "MetricLog":
        log = cls()
        with open(path, newline="") as fh:
            reader = csv.reader(fh)
            header = next(reader)
            if header != CSV_HEADER:
                raise TrainingError(f"{path}: unexpected metric header {header}")
            for row in reader:
                log.append(
                    MetricRecord(
                        int(row[0]), int(row[1]), float(row[2]), float(row[3]),
                        float(row[4]), int(row[5]), int(row[6]),
                    )
                )
        return log


def evaluate(model: Model, data: GraphData, mask: np.ndarray) -> float:
    """Argmax-logits accuracy over the masked nodes."""
    mask = np.asarray(mask, dtype=bool)
    if not mask.any():
        raise TrainingError("evaluation mask is empty")
    logits, _ = forward(model, data.graph, data.x)
    pred = logits.argmax(axis=1)
    return float((pred[mask] == data.y.labels[mask]).mean())


class _RunState:
    """Shared bookkeeping for one training run (possibly spanning levels)."""

    def __init__(self, model: Model, schedule: TrainSchedule, eval_data: GraphData):
        self.model = model
        self.schedule = schedule
        self.eval_data = eval_data
        self.opt = OptimizerState(lr=schedule.learning_rate)
        self.counter = FlopCounter()
        self.log = MetricLog()
        self.epoch = 0
        self.start = time.perf_counter()

    def wall_ms(self) -> int:
        return int((time.perf_counter() - self.start) * 1000)

    def step(self, data: GraphData, level: int) -> float:
        """One optimization epoch on one scale; returns the training loss."""
        if not data.masks.train.any():
            raise TrainingError(f"level {level}: train mask is empty")
        self.epoch += 1
        logits, tape = forward(self.model, data.graph, data.x, self.counter)
        loss, dlogits = nll_loss_with_grad(logits, data.y, data.masks.train)
        if not np.isfinite(loss):
            raise TrainingError(
                f"training diverged: non-finite loss at epoch {self.epoch}"
            )
        grads = backward(tape, dlogits)
        adam_step(self.opt, self.model, grads)
        return loss

    def maybe_record(self, level: int, loss: float, force: bool = False) -> None:
        if force or self.epoch % self.schedule.eval_every == 0:
            self.record(level, loss)

    def train_epochs(self, data: GraphData, epochs: int, level: int) -> None:
        for i in range(epochs):
            loss = self.step(data, level)
            self.maybe_record(level, loss, force=i == epochs - 1)

    def record(self, level: int, loss: float) -> None:
        val = evaluate(self.model, self.eval_data, self.eval_data.masks.val)
        test = evaluate(self.model, self.eval_data, self.eval_data.masks.test)
        self.log.append(
            MetricRecord(
                level, self.epoch, loss, val, test,
                self.counter.count, self.wall_ms(),
            )
        )


def train_single_level(
    model: Model, data: GraphData, schedule: TrainSchedule
) -> tuple[Model, MetricLog]:
    """Plain fine-grid training for the level-1 budget of the schedule."""
    state = _RunState(model, schedule, data)
    state.train_epochs(data, schedule.epochs_per_level[0], level=1)
    return model, state.log


def coarse_to_fine(
    model: Model, hierarchy: LevelHierarchy, schedule: TrainSchedule
) -> tuple[Model, MetricLog]:
    """Train coarsest to finest, carrying weights and optimizer state across
    levels uninterrupted."""
    if len(schedule.epochs_per_level) != hierarchy.R:
        raise TrainingError(
            f"schedule has {len(schedule.epochs_per_level)} budgets "
            f"for {hierarchy.R} levels"
        )
    state = _RunState(model, schedule, hierarchy[0].data)
    for r in range(hierarchy.R, 0, -1):
        state.train_epochs(
            hierarchy[r - 1].data, schedule.epochs_per_level[r - 1], level=r
        )
    return model, state.log


SUBGRAPH_POLICIES = ("ego", "nearest")


def sub_to_full(
    model: Model, data: GraphData, plan: CoarsenPlan, schedule: TrainSchedule
) -> tuple[Model, MetricLog]:
    """Coarse-to-fine over a hierarchy of growing subgraphs of the original."""
    if plan.policy not in SUBGRAPH_POLICIES:
        raise TrainingError(
            f"sub-to-full needs a subgraph policy {SUBGRAPH_POLICIES}, "
            f"got {plan.policy!r}"
        )
    hierarchy = build_hierarchy(data, plan)
    return coarse_to_fine(model, hierarchy, schedule)
