"""Telescopic multiscale loss estimation and the coarse-warmup trainer.

The fine-scale expected loss is rewritten as the coarsest expected loss plus
a sum of expected cross-scale differences; each term gets its own sample
count, with the cheap coarse term sampled most.  Difference terms use paired
samples (the coarser sample is a coarsening of the finer one), which is what
makes the differences small when consecutive scales agree.

Normalization convention: the difference term between scales r-1 and r is
averaged over M_{r-1} samples, the count attached to the finer scale of the
pair.  An alternative reading attaches 1/M_r to that term instead; the two
coincide in the exact-telescoping regime the tests pin down.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Protocol

import numpy as np

from .coarsening import random_select
from .engine import (
    FlopCounter,
    Gradients,
    Model,
    Tape,
    accumulate,
    backward,
    forward,
    nll_loss_with_grad,
    zero_gradients,
)
from .graphs import GraphData, restrict_data
from .training import MetricLog, TrainSchedule, TrainingError, _RunState


class TelescopeError(ValueError):
    """Raised on invalid estimator configuration or sampler exhaustion."""


def default_samples(levels: int) -> tuple[int, ...]:
    """M_r = 2^(r-1): one fine pair, doubling toward the cheap coarse term."""
    return tuple(2 ** (r - 1) for r in range(1, levels + 1))


@dataclass(frozen=True)
class TelescopeConfig:
    """Estimator shape: scale count, per-term sample counts, warmup protocol."""

    levels: int = 2
    samples_per_term: tuple[int, ...] | None = None
    retain_fraction: float = 0.75
    switch_epoch: int = 0

    def __post_init__(self):
        if self.levels < 1:
            raise TelescopeError("levels must be >= 1")
        if not 0.0 < self.retain_fraction < 1.0:
            raise TelescopeError("retain_fraction must be in (0, 1)")
        if self.switch_epoch < 0:
            raise TelescopeError("switch_epoch must be >= 0")
        m = self.samples()
        if len(m) != self.levels:
            raise TelescopeError(f"need {self.levels} sample counts, got {len(m)}")
        if any(v < 1 for v in m):
            raise TelescopeError("sample counts must be >= 1")
        # The useful regime increases counts toward the coarse term; equality
        # is allowed for degenerate/diagnostic estimators.
        if any(a > b for a, b in zip(m, m[1:])):
            raise TelescopeError("sample counts must not decrease toward coarse")

    def samples(self) -> tuple[int, ...]:
        if self.samples_per_term is None:
            return default_samples(self.levels)
        return tuple(int(v) for v in self.samples_per_term)


def loss_gap_gamma(loss_coarse: float, loss_fine: float) -> float:
    """Relative gap |fine - coarse| / fine between consecutive-scale losses."""
    if loss_fine <= 0.0:
        raise TelescopeError("fine loss must be positive for a relative gap")
    return abs(loss_fine - loss_coarse) / loss_fine


class ScaleSampler(Protocol):
    """Data draws for estimator terms.

    ``sample_chain(r)`` draws one scale-r sample (r = 1 is the fine data).
    ``pair(r)`` draws one paired (scale r-1, scale r) sample where the
    coarser half is a coarsening of the finer half.
    """

    def sample_chain(self, r: int) -> GraphData: ...

    def pair(self, r: int) -> tuple[GraphData, GraphData]: ...


class IdentitySampler:
    """Returns the full data at every scale: the telescope collapses exactly."""

    def __init__(self, data: GraphData):
        self.data = data

    def sample_chain(self, r: int) -> GraphData:
        return self.data

    def pair(self, r: int) -> tuple[GraphData, GraphData]:
        return self.data, self.data


class SubsetPairSampler:
    """Transductive draws: a scale-r sample keeps a retain^(r-1) node fraction.

    Every call composes fresh uniform node subsets, so consecutive scales of
    one draw are genuinely nested.  Draws whose train mask comes up empty are
    retried a bounded number of times.
    """

    RETRIES = 16

    def __init__(self, data: GraphData, retain_fraction: float,
                 rng: np.random.Generator):
        if not 0.0 < retain_fraction < 1.0:
            raise TelescopeError("retain_fraction must be in (0, 1)")
        self.data = data
        self.retain = retain_fraction
        self.rng = rng

    def _shrink(self, data: GraphData) -> GraphData:
        n = data.num_nodes
        if n <= 1:
            raise TelescopeError("cannot subsample a 1-node graph")
        m = min(max(1, int(round(self.retain * n))), n - 1)
        for _ in range(self.RETRIES):
            sel = random_select(n, m, self.rng)
            child = restrict_data(data, sel)
            if child.masks.train.any():
                return child
        raise TelescopeError(f"empty train mask after {self.RETRIES} subset draws")

    def sample_chain(self, r: int) -> GraphData:
        data = self.data
        for _ in range(r - 1):
            data = self._shrink(data)
        return data

    def pair(self, r: int) -> tuple[GraphData, GraphData]:
        finer = self.sample_chain(r - 1)
        return finer, self._shrink(finer)


@dataclass
class TelescopeTerm:
    """One signed, weighted loss evaluation inside the estimator."""

    coef: float
    tape: Tape
    dlogits: np.ndarray
    loss: float


def _term(model: Model, data: GraphData, coef: float,
          counter: FlopCounter | None) -> TelescopeTerm:
    logits, tape = forward(model, data.graph, data.x, counter)
    loss, dlogits = nll_loss_with_grad(logits, data.y, data.masks.train)
    return TelescopeTerm(coef, tape, dlogits, loss)


def telescopic_loss(
    model: Model,
    sampler: ScaleSampler,
    cfg: TelescopeConfig,
    counter: FlopCounter | None = None,
) -> tuple[float, list[TelescopeTerm]]:
    """One estimator evaluation; differentiable through its term list.

    Value: (1/M_R)·(sum of M_R coarsest losses) plus, for r = 2..R, the mean
    over M_{r-1} paired draws of (scale r-1 loss  -  scale r loss).  R = 1
    degenerates to the plain fine loss.
    """
    m = cfg.samples()
    terms: list[TelescopeTerm] = []
    if cfg.levels == 1:
        terms.append(_term(model, sampler.sample_chain(1), 1.0, counter))
        return terms[0].loss, terms

    m_coarse = m[cfg.levels - 1]
    for _ in range(m_coarse):
        terms.append(
            _term(model, sampler.sample_chain(cfg.levels), 1.0 / m_coarse, counter)
        )
    for r in range(2, cfg.levels + 1):
        m_pair = m[r - 2]  # count attached to the finer scale of the pair
        for _ in range(m_pair):
            finer, coarser = sampler.pair(r)
            terms.append(_term(model, finer, 1.0 / m_pair, counter))
            terms.append(_term(model, coarser, -1.0 / m_pair, counter))
    value = float(sum(t.coef * t.loss for t in terms))
    return value, terms


def telescope_gradient(model: Model, terms: list[TelescopeTerm]) -> Gradients:
    """Gradient of the estimator: the same signed combination of term grads."""
    total = zero_gradients(model)
    for t in terms:
        accumulate(total, backward(t.tape, t.dlogits), t.coef)
    return total


def train_ms_gradient(
    model: Model,
    data: GraphData,
    cfg: TelescopeConfig,
    schedule: TrainSchedule,
) -> tuple[Model, MetricLog]:
    """Coarse-warmup training at a fixed epoch budget.

    Epochs before ``switch_epoch`` step on a fresh coarse node-subset draw
    retaining ``retain_fraction`` of the nodes (composed R-1 times when
    R > 2); the remaining epochs step on the plain fine loss.  The warmup
    realizes the coarse terms of the telescopic estimator across epochs,
    with the fine phase supplying the fine-scale correction, so each warmup
    epoch costs strictly fewer FLOPs than a fine epoch.  Weights are
    continuous throughout and evaluation always runs on the fine data.
    """
    if len(schedule.epochs_per_level) != 1:
        raise TrainingError("coarse-warmup training takes a single epoch budget")
    total_epochs = schedule.epochs_per_level[0]
    rng = np.random.default_rng(schedule.seed)
    sampler = SubsetPairSampler(data, cfg.retain_fraction, rng)
    state = _RunState(model, schedule, data)
    for epoch in range(total_epochs):
        warmup = epoch < cfg.switch_epoch and cfg.levels > 1
        if warmup:
            draw = sampler.sample_chain(cfg.levels)
            loss = state.step(draw, level=2)
            state.maybe_record(2, loss, force=epoch == total_epochs - 1)
        else:
            loss = state.step(data, level=1)
            state.maybe_record(1, loss, force=epoch == total_epochs - 1)
    return model, state.log
