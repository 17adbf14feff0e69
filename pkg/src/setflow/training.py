"""Maximum-likelihood training of a Set Flow with Adam."""

from __future__ import annotations

import time
from dataclasses import dataclass, field
from typing import Callable

import numpy as np

from .data.clouds import SetSource, make_batches
from .model import NumericError, SetFlowModel
from .numerics import AdamState, GradTape, adam_step, backward, gaussian_entropy_total
from .numerics import tape as T


@dataclass
class TrainConfig:
    steps: int = 12_500
    batch_size: int = 16
    set_sizes: tuple[int, ...] = (3, 4, 5, 6)
    lr: float = 5e-4
    log_interval: int = 100


@dataclass
class LogRow:
    step: int
    joint_ll: float
    per_entity_ll: float
    wallclock_s: float


@dataclass
class TrainState:
    """Everything needed to continue training bit-identically."""

    model: SetFlowModel
    adam: AdamState
    rng: np.random.Generator
    step: int = 0
    log: list[LogRow] = field(default_factory=list)


def train_step(model: SetFlowModel, adam: AdamState, X, labels, z0) -> tuple[float, float]:
    """One Adam ascent step on the mean joint log-likelihood of a batch of sets.

    Returns ``(mean joint LL, mean reported per-entity LL)`` before the update.
    """
    params = model.named_parameters()
    tape = GradTape(params)
    ent, glob, _, _ = model.log_joint_terms(X, z0, labels, tape)
    joint = T.add(ent, glob)
    loss = T.neg(T.mean(joint))
    jv = T.value(joint)
    if not np.all(np.isfinite(jv)):
        raise NumericError("non-finite training log-likelihood")
    grads = backward(tape, loss)
    tape.clear()
    for name, g in grads.items():
        if not np.all(np.isfinite(g)):
            raise NumericError(f"non-finite gradient for {name}")
    adam_step(adam, params, grads)
    s = X.shape[1]
    reported = (jv - gaussian_entropy_total(model.global_dim)) / s
    return float(jv.mean()), float(reported.mean())


def train(model: SetFlowModel, dataset: SetSource, config: TrainConfig,
          rng: np.random.Generator, state: TrainState | None = None,
          on_log: Callable[[TrainState, LogRow], None] | None = None) -> TrainState:
    """Run ``config.steps`` steps (continuing ``state`` when given).

    Each step draws a set size uniformly from ``config.set_sizes``, a batch
    of that size from ``dataset`` and a fresh N(0, I) global vector per set.
    Batch norm runs in training mode and is switched back to inference mode on
    exit. Raises :class:`NumericError` on a non-finite loss or gradient.
    """
    if state is None:
        state = TrainState(model, AdamState(lr=config.lr), rng)
    batches = make_batches(dataset, config.set_sizes, config.batch_size, state.rng)
    t0 = time.perf_counter()
    model.train()
    try:
        for _ in range(config.steps):
            X, labels = next(batches)
            z0 = state.rng.standard_normal((len(X), model.global_dim))
            joint, per_entity = train_step(model, state.adam, X, labels, z0)
            state.step += 1
            if state.step % config.log_interval == 0:
                row = LogRow(state.step, joint, per_entity, time.perf_counter() - t0)
                state.log.append(row)
                if on_log is not None:
                    on_log(state, row)
    finally:
        model.eval()
    return state
