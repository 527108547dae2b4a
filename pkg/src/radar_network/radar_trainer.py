"""
Radar Network Training
======================
Author: Perception Fusion Team

Phase-scheduled mini-batch training of the radar segmentation network with Adam.

Training Flow:
1. Input standardization statistics are measured on the training tensors
2. Weights are initialized from the schedule seed
3. Each phase runs its epochs at its learning rate; Adam moments carry over
4. Every epoch reshuffles from its own random stream, then updates per mini-batch
5. Batch-norm running statistics follow the batch statistics with momentum
6. Training loss (and validation loss when given) is recorded per epoch

A phase with learning rate 0 leaves every tensor untouched, including the
batch-norm running statistics.

Dependencies: numpy, pydantic
"""

# Standard library imports
import logging
import math
from typing import Callable, Dict, List, Optional, Sequence, Tuple

# Third-party imports
import numpy as np
from pydantic import BaseModel, ConfigDict, Field

# Local imports
from ..shared.config import NetworkConfig, TrainSchedule
from ..shared.exceptions import DataError, NumericError, ShapeError
from ..shared.utils import seed_stream
from .radar_model import (
    NetworkWeights,
    Params,
    backward,
    init_weights,
    input_statistics,
    layer_specs,
    loss,
    predict_slices,
    trainable_names,
)

logger = logging.getLogger(__name__)


class EpochRecord(BaseModel):
    """One row of the loss curve."""

    model_config = ConfigDict(frozen=True, extra="forbid")

    epoch: int = Field(ge=1)
    phase: int = Field(ge=1)
    learning_rate: float = Field(ge=0.0)
    train_loss: float
    val_loss: Optional[float] = None


class AdamOptimizer:
    """
    Adam with bias-corrected moment estimates.

    Moments are keyed by parameter name and persist across learning-rate changes.
    """

    def __init__(self, beta1: float = 0.9, beta2: float = 0.999, epsilon: float = 1e-8):
        self.beta1 = beta1
        self.beta2 = beta2
        self.epsilon = epsilon
        self.m: Params = {}
        self.v: Params = {}
        self.t = 0

    def step(self, params: Params, grads: Params, lr: float) -> Params:
        """Return updated copies of ``params`` for every name in ``grads``."""
        self.t += 1
        bc1 = 1.0 - self.beta1 ** self.t
        bc2 = 1.0 - self.beta2 ** self.t
        updated: Params = {}
        for name, g in grads.items():
            if name not in self.m:
                self.m[name] = np.zeros_like(g)
                self.v[name] = np.zeros_like(g)
            self.m[name] = self.beta1 * self.m[name] + (1.0 - self.beta1) * g
            self.v[name] = self.beta2 * self.v[name] + (1.0 - self.beta2) * (g * g)
            m_hat = self.m[name] / bc1
            v_hat = self.v[name] / bc2
            updated[name] = params[name] - lr * m_hat / (np.sqrt(v_hat) + self.epsilon)
        return updated


class RadarTrainer:
    """
    Runs a ``TrainSchedule`` over a radar dataset.

    Attributes:
        network (NetworkConfig): Architecture to train
        schedule (TrainSchedule): Phases, batch size, weight decay, alpha and seed
        history (List[EpochRecord]): Loss curve of the last ``fit``

    Usage:
        trainer = RadarTrainer(network, schedule)
        weights = trainer.fit(tensors, targets, val_tensors, val_targets)
    """

    def __init__(
        self,
        network: NetworkConfig,
        schedule: TrainSchedule,
        on_epoch: Optional[Callable[[EpochRecord, NetworkWeights], None]] = None,
    ):
        self.network = network
        self.schedule = schedule
        self.on_epoch = on_epoch
        self.history: List[EpochRecord] = []

    def fit(
        self,
        tensors: np.ndarray,
        targets: np.ndarray,
        val_tensors: Optional[np.ndarray] = None,
        val_targets: Optional[np.ndarray] = None,
    ) -> NetworkWeights:
        """
        Train from scratch and return the final weights.

        Raises:
            DataError: Empty dataset
            ShapeError: Targets do not match tensors
            NumericError: A batch produced a non-finite loss
        """
        x = np.asarray(tensors, dtype=np.float64)
        t = np.asarray(targets, dtype=np.float64)
        if len(x) == 0:
            raise DataError("radar training set is empty")
        if t.shape != (len(x), self.network.n_slices):
            raise ShapeError(f"targets: expected {(len(x), self.network.n_slices)}, got {t.shape}")

        mean, std = input_statistics(x)
        weights = init_weights(self.network, self.schedule.seed, mean, std)
        optimizer = AdamOptimizer()
        self.history = []
        logger.info(
            f"Training radar network on {len(x)} tensors, "
            f"{self.schedule.total_epochs} epochs in {len(self.schedule.phases)} phases"
        )

        epoch = 0
        for phase, (epochs, lr) in enumerate(self.schedule.phases, start=1):
            for _ in range(epochs):
                epoch += 1
                weights, train_loss = self._run_epoch(weights, optimizer, x, t, epoch, lr)
                val_loss = None
                if val_tensors is not None and val_targets is not None and len(val_tensors) > 0:
                    val_loss = evaluate_loss(val_tensors, val_targets, weights, self.schedule.alpha)
                record = EpochRecord(
                    epoch=epoch, phase=phase, learning_rate=lr, train_loss=train_loss, val_loss=val_loss
                )
                self.history.append(record)
                logger.info(
                    f"Epoch {epoch} (phase {phase}, lr {lr:g}): train loss {train_loss:.6f}"
                    + (f", val loss {val_loss:.6f}" if val_loss is not None else "")
                )
                if self.on_epoch is not None:
                    self.on_epoch(record, weights)
        return weights

    def _run_epoch(
        self,
        weights: NetworkWeights,
        optimizer: AdamOptimizer,
        x: np.ndarray,
        t: np.ndarray,
        epoch: int,
        lr: float,
    ) -> Tuple[NetworkWeights, float]:
        order = seed_stream(self.schedule.seed, "radar", "shuffle", epoch).permutation(len(x))
        size = self.schedule.batch_size
        weighted_losses: List[float] = []
        for start in range(0, len(x), size):
            idx = order[start:start + size]
            step = backward(x[idx], weights, t[idx], self.schedule.alpha, self.schedule.weight_decay)
            if not math.isfinite(step.loss) or not all(np.all(np.isfinite(g)) for g in step.grads.values()):
                raise NumericError(f"non-finite radar loss in epoch {epoch} at batch offset {start}")
            weighted_losses.append(step.loss * len(idx))
            logger.debug(f"epoch {epoch} batch {start // size}: loss {step.loss:.6f}")
            if lr > 0.0:
                params = {name: weights[name] for name in trainable_names(self.network)}
                updates = optimizer.step(params, step.grads, lr)
                updates.update(self._running_stats(weights, step.batch_stats))
                weights = weights.replace(updates)
        return weights, math.fsum(weighted_losses) / len(x)

    def _running_stats(
        self, weights: NetworkWeights, batch_stats: Dict[str, Tuple[np.ndarray, np.ndarray]]
    ) -> Params:
        momentum = self.network.bn_momentum
        updates: Params = {}
        for spec in layer_specs(self.network):
            mean, var = batch_stats[spec.name]
            rm, rv = f"{spec.name}.running_mean", f"{spec.name}.running_var"
            updates[rm] = momentum * weights[rm] + (1.0 - momentum) * mean
            updates[rv] = momentum * weights[rv] + (1.0 - momentum) * var
        return updates


def evaluate_loss(tensors: np.ndarray, targets: np.ndarray, weights: NetworkWeights, alpha: float) -> float:
    """Infer-mode loss over a whole dataset."""
    y = predict_slices(np.asarray(tensors, dtype=np.float64), weights)
    return loss(np.asarray(targets, dtype=np.float64), y, alpha)


def train(
    dataset: Sequence[Tuple[np.ndarray, np.ndarray]],
    schedule: TrainSchedule,
    network: Optional[NetworkConfig] = None,
) -> NetworkWeights:
    """Train on a list of (tensor, occupancy) pairs and return the final weights."""
    if len(dataset) == 0:
        raise DataError("radar training set is empty")
    tensors = np.stack([pair[0] for pair in dataset])
    targets = np.stack([np.asarray(pair[1], dtype=np.float64) for pair in dataset])
    if network is None:
        n_slices, n_frames, n_features = tensors.shape[1:]
        network = NetworkConfig(n_slices=n_slices, n_frames=n_frames, n_features=n_features)
    return RadarTrainer(network, schedule).fit(tensors, targets)
