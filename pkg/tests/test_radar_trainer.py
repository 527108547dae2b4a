"""
Tests for src.radar_network.radar_trainer
"""

import numpy as np
import pytest

from src.radar_network.radar_model import forward, init_weights, input_statistics
from src.radar_network.radar_trainer import AdamOptimizer, RadarTrainer, train
from src.shared.config import NetworkConfig, TrainSchedule
from src.shared.exceptions import DataError, NumericError
from src.shared.utils import seed_stream

TINY = NetworkConfig(n_slices=8, width=4)


def _separable_task(n: int, network: NetworkConfig, seed: int = 0):
    """Occupancy is the indicator of slices holding a radar return."""
    rng = seed_stream(seed, "test", "separable")
    x = np.zeros((n, network.n_slices, network.n_frames, network.n_features))
    occupied = rng.random((n, network.n_slices)) < 0.25
    count = int(occupied.sum())
    features = np.column_stack([
        rng.uniform(5.0, 100.0, count),
        rng.uniform(455.0, 530.0, count),
        rng.normal(0.0, 1.0, count),
        rng.normal(0.0, 5.0, count),
    ])
    x[occupied, network.n_frames - 1, :] = features
    return x, occupied.astype(float)


def test_adam_first_step_moves_by_learning_rate():
    params = {"w": np.array([1.0, -2.0])}
    grads = {"w": np.array([0.5, -3.0])}
    updated = AdamOptimizer().step(params, grads, lr=0.1)
    np.testing.assert_allclose(updated["w"], [0.9, -1.9], rtol=1e-6)
    assert params["w"][0] == 1.0


def test_zero_learning_rate_keeps_initialization():
    x, t = _separable_task(12, TINY)
    schedule = TrainSchedule(phases=[(2, 0.0)], batch_size=4, seed=3)
    weights = RadarTrainer(TINY, schedule).fit(x, t)
    mean, std = input_statistics(x)
    assert weights.equals(init_weights(TINY, 3, mean, std))


def test_same_seed_gives_identical_weights():
    x, t = _separable_task(20, TINY)
    schedule = TrainSchedule(phases=[(2, 1e-3), (1, 1e-4)], batch_size=6, seed=5)
    first = RadarTrainer(TINY, schedule)
    second = RadarTrainer(TINY, schedule)
    assert first.fit(x, t).equals(second.fit(x, t))
    assert first.history == second.history


def test_history_follows_schedule():
    x, t = _separable_task(10, TINY)
    schedule = TrainSchedule(phases=[(2, 1e-3), (1, 1e-4)], batch_size=4)
    trainer = RadarTrainer(TINY, schedule)
    trainer.fit(x, t, x, t)
    assert [(r.epoch, r.phase, r.learning_rate) for r in trainer.history] == [
        (1, 1, 1e-3), (2, 1, 1e-3), (3, 2, 1e-4),
    ]
    assert all(r.val_loss is not None for r in trainer.history)


def test_empty_dataset_is_rejected():
    with pytest.raises(DataError):
        train([], TrainSchedule())


def test_non_finite_loss_raises_numeric_error():
    x, t = _separable_task(8, TINY)
    t[0, 0] = np.inf
    with pytest.raises(NumericError):
        RadarTrainer(TINY, TrainSchedule(phases=[(1, 1e-3)], batch_size=8)).fit(x, t)


def test_separable_task_is_learned():
    network = NetworkConfig()
    x, t = _separable_task(2000, network)
    schedule = TrainSchedule(phases=[(20, 1e-3)], batch_size=128, alpha=1.0, seed=1)
    trainer = RadarTrainer(network, schedule)
    weights = trainer.fit(x, t)

    y = forward(x, weights)
    accuracy = float(np.mean((y >= 0.5) == (t == 1.0)))
    assert accuracy >= 0.95

    losses = [record.train_loss for record in trainer.history]
    windows = [np.mean(losses[i:i + 5]) for i in range(0, 20, 5)]
    assert all(later <= earlier for earlier, later in zip(windows, windows[1:]))


def test_train_wrapper_accepts_pairs():
    x, t = _separable_task(6, TINY)
    schedule = TrainSchedule(phases=[(1, 1e-3)], batch_size=3)
    weights = train(list(zip(x, t)), schedule, TINY)
    assert weights.network == TINY
