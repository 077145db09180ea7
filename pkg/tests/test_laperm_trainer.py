import itertools

import numpy as np
import pytest

from src.laperm_trainer import (
    AdamState,
    Dataset,
    TrainConfig,
    adam_step,
    laperm_train,
    permute_to_initial,
    rank_matching_plan,
    train_free,
)
from src.permutation_tracer import TraceLog
from src.relu_net import BasisLayer, ReluNet, mse_loss, multiset_equal


def _equidistant_net(n=10):
    b = np.linspace(0.0, 1.0, n)
    return ReluNet(basis=BasisLayer.paired_1d(b), theta=np.column_stack((b, -b)).reshape(-1))


def _sine_data(m=64):
    x = np.linspace(0.0, 1.0, m)
    return Dataset(x, -np.sin(2 * np.pi * x))


def test_adam_first_step_moves_by_learning_rate():
    params = np.array([1.0, -2.0, 0.5])
    grads = np.array([0.3, -4.0, 0.0])
    updated, state = adam_step(params, grads, AdamState(), lr=0.01)
    np.testing.assert_allclose(updated, [0.99, -1.99, 0.5], atol=1e-7)
    assert state.t == 1
    np.testing.assert_allclose(state.m, 0.1 * grads)
    np.testing.assert_allclose(state.v, 0.001 * grads ** 2)


def test_adam_state_accumulates():
    params = np.zeros(2)
    state = AdamState()
    for _ in range(3):
        params, state = adam_step(params, np.array([1.0, -1.0]), state, lr=0.1)
    assert state.t == 3
    np.testing.assert_allclose(params, [-0.3, 0.3], atol=1e-6)


def test_rank_matching_orders_like_free_weights():
    theta = np.array([0.3, -1.0, 2.0, 0.0])
    W = np.array([4.0, 1.0, 3.0, 2.0])
    np.testing.assert_array_equal(permute_to_initial(theta, W), [3.0, 1.0, 4.0, 2.0])


def test_rank_matching_ties_follow_index_order():
    plan = rank_matching_plan([0.5, 0.5, 0.1], [3.0, 1.0, 2.0])
    np.testing.assert_array_equal(plan.apply([3.0, 1.0, 2.0]), [2.0, 3.0, 1.0])
    with pytest.raises(ValueError):
        rank_matching_plan([1.0], [1.0, 2.0])


def test_rank_matching_is_l2_optimal():
    rng = np.random.default_rng(2022)
    for _ in range(500):
        size = int(rng.integers(1, 8))
        theta = rng.normal(size=size)
        W = rng.normal(size=size)
        projected = permute_to_initial(theta, W)
        candidates = W[np.array(list(itertools.permutations(range(size))))]
        best = np.min(np.sum((candidates - theta) ** 2, axis=1))
        assert np.sum((projected - theta) ** 2) <= best + 1e-12
        assert multiset_equal(projected, W)


def test_laperm_preserves_multiset_and_learns():
    net = _equidistant_net()
    data = _sine_data()
    cfg = TrainConfig(epochs=60, k=5, lr=0.01, batch_size=16)
    report = laperm_train(net, data, cfg)
    assert report.net.multiset_preserved()
    assert multiset_equal(report.net.theta, net.theta)
    assert len(report.history) == 60
    assert report.final_loss < mse_loss(net, data.x, data.y)
    np.testing.assert_array_equal(net.theta, net.initial_multiset)


def test_projection_schedule_with_constant_k():
    data = _sine_data(32)
    report = laperm_train(_equidistant_net(), data, TrainConfig(epochs=12, k=5, k_growth=1.0, lr_decay=1.0))
    assert [e.epoch for e in report.events] == [5, 10, 12]
    report = laperm_train(_equidistant_net(), data, TrainConfig(epochs=10, k=5, k_growth=1.0, lr_decay=1.0))
    assert [e.epoch for e in report.events] == [5, 10]


def test_batch_granularity_counts_batches():
    data = _sine_data(32)
    cfg = TrainConfig(epochs=3, k=3, k_growth=1.0, batch_size=16, granularity="batch")
    report = laperm_train(_equidistant_net(), data, cfg)
    assert [e.epoch for e in report.events] == [2, 3]
    assert report.net.multiset_preserved()


def test_zero_epochs_returns_initial_network():
    net = _equidistant_net()
    report = laperm_train(net, _sine_data(), TrainConfig(epochs=0))
    assert report.history == [] and report.events == []
    np.testing.assert_array_equal(report.net.theta, net.theta)
    assert np.isnan(report.final_loss)


def test_freeze_affine_keeps_alpha_and_gamma():
    net = _equidistant_net()
    net.alpha, net.gamma = 0.25, 2.0
    report = laperm_train(net, _sine_data(), TrainConfig(epochs=10, freeze_affine=True))
    assert report.net.alpha == 0.25 and report.net.gamma == 2.0


def test_training_does_not_depend_on_coefficient_scale():
    data = _sine_data()
    cfg = TrainConfig(epochs=10, k=3, lr=0.01, seed=5)
    unit = _equidistant_net()
    shrunk = ReluNet(basis=unit.basis, theta=0.125 * unit.theta, gamma=8.0)
    first, second = laperm_train(unit, data, cfg), laperm_train(shrunk, data, cfg)
    assert second.net.multiset_preserved()
    np.testing.assert_allclose(8.0 * second.net.theta, first.net.theta, atol=1e-12)
    np.testing.assert_allclose([h["loss"] for h in second.history], [h["loss"] for h in first.history], rtol=1e-3)


def test_training_is_reproducible():
    cfg = TrainConfig(epochs=15, k=3, seed=7)
    first = laperm_train(_equidistant_net(), _sine_data(), cfg)
    second = laperm_train(_equidistant_net(), _sine_data(), cfg)
    assert first.net.theta.tobytes() == second.net.theta.tobytes()
    assert [h["loss"] for h in first.history] == [h["loss"] for h in second.history]


def test_free_training_has_no_projections():
    report = train_free(_equidistant_net(), _sine_data(), TrainConfig(epochs=20, lr=0.01))
    assert report.events == []
    assert all(h["moved_count"] == 0 for h in report.history)
    assert not report.net.multiset_preserved()


def test_tracer_records_every_projection():
    net = _equidistant_net(20)
    tracer = TraceLog(n=20)
    report = laperm_train(net, _sine_data(), TrainConfig(epochs=20, k=2, k_growth=1.0), tracer=tracer)
    assert len(tracer.events) == len(report.events) == 10
    assert tracer.moved_counts.tolist() == [e.moved_count for e in report.events]
    assert tracer.is_consistent()


def test_summary_and_history_frame():
    report = laperm_train(_equidistant_net(), _sine_data(), TrainConfig(epochs=8, k=2))
    frame = report.history_frame()
    assert list(frame.columns) == ["epoch", "loss", "moved_count", "k", "lr"]
    assert frame["epoch"].tolist() == list(range(1, 9))
    summary = report.summary()
    assert summary["epochs"] == 8 and summary["multiset_preserved"]
    assert summary["moved_total"] == sum(e.moved_count for e in report.events)


@pytest.mark.parametrize("options", [
    {"lr": 0.0}, {"k": 0.5}, {"epochs": -1}, {"batch_size": 0}, {"granularity": "step"},
])
def test_train_config_rejects_bad_values(options):
    with pytest.raises(ValueError):
        TrainConfig(**options)


def test_dataset_validation():
    with pytest.raises(ValueError):
        Dataset(np.zeros(3), np.zeros(2))
    with pytest.raises(ValueError):
        Dataset(np.zeros(0), np.zeros(0))
