import numpy as np
import numpy.testing as npt
import pytest

from bboxbench import make_net, synth_dataset
from bboxbench.train import (
    AdversarialSpec,
    TrainConfig,
    TrainingDivergedError,
    accuracy,
    robust_accuracy,
    train,
)


def test_separable_blobs_reach_high_accuracy():
    ds = synth_dataset("blobs", 200, shape=(1, 6, 6), n_classes=2, seed=2,
                       separation=1.2, noise=0.05)
    net = make_net("linear", (1, 6, 6), 2, seed=1)
    train(ds.images, ds.labels, net, TrainConfig(epochs=10, seed=4))
    assert net.meta["train_accuracy"] >= 0.99


def test_zero_epochs_returns_initialization_unchanged():
    ds = synth_dataset("blobs", 50, shape=(1, 6, 6), n_classes=2, seed=2)
    net = make_net("mlp", (1, 6, 6), 2, seed=1)
    before = [p.copy() for _, _, p in net.parameters()]
    train(ds.images, ds.labels, net, TrainConfig(epochs=0, seed=0))
    for (_, _, p), b in zip(net.parameters(), before):
        npt.assert_array_equal(p, b)


def test_training_is_seed_deterministic():
    ds = synth_dataset("blobs", 120, shape=(1, 6, 6), n_classes=3, seed=5)
    nets = []
    for _ in range(2):
        net = make_net("mlp", (1, 6, 6), 3, seed=7)
        train(ds.images, ds.labels, net, TrainConfig(epochs=4, seed=9))
        nets.append(net)
    for (_, _, a), (_, _, b) in zip(nets[0].parameters(), nets[1].parameters()):
        npt.assert_array_equal(a, b)


def test_adversarial_training_beats_standard_on_robust_accuracy():
    eps = 16 / 255
    ds = synth_dataset("blobs", 240, shape=(1, 8, 8), n_classes=3, seed=3,
                       separation=0.4, noise=0.1)
    standard = make_net("mlp", (1, 8, 8), 3, seed=2)
    train(ds.images, ds.labels, standard, TrainConfig(epochs=15, seed=3))
    robust = make_net("mlp", (1, 8, 8), 3, seed=2)
    train(
        ds.images, ds.labels, robust,
        TrainConfig(epochs=15, seed=3, adversarial=AdversarialSpec(pgd_epsilon=eps)),
    )
    acc_std = robust_accuracy(standard, ds.images, ds.labels, eps, seed=11)
    acc_rob = robust_accuracy(robust, ds.images, ds.labels, eps, seed=11)
    margin = acc_rob - acc_std
    assert margin > 0, f"robust {acc_rob} vs standard {acc_std}"


def test_divergence_raises():
    ds = synth_dataset("blobs", 60, shape=(1, 6, 6), n_classes=2, seed=2)
    net = make_net("mlp", (1, 6, 6), 2, seed=1)
    with pytest.raises(TrainingDivergedError):
        train(ds.images, ds.labels, net, TrainConfig(epochs=2, learning_rate=1e308, seed=0))


def test_empty_dataset_rejected():
    net = make_net("linear", (1, 6, 6), 2, seed=1)
    with pytest.raises(ValueError):
        train(np.zeros((0, 1, 6, 6)), np.zeros(0, dtype=np.int64), net, TrainConfig())


def test_plain_sgd_supported():
    ds = synth_dataset("blobs", 100, shape=(1, 6, 6), n_classes=2, seed=2,
                       separation=1.2, noise=0.05)
    net = make_net("linear", (1, 6, 6), 2, seed=1)
    train(ds.images, ds.labels, net, TrainConfig(epochs=8, optimizer="sgd", seed=4))
    assert accuracy(net, ds.images, ds.labels) >= 0.95
