import numpy as np
import pytest

from bboxbench import make_net, synth_dataset
from bboxbench.train import TrainConfig, train

SHAPE = (1, 8, 8)
N_CLASSES = 3


@pytest.fixture(scope="session")
def blob_world():
    """A trained desk-scale world shared across test modules.

    blobs dataset at 1x8x8 with 3 classes, an MLP target, and linear + conv
    surrogates all trained on the same split.
    """
    ds = synth_dataset("blobs", 320, shape=SHAPE, n_classes=N_CLASSES, seed=1,
                       separation=0.3, noise=0.08)
    train_x, train_y = ds.images[:240], ds.labels[:240]
    target = make_net("mlp", SHAPE, N_CLASSES, seed=2)
    train(train_x, train_y, target, TrainConfig(epochs=20, seed=3))
    linear = make_net("linear", SHAPE, N_CLASSES, seed=4)
    train(train_x, train_y, linear, TrainConfig(epochs=20, seed=5))
    conv = make_net("conv", SHAPE, N_CLASSES, seed=6)
    train(train_x, train_y, conv, TrainConfig(epochs=20, seed=7))
    return {
        "dataset": ds,
        "train_x": train_x,
        "train_y": train_y,
        "pool_x": ds.images[240:],
        "pool_y": ds.labels[240:],
        "target": target,
        "surrogates": [linear, conv],
    }


def correctly_classified(net, images, labels, limit=None):
    keep = np.flatnonzero(net.predict(images) == labels)
    if limit is not None:
        keep = keep[:limit]
    return images[keep], labels[keep]
