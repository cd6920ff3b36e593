import numpy as np
import numpy.testing as npt
import pytest

from bboxbench import make_net
from bboxbench.weights_io import (
    WeightFormatError,
    load_net,
    load_tensor,
    save_net,
    save_tensor,
)


@pytest.mark.parametrize("arch", ["linear", "mlp", "conv"])
def test_net_round_trip_bit_exact(arch, tmp_path):
    net = make_net(arch, (1, 8, 8), 4, seed=3)
    path = tmp_path / f"{arch}.bbnw"
    save_net(net, path)
    loaded = load_net(path)
    assert loaded.label == net.label
    assert loaded.input_shape == net.input_shape
    assert loaded.n_classes == net.n_classes
    for (_, _, a), (_, _, b) in zip(net.parameters(), loaded.parameters()):
        npt.assert_array_equal(a, b)
    x = np.random.default_rng(0).random((2, 1, 8, 8))
    npt.assert_array_equal(net.forward(x), loaded.forward(x))


def test_conv_stride_survives_round_trip(tmp_path):
    from bboxbench.layers import Affine, Conv2d, Flatten
    from bboxbench.nets import DifferentiableNet

    rng = np.random.default_rng(1)
    net = DifferentiableNet(
        [Conv2d(rng.standard_normal((2, 1, 2, 2)), np.zeros(2), stride=2),
         Flatten(), Affine(rng.standard_normal((2 * 3 * 3, 2)), np.zeros(2))],
        2, "strided", (1, 6, 6),
    )
    save_net(net, tmp_path / "s.bbnw")
    loaded = load_net(tmp_path / "s.bbnw")
    assert loaded.layers[0].stride == 2
    x = rng.random((1, 1, 6, 6))
    npt.assert_array_equal(net.forward(x), loaded.forward(x))


def test_bad_magic_rejected(tmp_path):
    path = tmp_path / "bad.bbnw"
    path.write_bytes(b"NOPE" + b"\x00" * 32)
    with pytest.raises(WeightFormatError, match="magic"):
        load_net(path)


def test_truncation_rejected(tmp_path):
    net = make_net("linear", (1, 4, 4), 2, seed=0)
    path = tmp_path / "t.bbnw"
    save_net(net, path)
    blob = path.read_bytes()
    for cut in (8, len(blob) // 2, len(blob) - 1):
        path.write_bytes(blob[:cut])
        with pytest.raises(WeightFormatError):
            load_net(path)


def test_trailing_bytes_rejected(tmp_path):
    net = make_net("linear", (1, 4, 4), 2, seed=0)
    path = tmp_path / "t.bbnw"
    save_net(net, path)
    path.write_bytes(path.read_bytes() + b"x")
    with pytest.raises(WeightFormatError, match="trailing"):
        load_net(path)


def test_tensor_round_trip(tmp_path):
    arr = np.random.default_rng(2).random((3, 1, 5, 5))
    save_tensor(arr, tmp_path / "c.bbnw", tag="candidates/iter-3")
    tag, loaded = load_tensor(tmp_path / "c.bbnw")
    assert tag == "candidates/iter-3"
    npt.assert_array_equal(arr, loaded)


def test_kind_mismatch_rejected(tmp_path):
    save_tensor(np.zeros(3), tmp_path / "t.bbnw")
    with pytest.raises(WeightFormatError, match="net"):
        load_net(tmp_path / "t.bbnw")
    net = make_net("linear", (1, 4, 4), 2, seed=0)
    save_net(net, tmp_path / "n.bbnw")
    with pytest.raises(WeightFormatError, match="tensor"):
        load_tensor(tmp_path / "n.bbnw")
