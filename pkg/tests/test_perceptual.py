import numpy as np
import pytest
import torch

from oracles import extractor_forward
from percept_embed.perceptual import (
    EXPECTED_SHAPES, ExtractorLoadError, extract_features, load_extractor, random_extractor, save_extractor,
)
from percept_embed.weights_io import WeightsFormatError, load_weights, save_weights


@pytest.mark.parametrize("size,shape", [(64, (192, 7, 7)), (96, (192, 11, 11))])
def test_output_shapes(size, shape):
    ext = random_extractor(0)
    out = extract_features(ext, torch.zeros(3, size, size))
    assert tuple(out.shape) == shape
    assert ext.output_shape(size) == shape
    assert int(np.prod(shape)) == {64: 9408, 96: 23232}[size]


@pytest.mark.parametrize("size", [32, 65])
def test_unsupported_size(size):
    with pytest.raises(ValueError):
        extract_features(random_extractor(0), torch.zeros(3, size, size))


def test_seeded_weights():
    a, b, c = random_extractor(1), random_extractor(1), random_extractor(2)
    assert a.weights_hash() == b.weights_hash() != c.weights_hash()
    assert a.source == "seeded_random(1)"


def test_matches_straight_line_oracle():
    ext = random_extractor(11)
    arrays = {k: v.astype(np.float64) for k, v in ext.state_arrays().items()}
    x = np.random.default_rng(0).random((3, 64, 64))
    want = extractor_forward(arrays, x)
    got = extract_features(ext, torch.from_numpy(x)).numpy()
    assert np.max(np.abs(got - want)) / np.max(np.abs(want)) < 1e-10


def test_imagenet_normalization_is_applied_first():
    ext = random_extractor(2)
    x = torch.rand(1, 3, 64, 64, dtype=torch.float64)
    mean = torch.tensor([0.485, 0.456, 0.406], dtype=torch.float64).view(1, 3, 1, 1)
    std = torch.tensor([0.229, 0.224, 0.225], dtype=torch.float64).view(1, 3, 1, 1)
    torch.testing.assert_close(extract_features(ext, x, "imagenet_stats"), extract_features(ext, (x - mean) / std))


def test_gradient_reaches_input_not_weights():
    ext = random_extractor(0)
    x = torch.rand(2, 3, 64, 64, requires_grad=True)
    extract_features(ext, x).sum().backward()
    assert x.grad is not None and x.grad.abs().sum() > 0
    assert all(p.grad is None and not p.requires_grad for p in ext.parameters())
    ext.train()
    assert not ext.training


def test_forward_does_not_change_extractor():
    ext = random_extractor(0)
    h = ext.weights_hash()
    extract_features(ext, torch.rand(3, 64, 64, dtype=torch.float64))
    assert ext.weights_hash() == h and ext.conv1.weight.dtype == torch.float32


def test_load_round_trip_and_trailing_layers_ignored(tmp_path):
    ext = random_extractor(3)
    arrays = {
        "features.0.weight": ext.conv1.weight.detach().numpy(),
        "features.0.bias": ext.conv1.bias.detach().numpy(),
        "features.3.weight": ext.conv2.weight.detach().numpy(),
        "features.3.bias": ext.conv2.bias.detach().numpy(),
        "features.6.weight": np.zeros((384, 192, 3, 3), np.float32),
        "classifier.6.bias": np.zeros(1000, np.float32),
    }
    save_weights(tmp_path / "alexnet.pewt", arrays)
    loaded = load_extractor(tmp_path / "alexnet.pewt")
    assert loaded.source == "pretrained"
    assert tuple(loaded.conv1.weight.shape) == (64, 3, 11, 11)
    assert sum(isinstance(m, torch.nn.Conv2d) for m in loaded.modules()) == 2
    assert loaded.weights_hash() == ext.weights_hash()

    save_extractor(ext, tmp_path / "own.pewt")
    assert load_extractor(tmp_path / "own.pewt").weights_hash() == ext.weights_hash()


def test_load_shape_mismatch_lists_shapes(tmp_path):
    arrays = {k: np.zeros(s, np.float32) for k, s in EXPECTED_SHAPES.items()}
    arrays["conv2.weight"] = np.zeros((256, 64, 5, 5), np.float32)
    save_weights(tmp_path / "bad.pewt", arrays)
    with pytest.raises(ExtractorLoadError, match=r"expected \(192, 64, 5, 5\), found \(256, 64, 5, 5\)"):
        load_extractor(tmp_path / "bad.pewt")


def test_weights_container_round_trip(tmp_path):
    arrays = {
        "a": np.arange(6, dtype=np.float32).reshape(2, 3),
        "b": np.array([1.5], dtype=np.float64),
        "c": np.arange(4, dtype=np.int64),
        "d": np.zeros((2, 1, 2), dtype=np.uint8),
    }
    save_weights(tmp_path / "w.pewt", arrays)
    back = load_weights(tmp_path / "w.pewt")
    assert list(back) == list(arrays)
    for k in arrays:
        assert back[k].dtype == arrays[k].dtype
        np.testing.assert_array_equal(back[k], arrays[k])


def test_weights_container_rejects_garbage(tmp_path):
    (tmp_path / "x.pewt").write_bytes(b"JUNKJUNKJUNK")
    with pytest.raises(WeightsFormatError):
        load_weights(tmp_path / "x.pewt")
    save_weights(tmp_path / "y.pewt", {"a": np.zeros(10, np.float32)})
    data = (tmp_path / "y.pewt").read_bytes()
    (tmp_path / "y.pewt").write_bytes(data[:-4])
    with pytest.raises(WeightsFormatError):
        load_weights(tmp_path / "y.pewt")
