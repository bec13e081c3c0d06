import hashlib
import io
import tarfile

import numpy as np
import pytest
import scipy.io
from hypothesis import given, settings, strategies as st

from percept_embed.datasets import (
    ChecksumError, DatasetError, DownloadError, SceneConfig, SceneSpec, fetch_dataset,
    generate_lander_collection, load_classification_dataset, read_lander_collection,
    render_scene, simulate_rollout, svhn_tile, write_lander_collection,
)

SMALL = SceneConfig(num_rollouts=8, frames_per_rollout=20)


# -- synthetic lander collection -------------------------------------------

def test_same_seed_is_byte_identical():
    a = generate_lander_collection(SMALL, seed=7)
    b = generate_lander_collection(SMALL, seed=7)
    for part in ("autoencoder_part", "predictor_part", "test_part"):
        pa, pb = getattr(a, part), getattr(b, part)
        idx = np.arange(len(pa))
        assert pa.stack(idx).tobytes() == pb.stack(idx).tobytes()
        if pa.labels is not None:
            assert pa.labels.tobytes() == pb.labels.tobytes()


def test_different_seeds_differ():
    a = generate_lander_collection(SMALL, seed=1).autoencoder_part.stack(np.arange(20))
    b = generate_lander_collection(SMALL, seed=2).autoencoder_part.stack(np.arange(20))
    assert not np.array_equal(a, b)


def test_default_collection_sizes():
    bundle = generate_lander_collection(SceneConfig(), seed=0)
    assert len(bundle.autoencoder_part) == 700 * 150
    removed = bundle.meta["removed_fraction"]
    assert 0.05 <= removed <= 0.15
    assert len(bundle.predictor_part) + len(bundle.test_part) == round(700 * 150 * (1 - removed))


def test_sprite_render_pixel_scan():
    cfg = SceneConfig(image_size=64, terrain_intensity=0.0)
    scene = SceneSpec((32.0, 32.0), (6, 8), 0.6, (64.0,) * 64, 0, 0)
    img = render_scene(scene, cfg)
    lit = [(r, c) for r in range(64) for c in range(64) if img[0, r, c] == np.float32(0.6)]
    rows = sorted({r for r, _ in lit})
    cols = sorted({c for _, c in lit})
    assert rows == list(range(28, 36))
    assert cols == list(range(29, 35))
    assert len(lit) == 48
    assert scene.rendered_center() == (32.0, 32.0)


def test_labels_are_sprite_centers():
    bundle = generate_lander_collection(SMALL, seed=3)
    part = bundle.predictor_part
    for i in range(0, len(part), 7):
        img = part.images[i]
        rows, cols = np.nonzero(img[0] == np.float32(SMALL.lander_intensity))
        assert (cols.min() + cols.max() + 1) / 2 == part.labels[i, 0]
        assert (rows.min() + rows.max() + 1) / 2 == part.labels[i, 1]


def test_parts_disjoint_by_rollout_and_content():
    bundle = generate_lander_collection(SMALL, seed=4)
    groups = [set(getattr(bundle, p).groups.tolist()) for p in ("autoencoder_part", "predictor_part", "test_part")]
    assert not groups[0] & groups[1] and not groups[0] & groups[2] and not groups[1] & groups[2]
    pred = bundle.predictor_part
    assert not set(pred.groups[pred.train_indices]) & set(pred.groups[pred.val_indices])
    assert len(bundle.test_part.val_indices) == 0


def test_images_in_unit_range():
    bundle = generate_lander_collection(SMALL, seed=5)
    x = bundle.autoencoder_part.stack(np.arange(len(bundle.autoencoder_part)))
    assert x.dtype == np.float32 and x.min() >= 0 and x.max() <= 1


@settings(max_examples=20, deadline=None)
@given(st.integers(1, 7), st.integers(1, 30))
def test_frame_stride_subsamples_the_same_trajectory(stride, frames):
    full = simulate_rollout(SceneConfig(frames_per_rollout=frames), 3, 5)
    cfg = SceneConfig(frames_per_rollout=frames, frame_stride=stride)
    kept = simulate_rollout(cfg, 3, 5)
    assert len(kept) == cfg.frames_kept
    assert kept == full[::stride]


@pytest.mark.parametrize("kwargs", [dict(num_rollouts=0), dict(sprite_size=(65, 4)), dict(lander_intensity=2.0),
                                    dict(frame_stride=0)])
def test_bad_scene_config_rejected(kwargs):
    with pytest.raises(ValueError):
        generate_lander_collection(SceneConfig(**kwargs), seed=0)


def test_lander_write_read_round_trip(tmp_path):
    bundle = generate_lander_collection(SMALL, seed=6)
    write_lander_collection(bundle, tmp_path)
    back = read_lander_collection(tmp_path)
    assert back.sizes() == bundle.sizes()
    for part in ("autoencoder_part", "predictor_part", "test_part"):
        pa, pb = getattr(bundle, part), getattr(back, part)
        np.testing.assert_array_equal(pa.stack(np.arange(len(pa))), pb.stack(np.arange(len(pb))))
    np.testing.assert_array_equal(bundle.predictor_part.labels, back.predictor_part.labels)


def test_lander_read_detects_label_mismatch(tmp_path):
    write_lander_collection(generate_lander_collection(SMALL, seed=6), tmp_path)
    label_file = sorted(tmp_path.glob("rollout_*.txt"))[-1]
    label_file.write_text(label_file.read_text().split("\n", 1)[1])
    with pytest.raises(DatasetError, match=label_file.stem):
        read_lander_collection(tmp_path)


# -- svhn tiling ------------------------------------------------------------

def test_svhn_tile_constant():
    assert np.array_equal(svhn_tile(np.full((3, 32, 32), 0.5)), np.full((3, 64, 64), 0.5))


@settings(max_examples=25, deadline=None)
@given(st.integers(0, 2**31 - 1))
def test_svhn_tile_quadrants(seed):
    x = np.random.default_rng(seed).random((3, 32, 32))
    t = svhn_tile(x)
    assert t.shape == (3, 64, 64)
    for r in (0, 32):
        for c in (0, 32):
            assert np.array_equal(t[:, r:r + 32, c:c + 32], x)
    assert t.sum() == pytest.approx(4 * x.sum())


@pytest.mark.parametrize("shape", [(3, 32, 31), (1, 32, 32), (32, 32, 3)])
def test_svhn_tile_rejects_wrong_shape(shape):
    with pytest.raises(ValueError):
        svhn_tile(np.zeros(shape))


# -- published formats: tiny fixtures ----------------------------------------

def write_stl10(root, n_unlab=6, n_train=5, n_test=4, seed=0):
    rng = np.random.default_rng(seed)
    base = root / "stl10" / "stl10_binary"
    base.mkdir(parents=True)
    images = {}
    for name, n in (("unlabeled", n_unlab), ("train", n_train), ("test", n_test)):
        x = rng.integers(0, 256, size=(n, 3, 96, 96), dtype=np.uint8)
        images[name] = x
        # column-major per channel, as in the published binary
        x.transpose(0, 1, 3, 2).tofile(base / f"{name}_X.bin")
    for name, n in (("train", n_train), ("test", n_test)):
        (rng.integers(1, 11, size=n).astype(np.uint8)).tofile(base / f"{name}_y.bin")
    return images


def write_svhn(root, sizes=(5, 4, 3), seed=0):
    rng = np.random.default_rng(seed)
    base = root / "svhn"
    base.mkdir(parents=True)
    out = {}
    for name, n in zip(("extra", "train", "test"), sizes):
        x = rng.integers(0, 256, size=(32, 32, 3, n), dtype=np.uint8)
        y = rng.integers(1, 11, size=(n, 1)).astype(np.uint8)
        scipy.io.savemat(base / f"{name}_32x32.mat", {"X": x, "y": y})
        out[name] = (x, y)
    return out


def test_stl10_loader(tmp_path):
    images = write_stl10(tmp_path)
    bundle = load_classification_dataset("stl10", tmp_path)
    assert bundle.sizes() == (6, 5, 4)
    assert bundle.num_classes == 10 and bundle.image_size == 96
    x = bundle.predictor_part.stack([2])[0]
    assert x.shape == (3, 96, 96) and x.min() >= 0 and x.max() <= 1
    np.testing.assert_allclose(x, images["train"][2] / 255.0, rtol=0, atol=1e-7)
    assert bundle.predictor_part.labels.min() >= 0 and bundle.predictor_part.labels.max() <= 9


def test_svhn_loader_tiles_and_maps_labels(tmp_path):
    raw = write_svhn(tmp_path)
    bundle = load_classification_dataset("svhn", tmp_path)
    assert bundle.sizes() == (5, 4, 3)
    x = bundle.test_part.stack([1])[0]
    expect = raw["test"][0][:, :, :, 1].transpose(2, 0, 1) / 255.0
    np.testing.assert_allclose(x, svhn_tile(expect), atol=1e-7)
    y = raw["test"][1].reshape(-1).astype(int) % 10
    np.testing.assert_array_equal(bundle.test_part.labels, y)


def test_missing_file_named(tmp_path):
    write_stl10(tmp_path)
    (tmp_path / "stl10" / "stl10_binary" / "test_y.bin").unlink()
    with pytest.raises(DatasetError, match="test_y.bin"):
        load_classification_dataset("stl10", tmp_path)


def test_corrupt_file_named(tmp_path):
    write_svhn(tmp_path)
    (tmp_path / "svhn" / "train_32x32.mat").write_bytes(b"not a mat file")
    with pytest.raises(DatasetError, match="train_32x32.mat"):
        load_classification_dataset("svhn", tmp_path)


# -- fetch over file:// -------------------------------------------------------

def make_archive(path):
    buf = io.BytesIO()
    with tarfile.open(fileobj=buf, mode="w:gz") as tar:
        data = b"hello"
        info = tarfile.TarInfo("payload/a.txt")
        info.size = len(data)
        tar.addfile(info, io.BytesIO(data))
    path.write_bytes(buf.getvalue())
    return hashlib.md5(buf.getvalue()).hexdigest()


def test_fetch_fresh_then_cached(tmp_path):
    src = tmp_path / "mirror" / "arch.tar.gz"
    src.parent.mkdir()
    md5 = make_archive(src)
    sources = [(src.as_uri(), "arch.tar.gz", md5)]
    out = fetch_dataset("toy", tmp_path / "data", sources=sources, backoff=0)
    assert out == tmp_path / "data" / "toy"
    assert (out / "arch.tar.gz").exists() and (out / "payload" / "a.txt").read_text() == "hello"
    src.unlink()  # a second call must not touch the network
    fetch_dataset("toy", tmp_path / "data", sources=sources, backoff=0)


def test_fetch_tampered_archive(tmp_path):
    src = tmp_path / "arch.tar.gz"
    md5 = make_archive(src)
    src.write_bytes(src.read_bytes() + b"x")
    with pytest.raises(ChecksumError):
        fetch_dataset("toy", tmp_path / "data", sources=[(src.as_uri(), "arch.tar.gz", md5)], backoff=0)


def test_fetch_download_failure_is_retriable(tmp_path):
    missing = (tmp_path / "nope.bin").as_uri()
    with pytest.raises(DownloadError) as info:
        fetch_dataset("toy", tmp_path / "data", sources=[(missing, "nope.bin", "0" * 32)], retries=1, backoff=0)
    assert info.value.retriable
