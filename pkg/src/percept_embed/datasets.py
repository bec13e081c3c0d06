"""Datasets: the synthetic lander collection and STL-10 / SVHN ingestion.

Every dataset is returned as a :class:`DatasetBundle` with three disjoint
parts: images for autoencoder training, labelled samples for probe
training, and a held-out test part. The first two carry a deterministic
80/20 train/validation split.
"""
from __future__ import annotations

import hashlib
import json
import os
import shutil
import tarfile
import time
import urllib.error
import urllib.request
from collections.abc import Sequence
from dataclasses import asdict, dataclass, field
from functools import lru_cache
from pathlib import Path
from typing import NamedTuple

import numpy as np

DATA_ROOT_ENV = "PERCEPT_EMBED_DATA"


class DatasetError(Exception):
    """Raised when dataset files are missing, malformed or inconsistent."""


class ChecksumError(DatasetError):
    pass


class DownloadError(DatasetError):
    """A transient download failure. Safe to retry."""

    retriable = True


def default_data_root() -> Path:
    return Path(os.environ.get(DATA_ROOT_ENV, Path.home() / ".cache" / "percept_embed"))


# --------------------------------------------------------------------------
# Containers
# --------------------------------------------------------------------------


class LabeledSample(NamedTuple):
    image: np.ndarray
    label: object  # (x, y) tuple for positioning, int for classification


class ImagePart(Sequence):
    """A sequence of images (optionally labelled) with a train/val split.

    ``images`` is any sequence of 3xHxW float arrays; it may render or
    decode lazily. Indexing yields a bare image when the part has no
    labels and a :class:`LabeledSample` otherwise.
    """

    def __init__(self, images, labels=None, train_indices=None, val_indices=None, groups=None):
        self.images = images
        self.labels = None if labels is None else np.asarray(labels)
        n = len(images)
        if self.labels is not None and len(self.labels) != n:
            raise DatasetError(f"{n} images but {len(self.labels)} labels")
        self.train_indices = np.arange(n) if train_indices is None else np.asarray(train_indices, dtype=np.int64)
        self.val_indices = np.zeros(0, dtype=np.int64) if val_indices is None else np.asarray(val_indices, dtype=np.int64)
        self.groups = None if groups is None else np.asarray(groups)

    def __len__(self):
        return len(self.images)

    def __getitem__(self, i):
        if isinstance(i, slice):
            return [self[j] for j in range(*i.indices(len(self)))]
        img = self.images[i]
        if self.labels is None:
            return img
        lab = self.labels[i]
        lab = int(lab) if lab.ndim == 0 else (float(lab[0]), float(lab[1]))
        return LabeledSample(img, lab)

    def stack(self, indices=None) -> np.ndarray:
        """Materialise the selected images as one float32 array (N,3,H,W)."""
        if indices is None:
            indices = np.arange(len(self))
        indices = np.asarray(indices, dtype=np.int64)
        if hasattr(self.images, "stack"):
            return self.images.stack(indices)
        if len(indices) == 0:
            return np.zeros((0, 3, 0, 0), dtype=np.float32)
        return np.stack([self.images[int(j)] for j in indices]).astype(np.float32, copy=False)

    def train_images(self) -> np.ndarray:
        return self.stack(self.train_indices)

    def val_images(self) -> np.ndarray:
        return self.stack(self.val_indices)


@dataclass
class DatasetBundle:
    name: str
    autoencoder_part: ImagePart
    predictor_part: ImagePart
    test_part: ImagePart
    task_kind: str  # "positioning" | "classification"
    num_classes: int | None = None
    image_size: int = 64
    meta: dict = field(default_factory=dict)

    def sizes(self) -> tuple[int, int, int]:
        return len(self.autoencoder_part), len(self.predictor_part), len(self.test_part)


def split_indices(n: int, seed: int, train_fraction: float = 0.8) -> tuple[np.ndarray, np.ndarray]:
    """Seeded sample-level train/validation split."""
    rng = np.random.default_rng(np.random.SeedSequence(seed, spawn_key=(0x5EED,)))
    perm = rng.permutation(n)
    n_train = int(round(train_fraction * n))
    return np.sort(perm[:n_train]), np.sort(perm[n_train:])


def _split_groups(group_ids: np.ndarray, seed: int, tag: int, fraction: float = 0.8):
    """Split distinct group ids (rollouts) into two sets, ``fraction`` going first."""
    rng = np.random.default_rng(np.random.SeedSequence(seed, spawn_key=(tag,)))
    ids = np.array(sorted(set(int(g) for g in group_ids)))
    perm = rng.permutation(ids)
    k = int(round(fraction * len(ids)))
    if len(ids) >= 2:
        k = min(max(k, 1), len(ids) - 1)
    return set(perm[:k].tolist()), set(perm[k:].tolist())


# --------------------------------------------------------------------------
# Synthetic lander collection
# --------------------------------------------------------------------------


@dataclass(frozen=True)
class SceneConfig:
    """Parameters of the synthetic lander renderer and its trajectory model.

    Defaults reproduce the full collection (1400 rollouts of 150 frames at
    64x64). Positions are in pixels, velocities in pixels per frame.
    """

    num_rollouts: int = 1400
    frames_per_rollout: int = 150
    image_size: int = 64
    sprite_size: tuple[int, int] = (5, 4)  # (width, height)
    lander_intensity: float = 0.6
    terrain_intensity: float = 0.9
    gravity: float = 0.05
    main_thrust: float = 0.08
    side_thrust: float = 0.04
    initial_speed: float = 0.5
    max_speed: float = 2.5
    terrain_base: float = 52.0
    terrain_amplitude: float = 4.0
    predictor_fraction: float = 0.8
    train_fraction: float = 0.8
    frame_stride: int = 1  # keep every k-th simulated frame

    @property
    def frames_kept(self) -> int:
        return len(range(0, self.frames_per_rollout, self.frame_stride))

    def validate(self) -> None:
        w, h = self.sprite_size
        if self.num_rollouts <= 0 or self.frames_per_rollout <= 0 or self.frame_stride <= 0:
            raise ValueError("num_rollouts, frames_per_rollout and frame_stride must be positive")
        if w <= 0 or h <= 0 or w > self.image_size or h > self.image_size:
            raise ValueError(f"sprite {w}x{h} does not fit a {self.image_size}px image")
        if not 0.0 <= self.lander_intensity <= 1.0 or not 0.0 <= self.terrain_intensity <= 1.0:
            raise ValueError("intensities must lie in [0, 1]")


@dataclass(frozen=True)
class SceneSpec:
    lander_position: tuple[float, float]  # sprite center (x, y), pixels
    lander_size: tuple[int, int]
    lander_intensity: float
    terrain_profile: tuple[float, ...]  # surface row per column
    rollout_id: int
    frame_id: int

    def sprite_box(self) -> tuple[int, int, int, int]:
        """Integer (left, top, right, bottom) of the rendered sprite, right/bottom exclusive."""
        w, h = self.lander_size
        x, y = self.lander_position
        left = int(np.floor(x - w / 2 + 0.5))
        top = int(np.floor(y - h / 2 + 0.5))
        return left, top, left + w, top + h

    def rendered_center(self) -> tuple[float, float]:
        left, top, right, bottom = self.sprite_box()
        return (left + right) / 2, (top + bottom) / 2


def _rollout_rng(seed: int, rollout_id: int) -> np.random.Generator:
    return np.random.default_rng(np.random.SeedSequence(seed, spawn_key=(1, rollout_id)))


def terrain_profile(config: SceneConfig, seed: int, rollout_id: int) -> np.ndarray:
    """Surface row for every column: a few random sinusoids with a flat pad in the middle."""
    rng = np.random.default_rng(np.random.SeedSequence(seed, spawn_key=(2, rollout_id)))
    s = config.image_size
    cols = np.arange(s, dtype=np.float64)
    heights = np.full(s, config.terrain_base + rng.uniform(-2.0, 2.0))
    for _ in range(3):
        freq = rng.uniform(0.5, 3.0)
        phase = rng.uniform(0, 2 * np.pi)
        heights += config.terrain_amplitude * rng.uniform(0.3, 1.0) * np.sin(2 * np.pi * freq * cols / s + phase)
    pad = slice(int(0.4 * s), int(0.6 * s))
    heights[pad] = heights[pad].mean()
    return np.clip(heights, s / 2, s - 1)


def simulate_rollout(config: SceneConfig, seed: int, rollout_id: int) -> list[SceneSpec]:
    """Random-policy trajectory: gravity plus one of {noop, left, main, right} per frame.

    All ``frames_per_rollout`` steps are simulated; every ``frame_stride``-th
    frame is returned.
    """
    rng = _rollout_rng(seed, rollout_id)
    terrain = terrain_profile(config, seed, rollout_id)
    s = config.image_size
    w, h = config.sprite_size
    x = s / 2 + rng.uniform(-0.15 * s, 0.15 * s)
    y = h / 2 + rng.uniform(0.0, 3.0)
    angle = rng.uniform(0, 2 * np.pi)
    vx = config.initial_speed * np.cos(angle)
    vy = abs(config.initial_speed * np.sin(angle)) * 0.5
    actions = rng.integers(0, 4, size=config.frames_per_rollout)
    profile = tuple(float(v) for v in terrain)
    scenes = []
    for t in range(config.frames_per_rollout):
        if t % config.frame_stride == 0:
            scenes.append(SceneSpec((float(x), float(y)), (w, h), config.lander_intensity, profile, rollout_id, t))
        a = actions[t]
        ax = -config.side_thrust if a == 1 else config.side_thrust if a == 3 else 0.0
        ay = config.gravity - (config.main_thrust if a == 2 else 0.0)
        vx = float(np.clip(vx + ax, -config.max_speed, config.max_speed))
        vy = float(np.clip(vy + ay, -config.max_speed, config.max_speed))
        x += vx
        y += vy
        col = int(np.clip(round(x), 0, s - 1))
        ground = terrain[col] - h / 2
        if y > ground:
            y = ground
            vy = 0.0
            vx *= 0.5
    return scenes


def _terrain_mask(profile: tuple[float, ...], size: int) -> np.ndarray:
    rows = np.arange(size)[:, None]
    return rows >= np.asarray(profile)[None, :]


def render_scene(scene: SceneSpec, config: SceneConfig, terrain_mask: np.ndarray | None = None) -> np.ndarray:
    """Render one frame as a float32 array of shape (3, S, S) in [0, 1]."""
    s = config.image_size
    if terrain_mask is None:
        terrain_mask = _terrain_mask(scene.terrain_profile, s)
    img = np.zeros((3, s, s), dtype=np.float32)
    img[:, terrain_mask] = config.terrain_intensity
    left, top, right, bottom = scene.sprite_box()
    l, t, r, b = max(left, 0), max(top, 0), min(right, s), min(bottom, s)
    if l < r and t < b:
        img[:, t:b, l:r] = scene.lander_intensity
    return img


def sprite_on_screen(scene: SceneSpec, size: int) -> bool:
    left, top, right, bottom = scene.sprite_box()
    return left >= 0 and top >= 0 and right <= size and bottom <= size


class LanderFrames(Sequence):
    """Lazily rendered frames. Terrain masks are cached per rollout."""

    def __init__(self, config: SceneConfig, scenes: list[SceneSpec]):
        self.config = config
        self.scenes = scenes
        self._masks = lru_cache(maxsize=256)(lambda profile: _terrain_mask(profile, config.image_size))

    def __len__(self):
        return len(self.scenes)

    def __getitem__(self, i):
        scene = self.scenes[i]
        return render_scene(scene, self.config, self._masks(scene.terrain_profile))

    def stack(self, indices) -> np.ndarray:
        s = self.config.image_size
        out = np.empty((len(indices), 3, s, s), dtype=np.float32)
        for k, i in enumerate(indices):
            out[k] = self[int(i)]
        return out


class _LazyScenes(Sequence):
    """Scene list that simulates rollouts on demand; lengths are known up front."""

    def __init__(self, config: SceneConfig, seed: int, rollouts: list[int], keep=None):
        self.config, self.seed, self.rollouts = config, seed, rollouts
        self._cache: dict[int, list[SceneSpec]] = {}
        self._index = [(r, f) for r in rollouts for f in range(config.frames_kept)] if keep is None else keep

    def _rollout(self, r):
        if r not in self._cache:
            if len(self._cache) > 512:
                self._cache.clear()
            self._cache[r] = simulate_rollout(self.config, self.seed, r)
        return self._cache[r]

    def __len__(self):
        return len(self._index)

    def __getitem__(self, i):
        r, f = self._index[i]
        return self._rollout(r)[f]


def generate_lander_collection(config: SceneConfig | None = None, seed: int = 0) -> DatasetBundle:
    """Build the positioning dataset.

    The first half of the rollouts is kept unaltered as autoencoder data
    (images only). From the second half, frames whose sprite is not fully
    on screen are dropped; the remaining frames are divided 80/20 by
    rollout into predictor and test material with sprite-center labels.
    Image rendering is lazy, so the full-size collection costs only the
    trajectory simulation of its labelled half up front.
    """
    config = config or SceneConfig()
    config.validate()
    n_ae = config.num_rollouts // 2
    ae_rollouts = list(range(n_ae))
    rest = list(range(n_ae, config.num_rollouts))

    ae_scenes = _LazyScenes(config, seed, ae_rollouts)
    ae_groups = np.repeat(np.array(ae_rollouts, dtype=np.int64), config.frames_kept)
    ae_train_r, _ = _split_groups(ae_groups, seed, tag=10, fraction=config.train_fraction)
    ae_train = np.flatnonzero(np.isin(ae_groups, list(ae_train_r)))
    ae_val = np.flatnonzero(~np.isin(ae_groups, list(ae_train_r)))
    ae_part = ImagePart(LanderFrames(config, ae_scenes), None, ae_train, ae_val, ae_groups)

    kept: list[SceneSpec] = []
    total_second_half = 0
    for r in rest:
        for scene in simulate_rollout(config, seed, r):
            total_second_half += 1
            if sprite_on_screen(scene, config.image_size):
                kept.append(scene)
    groups = np.array([sc.rollout_id for sc in kept], dtype=np.int64)
    pred_r, _ = _split_groups(groups if len(groups) else np.array(rest), seed, tag=11, fraction=config.predictor_fraction)

    def labelled_part(scenes, tag):
        g = np.array([sc.rollout_id for sc in scenes], dtype=np.int64)
        labels = np.array([sc.rendered_center() for sc in scenes], dtype=np.float64).reshape(-1, 2)
        if len(g):
            tr_r, _ = _split_groups(g, seed, tag=tag, fraction=config.train_fraction)
            tr = np.flatnonzero(np.isin(g, list(tr_r)))
            va = np.flatnonzero(~np.isin(g, list(tr_r)))
        else:
            tr = va = np.zeros(0, dtype=np.int64)
        return ImagePart(LanderFrames(config, scenes), labels, tr, va, g)

    pred_scenes = [sc for sc in kept if sc.rollout_id in pred_r]
    test_scenes = [sc for sc in kept if sc.rollout_id not in pred_r]
    predictor_part = labelled_part(pred_scenes, tag=12)
    test_part = labelled_part(test_scenes, tag=13)
    test_part.train_indices = np.arange(len(test_scenes))
    test_part.val_indices = np.zeros(0, dtype=np.int64)

    removed = 1.0 - len(kept) / max(total_second_half, 1)
    return DatasetBundle(
        name="lunarlander",
        autoencoder_part=ae_part,
        predictor_part=predictor_part,
        test_part=test_part,
        task_kind="positioning",
        num_classes=None,
        image_size=config.image_size,
        meta={"seed": seed, "config": asdict(config), "removed_fraction": removed},
    )


def write_lander_collection(bundle: DatasetBundle, directory: str | Path) -> Path:
    """Write one ``.npy`` image array and one label index per rollout.

    Label index lines are ``frame_id x y``. The manifest records which
    rollouts belong to which part and the config that generated them.
    """
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    manifest = {"name": bundle.name, "meta": bundle.meta, "parts": {}}
    for part_name in ("autoencoder_part", "predictor_part", "test_part"):
        part: ImagePart = getattr(bundle, part_name)
        frames: LanderFrames = part.images
        scenes = frames.scenes
        by_rollout: dict[int, list[int]] = {}
        for i in range(len(scenes)):
            by_rollout.setdefault(scenes[i].rollout_id, []).append(i)
        train_groups = sorted({int(part.groups[i]) for i in part.train_indices})
        manifest["parts"][part_name] = {"rollouts": sorted(by_rollout), "train_rollouts": train_groups}
        for r, idx in by_rollout.items():
            np.save(directory / f"rollout_{r:05d}.npy", frames.stack(idx))
            with open(directory / f"rollout_{r:05d}.txt", "w") as fh:
                for i in idx:
                    sc = scenes[i]
                    x, y = sc.rendered_center()
                    fh.write(f"{sc.frame_id} {x:g} {y:g}\n")
    (directory / "manifest.json").write_text(json.dumps(manifest, indent=2, sort_keys=True))
    return directory


class _ArrayImages(Sequence):
    """Images stored as float32 or uint8 arrays; uint8 is scaled by 1/255."""

    def __init__(self, array: np.ndarray, channels_last: bool = False, tile: bool = False):
        self.array = array
        self.channels_last = channels_last
        self.tile = tile

    def __len__(self):
        return self.array.shape[-1] if self.channels_last else self.array.shape[0]

    def _convert(self, a: np.ndarray) -> np.ndarray:
        # a: (N,3,H,W) raw
        out = a.astype(np.float32) / 255.0 if a.dtype == np.uint8 else a.astype(np.float32, copy=False)
        if self.tile:
            out = np.tile(out, (1, 1, 2, 2))
        return out

    def _raw(self, indices):
        if self.channels_last:
            # SVHN layout: (H, W, C, N)
            return np.transpose(self.array[..., indices], (3, 2, 0, 1))
        return self.array[indices]

    def __getitem__(self, i):
        return self._convert(self._raw(np.array([int(i)])))[0]

    def stack(self, indices) -> np.ndarray:
        return self._convert(self._raw(np.asarray(indices, dtype=np.int64)))


def read_lander_collection(directory: str | Path) -> DatasetBundle:
    directory = Path(directory)
    manifest = json.loads((directory / "manifest.json").read_text())
    parts = {}
    for part_name, info in manifest["parts"].items():
        arrays, labels, groups = [], [], []
        for r in info["rollouts"]:
            a = np.load(directory / f"rollout_{r:05d}.npy")
            rows = np.loadtxt(directory / f"rollout_{r:05d}.txt", ndmin=2)
            if len(rows) != len(a):
                raise DatasetError(f"rollout_{r:05d}: {len(a)} frames but {len(rows)} label lines")
            arrays.append(a)
            labels.append(rows[:, 1:3])
            groups.append(np.full(len(a), r, dtype=np.int64))
        images = np.concatenate(arrays) if arrays else np.zeros((0, 3, 64, 64), np.float32)
        g = np.concatenate(groups) if groups else np.zeros(0, np.int64)
        lab = np.concatenate(labels) if labels else np.zeros((0, 2))
        train = np.flatnonzero(np.isin(g, info["train_rollouts"]))
        val = np.flatnonzero(~np.isin(g, info["train_rollouts"]))
        parts[part_name] = ImagePart(
            _ArrayImages(images), None if part_name == "autoencoder_part" else lab, train, val, g
        )
    return DatasetBundle(
        name=manifest["name"], task_kind="positioning", image_size=parts["autoencoder_part"].stack([0]).shape[-1]
        if len(parts["autoencoder_part"]) else 64, meta=manifest["meta"], **parts,
    )


# --------------------------------------------------------------------------
# STL-10 / SVHN
# --------------------------------------------------------------------------

# Record counts of the published files.
PUBLISHED_SIZES = {
    "stl10": {"unlabeled_X.bin": 100000, "train_X.bin": 5000, "test_X.bin": 8000},
    "svhn": {"extra_32x32.mat": 531131, "train_32x32.mat": 73257, "test_32x32.mat": 26032},
}

SOURCES = {
    "stl10": [
        ("http://ai.stanford.edu/~acoates/stl10/stl10_binary.tar.gz", "stl10_binary.tar.gz",
         "91f7769df0f17e558f3565bffb0c7dfb"),
    ],
    "svhn": [
        ("http://ufldl.stanford.edu/housenumbers/train_32x32.mat", "train_32x32.mat",
         "e26dedcc434d2e4c54c9b2d4a06d8373"),
        ("http://ufldl.stanford.edu/housenumbers/test_32x32.mat", "test_32x32.mat",
         "eb5a983be6a315427106f1b164d9cef3"),
        ("http://ufldl.stanford.edu/housenumbers/extra_32x32.mat", "extra_32x32.mat",
         "a93ce644f1a588dc4d68dda5feec44a7"),
    ],
}

STL10_IMAGE_BYTES = 3 * 96 * 96


def md5sum(path: Path, chunk: int = 1 << 20) -> str:
    h = hashlib.md5()
    with open(path, "rb") as fh:
        while block := fh.read(chunk):
            h.update(block)
    return h.hexdigest()


def _download(url: str, dest: Path, retries: int, backoff: float) -> None:
    tmp = dest.with_suffix(dest.suffix + ".part")
    for attempt in range(retries + 1):
        try:
            with urllib.request.urlopen(url, timeout=60) as resp, open(tmp, "wb") as out:
                shutil.copyfileobj(resp, out)
            tmp.replace(dest)
            return
        except (urllib.error.URLError, OSError) as exc:
            if attempt == retries:
                raise DownloadError(f"download of {url} failed after {retries + 1} attempts: {exc}") from exc
            time.sleep(backoff * 2**attempt)


def fetch_dataset(name: str, root: str | Path | None = None, sources=None, retries: int = 2,
                  backoff: float = 1.0) -> Path:
    """Download and verify the published archives of ``name`` under ``root/name``.

    A file that is already present is verified by checksum and never
    re-downloaded; a verified marker makes later calls skip hashing too.
    ``sources`` overrides the (url, filename, md5) table.
    """
    if name not in SOURCES and sources is None:
        raise DatasetError(f"unknown dataset {name!r}")
    root = Path(root) if root is not None else default_data_root()
    target = root / name
    target.mkdir(parents=True, exist_ok=True)
    for url, filename, md5 in sources if sources is not None else SOURCES[name]:
        dest = target / filename
        marker = target / f".{filename}.verified"
        if dest.exists() and marker.exists() and marker.read_text().strip() == md5:
            continue
        if not dest.exists():
            _download(url, dest, retries, backoff)
        found = md5sum(dest)
        if found != md5:
            raise ChecksumError(f"{dest}: md5 {found} does not match expected {md5}")
        marker.write_text(md5)
        if filename.endswith(".tar.gz"):
            with tarfile.open(dest) as tar:
                tar.extractall(target, filter="data")
    return target


def _read_stl10_images(path: Path) -> np.ndarray:
    if not path.exists():
        raise DatasetError(f"missing STL-10 file {path}")
    raw = np.memmap(path, dtype=np.uint8, mode="r")
    if raw.size == 0 or raw.size % STL10_IMAGE_BYTES:
        raise DatasetError(f"corrupt STL-10 file {path}: {raw.size} bytes is not a multiple of {STL10_IMAGE_BYTES}")
    # Stored column-major per channel.
    return raw.reshape(-1, 3, 96, 96).transpose(0, 1, 3, 2)


def _read_stl10_labels(path: Path, n: int) -> np.ndarray:
    if not path.exists():
        raise DatasetError(f"missing STL-10 file {path}")
    labels = np.fromfile(path, dtype=np.uint8).astype(np.int64) - 1
    if len(labels) != n or labels.min(initial=0) < 0 or labels.max(initial=0) > 9:
        raise DatasetError(f"corrupt STL-10 label file {path}")
    return labels


def _read_svhn(path: Path) -> tuple[np.ndarray, np.ndarray]:
    import scipy.io

    if not path.exists():
        raise DatasetError(f"missing SVHN file {path}")
    try:
        mat = scipy.io.loadmat(path)
        x, y = mat["X"], mat["y"].astype(np.int64).reshape(-1)
    except Exception as exc:  # scipy raises a variety of types on bad input
        raise DatasetError(f"corrupt SVHN file {path}: {exc}") from exc
    if x.ndim != 4 or x.shape[:3] != (32, 32, 3) or x.shape[3] != len(y):
        raise DatasetError(f"corrupt SVHN file {path}: X has shape {x.shape}")
    y[y == 10] = 0
    return x, y


def svhn_tile(image_32) -> np.ndarray:
    """Duplicate a 3x32x32 image into a 2x2 grid of shape 3x64x64."""
    a = np.asarray(image_32)
    if a.shape != (3, 32, 32):
        raise ValueError(f"svhn_tile expects a 3x32x32 image, got {a.shape}")
    return np.tile(a, (1, 2, 2))


def load_classification_dataset(name: str, root: str | Path | None = None, seed: int = 0) -> DatasetBundle:
    root = Path(root) if root is not None else default_data_root()
    if name == "stl10":
        base = root / "stl10" / "stl10_binary"
        unlabeled = _read_stl10_images(base / "unlabeled_X.bin")
        train_x = _read_stl10_images(base / "train_X.bin")
        test_x = _read_stl10_images(base / "test_X.bin")
        train_y = _read_stl10_labels(base / "train_y.bin", len(train_x))
        test_y = _read_stl10_labels(base / "test_y.bin", len(test_x))
        mk = lambda a: _ArrayImages(a)  # noqa: E731
        size = 96
    elif name == "svhn":
        base = root / "svhn"
        unlabeled, _ = _read_svhn(base / "extra_32x32.mat")
        train_x, train_y = _read_svhn(base / "train_32x32.mat")
        test_x, test_y = _read_svhn(base / "test_32x32.mat")
        mk = lambda a: _ArrayImages(a, channels_last=True, tile=True)  # noqa: E731
        size = 64
    else:
        raise DatasetError(f"unknown classification dataset {name!r}")
    ae_tr, ae_va = split_indices(len(mk(unlabeled)), seed)
    pr_tr, pr_va = split_indices(len(train_y), seed + 1)
    return DatasetBundle(
        name=name,
        autoencoder_part=ImagePart(mk(unlabeled), None, ae_tr, ae_va),
        predictor_part=ImagePart(mk(train_x), train_y, pr_tr, pr_va),
        test_part=ImagePart(mk(test_x), test_y),
        task_kind="classification",
        num_classes=10,
        image_size=size,
        meta={"seed": seed, "root": str(root)},
    )
