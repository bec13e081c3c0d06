"""Flat ``key = value`` experiment configs and the experiment matrix they describe.

Syntax: one ``key = value`` per line, ``#`` starts a comment, lists are
comma separated, and ``include = other.cfg`` splices another file in at
that point (paths relative to the including file). Later keys override
earlier ones.
"""
from __future__ import annotations

import hashlib
import json
from dataclasses import asdict, dataclass, field, fields, replace
from pathlib import Path

from .datasets import SceneConfig
from .evaluation import MODEL_KINDS
from .models import Z_SIZES
from .perceptual import INPUT_NORMS
from .predictors import ProbeTrainConfig
from .training import TrainConfig

DATASETS = ("lunarlander", "stl10", "svhn")
PAPER_Z_SIZES = {
    "lunarlander": (32, 64, 128, 256),
    "stl10": (64, 128, 256, 512),
    "svhn": (32, 64, 128),
}
INPUT_SIZE = {"lunarlander": 64, "stl10": 96, "svhn": 64}


class ConfigError(ValueError):
    def __init__(self, message: str, path: str | None = None, lineno: int | None = None):
        where = f"{path}:{lineno}: " if path and lineno else f"{path}: " if path else ""
        super().__init__(where + message)
        self.path, self.lineno = path, lineno


def parse_config_text(text: str, path: str = "<string>", base_dir: Path | None = None,
                      _seen: tuple = ()) -> dict[str, tuple[str, str, int]]:
    """Return ``key -> (value, path, lineno)`` with includes expanded."""
    out: dict[str, tuple[str, str, int]] = {}
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"expected 'key = value', got {raw.strip()!r}", path, lineno)
        key, value = (s.strip() for s in line.split("=", 1))
        if not key:
            raise ConfigError("empty key", path, lineno)
        if key == "include":
            inc = (base_dir or Path(".")) / value
            if str(inc.resolve()) in _seen:
                raise ConfigError(f"include cycle through {inc}", path, lineno)
            if not inc.exists():
                raise ConfigError(f"included file {inc} not found", path, lineno)
            out.update(parse_config_text(inc.read_text(), str(inc), inc.parent, _seen + (str(inc.resolve()),)))
        else:
            out[key] = (value, path, lineno)
    return out


def parse_config_file(path: str | Path) -> dict[str, tuple[str, str, int]]:
    path = Path(path)
    if not path.exists():
        raise ConfigError("config file not found", str(path))
    return parse_config_text(path.read_text(), str(path), path.parent, (str(path.resolve()),))


@dataclass(frozen=True)
class ExperimentMatrix:
    datasets: tuple[str, ...] = ("lunarlander",)
    z_sizes: dict = field(default_factory=lambda: dict(PAPER_Z_SIZES))
    model_kinds: tuple[str, ...] = MODEL_KINDS
    seeds: tuple[int, ...] = (0,)
    profile: str = "paper"
    train: TrainConfig = TrainConfig()
    retrain: TrainConfig = TrainConfig()
    probe: ProbeTrainConfig = ProbeTrainConfig()
    lander: SceneConfig = SceneConfig()
    normalization: str = "raw01"
    reduction: str = "mean"
    kl_weight: float = 1.0
    extractor_weights: str = ""
    extractor_seed: int = 0
    max_autoencoder_images: int = 0  # 0 = no cap
    max_predictor_images: int = 0
    max_test_images: int = 0
    data_root: str = ""

    def cells(self):
        for ds in self.datasets:
            for z in self.z_sizes[ds]:
                for kind in self.model_kinds:
                    for seed in self.seeds:
                        yield ds, z, kind, seed

    def autoencoder_runs(self) -> int:
        return sum(1 for _ in self.cells())

    def cell_config(self, dataset: str, z: int, kind: str, seed: int) -> dict:
        """Everything that determines one cell's results."""
        cfg = {
            "dataset": dataset, "z_size": z, "model_kind": kind, "seed": seed,
            "input_size": INPUT_SIZE[dataset],
            "train": asdict(replace(self.train, seed=seed)),
            "retrain": asdict(replace(self.retrain, seed=seed)),
            "probe": asdict(self.probe),
            "normalization": self.normalization, "reduction": self.reduction,
            "kl_weight": self.kl_weight if kind in ("VAE", "P.VAE") else 0.0,
            "extractor": (self.extractor_weights or f"seeded_random({self.extractor_seed})")
            if kind.startswith("P.") else None,
            "caps": [self.max_autoencoder_images, self.max_predictor_images, self.max_test_images],
        }
        if dataset == "lunarlander":
            cfg["lander"] = asdict(self.lander)
        return cfg


def config_hash(cfg: dict) -> str:
    return hashlib.sha256(json.dumps(cfg, sort_keys=True).encode()).hexdigest()[:16]


def paper_matrix() -> ExperimentMatrix:
    return ExperimentMatrix(datasets=DATASETS, profile="paper")


DESK_DEFAULTS = dict(
    datasets=("lunarlander",),
    z_sizes={"lunarlander": (32,), "stl10": (64,), "svhn": (32,)},
    profile="desk",
    train=TrainConfig(lr=1e-3, batch_size=32, max_epochs=4, patience=2),
    retrain=TrainConfig(lr=1e-3, batch_size=32, max_epochs=3, patience=2),
    probe=ProbeTrainConfig(lr=1e-3, batch_size=256, max_epochs=100, patience=8),
    # 280 rollouts of the first 37 frames each (~10.4k images). Many short
    # rollouts rather than a few long ones: probes are tested on unseen
    # terrains, so they need to have seen many. Early frames cover the
    # descent; later ones mostly show landers resting against the terrain.
    lander=SceneConfig(num_rollouts=280, frames_per_rollout=37),
    max_autoencoder_images=5000, max_predictor_images=4000, max_test_images=1000,
)


def desk_matrix() -> ExperimentMatrix:
    return ExperimentMatrix(**DESK_DEFAULTS)


def _ints(value: str) -> tuple[int, ...]:
    return tuple(int(v) for v in value.split(",") if v.strip())


def _strs(value: str) -> tuple[str, ...]:
    return tuple(v.strip() for v in value.split(",") if v.strip())


def _coerce(value: str, like):
    if isinstance(like, bool):
        if value.lower() in ("1", "true", "yes"):
            return True
        if value.lower() in ("0", "false", "no"):
            return False
        raise ValueError(f"not a boolean: {value!r}")
    if isinstance(like, int):
        return int(value)
    if isinstance(like, float):
        return float(value)
    if isinstance(like, tuple):
        return _ints(value)
    return value


def _coerce_field(obj, key: str, value: str):
    if key not in {f.name for f in fields(obj)}:
        raise KeyError(key)
    return _coerce(value, getattr(obj, key))


def matrix_from_entries(entries: dict, profile: str | None = None) -> ExperimentMatrix:
    """Build a matrix from parsed entries on top of the profile defaults."""
    prof = profile or entries.get("profile", ("paper",))[0]
    if prof not in ("paper", "desk"):
        where = entries.get("profile", (None, None, None))
        raise ConfigError(f"profile must be 'paper' or 'desk', got {prof!r}", where[1], where[2])
    m = desk_matrix() if prof == "desk" else paper_matrix()
    updates: dict = {}
    z_sizes = dict(m.z_sizes)
    nested = {"train": m.train, "retrain": m.retrain, "probe": m.probe, "lander": m.lander}
    nested_updates: dict[str, dict] = {g: {} for g in nested}
    for key, (value, path, lineno) in entries.items():
        try:
            if key == "profile":
                continue
            if key == "datasets":
                ds = _strs(value)
                bad = [d for d in ds if d not in DATASETS]
                if bad or not ds:
                    raise ValueError(f"unknown datasets {bad}; choose from {DATASETS}")
                updates["datasets"] = ds
            elif key.startswith("z_sizes."):
                ds = key.split(".", 1)[1]
                zs = _ints(value)
                if ds not in DATASETS or not zs or any(z not in Z_SIZES for z in zs):
                    raise ValueError(f"z sizes must be a non-empty subset of {Z_SIZES}")
                z_sizes[ds] = zs
            elif key == "model_kinds":
                kinds = _strs(value)
                if not kinds or any(k not in MODEL_KINDS for k in kinds):
                    raise ValueError(f"model kinds must be among {MODEL_KINDS}")
                updates["model_kinds"] = kinds
            elif key == "seeds":
                updates["seeds"] = _ints(value)
            elif "." in key:
                group, sub = key.split(".", 1)
                if group not in nested:
                    raise KeyError(key)
                nested_updates[group][sub] = _coerce_field(nested[group], sub, value)
            else:
                if key not in {f.name for f in fields(ExperimentMatrix)} or key in nested or key == "z_sizes":
                    raise KeyError(key)
                updates[key] = _coerce(value, getattr(m, key))
        except KeyError:
            raise ConfigError(f"unknown key {key!r}", path, lineno) from None
        except (ValueError, TypeError) as exc:
            raise ConfigError(f"bad value for {key!r}: {exc}", path, lineno) from None
    for group, upd in nested_updates.items():
        try:
            nested[group] = replace(nested[group], **upd)
        except (ValueError, TypeError) as exc:
            raise ConfigError(f"bad {group} settings: {exc}") from None
    if updates.get("normalization", m.normalization) not in INPUT_NORMS:
        raise ConfigError(f"normalization must be one of {INPUT_NORMS}")
    return replace(m, profile=prof, z_sizes=z_sizes, **nested, **updates)


def load_matrix(path: str | Path, profile: str | None = None) -> ExperimentMatrix:
    return matrix_from_entries(parse_config_file(path), profile)
