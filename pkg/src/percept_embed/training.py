"""Autoencoder training, decoder retraining and timing instrumentation."""
from __future__ import annotations

import copy
import csv
import json
import logging
import math
import time
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np
import torch

from .losses import LossSpec, elementwise_loss, total_loss
from .models import ConvAutoencoder, params_hash
from .weights_io import load_weights, save_weights

log = logging.getLogger(__name__)


class TrainingError(RuntimeError):
    pass


@dataclass(frozen=True)
class TrainConfig:
    lr: float = 1e-4
    batch_size: int = 64
    max_epochs: int = 100
    patience: int = 10
    seed: int = 0
    optimizer: str = "adam"

    def __post_init__(self):
        if self.batch_size < 1:
            raise ValueError("batch_size must be >= 1")
        if self.patience > self.max_epochs:
            raise ValueError("patience must not exceed max_epochs")
        if self.optimizer not in ("adam", "sgd"):
            raise ValueError(f"unknown optimizer {self.optimizer!r}")


@dataclass
class RunTimings:
    loss_kind: str
    seconds_per_epoch: list[float] = field(default_factory=list)
    wall_seconds_total: float = 0.0


@dataclass
class History:
    epochs: list[dict] = field(default_factory=list)
    best_epoch: int = -1

    @property
    def val_losses(self) -> list[float]:
        return [e["val_loss"] for e in self.epochs]

    @property
    def train_losses(self) -> list[float]:
        return [e["train_loss"] for e in self.epochs]

    @property
    def best_val_loss(self) -> float:
        return self.epochs[self.best_epoch]["val_loss"]

    def to_csv(self, path: str | Path) -> None:
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["epoch", "train_loss", "val_loss", "seconds"])
            for e in self.epochs:
                w.writerow([e["epoch"], repr(e["train_loss"]), repr(e["val_loss"]), repr(e["seconds"])])


def _as_float_tensor(images) -> torch.Tensor:
    return torch.as_tensor(np.asarray(images, dtype=np.float32))


def _split_data(data):
    """Accept an ImagePart, a (train, val) pair, or an object with train/val arrays."""
    if hasattr(data, "train_images"):
        return _as_float_tensor(data.train_images()), _as_float_tensor(data.val_images())
    train, val = data
    return _as_float_tensor(train), _as_float_tensor(val)


def _make_optimizer(params, cfg: TrainConfig):
    if cfg.optimizer == "adam":
        return torch.optim.Adam(params, lr=cfg.lr)
    return torch.optim.SGD(params, lr=cfg.lr)


def _fit(model: ConvAutoencoder, train: torch.Tensor, val: torch.Tensor, cfg: TrainConfig, params,
         batch_loss, val_loss_fn, loss_kind: str):
    """Shared mini-batch loop with early stopping and best-snapshot restore."""
    if len(train) == 0 or len(val) == 0:
        raise TrainingError("training and validation sets must both be non-empty")
    opt = _make_optimizer(params, cfg)
    shuffle = torch.Generator().manual_seed(cfg.seed)
    eps_gen = torch.Generator().manual_seed(cfg.seed + 1)
    history, timings = History(), RunTimings(loss_kind)
    best_state, best_val, stale = None, math.inf, 0
    t_start = time.perf_counter()
    for epoch in range(cfg.max_epochs):
        t0 = time.perf_counter()
        model.train()
        perm = torch.randperm(len(train), generator=shuffle)
        total, count = 0.0, 0
        for b, i in enumerate(range(0, len(train), cfg.batch_size)):
            x = train[perm[i:i + cfg.batch_size]]
            loss = batch_loss(x, eps_gen)
            if not torch.isfinite(loss):
                raise TrainingError(f"non-finite loss {loss.item()} at epoch {epoch}, batch {b}")
            opt.zero_grad()
            loss.backward()
            opt.step()
            total += loss.item() * len(x)
            count += len(x)
        v = val_loss_fn(val)
        if not math.isfinite(v):
            raise TrainingError(f"non-finite validation loss at epoch {epoch}")
        secs = time.perf_counter() - t0
        history.epochs.append({"epoch": epoch, "train_loss": total / count, "val_loss": v, "seconds": secs})
        timings.seconds_per_epoch.append(secs)
        log.debug("epoch %d train %.6g val %.6g (%.1fs)", epoch, total / count, v, secs)
        if v < best_val:
            best_val, stale = v, 0
            best_state = copy.deepcopy(model.state_dict())
            history.best_epoch = epoch
        else:
            stale += 1
            if stale >= cfg.patience:
                break
    timings.wall_seconds_total = time.perf_counter() - t_start
    model.load_state_dict(best_state)
    model.eval()
    return history, timings


@torch.no_grad()
def _mean_over_batches(fn, data: torch.Tensor, batch_size: int) -> float:
    total = 0.0
    for i in range(0, len(data), batch_size):
        x = data[i:i + batch_size]
        total += float(fn(x)) * len(x)
    return total / len(data)


def train_autoencoder(model: ConvAutoencoder, data, spec: LossSpec, cfg: TrainConfig):
    """Mini-batch training on ``total_loss``; returns ``(model, history, timings)``.

    The returned model carries the parameters of the epoch with the lowest
    validation loss. Validation uses a fixed noise seed so VAE validation
    losses are comparable across epochs.
    """
    train, val = _split_data(data)

    def batch_loss(x, gen):
        x_hat, code = model(x, gen)
        return total_loss(spec, x, x_hat, code)[0]

    def val_loss(v):
        gen = torch.Generator().manual_seed(cfg.seed + 2)
        model.eval()
        return _mean_over_batches(lambda x: batch_loss(x, gen), v, 256)

    history, timings = _fit(model, train, val, cfg, model.parameters(), batch_loss, val_loss, spec.kind)
    return model, history, timings


def retrain_decoder(model: ConvAutoencoder, data, cfg: TrainConfig):
    """Re-initialise the decoder and train it with pixel-wise MSE on frozen z = mu.

    Returns a new model; the input model is left untouched.
    """
    train, val = _split_data(data)
    new = copy.deepcopy(model)
    enc_hash = params_hash(new.encoder_parameters())
    for p in new.encoder_parameters():
        p.requires_grad_(False)
    new.reset_decoder(new.seed)
    with torch.no_grad():
        new.eval()
        z_train = torch.cat([new.encode(train[i:i + 256], sample=False).mu for i in range(0, len(train), 256)])
        z_val = torch.cat([new.encode(val[i:i + 256], sample=False).mu for i in range(0, len(val), 256)])

    # The shared loop shuffles indices so images and embeddings stay paired.
    def batch_loss(i, _gen):
        return elementwise_loss(train[i], new.decode(z_train[i]))

    def val_loss(_v):
        return _mean_over_batches(lambda i: elementwise_loss(val[i], new.decode(z_val[i])),
                                  torch.arange(len(val)), 256)

    history, _ = _fit(new, torch.arange(len(train)), torch.arange(len(val)), cfg, new.decoder_parameters(),
                      batch_loss, val_loss, "pixelwise")
    for p in new.encoder_parameters():
        p.requires_grad_(True)
    if params_hash(new.encoder_parameters()) != enc_hash:
        raise TrainingError("encoder parameters changed during decoder retraining")
    return new, history


@torch.no_grad()
def reconstruction_l1(model: ConvAutoencoder, images, batch_size: int = 256) -> float:
    """Mean absolute pixel error of deterministic (z = mu) reconstructions."""
    model.eval()
    x_all = _as_float_tensor(images)
    total = 0.0
    for i in range(0, len(x_all), batch_size):
        x = x_all[i:i + batch_size]
        x_hat = model.decode(model.encode(x, sample=False).mu)
        total += float((x - x_hat).abs().mean()) * len(x)
    return total / len(x_all)


def measure_overhead(timings_pixel: RunTimings, timings_perc: RunTimings) -> float:
    """Percent extra time per epoch of perceptual over pixel-wise training (medians)."""
    a, b = timings_pixel.seconds_per_epoch, timings_perc.seconds_per_epoch
    if len(a) != len(b) or not a:
        raise ValueError(f"epoch counts differ or are empty: {len(a)} vs {len(b)}")
    return 100.0 * (float(np.median(b)) / float(np.median(a)) - 1.0)


def save_checkpoint(model: ConvAutoencoder, directory: str | Path, extra: dict | None = None) -> Path:
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    save_weights(directory / "model.pewt", {k: v.cpu().numpy() for k, v in model.state_dict().items()})
    manifest = {**model.manifest(), **(extra or {})}
    (directory / "manifest.json").write_text(json.dumps(manifest, indent=2, sort_keys=True, default=str))
    return directory


def load_checkpoint(directory: str | Path) -> tuple[ConvAutoencoder, dict]:
    directory = Path(directory)
    manifest = json.loads((directory / "manifest.json").read_text())
    model = ConvAutoencoder(manifest["z_size"], manifest["variational"], manifest["input_size"],
                            manifest["seed"], manifest.get("base_channels", 32))
    arrays = load_weights(directory / "model.pewt")
    model.load_state_dict({k: torch.from_numpy(v) for k, v in arrays.items()})
    model.eval()
    return model, manifest


def timings_to_dict(t: RunTimings) -> dict:
    return asdict(t)
