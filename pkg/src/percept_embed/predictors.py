"""Probes trained on frozen embeddings: an MLP hyperparameter grid and a linear regressor."""
from __future__ import annotations

import copy
import itertools
import json
import math
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np
import torch
import torch.nn as nn
import torch.nn.functional as F

from .weights_io import load_weights, save_weights

HIDDEN_SIZES = (32, 64, 128)
ACTIVATIONS = ("relu", "sigmoid")
OUTPUT_ACTIVATIONS = ("none", "softmax")


@dataclass(frozen=True)
class PredictorConfig:
    kind: str = "mlp"  # "mlp" | "linear"
    hidden: tuple[int, ...] = ()
    activation: str | None = "relu"
    output_activation: str = "none"
    input_dim: int = 32
    output_dim: int = 2

    def __post_init__(self):
        object.__setattr__(self, "hidden", tuple(self.hidden))
        if self.kind == "linear":
            if self.hidden or self.activation is not None:
                raise ValueError("a linear probe has no hidden layers or hidden activation")
        elif self.kind == "mlp":
            if not 1 <= len(self.hidden) <= 2 or any(h not in HIDDEN_SIZES for h in self.hidden):
                raise ValueError(f"mlp needs 1-2 hidden layers from {HIDDEN_SIZES}, got {self.hidden}")
            if len(self.hidden) == 2 and self.hidden[1] > self.hidden[0]:
                raise ValueError("second hidden layer may not be larger than the first")
            if self.activation not in ACTIVATIONS:
                raise ValueError(f"activation must be one of {ACTIVATIONS}")
        else:
            raise ValueError(f"unknown predictor kind {self.kind!r}")
        if self.output_activation not in OUTPUT_ACTIVATIONS:
            raise ValueError(f"output_activation must be one of {OUTPUT_ACTIVATIONS}")

    @property
    def name(self) -> str:
        if self.kind == "linear":
            return "linear"
        return f"mlp[{'x'.join(map(str, self.hidden))}]-{self.activation}-{self.output_activation}"


def enumerate_mlp_grid(input_dim: int = 32, output_dim: int = 2) -> list[PredictorConfig]:
    """All 36 MLP configs in a fixed order: layout, then activation, then output activation."""
    layouts = [(h,) for h in HIDDEN_SIZES] + [
        (h1, h2) for h1 in HIDDEN_SIZES for h2 in HIDDEN_SIZES if h2 <= h1
    ]
    return [
        PredictorConfig("mlp", hidden, act, out, input_dim, output_dim)
        for hidden, act, out in itertools.product(layouts, ACTIVATIONS, OUTPUT_ACTIVATIONS)
    ]


def linear_config(input_dim: int = 32, output_dim: int = 2) -> PredictorConfig:
    return PredictorConfig("linear", (), None, "none", input_dim, output_dim)


@dataclass(frozen=True)
class ProbeTrainConfig:
    lr: float = 1e-3
    batch_size: int = 256
    max_epochs: int = 200
    patience: int = 10


def _build_net(config: PredictorConfig) -> nn.Sequential:
    layers, prev = [], config.input_dim
    for h in config.hidden:
        layers += [nn.Linear(prev, h), nn.ReLU() if config.activation == "relu" else nn.Sigmoid()]
        prev = h
    layers.append(nn.Linear(prev, config.output_dim))
    if config.output_activation == "softmax":
        layers.append(nn.Softmax(dim=-1))
    return nn.Sequential(*layers)


@dataclass
class TrainedPredictor:
    config: PredictorConfig
    task: str  # "positioning" | "classification"
    state: dict  # name -> np.ndarray
    x_mean: np.ndarray
    x_std: np.ndarray
    y_mean: np.ndarray
    y_std: np.ndarray
    val_loss: float
    history: list = field(default_factory=list)
    failed: bool = False
    grid_index: int = 0

    def _net(self) -> nn.Sequential:
        net = _build_net(self.config)
        net.load_state_dict({k: torch.from_numpy(np.asarray(v)) for k, v in self.state.items()})
        net.eval()
        return net

    @torch.no_grad()
    def outputs(self, embeddings) -> np.ndarray:
        """Raw network outputs; de-standardised for positioning."""
        e = np.asarray(embeddings, dtype=np.float64)
        if e.ndim != 2 or e.shape[1] != self.config.input_dim:
            raise ValueError(f"expected embeddings of shape (N, {self.config.input_dim}), got {e.shape}")
        x = torch.as_tensor((e - self.x_mean) / self.x_std, dtype=torch.float32)
        out = self._net()(x).numpy().astype(np.float64)
        if self.task == "positioning":
            out = out * self.y_std + self.y_mean
        return out

    @classmethod
    def from_linear(cls, weight, bias, task: str = "positioning") -> "TrainedPredictor":
        """Wrap a fixed affine map ``y = W z + b`` (no standardisation)."""
        weight = np.asarray(weight, dtype=np.float32)
        bias = np.asarray(bias, dtype=np.float32)
        out_dim, in_dim = weight.shape
        cfg = linear_config(in_dim, out_dim)
        return cls(cfg, task, {"0.weight": weight, "0.bias": bias}, np.zeros(in_dim), np.ones(in_dim),
                   np.zeros(out_dim), np.ones(out_dim), float("nan"))


def predict(trained: TrainedPredictor, embeddings) -> np.ndarray:
    """(x, y) rows for positioning, argmax class ids for classification."""
    out = trained.outputs(embeddings)
    if trained.task == "classification":
        return out.argmax(axis=1)
    return out


def _task_of(labels: np.ndarray) -> str:
    return "positioning" if labels.ndim == 2 else "classification"


def _default_split(n: int, seed: int):
    from .datasets import split_indices

    return split_indices(n, seed)


def _standardise(x: np.ndarray):
    mean = x.mean(axis=0)
    std = x.std(axis=0)
    std[std < 1e-8] = 1.0
    return mean, std


def train_predictor(config: PredictorConfig, embeddings, labels, seed: int = 0, split=None,
                    train_cfg: ProbeTrainConfig | None = None, num_classes: int | None = None) -> TrainedPredictor:
    """Fit one probe and return its best-validation snapshot.

    ``labels`` is (N, 2) float coordinates for positioning or (N,) int
    class ids for classification. ``split`` is an optional (train_idx,
    val_idx) pair; by default a seeded 80/20 sample split is drawn.
    """
    emb = np.asarray(embeddings, dtype=np.float64)
    labels = np.asarray(labels)
    task = _task_of(labels)
    if emb.ndim != 2 or emb.shape[1] != config.input_dim or len(emb) != len(labels):
        raise ValueError(f"embeddings {emb.shape} do not match input_dim {config.input_dim} / {len(labels)} labels")
    if task == "classification":
        labels = labels.astype(np.int64)
        if len(np.unique(labels)) < 2:
            raise ValueError("degenerate labels: only one class present")
        num_classes = num_classes or int(labels.max()) + 1
        if config.output_dim != num_classes:
            raise ValueError(f"output_dim {config.output_dim} != {num_classes} classes")
    tr, va = split if split is not None else _default_split(len(emb), seed)
    tr, va = np.asarray(tr), np.asarray(va)
    if len(tr) == 0 or len(va) == 0:
        raise ValueError("empty train or validation split")

    x_mean, x_std = _standardise(emb[tr])
    xs = (emb - x_mean) / x_std
    if task == "positioning":
        y_mean, y_std = _standardise(labels[tr].astype(np.float64))
        targets = (labels - y_mean) / y_std
    else:
        y_mean, y_std = np.zeros(config.output_dim), np.ones(config.output_dim)
        targets = np.eye(config.output_dim)[labels]

    if config.kind == "linear":
        state, val_loss, history = _fit_linear(xs, targets, labels, tr, va, task, y_std, seed, train_cfg)
    else:
        state, val_loss, history = _fit_mlp(config, xs, targets, labels, tr, va, task, y_std, seed,
                                            train_cfg or ProbeTrainConfig())
    failed = not math.isfinite(val_loss)
    return TrainedPredictor(config, task, state, x_mean, x_std, y_mean, y_std,
                            val_loss if not failed else math.inf, history, failed)


def _val_loss(net, x, y_onehot, labels, task, y_std) -> float:
    with torch.no_grad():
        out = net(x)
        if task == "positioning":
            # squared pixel error, averaged over coordinates
            return float((((out - y_onehot) * torch.as_tensor(y_std, dtype=out.dtype)) ** 2).mean())
        return float(F.cross_entropy(out, labels))


def _fit_mlp(config, xs, targets, labels, tr, va, task, y_std, seed, cfg: ProbeTrainConfig):
    with torch.random.fork_rng():
        torch.manual_seed(seed)
        net = _build_net(config)
    x_tr = torch.as_tensor(xs[tr], dtype=torch.float32)
    x_va = torch.as_tensor(xs[va], dtype=torch.float32)
    y_tr = torch.as_tensor(targets[tr], dtype=torch.float32)
    y_va = torch.as_tensor(targets[va], dtype=torch.float32)
    l_tr = torch.as_tensor(labels[tr]) if task == "classification" else None
    l_va = torch.as_tensor(labels[va]) if task == "classification" else None
    opt = torch.optim.Adam(net.parameters(), lr=cfg.lr)
    gen = torch.Generator().manual_seed(seed)
    best, best_state, stale, history = math.inf, copy.deepcopy(net.state_dict()), 0, []
    for epoch in range(cfg.max_epochs):
        net.train()
        perm = torch.randperm(len(x_tr), generator=gen)
        for i in range(0, len(perm), cfg.batch_size):
            idx = perm[i:i + cfg.batch_size]
            out = net(x_tr[idx])
            # The task loss is applied to whatever the output layer emits, so a
            # softmax output feeds probabilities into cross-entropy.
            loss = F.mse_loss(out, y_tr[idx]) if task == "positioning" else F.cross_entropy(out, l_tr[idx])
            if not torch.isfinite(loss):
                return {k: v.numpy() for k, v in best_state.items()}, math.nan, history
            opt.zero_grad()
            loss.backward()
            opt.step()
        net.eval()
        v = _val_loss(net, x_va, y_va, l_va, task, y_std)
        history.append(v)
        if not math.isfinite(v):
            return {k: t.numpy() for k, t in best_state.items()}, math.nan, history
        if v < best:
            best, stale = v, 0
            best_state = copy.deepcopy(net.state_dict())
        else:
            stale += 1
            if stale >= cfg.patience:
                break
    return {k: v.numpy() for k, v in best_state.items()}, best, history


def _fit_linear(xs, targets, labels, tr, va, task, y_std, seed, train_cfg):
    a = np.hstack([xs[tr], np.ones((len(tr), 1))])
    try:
        sol, *_ = np.linalg.lstsq(a, targets[tr], rcond=None)
        if not np.all(np.isfinite(sol)):
            raise np.linalg.LinAlgError("non-finite least-squares solution")
        state = {"0.weight": sol[:-1].T.astype(np.float32), "0.bias": sol[-1].astype(np.float32)}
        history = []
    except np.linalg.LinAlgError:
        cfg = linear_config(xs.shape[1], targets.shape[1])
        # Gradient fallback on the same squared-error objective.
        state, _, history = _fit_mlp_linear(cfg, xs, targets, tr, va, seed, train_cfg or ProbeTrainConfig())
    w, b = state["0.weight"].astype(np.float64), state["0.bias"].astype(np.float64)
    pred = xs[va] @ w.T + b
    val = float((((pred - targets[va]) * (y_std if task == "positioning" else 1.0)) ** 2).mean())
    return state, val, history


def _fit_mlp_linear(cfg, xs, targets, tr, va, seed, train_cfg):
    labels = np.zeros(len(xs))
    return _fit_mlp(cfg, xs, targets, labels, tr, va, "positioning", np.ones(targets.shape[1]), seed, train_cfg)


def save_predictor(trained: TrainedPredictor, directory: str | Path) -> Path:
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    arrays = dict(trained.state)
    for k in ("x_mean", "x_std", "y_mean", "y_std"):
        arrays[f"norm.{k}"] = np.asarray(getattr(trained, k), dtype=np.float64)
    save_weights(directory / "probe.pewt", arrays)
    manifest = {"config": asdict(trained.config), "task": trained.task, "val_loss": trained.val_loss,
                "failed": trained.failed, "grid_index": trained.grid_index}
    (directory / "probe.json").write_text(json.dumps(manifest, indent=2, sort_keys=True))
    return directory


def load_predictor(directory: str | Path) -> TrainedPredictor:
    directory = Path(directory)
    manifest = json.loads((directory / "probe.json").read_text())
    arrays = load_weights(directory / "probe.pewt")
    norms = {k[5:]: arrays.pop(k) for k in list(arrays) if k.startswith("norm.")}
    return TrainedPredictor(PredictorConfig(**manifest["config"]), manifest["task"], arrays,
                            val_loss=manifest["val_loss"], failed=manifest["failed"],
                            grid_index=manifest["grid_index"], **norms)
