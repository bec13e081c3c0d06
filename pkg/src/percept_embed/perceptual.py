"""Frozen perceptual loss network.

AlexNet's convolutional prefix up to and including its second ReLU,
followed by a sigmoid::

    conv 3->64 k11 s4 p2 -> ReLU -> maxpool k3 s2 -> conv 64->192 k5 s1 p2 -> ReLU -> sigmoid

Weights come either from an ImageNet-pretrained AlexNet stored in the
container format of :mod:`percept_embed.weights_io`, or from a seeded
uniform initialisation with the same topology for hermetic runs.
"""
from __future__ import annotations

import hashlib
from pathlib import Path

import numpy as np
import torch
import torch.nn as nn
import torch.nn.functional as F

from .weights_io import load_weights, save_weights

INPUT_NORMS = ("raw01", "imagenet_stats")
IMAGENET_MEAN = (0.485, 0.456, 0.406)
IMAGENET_STD = (0.229, 0.224, 0.225)

EXPECTED_SHAPES = {
    "conv1.weight": (64, 3, 11, 11),
    "conv1.bias": (64,),
    "conv2.weight": (192, 64, 5, 5),
    "conv2.bias": (192,),
}

# Parameter names of torchvision's AlexNet -> names used here. Everything
# after features.3 (conv3 onwards, classifier) is dropped.
TORCHVISION_NAME_MAP = {
    "features.0.weight": "conv1.weight",
    "features.0.bias": "conv1.bias",
    "features.3.weight": "conv2.weight",
    "features.3.bias": "conv2.bias",
}


class ExtractorLoadError(ValueError):
    pass


class PerceptualExtractor(nn.Module):
    """Truncated AlexNet with an appended sigmoid. Parameters are frozen."""

    def __init__(self, widths=(64, 192), normalization: str = "raw01", source: str = "seeded_random",
                 input_sizes=(64, 96)):
        super().__init__()
        if normalization not in INPUT_NORMS:
            raise ValueError(f"normalization must be one of {INPUT_NORMS}, got {normalization!r}")
        c1, c2 = widths
        self.conv1 = nn.Conv2d(3, c1, kernel_size=11, stride=4, padding=2)
        self.conv2 = nn.Conv2d(c1, c2, kernel_size=5, stride=1, padding=2)
        self.normalization = normalization
        self.source = source
        self.input_sizes = tuple(input_sizes)
        self.register_buffer("mean", torch.tensor(IMAGENET_MEAN).view(1, 3, 1, 1))
        self.register_buffer("std", torch.tensor(IMAGENET_STD).view(1, 3, 1, 1))
        self.requires_grad_(False)
        self.eval()

    def train(self, mode: bool = True):
        # No dropout/batchnorm, but keep the module permanently in eval mode.
        return super().train(False)

    def forward(self, x: torch.Tensor, normalization: str | None = None) -> torch.Tensor:
        # Parameters are cast per call so one extractor serves any dtype
        # without being mutated.
        norm = normalization or self.normalization
        dt = x.dtype
        if norm == "imagenet_stats":
            x = (x - self.mean.to(dt)) / self.std.to(dt)
        h = F.relu(F.conv2d(x, self.conv1.weight.to(dt), self.conv1.bias.to(dt), stride=4, padding=2))
        h = F.max_pool2d(h, kernel_size=3, stride=2)
        h = F.relu(F.conv2d(h, self.conv2.weight.to(dt), self.conv2.bias.to(dt), stride=1, padding=2))
        return torch.sigmoid(h)

    def output_shape(self, size: int) -> tuple[int, int, int]:
        s = (size + 2 * 2 - 11) // 4 + 1
        s = (s - 3) // 2 + 1
        return self.conv2.out_channels, s, s

    def weights_hash(self) -> str:
        h = hashlib.sha256()
        for name, p in sorted(self.named_parameters()):
            h.update(name.encode())
            h.update(p.detach().cpu().numpy().tobytes())
        return h.hexdigest()

    def state_arrays(self) -> dict[str, np.ndarray]:
        return {n: p.detach().cpu().numpy() for n, p in self.named_parameters()}


def _assign(extractor: PerceptualExtractor, arrays: dict[str, np.ndarray]) -> None:
    with torch.no_grad():
        for name, p in extractor.named_parameters():
            p.copy_(torch.from_numpy(np.asarray(arrays[name], dtype=np.float32)))


def convert_torchvision_state(state: dict) -> dict[str, np.ndarray]:
    """Map a torchvision AlexNet state dict onto this module's parameter names."""
    out = {}
    for src, dst in TORCHVISION_NAME_MAP.items():
        if src in state:
            v = state[src]
            out[dst] = v.detach().cpu().numpy() if torch.is_tensor(v) else np.asarray(v)
    return out


def load_extractor(weights_file: str | Path, normalization: str = "raw01") -> PerceptualExtractor:
    arrays = load_weights(weights_file)
    # Accept torchvision naming as well; trailing layers are ignored either way.
    arrays = {**convert_torchvision_state(arrays), **{k: v for k, v in arrays.items() if k in EXPECTED_SHAPES}}
    problems = []
    for name, shape in EXPECTED_SHAPES.items():
        if name not in arrays:
            problems.append(f"{name}: expected {shape}, found nothing")
        elif tuple(arrays[name].shape) != shape:
            problems.append(f"{name}: expected {shape}, found {tuple(arrays[name].shape)}")
    if problems:
        raise ExtractorLoadError(f"{weights_file}: " + "; ".join(problems))
    ext = PerceptualExtractor(normalization=normalization, source="pretrained")
    _assign(ext, arrays)
    return ext


def random_extractor(seed: int, normalization: str = "raw01", widths=(64, 192),
                     input_sizes=(64, 96)) -> PerceptualExtractor:
    """Same topology with seeded He-uniform weights.

    Weights are U(-sqrt(6/fan_in), sqrt(6/fan_in)) and biases
    U(-1/sqrt(fan_in), 1/sqrt(fan_in)). The He bound keeps activations at
    unit scale through the two rectified layers; a 1/sqrt(fan_in) weight
    bound leaves every output close to sigmoid(0) and the features carry
    almost no contrast. ``widths`` and ``input_sizes`` exist so tests can
    build tiny variants.
    """
    ext = PerceptualExtractor(widths, normalization, f"seeded_random({seed})", input_sizes)
    rng = np.random.default_rng(seed)
    arrays = {}
    for conv in ("conv1", "conv2"):
        w = getattr(ext, conv).weight
        fan_in = np.prod(w.shape[1:])
        bound = np.sqrt(6.0 / fan_in)
        arrays[f"{conv}.weight"] = rng.uniform(-bound, bound, size=w.shape)
        arrays[f"{conv}.bias"] = rng.uniform(-1.0 / np.sqrt(fan_in), 1.0 / np.sqrt(fan_in), size=w.shape[0])
    _assign(ext, arrays)
    return ext


def save_extractor(extractor: PerceptualExtractor, path: str | Path) -> None:
    save_weights(path, extractor.state_arrays())


def extract_features(p: PerceptualExtractor, x: torch.Tensor, normalization: str | None = None) -> torch.Tensor:
    """Run the extractor on one image (3,H,W) or a batch (N,3,H,W).

    ``normalization`` overrides the extractor's own setting for this call.
    Gradients flow to ``x``; the extractor's parameters never require grad.
    """
    if not torch.is_tensor(x):
        x = torch.as_tensor(np.asarray(x))
    single = x.dim() == 3
    if single:
        x = x.unsqueeze(0)
    if x.dim() != 4 or x.shape[1] != 3 or x.shape[2] != x.shape[3] or x.shape[2] not in p.input_sizes:
        raise ValueError(f"unsupported input shape {tuple(x.shape[-3:])}; expected 3xSxS with S in {p.input_sizes}")
    if normalization is not None and normalization not in INPUT_NORMS:
        raise ValueError(f"normalization must be one of {INPUT_NORMS}")
    out = p(x, normalization)
    return out[0] if single else out
