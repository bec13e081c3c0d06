"""Reconstruction losses and the KL regulariser.

``elementwise_loss`` compares pixels directly; ``perceptual_loss`` compares
the frozen extractor's activations of target and reconstruction. Both
apply squared error per element and reduce by mean (default) or sum.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import torch

from .perceptual import PerceptualExtractor, extract_features

REDUCTIONS = ("mean", "sum")


def _as_tensor(a) -> torch.Tensor:
    return a if torch.is_tensor(a) else torch.as_tensor(np.asarray(a))


def _reduce(sq: torch.Tensor, reduction: str) -> torch.Tensor:
    if reduction == "mean":
        return sq.mean()
    if reduction == "sum":
        return sq.sum()
    raise ValueError(f"reduction must be one of {REDUCTIONS}, got {reduction!r}")


def elementwise_loss(x, x_hat, reduction: str = "mean") -> torch.Tensor:
    x, x_hat = _as_tensor(x), _as_tensor(x_hat)
    if x.shape != x_hat.shape:
        raise ValueError(f"shape mismatch: {tuple(x.shape)} vs {tuple(x_hat.shape)}")
    return _reduce((x - x_hat) ** 2, reduction)


def perceptual_loss(x, x_hat, extractor: PerceptualExtractor, reduction: str = "mean",
                    normalization: str | None = None) -> torch.Tensor:
    """Squared error between extractor features of ``x`` and ``x_hat``.

    The target features are computed without a graph; gradients reach
    ``x_hat`` only.
    """
    x, x_hat = _as_tensor(x), _as_tensor(x_hat)
    if x.shape != x_hat.shape:
        raise ValueError(f"shape mismatch: {tuple(x.shape)} vs {tuple(x_hat.shape)}")
    with torch.no_grad():
        target = extract_features(extractor, x, normalization)
    return _reduce((target - extract_features(extractor, x_hat, normalization)) ** 2, reduction)


def kl_loss(mu, logvar) -> torch.Tensor:
    """KL(N(mu, exp(logvar)) || N(0, 1)) summed over dimensions.

    For a batch (N, d) the per-sample sums are averaged over N.
    """
    mu, logvar = _as_tensor(mu), _as_tensor(logvar)
    if mu.shape != logvar.shape:
        raise ValueError(f"length mismatch: {tuple(mu.shape)} vs {tuple(logvar.shape)}")
    per_dim = 0.5 * (mu ** 2 + torch.exp(logvar) - 1.0 - logvar)
    if per_dim.dim() <= 1:
        return per_dim.sum()
    return per_dim.sum(dim=-1).mean()


@dataclass(frozen=True)
class LossSpec:
    kind: str = "pixelwise"  # "pixelwise" | "perceptual"
    f: str = "squared_error"
    reduction: str = "mean"
    kl_weight: float = 0.0
    extractor: PerceptualExtractor | None = None
    normalization: str | None = None

    def __post_init__(self):
        if self.kind not in ("pixelwise", "perceptual"):
            raise ValueError(f"unknown loss kind {self.kind!r}")
        if self.f != "squared_error":
            raise ValueError(f"unsupported element function {self.f!r}")
        if self.reduction not in REDUCTIONS:
            raise ValueError(f"reduction must be one of {REDUCTIONS}")
        if self.kl_weight < 0:
            raise ValueError("kl_weight must be >= 0")
        if (self.kind == "perceptual") != (self.extractor is not None):
            raise ValueError("perceptual loss needs an extractor and pixel-wise loss must not have one")


def recon_elements(spec: LossSpec, x: torch.Tensor) -> int:
    """Number of elements the reconstruction term compares per image (n or m)."""
    size = x.shape[-1]
    if spec.kind == "pixelwise":
        return 3 * size * size
    c, h, w = spec.extractor.output_shape(size)
    return c * h * w


def total_loss(spec: LossSpec, x, x_hat, code=None):
    """Return ``(total, {"recon": ..., "kl": ...})`` with total = recon + kl_weight * kl.

    With mean reduction the KL term is divided by the number of compared
    elements per image, so both terms are per-element averages and the
    objective stays the summed one up to a constant factor.
    """
    if spec.kind == "pixelwise":
        recon = elementwise_loss(x, x_hat, spec.reduction)
    else:
        recon = perceptual_loss(x, x_hat, spec.extractor, spec.reduction, spec.normalization)
    if code is None or spec.kl_weight == 0:
        kl = recon.new_zeros(())
    else:
        kl = kl_loss(code.mu, code.logvar)
        if spec.reduction == "mean":
            kl = kl / recon_elements(spec, _as_tensor(x))
        elif _as_tensor(x).dim() == 4:
            kl = kl * _as_tensor(x).shape[0]
    return recon + spec.kl_weight * kl, {"recon": recon, "kl": kl}
