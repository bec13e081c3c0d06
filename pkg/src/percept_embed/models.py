"""Convolutional autoencoder / VAE.

Encoder: stride-2 convolutions (32, 64, 128, 256 channels, kernel 4, no
padding, ReLU), flatten, then two affine heads for mu and logvar.
Decoder: affine z -> 1024, viewed as 1024x1x1, then stride-2 transposed
convolutions (128, 64, 32, 3 channels; kernels 5, 5, 6, 6) and a sigmoid.
The 96x96 variant adds one 256-channel conv to the encoder and one
256-channel transposed conv (kernel 3) at the front of the decoder:

    64:  64 -> 31 -> 14 -> 6 -> 2            1 -> 5 -> 13 -> 30 -> 64
    96:  96 -> 47 -> 22 -> 10 -> 4 -> 1      1 -> 3 -> 9 -> 21 -> 46 -> 96

A plain autoencoder is the same network with z = mu; the logvar head is
kept but unused and the KL term gets weight zero.
"""
from __future__ import annotations

import hashlib
from dataclasses import dataclass

import numpy as np
import torch
import torch.nn as nn

Z_SIZES = (32, 64, 128, 256, 512)
INPUT_SIZES = (64, 96)


@dataclass
class LatentCode:
    mu: torch.Tensor
    logvar: torch.Tensor
    z: torch.Tensor


def _conv_out(size: int, kernel: int, stride: int = 2, padding: int = 0) -> int:
    return (size + 2 * padding - kernel) // stride + 1


def _deconv_out(size: int, kernel: int, stride: int = 2) -> int:
    return (size - 1) * stride + kernel


class ConvAutoencoder(nn.Module):
    def __init__(self, z_size: int = 32, variational: bool = False, input_size: int = 64,
                 seed: int = 0, base_channels: int = 32):
        super().__init__()
        if z_size not in Z_SIZES:
            raise ValueError(f"z_size must be one of {Z_SIZES}, got {z_size}")
        if input_size not in INPUT_SIZES:
            raise ValueError(f"input_size must be one of {INPUT_SIZES}, got {input_size}")
        self.z_size = z_size
        self.variational = variational
        self.input_size = input_size
        self.seed = seed
        self.base_channels = c = base_channels

        enc_channels = [c, 2 * c, 4 * c, 8 * c] + ([8 * c] if input_size == 96 else [])
        layers, prev = [], 3
        for ch in enc_channels:
            layers += [nn.Conv2d(prev, ch, kernel_size=4, stride=2), nn.ReLU()]
            prev = ch
        self.encoder = nn.Sequential(*layers, nn.Flatten())
        s = input_size
        for _ in enc_channels:
            s = _conv_out(s, 4)
        flat = prev * s * s
        self.fc_mu = nn.Linear(flat, z_size)
        self.fc_logvar = nn.Linear(flat, z_size)

        self.dense_width = 32 * c
        if input_size == 64:
            dec = [(4 * c, 5), (2 * c, 5), (c, 6), (3, 6)]
        else:
            dec = [(8 * c, 3), (4 * c, 5), (2 * c, 5), (c, 6), (3, 6)]
        self.fc_dec = nn.Linear(z_size, self.dense_width)
        layers, prev = [], self.dense_width
        for i, (ch, k) in enumerate(dec):
            layers.append(nn.ConvTranspose2d(prev, ch, kernel_size=k, stride=2))
            layers.append(nn.ReLU() if i < len(dec) - 1 else nn.Sigmoid())
            prev = ch
        self.decoder = nn.Sequential(*layers)
        self.reset_parameters(seed)

    # -- initialisation ---------------------------------------------------

    @staticmethod
    def _init_modules(modules, generator: torch.Generator) -> None:
        """Seeded variance-preserving uniform init; biases start at zero.

        Weights feeding a ReLU use bound sqrt(6 / fan_in), others
        sqrt(3 / fan_in). For a stride-s transposed convolution each output
        pixel sees in_channels * k^2 / s^2 inputs on average, which is the
        fan-in used. A plain 1/sqrt(fan_in) bound shrinks activations at
        every layer; with this depth the codes of different images become
        nearly identical at initialisation and training collapses to the
        mean image.
        """
        modules = list(modules)
        with torch.no_grad():
            for i, m in enumerate(modules):
                if not isinstance(m, (nn.Conv2d, nn.ConvTranspose2d, nn.Linear)):
                    continue
                w = m.weight
                if isinstance(m, nn.ConvTranspose2d):
                    fan_in = w.shape[0] * int(np.prod(w.shape[2:])) / float(np.prod(m.stride))
                elif isinstance(m, nn.Conv2d):
                    fan_in = w.shape[1] * int(np.prod(w.shape[2:]))
                else:
                    fan_in = w.shape[1]
                relu_next = i + 1 < len(modules) and isinstance(modules[i + 1], nn.ReLU)
                bound = np.sqrt((6.0 if relu_next else 3.0) / fan_in)
                w.copy_(torch.rand(w.shape, generator=generator, dtype=torch.float64).mul(2 * bound).sub(bound))
                m.bias.zero_()

    def reset_parameters(self, seed: int) -> None:
        g = torch.Generator().manual_seed(seed)
        self._init_modules(list(self.encoder) + [self.fc_mu, self.fc_logvar], g)
        self.reset_decoder(seed)

    def reset_decoder(self, seed: int) -> None:
        g = torch.Generator().manual_seed(seed + 7919)
        self._init_modules([self.fc_dec] + list(self.decoder), g)

    def encoder_parameters(self):
        return [*self.encoder.parameters(), *self.fc_mu.parameters(), *self.fc_logvar.parameters()]

    def decoder_parameters(self):
        return [*self.fc_dec.parameters(), *self.decoder.parameters()]

    # -- passes -------------------------------------------------------------

    def _check_input(self, x: torch.Tensor) -> torch.Tensor:
        if x.dim() == 3:
            x = x.unsqueeze(0)
        s = self.input_size
        if x.dim() != 4 or tuple(x.shape[1:]) != (3, s, s):
            raise ValueError(f"expected input of shape (N, 3, {s}, {s}), got {tuple(x.shape)}")
        return x

    def encode(self, x: torch.Tensor, generator: torch.Generator | None = None, sample: bool = True) -> LatentCode:
        """Encode a batch. VAEs sample z = mu + exp(logvar/2) * eps unless ``sample`` is False."""
        x = self._check_input(x)
        h = self.encoder(x)
        mu, logvar = self.fc_mu(h), self.fc_logvar(h)
        if self.variational and sample:
            eps = torch.randn(mu.shape, generator=generator, dtype=mu.dtype)
            z = mu + torch.exp(0.5 * logvar) * eps
        else:
            z = mu
        return LatentCode(mu, logvar, z)

    def decode(self, z: torch.Tensor) -> torch.Tensor:
        single = z.dim() == 1
        if single:
            z = z.unsqueeze(0)
        if z.dim() != 2 or z.shape[1] != self.z_size:
            raise ValueError(f"expected z of length {self.z_size}, got shape {tuple(z.shape)}")
        h = self.fc_dec(z).view(z.shape[0], self.dense_width, 1, 1)
        out = self.decoder(h)
        return out[0] if single else out

    def forward(self, x: torch.Tensor, generator: torch.Generator | None = None):
        code = self.encode(x, generator)
        return self.decode(code.z), code

    @torch.no_grad()
    def embed(self, images, batch_size: int = 256) -> np.ndarray:
        """Deterministic embeddings (z = mu) for a float array of images."""
        was_training = self.training
        self.eval()
        out = []
        for i in range(0, len(images), batch_size):
            x = torch.as_tensor(np.asarray(images[i:i + batch_size]), dtype=torch.float32)
            out.append(self.encode(x, sample=False).mu.numpy())
        self.train(was_training)
        return np.concatenate(out) if out else np.zeros((0, self.z_size), np.float32)

    def encoder_trace(self) -> list[int]:
        """Spatial size after every encoder conv, starting with the input size."""
        sizes = [self.input_size]
        for m in self.encoder:
            if isinstance(m, nn.Conv2d):
                sizes.append(_conv_out(sizes[-1], m.kernel_size[0], m.stride[0]))
        return sizes

    def decoder_trace(self) -> list[int]:
        sizes = [1]
        for m in self.decoder:
            if isinstance(m, nn.ConvTranspose2d):
                sizes.append(_deconv_out(sizes[-1], m.kernel_size[0], m.stride[0]))
        return sizes

    def manifest(self) -> dict:
        return {"z_size": self.z_size, "variational": self.variational, "input_size": self.input_size,
                "seed": self.seed, "base_channels": self.base_channels}


def build_model(z_size: int, variational: bool, input_size: int = 64, seed: int = 0,
                base_channels: int = 32) -> ConvAutoencoder:
    return ConvAutoencoder(z_size, variational, input_size, seed, base_channels)


def params_hash(params) -> str:
    h = hashlib.sha256()
    for p in params:
        h.update(p.detach().cpu().numpy().tobytes())
    return h.hexdigest()


def encode(model: ConvAutoencoder, x, generator=None) -> LatentCode:
    return model.encode(torch.as_tensor(x), generator)


def decode(model: ConvAutoencoder, z) -> torch.Tensor:
    return model.decode(torch.as_tensor(z))


def forward(model: ConvAutoencoder, x, generator=None):
    return model(torch.as_tensor(x), generator)
