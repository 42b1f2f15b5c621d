"""U-shaped 1D convolutional feature extractor over the samples of a ray.

Stage 1: pointwise (kernel-1) layers lifting the embedding to `width`.
Stage 2: kernel-K stride-2 convolutions halving the sequence length, each
preceded activation kept as a skip.
Stage 3: linear-interpolation upsampling, skip concatenation, and a
pointwise layer restoring `width`.  Output length equals input length.
"""

from __future__ import annotations

import torch
import torch.nn.functional as F
from torch import nn

from .config import ConfigError, EncoderConfig


def receptive_field(config: EncoderConfig) -> int:
    """Receptive field (in samples) of one bottleneck feature."""
    rf, jump = 1, 1
    for _ in range(config.down_layers):
        rf += (config.kernel - 1) * jump
        jump *= 2
    return rf


def _fan_in_uniform_(weight: torch.Tensor, generator: torch.Generator) -> None:
    fan_in = weight[0].numel()
    bound = 1.0 / fan_in ** 0.5
    with torch.no_grad():
        weight.uniform_(-bound, bound, generator=generator)


class RayFeatureExtractor(nn.Module):
    """Maps per-sample embeddings (R, D, E) to ray features (R, D, width).

    D must be divisible by 2**down_layers so every downsampling step halves
    the length exactly.
    """

    def __init__(self, config: EncoderConfig, in_dim: int):
        super().__init__()
        config.validate()
        self.config = config
        self.in_dim = in_dim
        w, k = config.width, config.kernel

        point = []
        prev = in_dim
        for _ in range(config.point_layers):
            point.append(nn.Linear(prev, w))
            prev = w
        self.point_layers = nn.ModuleList(point)
        self.down_layers = nn.ModuleList(
            nn.Conv1d(w, w, k, stride=2, padding=(k - 1) // 2)
            for _ in range(config.down_layers))
        self.up_layers = nn.ModuleList(
            nn.Linear(2 * w, w) for _ in range(config.down_layers))

    def reset_parameters(self, seed: int) -> None:
        """Fan-in-scaled uniform weights, zero biases, deterministic in seed."""
        gen = torch.Generator().manual_seed(seed)
        for module in self.modules():
            if isinstance(module, (nn.Linear, nn.Conv1d)):
                _fan_in_uniform_(module.weight, gen)
                with torch.no_grad():
                    module.bias.zero_()

    def forward(self, embeddings: torch.Tensor) -> torch.Tensor:
        if embeddings.ndim == 2:
            return self.forward(embeddings[None])[0]
        n_samples = embeddings.shape[-2]
        down = len(self.down_layers)
        if n_samples % (1 << down) != 0:
            raise ValueError(
                f"sample count {n_samples} must be divisible by 2^{down} "
                f"for {down} downsampling layer(s)")

        h = embeddings
        for layer in self.point_layers:
            h = F.relu(layer(h))

        skips = []
        h = h.transpose(-1, -2)  # (R, C, D) for conv
        for conv in self.down_layers:
            skips.append(h)
            h = F.relu(conv(h))

        for linear in self.up_layers:
            h = F.interpolate(h, size=h.shape[-1] * 2, mode="linear", align_corners=True)
            h = torch.cat([h, skips.pop()], dim=-2)
            h = F.relu(linear(h.transpose(-1, -2)).transpose(-1, -2))
        return h.transpose(-1, -2)


def init_encoder(config: EncoderConfig, in_dim: int, seed: int) -> RayFeatureExtractor:
    """Build and deterministically initialize an extractor."""
    if config.kernel % 2 == 0:
        raise ConfigError("encoder.kernel: must be odd")
    enc = RayFeatureExtractor(config, in_dim)
    enc.reset_parameters(seed)
    return enc
