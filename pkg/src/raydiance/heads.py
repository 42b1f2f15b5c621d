"""Geometry and radiance heads on top of the ray features.

The geometry head scans the sample sequence front-to-back with a GRU so
each raw coefficient can condition on everything sampled before it, then
squashes through a 3-layer MLP ending in a sigmoid.  The radiance head is a
per-sample 2-layer MLP with a sigmoid output.
"""

from __future__ import annotations

import torch
import torch.nn.functional as F
from torch import nn


class GeometryHead(nn.Module):
    """(R, D, width) ray features -> (R, D) raw surface coefficients in (0, 1)."""

    def __init__(self, width: int, gru_hidden: int = 64, mlp_hidden: int = 64,
                 use_recurrence: bool = True, reverse_scan: bool = False):
        super().__init__()
        self.use_recurrence = use_recurrence
        self.reverse_scan = reverse_scan
        if use_recurrence:
            self.gru = nn.GRU(width, gru_hidden, num_layers=1, batch_first=True)
        else:
            # ablation: plain per-sample projection instead of the recurrence
            self.gru = None
            self.project = nn.Linear(width, gru_hidden)
        self.fc1 = nn.Linear(gru_hidden, mlp_hidden)
        self.fc2 = nn.Linear(mlp_hidden, mlp_hidden)
        self.fc3 = nn.Linear(mlp_hidden, 1)

    def forward(self, features: torch.Tensor) -> torch.Tensor:
        if features.ndim == 2:
            return self.forward(features[None])[0]
        if features.shape[1] == 0:
            raise ValueError("geometry head needs at least one sample")
        if self.gru is not None:
            x = features.flip(1) if self.reverse_scan else features
            h, _ = self.gru(x)  # zero initial hidden state
            if self.reverse_scan:
                h = h.flip(1)
        else:
            h = self.project(features)
        h = F.relu(self.fc1(h))
        h = F.relu(self.fc2(h))
        return torch.sigmoid(self.fc3(h)).squeeze(-1)


class RadianceHead(nn.Module):
    """(R, D, width) ray features -> (R, D, 3) per-sample colors in (0, 1)."""

    def __init__(self, width: int, hidden: int):
        super().__init__()
        self.fc1 = nn.Linear(width, hidden)
        self.fc2 = nn.Linear(hidden, 3)

    def forward(self, features: torch.Tensor) -> torch.Tensor:
        return torch.sigmoid(self.fc2(F.relu(self.fc1(features))))
