"""Gated height-map encoder: compresses the map observations to 64 features.

The difference height map is stacked with the tool mask and passed through
one small CNN; the goal mask goes through a second CNN whose sigmoid output
gates the stacked features, amplifying them inside the goal area. The gated
64-vector is concatenated with the 6 tool position scalars, so the policy
input is always 70-dimensional. A plain variant without the gate (one CNN
over a 3-channel stack) serves as the ablation.
"""

from __future__ import annotations

import numpy as np
import torch
from torch import nn

GRID = 32
FEATURE_DIM = 64
SCALAR_DIM = 6
OUTPUT_DIM = FEATURE_DIM + SCALAR_DIM  # 70


class BranchCnn(nn.Module):
    """Two stride-2 conv layers, flatten, linear projection to 64."""

    def __init__(self, in_channels: int):
        super().__init__()
        self.conv = nn.Sequential(
            nn.Conv2d(in_channels, 16, kernel_size=3, stride=2),
            nn.ReLU(),
            nn.Conv2d(16, 32, kernel_size=3, stride=2),
            nn.ReLU(),
            nn.Flatten(),
        )
        with torch.no_grad():
            n_flat = self.conv(torch.zeros(1, in_channels, GRID, GRID)).shape[1]
        self.head = nn.Linear(n_flat, FEATURE_DIM)

    def forward(self, x):
        return self.head(self.conv(x))


def _as_batched_maps(obs: dict, device, dtype) -> tuple[torch.Tensor, ...]:
    def t(key):
        arr = np.asarray(obs[key], dtype=np.float64)
        ten = torch.as_tensor(arr, device=device, dtype=dtype)
        return ten.unsqueeze(0) if ten.dim() == 2 else ten
    scalars = torch.as_tensor(np.asarray(obs["scalars"], dtype=np.float64),
                              device=device, dtype=dtype)
    if scalars.dim() == 1:
        scalars = scalars.unsqueeze(0)
    return t("diff_map"), t("ee_mask"), t("goal_mask"), scalars


class GatedHeightmapEncoder(nn.Module):
    def __init__(self):
        super().__init__()
        self.stack_cnn = BranchCnn(in_channels=2)
        self.mask_cnn = BranchCnn(in_channels=1)

    def forward(self, diff_map, ee_mask, goal_mask, scalars):
        stacked = torch.stack([diff_map, ee_mask], dim=1)
        features = self.stack_cnn(stacked)
        gate = torch.sigmoid(self.mask_cnn(goal_mask.unsqueeze(1)))
        return torch.cat([features * gate, scalars], dim=1)

    def encode(self, obs: dict) -> np.ndarray:
        """Single-observation convenience wrapper; returns the 70-vector."""
        dtype = next(self.parameters()).dtype
        device = next(self.parameters()).device
        with torch.no_grad():
            out = self(*_as_batched_maps(obs, device, dtype))
        return out[0].cpu().numpy()


class PlainCnnEncoder(nn.Module):
    """Ablation without the gating mechanism: one CNN over 3 channels."""

    def __init__(self):
        super().__init__()
        self.cnn = BranchCnn(in_channels=3)

    def forward(self, diff_map, ee_mask, goal_mask, scalars):
        stacked = torch.stack([diff_map, ee_mask, goal_mask], dim=1)
        return torch.cat([self.cnn(stacked), scalars], dim=1)

    def encode(self, obs: dict) -> np.ndarray:
        dtype = next(self.parameters()).dtype
        device = next(self.parameters()).device
        with torch.no_grad():
            out = self(*_as_batched_maps(obs, device, dtype))
        return out[0].cpu().numpy()


ENCODERS = {"gated": GatedHeightmapEncoder, "plain": PlainCnnEncoder}


def make_encoder(kind: str) -> nn.Module:
    if kind not in ENCODERS:
        raise ValueError(f"unknown encoder {kind!r}, expected one of {tuple(ENCODERS)}")
    return ENCODERS[kind]()
