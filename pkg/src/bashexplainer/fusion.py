"""L2 normalization of sequence representations and the three-branch fusion
layer combining target-code and similar-code encoder states."""

from __future__ import annotations

import torch
import torch.nn as nn

from .layers import init_transformer_weights

NORM_EPS = 1e-12


def l2_normalize(states: torch.Tensor, eps: float = NORM_EPS) -> torch.Tensor:
    """Divide each position's vector by max(L2 norm, eps); zero rows stay zero."""
    norms = states.norm(dim=-1, keepdim=True).clamp_min(eps)
    return states / norms


def align_states(
    states: torch.Tensor, valid: torch.Tensor, positions: int
) -> tuple[torch.Tensor, torch.Tensor]:
    """Pad or truncate (batch, length, d) states to a fixed position count and
    zero every PAD position so it contributes nothing downstream."""
    batch, length, d_model = states.shape
    if length >= positions:
        states = states[:, :positions]
        valid = valid[:, :positions]
    else:
        pad = states.new_zeros(batch, positions - length, d_model)
        states = torch.cat([states, pad], dim=1)
        valid = torch.cat(
            [valid, torch.zeros(batch, positions - length, dtype=torch.bool, device=valid.device)],
            dim=1,
        )
    return states * valid.unsqueeze(-1).to(states.dtype), valid


class FusionLayer(nn.Module):
    """Three parallel affine maps over [concat; difference; elementwise product]
    pairings, merged by a fourth affine map. No nonlinearity."""

    def __init__(self, d_model: int):
        super().__init__()
        self.d_model = d_model
        self.branch_concat = nn.Linear(2 * d_model, d_model)
        self.branch_diff = nn.Linear(2 * d_model, d_model)
        self.branch_prod = nn.Linear(2 * d_model, d_model)
        self.merge = nn.Linear(3 * d_model, d_model)
        init_transformer_weights(self)

    def forward(self, v_tar: torch.Tensor, v_sim: torch.Tensor) -> torch.Tensor:
        if v_tar.shape != v_sim.shape:
            raise ValueError(f"shape mismatch: {tuple(v_tar.shape)} vs {tuple(v_sim.shape)}")
        g1 = self.branch_concat(torch.cat([v_tar, v_sim], dim=-1))
        g2 = self.branch_diff(torch.cat([v_tar, v_tar - v_sim], dim=-1))
        g3 = self.branch_prod(torch.cat([v_tar, v_tar * v_sim], dim=-1))
        return self.merge(torch.cat([g1, g2, g3], dim=-1))


class SimpleFusionLayer(nn.Module):
    """Ablation variant: a single affine map over the plain concatenation."""

    def __init__(self, d_model: int):
        super().__init__()
        self.d_model = d_model
        self.merge = nn.Linear(2 * d_model, d_model)
        init_transformer_weights(self)

    def forward(self, v_tar: torch.Tensor, v_sim: torch.Tensor) -> torch.Tensor:
        if v_tar.shape != v_sim.shape:
            raise ValueError(f"shape mismatch: {tuple(v_tar.shape)} vs {tuple(v_sim.shape)}")
        return self.merge(torch.cat([v_tar, v_sim], dim=-1))


def make_fusion(d_model: int, simple: bool = False) -> nn.Module:
    return SimpleFusionLayer(d_model) if simple else FusionLayer(d_model)
