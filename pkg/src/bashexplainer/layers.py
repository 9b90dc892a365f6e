"""Transformer building blocks shared by the encoder and decoder stacks."""

from __future__ import annotations

import math

import torch
import torch.nn as nn


def sinusoidal_encoding(max_len: int, d_model: int) -> torch.Tensor:
    """Parameter-free sin/cos position table of shape (max_len, d_model)."""
    position = torch.arange(max_len, dtype=torch.float32).unsqueeze(1)
    div_term = torch.exp(
        torch.arange(0, d_model, 2, dtype=torch.float32) * (-math.log(10000.0) / d_model)
    )
    table = torch.zeros(max_len, d_model)
    table[:, 0::2] = torch.sin(position * div_term)
    table[:, 1::2] = torch.cos(position * div_term[: d_model // 2])
    return table


class MultiHeadAttention(nn.Module):
    """Scaled dot-product attention over num_heads projections."""

    def __init__(self, d_model: int, num_heads: int, dropout: float = 0.0):
        super().__init__()
        if d_model % num_heads != 0:
            raise ValueError(f"d_model {d_model} not divisible by num_heads {num_heads}")
        self.d_model = d_model
        self.num_heads = num_heads
        self.d_head = d_model // num_heads
        self.wq = nn.Linear(d_model, d_model)
        self.wk = nn.Linear(d_model, d_model)
        self.wv = nn.Linear(d_model, d_model)
        self.wo = nn.Linear(d_model, d_model)
        self.dropout = nn.Dropout(dropout)

    def forward(
        self,
        query: torch.Tensor,
        key: torch.Tensor,
        value: torch.Tensor,
        mask: torch.Tensor | None = None,
        need_weights: bool = False,
    ) -> tuple[torch.Tensor, torch.Tensor | None]:
        """mask is boolean, True where attention is allowed, broadcastable to
        (batch, heads, query_len, key_len)."""
        batch, q_len, _ = query.shape
        k_len = key.shape[1]

        def split(x: torch.Tensor, length: int) -> torch.Tensor:
            return x.view(batch, length, self.num_heads, self.d_head).transpose(1, 2)

        q = split(self.wq(query), q_len)
        k = split(self.wk(key), k_len)
        v = split(self.wv(value), k_len)
        scores = (q @ k.transpose(-2, -1)) / math.sqrt(self.d_head)
        if mask is not None:
            scores = scores.masked_fill(~mask, float("-inf"))
        weights = torch.softmax(scores, dim=-1)
        weights = self.dropout(weights)
        out = weights @ v
        out = out.transpose(1, 2).contiguous().view(batch, q_len, self.d_model)
        return self.wo(out), (weights if need_weights else None)


class FeedForward(nn.Module):
    """Two-layer position-wise network with ReLU."""

    def __init__(self, d_model: int, d_ff: int, dropout: float = 0.0):
        super().__init__()
        self.linear1 = nn.Linear(d_model, d_ff)
        self.linear2 = nn.Linear(d_ff, d_model)
        self.dropout = nn.Dropout(dropout)

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        return self.linear2(self.dropout(torch.relu(self.linear1(x))))


def causal_mask(length: int, device: torch.device | None = None) -> torch.Tensor:
    """(1, 1, length, length) lower-triangular validity mask."""
    return torch.tril(torch.ones(length, length, dtype=torch.bool, device=device)).view(
        1, 1, length, length
    )


def key_padding_mask(valid: torch.Tensor) -> torch.Tensor:
    """(batch, positions) validity flags -> (batch, 1, 1, positions) attention mask."""
    return valid.view(valid.shape[0], 1, 1, valid.shape[1])


def init_transformer_weights(module: nn.Module) -> None:
    """Fan-scaled uniform init for matrices, zeros for biases."""
    for param in module.parameters():
        if param.dim() > 1:
            nn.init.xavier_uniform_(param)
        else:
            nn.init.zeros_(param)
