"""Transformer encoder for Bash code with per-layer hidden states and the
pooled semantic vector used for retrieval."""

from __future__ import annotations

import math
from dataclasses import dataclass

import torch
import torch.nn as nn

from .corpus import TokenSequence
from .layers import (
    FeedForward,
    MultiHeadAttention,
    init_transformer_weights,
    key_padding_mask,
    sinusoidal_encoding,
)


@dataclass(frozen=True)
class EncoderConfig:
    num_layers: int = 2
    hidden_size: int = 128
    num_heads: int = 4
    feedforward_size: int = 256
    max_input_length: int = 32
    dropout: float = 0.1

    def __post_init__(self):
        if self.hidden_size % self.num_heads != 0:
            raise ValueError(
                f"hidden_size {self.hidden_size} not divisible by num_heads {self.num_heads}"
            )
        if self.max_input_length < 2:
            raise ValueError("max_input_length must be at least 2")

    def to_dict(self) -> dict:
        return {
            "num_layers": self.num_layers,
            "hidden_size": self.hidden_size,
            "num_heads": self.num_heads,
            "feedforward_size": self.feedforward_size,
            "max_input_length": self.max_input_length,
            "dropout": self.dropout,
        }


@dataclass
class HiddenStates:
    """All n+1 layer outputs for one sequence: layers[0] is the position-augmented
    embedding, layers[-1] the final encoder state. Each entry is (length, d_model)."""

    layers: list[torch.Tensor]
    pad_mask: torch.Tensor  # (length,) True at non-PAD positions

    @property
    def final(self) -> torch.Tensor:
        return self.layers[-1]


class EncoderLayer(nn.Module):
    """Self-attention + feed-forward, each with residual then layer norm."""

    def __init__(self, cfg: EncoderConfig):
        super().__init__()
        self.attn = MultiHeadAttention(cfg.hidden_size, cfg.num_heads, cfg.dropout)
        self.ffn = FeedForward(cfg.hidden_size, cfg.feedforward_size, cfg.dropout)
        self.norm1 = nn.LayerNorm(cfg.hidden_size)
        self.norm2 = nn.LayerNorm(cfg.hidden_size)
        self.dropout = nn.Dropout(cfg.dropout)

    def forward(
        self, x: torch.Tensor, mask: torch.Tensor, need_weights: bool = False
    ) -> tuple[torch.Tensor, torch.Tensor | None]:
        attn_out, weights = self.attn(x, x, x, mask, need_weights=need_weights)
        x = self.norm1(x + self.dropout(attn_out))
        x = self.norm2(x + self.dropout(self.ffn(x)))
        return x, weights


class TransformerEncoder(nn.Module):
    """Maps token ids to the stack of hidden states h^0 .. h^n."""

    def __init__(self, cfg: EncoderConfig, vocab_size: int):
        super().__init__()
        self.cfg = cfg
        self.vocab_size = vocab_size
        self.embedding = nn.Embedding(vocab_size, cfg.hidden_size)
        self.register_buffer(
            "positions", sinusoidal_encoding(cfg.max_input_length, cfg.hidden_size)
        )
        self.input_dropout = nn.Dropout(cfg.dropout)
        self.blocks = nn.ModuleList(EncoderLayer(cfg) for _ in range(cfg.num_layers))
        init_transformer_weights(self)

    def forward(
        self,
        ids: torch.Tensor,
        valid: torch.Tensor,
        need_weights: bool = False,
    ) -> tuple[list[torch.Tensor], list[torch.Tensor] | None]:
        """ids, valid: (batch, length). Returns ([h^0 .. h^n], attention weights)."""
        batch, length = ids.shape
        if length > self.cfg.max_input_length:
            raise ValueError(
                f"sequence length {length} exceeds max_input_length {self.cfg.max_input_length}"
            )
        if int(ids.max()) >= self.vocab_size or int(ids.min()) < 0:
            raise ValueError("token id outside the vocabulary")
        scale = math.sqrt(self.cfg.hidden_size)
        x = self.embedding(ids) * scale + self.positions[:length].to(ids.device)
        x = self.input_dropout(x)
        states = [x]
        mask = key_padding_mask(valid)
        all_weights: list[torch.Tensor] = []
        for block in self.blocks:
            x, weights = block(x, mask, need_weights=need_weights)
            states.append(x)
            if need_weights:
                all_weights.append(weights)
        return states, (all_weights if need_weights else None)

    def encode(self, tokens: TokenSequence) -> HiddenStates:
        """Single-sequence encoding; deterministic when the module is in eval mode."""
        ids = torch.tensor([tokens.ids], dtype=torch.long)
        valid = torch.tensor([[i < tokens.length for i in range(len(tokens.ids))]])
        states, _ = self.forward(ids, valid)
        return HiddenStates(layers=[s[0] for s in states], pad_mask=valid[0])


def semantic_vector(states: HiddenStates) -> torch.Tensor:
    """Mean over non-PAD positions of (h^0 + h^n); the retrieval-space vector."""
    if not bool(states.pad_mask.any()):
        raise ValueError("cannot pool an all-PAD sequence")
    summed = states.layers[0] + states.layers[-1]
    return summed[states.pad_mask].mean(dim=0)


def semantic_vectors_batch(
    encoder: TransformerEncoder, sequences: list[TokenSequence], batch_size: int = 64
) -> torch.Tensor:
    """Stacked semantic vectors for many sequences, computed without gradients."""
    out = []
    was_training = encoder.training
    encoder.eval()
    with torch.no_grad():
        for start in range(0, len(sequences), batch_size):
            chunk = sequences[start : start + batch_size]
            width = max(s.length for s in chunk)
            ids = torch.tensor([s.pad_to(width).ids for s in chunk], dtype=torch.long)
            valid = torch.tensor([[i < s.length for i in range(width)] for s in chunk])
            states, _ = encoder(ids, valid)
            pooled = states[0] + states[-1]
            mask = valid.unsqueeze(-1).to(pooled.dtype)
            vec = (pooled * mask).sum(dim=1) / mask.sum(dim=1)
            out.append(vec)
    if was_training:
        encoder.train()
    return torch.cat(out, dim=0)
