"""Masked-self-attention transformer decoder cross-attending to a fused memory,
plus teacher-forced loss, greedy decoding, and beam search.

The search routines are model-agnostic: they drive a step function mapping a
batch of BOS-prefixed prefixes to next-token log-probabilities, so toy
probability tables and the real decoder share one code path.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Callable, NamedTuple, Sequence

import numpy as np
import torch
import torch.nn as nn
import torch.nn.functional as F

from .corpus import BOS_ID, EOS_ID, PAD_ID, TokenSequence
from .layers import (
    FeedForward,
    MultiHeadAttention,
    causal_mask,
    init_transformer_weights,
    key_padding_mask,
    sinusoidal_encoding,
)

StepFn = Callable[[Sequence[tuple[int, ...]]], np.ndarray]


@dataclass(frozen=True)
class DecoderConfig:
    num_layers: int = 2
    hidden_size: int = 128
    num_heads: int = 4
    feedforward_size: int = 256
    max_output_length: int = 16
    beam_size: int = 10
    dropout: float = 0.1

    def __post_init__(self):
        if self.hidden_size % self.num_heads != 0:
            raise ValueError(
                f"hidden_size {self.hidden_size} not divisible by num_heads {self.num_heads}"
            )
        if self.beam_size < 1:
            raise ValueError("beam_size must be at least 1")

    def to_dict(self) -> dict:
        return {
            "num_layers": self.num_layers,
            "hidden_size": self.hidden_size,
            "num_heads": self.num_heads,
            "feedforward_size": self.feedforward_size,
            "max_output_length": self.max_output_length,
            "beam_size": self.beam_size,
            "dropout": self.dropout,
        }


@dataclass(frozen=True)
class Hypothesis:
    """A BOS-prefixed candidate with per-token log-probabilities."""

    tokens: tuple[int, ...]
    logprobs: tuple[float, ...]
    score: float
    finished: bool

    def generated(self) -> tuple[int, ...]:
        """Tokens after BOS, without a terminal EOS."""
        out = self.tokens[1:]
        if out and out[-1] == EOS_ID:
            out = out[:-1]
        return out


class LossResult(NamedTuple):
    total: torch.Tensor
    per_token: torch.Tensor
    tokens: int


class DecoderLayer(nn.Module):
    """Masked self-attention, cross-attention over the memory, feed-forward;
    residual plus layer norm after each sublayer."""

    def __init__(self, cfg: DecoderConfig):
        super().__init__()
        self.self_attn = MultiHeadAttention(cfg.hidden_size, cfg.num_heads, cfg.dropout)
        self.cross_attn = MultiHeadAttention(cfg.hidden_size, cfg.num_heads, cfg.dropout)
        self.ffn = FeedForward(cfg.hidden_size, cfg.feedforward_size, cfg.dropout)
        self.norm1 = nn.LayerNorm(cfg.hidden_size)
        self.norm2 = nn.LayerNorm(cfg.hidden_size)
        self.norm3 = nn.LayerNorm(cfg.hidden_size)
        self.dropout = nn.Dropout(cfg.dropout)

    def forward(
        self,
        x: torch.Tensor,
        self_mask: torch.Tensor,
        memory: torch.Tensor,
        memory_mask: torch.Tensor,
    ) -> torch.Tensor:
        attn_out, _ = self.self_attn(x, x, x, self_mask)
        x = self.norm1(x + self.dropout(attn_out))
        cross_out, _ = self.cross_attn(x, memory, memory, memory_mask)
        x = self.norm2(x + self.dropout(cross_out))
        x = self.norm3(x + self.dropout(self.ffn(x)))
        return x


class TransformerDecoder(nn.Module):
    """Autoregressive decoder producing next-token logits over the vocabulary."""

    def __init__(self, cfg: DecoderConfig, vocab_size: int):
        super().__init__()
        self.cfg = cfg
        self.vocab_size = vocab_size
        self.embedding = nn.Embedding(vocab_size, cfg.hidden_size)
        self.register_buffer(
            "positions", sinusoidal_encoding(cfg.max_output_length, cfg.hidden_size)
        )
        self.input_dropout = nn.Dropout(cfg.dropout)
        self.blocks = nn.ModuleList(DecoderLayer(cfg) for _ in range(cfg.num_layers))
        self.out_proj = nn.Linear(cfg.hidden_size, vocab_size)
        init_transformer_weights(self)

    def forward(
        self,
        ids: torch.Tensor,
        valid: torch.Tensor,
        memory: torch.Tensor,
        memory_valid: torch.Tensor,
    ) -> torch.Tensor:
        """ids, valid: (batch, length); memory: (batch, mem_len, d)."""
        batch, length = ids.shape
        if length > self.cfg.max_output_length:
            raise ValueError(
                f"prefix length {length} exceeds max_output_length {self.cfg.max_output_length}"
            )
        if int(ids.max()) >= self.vocab_size or int(ids.min()) < 0:
            raise ValueError("token id outside the vocabulary")
        scale = math.sqrt(self.cfg.hidden_size)
        x = self.embedding(ids) * scale + self.positions[:length].to(ids.device)
        x = self.input_dropout(x)
        self_mask = causal_mask(length, device=ids.device) & key_padding_mask(valid)
        mem_mask = key_padding_mask(memory_valid)
        for block in self.blocks:
            x = block(x, self_mask, memory, mem_mask)
        return self.out_proj(x)

    def position_logprobs(
        self, memory: torch.Tensor, memory_valid: torch.Tensor, prefix: Sequence[int]
    ) -> torch.Tensor:
        """(length, vocab) next-token log-probabilities for every prefix position.

        memory is a single sequence (mem_len, d); memory_valid its validity row.
        """
        ids = torch.tensor([list(prefix)], dtype=torch.long)
        valid = torch.ones(1, len(prefix), dtype=torch.bool)
        logits = self.forward(ids, valid, memory.unsqueeze(0), memory_valid.unsqueeze(0))
        return F.log_softmax(logits[0], dim=-1)

    def step_fn(self, memory: torch.Tensor, memory_valid: torch.Tensor) -> StepFn:
        """Batched next-token scorer over one memory, for greedy/beam search."""

        def step(prefixes: Sequence[tuple[int, ...]]) -> np.ndarray:
            width = max(len(p) for p in prefixes)
            ids = torch.full((len(prefixes), width), PAD_ID, dtype=torch.long)
            valid = torch.zeros(len(prefixes), width, dtype=torch.bool)
            for row, prefix in enumerate(prefixes):
                ids[row, : len(prefix)] = torch.tensor(prefix, dtype=torch.long)
                valid[row, : len(prefix)] = True
            mem = memory.unsqueeze(0).expand(len(prefixes), -1, -1)
            mem_valid = memory_valid.unsqueeze(0).expand(len(prefixes), -1)
            with torch.no_grad():
                logits = self.forward(ids, valid, mem, mem_valid)
            rows = torch.stack(
                [logits[row, len(prefix) - 1] for row, prefix in enumerate(prefixes)]
            )
            return F.log_softmax(rows, dim=-1).double().numpy()

        return step


def decode_forward(
    decoder: TransformerDecoder,
    memory: torch.Tensor,
    memory_valid: torch.Tensor,
    prefix: TokenSequence,
) -> torch.Tensor:
    """Next-token log-probability distribution after a BOS-prefixed prefix."""
    if prefix.ids[0] != BOS_ID:
        raise ValueError("prefix must start with BOS")
    if prefix.length > decoder.cfg.max_output_length:
        raise ValueError("prefix longer than max_output_length")
    return decoder.position_logprobs(memory, memory_valid, prefix.ids[: prefix.length])[-1]


def sequence_loss(logits: torch.Tensor, targets: torch.Tensor) -> LossResult:
    """Cross entropy over non-PAD target positions: summed for gradients,
    averaged per token for reporting."""
    flat = logits.reshape(-1, logits.shape[-1])
    tgt = targets.reshape(-1)
    total = F.cross_entropy(flat, tgt, ignore_index=PAD_ID, reduction="sum")
    tokens = int((tgt != PAD_ID).sum())
    if tokens == 0:
        raise ValueError("loss over an empty target")
    return LossResult(total=total, per_token=total / tokens, tokens=tokens)


def teacher_forced_loss(
    decoder: TransformerDecoder,
    memory: torch.Tensor,
    memory_valid: torch.Tensor,
    target: TokenSequence,
) -> LossResult:
    """Single-sequence convenience wrapper: predict target[1:] from target[:-1]."""
    if target.length < 2:
        raise ValueError("target must contain BOS and at least one token")
    ids = torch.tensor([target.ids[: target.length]], dtype=torch.long)
    valid = torch.ones(1, target.length, dtype=torch.bool)
    logits = decoder(
        ids[:, :-1], valid[:, :-1], memory.unsqueeze(0), memory_valid.unsqueeze(0)
    )
    return sequence_loss(logits, ids[:, 1:])


def greedy_decode(
    step_fn: StepFn,
    max_length: int,
    bos_id: int = BOS_ID,
    eos_id: int = EOS_ID,
    forbidden_ids: Sequence[int] = (PAD_ID, BOS_ID),
) -> Hypothesis:
    """Argmax rollout; ties go to the smaller token id."""
    forbidden = set(forbidden_ids)
    tokens: tuple[int, ...] = (bos_id,)
    logprobs: list[float] = []
    score = 0.0
    for _ in range(max_length):
        row = np.array(step_fn([tokens])[0], dtype=np.float64)
        for tok in forbidden:
            row[tok] = -np.inf
        choice = int(np.argmax(row))
        tokens = tokens + (choice,)
        logprobs.append(float(row[choice]))
        score += float(row[choice])
        if choice == eos_id:
            break
    return Hypothesis(tokens=tokens, logprobs=tuple(logprobs), score=score, finished=True)


def beam_search(
    step_fn: StepFn,
    beam_size: int,
    max_length: int,
    bos_id: int = BOS_ID,
    eos_id: int = EOS_ID,
    forbidden_ids: Sequence[int] = (PAD_ID, BOS_ID),
) -> Hypothesis:
    """Beam search over cumulative log-probability, no length normalization.

    Each step ranks every expansion of the live beam by (score, then
    lexicographically smaller token ids) and keeps the top beam_size.
    Expansions ending in EOS, or reaching max_length generated tokens, are set
    aside as finished; the search stops once beam_size hypotheses have
    finished, the live beam empties, or max_length is reached. The best
    finished hypothesis wins, ties again toward smaller token ids.
    """
    if beam_size < 1:
        raise ValueError("beam_size must be at least 1")
    forbidden = set(forbidden_ids)
    live = [Hypothesis(tokens=(bos_id,), logprobs=(), score=0.0, finished=False)]
    finished: list[Hypothesis] = []
    for step in range(max_length):
        if not live:
            break
        rows = np.asarray(step_fn([h.tokens for h in live]), dtype=np.float64)
        candidates: list[tuple[float, tuple[int, ...], Hypothesis, float]] = []
        for hyp, row in zip(live, rows):
            order = np.argsort(-row, kind="stable")
            taken = 0
            for tok in order:
                tok = int(tok)
                if tok in forbidden:
                    continue
                lp = float(row[tok])
                candidates.append((hyp.score + lp, hyp.tokens + (tok,), hyp, lp))
                taken += 1
                if taken == beam_size:
                    break
        candidates.sort(key=lambda c: (-c[0], c[1]))
        live = []
        for score, tokens, parent, lp in candidates[:beam_size]:
            hyp = Hypothesis(
                tokens=tokens,
                logprobs=parent.logprobs + (lp,),
                score=score,
                finished=tokens[-1] == eos_id or len(tokens) - 1 == max_length,
            )
            if hyp.finished:
                finished.append(hyp)
            else:
                live.append(hyp)
        if len(finished) >= beam_size:
            break
    if not finished:
        finished = [
            Hypothesis(h.tokens, h.logprobs, h.score, True) for h in live
        ]
    finished.sort(key=lambda h: (-h.score, h.tokens))
    return finished[0]
