"""Composite models: the plain seq2seq used to fit the code encoder, and the
retrieval-augmented model that fuses target and exemplar representations."""

from __future__ import annotations

import contextlib

import torch
import torch.nn as nn

from .decoder import TransformerDecoder
from .encoder import TransformerEncoder
from .fusion import align_states, l2_normalize


class Seq2SeqModel(nn.Module):
    """Encoder plus auxiliary decoder for the code-to-comment warm-up stage."""

    def __init__(self, encoder: TransformerEncoder, decoder: TransformerDecoder):
        super().__init__()
        self.encoder = encoder
        self.decoder = decoder

    def forward(
        self,
        src_ids: torch.Tensor,
        src_valid: torch.Tensor,
        tgt_ids: torch.Tensor,
        tgt_valid: torch.Tensor,
    ) -> torch.Tensor:
        states, _ = self.encoder(src_ids, src_valid)
        return self.decoder(tgt_ids, tgt_valid, states[-1], src_valid)


class RagModel(nn.Module):
    """Encoder -> align/normalize -> fusion -> decoder over the fused memory.

    The fused memory aligns both codes to the encoder's max_input_length and
    masks cross-attention to positions where neither code has a token.
    """

    def __init__(
        self,
        encoder: TransformerEncoder,
        fusion: nn.Module | None,
        decoder: TransformerDecoder | None,
        normalize: bool = True,
    ):
        super().__init__()
        self.encoder = encoder
        self.fusion = fusion
        self.decoder = decoder
        self.normalize = normalize

    def fuse_memory(
        self,
        tar_ids: torch.Tensor,
        tar_valid: torch.Tensor,
        sim_ids: torch.Tensor,
        sim_valid: torch.Tensor,
        encoder_grad: bool = False,
    ) -> tuple[torch.Tensor, torch.Tensor]:
        """(fused memory, validity) of shape (batch, max_input_length, d)."""
        if self.fusion is None:
            raise RuntimeError("model has no fusion layer (retrieval-only configuration)")
        ctx = contextlib.nullcontext() if encoder_grad else torch.no_grad()
        with ctx:
            tar_states, _ = self.encoder(tar_ids, tar_valid)
            sim_states, _ = self.encoder(sim_ids, sim_valid)
        positions = self.encoder.cfg.max_input_length
        m_tar, tar_mask = align_states(tar_states[-1], tar_valid, positions)
        m_sim, sim_mask = align_states(sim_states[-1], sim_valid, positions)
        if self.normalize:
            m_tar = l2_normalize(m_tar)
            m_sim = l2_normalize(m_sim)
        fused = self.fusion(m_tar, m_sim)
        return fused, tar_mask | sim_mask

    def forward(
        self,
        tar_ids: torch.Tensor,
        tar_valid: torch.Tensor,
        sim_ids: torch.Tensor,
        sim_valid: torch.Tensor,
        tgt_ids: torch.Tensor,
        tgt_valid: torch.Tensor,
        encoder_grad: bool = False,
    ) -> torch.Tensor:
        if self.decoder is None:
            raise RuntimeError("model has no decoder (retrieval-only configuration)")
        memory, memory_valid = self.fuse_memory(
            tar_ids, tar_valid, sim_ids, sim_valid, encoder_grad=encoder_grad
        )
        return self.decoder(tgt_ids, tgt_valid, memory, memory_valid)
