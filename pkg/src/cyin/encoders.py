"""Modality-specific sequence encoders mapping raw tokens to unimodal representations."""

from __future__ import annotations

import torch
import torch.nn as nn
import torch.nn.functional as F


class DimensionError(ValueError):
    pass


class ModalityEncoder(nn.Module):
    """Per-token affine map + nonlinearity + optional token-mixing layer.

    The mixer is selectable: "none" keeps the encoder purely per-token,
    "attention" adds one single-head self-attention layer, "gru" adds a
    unidirectional GRU. All variants are deterministic at evaluation.
    """

    def __init__(self, modality_id: int, in_dim: int, out_dim: int, mixer: str = "attention"):
        super().__init__()
        if mixer not in ("none", "attention", "gru"):
            raise ValueError(f"unknown mixer {mixer!r}")
        self.modality_id = modality_id
        self.in_dim = in_dim
        self.out_dim = out_dim
        self.mixer = mixer
        self.proj = nn.Linear(in_dim, out_dim)
        if mixer == "attention":
            self.w_q = nn.Linear(out_dim, out_dim, bias=False)
            self.w_k = nn.Linear(out_dim, out_dim, bias=False)
            self.w_v = nn.Linear(out_dim, out_dim, bias=False)
        elif mixer == "gru":
            self.gru = nn.GRU(out_dim, out_dim, batch_first=True)

    def forward(self, tokens: torch.Tensor) -> torch.Tensor:
        if tokens.shape[-1] != self.in_dim:
            raise DimensionError(
                f"modality {self.modality_id}: expected last dim {self.in_dim}, got {tokens.shape[-1]}"
            )
        h = torch.tanh(self.proj(tokens))
        if self.mixer == "attention":
            q, k, v = self.w_q(h), self.w_k(h), self.w_v(h)
            scale = self.out_dim ** 0.5
            attn = F.softmax(q @ k.transpose(-2, -1) / scale, dim=-1)
            h = h + attn @ v
        elif self.mixer == "gru":
            out, _ = self.gru(h)
            h = h + out
        return h
