"""Pairwise cross-modal attention fusion, prediction head, and task losses."""

from __future__ import annotations

import torch
import torch.nn as nn
import torch.nn.functional as F


class FusionConfigError(ValueError):
    pass


def pair_order(num_modalities: int) -> list[tuple[int, int]]:
    """Deterministic unordered-pair enumeration: chain-adjacent pairs first,
    then the remaining pairs in lexicographic order. For U=3 this yields
    (0,1), (1,2), (0,2)."""
    chain = [(i, i + 1) for i in range(num_modalities - 1)]
    rest = sorted(
        (j, k)
        for j in range(num_modalities)
        for k in range(j + 1, num_modalities)
        if k != j + 1
    )
    return chain + rest


class CrossModalAttentionLayer(nn.Module):
    """One multi-head cross-attention block: queries from the evolving stream,
    keys/values from the other modality, scaled by 1/sqrt(C_B).

    With literal_norm the residual adds the layer-normalized incoming
    stream (Z = Y + LN(X); M = FF(LN(Z)) + LN(Z)); the post-norm switch
    uses the conventional Z = LN(Y + X); M = LN(FF(Z) + Z).
    """

    def __init__(self, dim: int, num_heads: int, ff_hidden: int, literal_norm: bool = True):
        super().__init__()
        if dim % num_heads != 0:
            raise FusionConfigError(f"latent dim {dim} not divisible by {num_heads} heads")
        self.dim = dim
        self.num_heads = num_heads
        self.head_dim = dim // num_heads
        self.literal_norm = literal_norm
        self.w_q = nn.Linear(dim, dim, bias=False)
        self.w_k = nn.Linear(dim, dim, bias=False)
        self.w_v = nn.Linear(dim, dim, bias=False)
        self.w_o = nn.Linear(dim, dim, bias=False)
        self.norm1 = nn.LayerNorm(dim)
        self.norm2 = nn.LayerNorm(dim)
        self.ff = nn.Sequential(nn.Linear(dim, ff_hidden), nn.ReLU(), nn.Linear(ff_hidden, dim))

    def attention(self, query_tokens: torch.Tensor, kv_tokens: torch.Tensor) -> torch.Tensor:
        """Raw multi-head attention output (pre-residual), heads re-concatenated through W_o."""
        *lead, Lq, _ = query_tokens.shape
        Lk = kv_tokens.shape[-2]
        H, D = self.num_heads, self.head_dim
        q = self.w_q(query_tokens).reshape(*lead, Lq, H, D).transpose(-3, -2)
        k = self.w_k(kv_tokens).reshape(*lead, Lk, H, D).transpose(-3, -2)
        v = self.w_v(kv_tokens).reshape(*lead, Lk, H, D).transpose(-3, -2)
        scores = q @ k.transpose(-2, -1) / (self.dim ** 0.5)
        attn = F.softmax(scores, dim=-1)
        out = (attn @ v).transpose(-3, -2).reshape(*lead, Lq, self.dim)
        return self.w_o(out)

    def forward(self, query_tokens: torch.Tensor, kv_tokens: torch.Tensor) -> torch.Tensor:
        if query_tokens.shape[-1] != kv_tokens.shape[-1]:
            raise FusionConfigError("query and key/value latents must share the channel dim")
        y = self.attention(query_tokens, kv_tokens)
        if self.literal_norm:
            z = y + self.norm1(query_tokens)
            z_n = self.norm2(z)
            return self.ff(z_n) + z_n
        z = self.norm1(y + query_tokens)
        return self.norm2(self.ff(z) + z)


class PairFusion(nn.Module):
    """Stack of cross-modal attention blocks for one modality pair, reduced to a vector."""

    def __init__(self, dim: int, num_heads: int, num_layers: int, ff_hidden: int,
                 literal_norm: bool = True, symmetric: bool = False, reduce: str = "last"):
        super().__init__()
        self.reduce = reduce
        self.symmetric = symmetric
        self.layers = nn.ModuleList(
            CrossModalAttentionLayer(dim, num_heads, ff_hidden, literal_norm)
            for _ in range(num_layers)
        )
        if symmetric:
            self.layers_rev = nn.ModuleList(
                CrossModalAttentionLayer(dim, num_heads, ff_hidden, literal_norm)
                for _ in range(num_layers)
            )

    def _run(self, layers, query, kv):
        stream = query
        for layer in layers:
            stream = layer(stream, kv)
        if self.reduce == "last":
            return stream[..., -1, :]
        return stream.mean(dim=-2)

    def forward(self, latent_j: torch.Tensor, latent_k: torch.Tensor) -> torch.Tensor:
        out = self._run(self.layers, latent_j, latent_k)
        if self.symmetric:
            out = out + self._run(self.layers_rev, latent_k, latent_j)
        return out


class FusionDecoder(nn.Module):
    """All-pairs cross-modal fusion producing the concatenated multimodal vector."""

    def __init__(self, num_modalities: int, dim: int, num_heads: int, num_layers: int,
                 ff_hidden: int, literal_norm: bool = True, symmetric: bool = False,
                 reduce: str = "last"):
        super().__init__()
        self.num_modalities = num_modalities
        self.pairs = pair_order(num_modalities)
        self.pair_modules = nn.ModuleDict(
            {
                f"{j}|{k}": PairFusion(dim, num_heads, num_layers, ff_hidden,
                                       literal_norm, symmetric, reduce)
                for j, k in self.pairs
            }
        )
        self.out_dim = len(self.pairs) * dim

    def forward(self, latents: list[torch.Tensor]) -> torch.Tensor:
        if len(latents) != self.num_modalities:
            raise FusionConfigError(
                f"expected {self.num_modalities} latent matrices, got {len(latents)}"
            )
        fused = [
            self.pair_modules[f"{j}|{k}"](latents[j], latents[k]) for j, k in self.pairs
        ]
        return torch.cat(fused, dim=-1)


class PredictionHead(nn.Module):
    """MLP over the fused vector; scalar for regression, probabilities for classification."""

    def __init__(self, in_dim: int, hidden_dim: int, task: str, num_classes: int = 0):
        super().__init__()
        self.task = task
        out_dim = 1 if task == "regression" else num_classes
        self.net = nn.Sequential(nn.Linear(in_dim, hidden_dim), nn.ReLU(), nn.Linear(hidden_dim, out_dim))

    def forward(self, fm: torch.Tensor) -> torch.Tensor:
        out = self.net(fm)
        if self.task == "regression":
            return out.squeeze(-1)
        return F.softmax(out, dim=-1)


def task_loss(pred: torch.Tensor, labels: torch.Tensor, task: str) -> torch.Tensor:
    """Batch-mean absolute error (regression) or cross-entropy on probabilities."""
    if task == "regression":
        if not labels.dtype.is_floating_point:
            raise TypeError("regression labels must be floating point")
        return torch.abs(labels - pred).mean()
    if task == "classification":
        if labels.dtype.is_floating_point:
            raise TypeError("classification labels must be integer class indices")
        logp = torch.log(pred.clamp_min(1e-12))
        return -logp.gather(-1, labels.unsqueeze(-1)).squeeze(-1).mean()
    raise TypeError(f"unknown task {task!r}")
