"""Cascaded residual autoencoder translators between modality latent spaces.

Each translator is a stack of residual autoencoder blocks applied per
token: block 1 consumes the input, block i > 1 consumes the input plus
the running sum of all previous block outputs, and the last block's
output is the translated latent.
"""

from __future__ import annotations

import torch
import torch.nn as nn

from cyin.bottleneck import BottleneckLatent, ArityError


class TranslatorConfigError(ValueError):
    pass


class ResidualAutoencoderBlock(nn.Module):
    """Affine encoder down a width schedule, pointwise nonlinearity, affine decoder back."""

    def __init__(self, dim: int, widths: list[int]):
        super().__init__()
        layers: list[nn.Module] = []
        prev = dim
        for w in widths:
            layers.append(nn.Linear(prev, w))
            layers.append(nn.Tanh())
            prev = w
        self.encoder = nn.Sequential(*layers)
        self.decoder = nn.Linear(prev, dim)

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        return self.decoder(self.encoder(x))


class CRATranslator(nn.Module):
    """Ordered-pair translator source -> target over C_B token vectors."""

    def __init__(self, source_id: int, target_id: int, dim: int, widths: list[int], num_blocks: int):
        super().__init__()
        if num_blocks < 1:
            raise TranslatorConfigError(f"num_blocks must be >= 1, got {num_blocks}")
        self.source_id = source_id
        self.target_id = target_id
        self.dim = dim
        self.blocks = nn.ModuleList(
            ResidualAutoencoderBlock(dim, widths) for _ in range(num_blocks)
        )

    def forward(self, latent_tokens: torch.Tensor) -> torch.Tensor:
        if latent_tokens.shape[-1] != self.dim:
            raise ValueError(f"expected last dim {self.dim}, got {latent_tokens.shape[-1]}")
        running = torch.zeros_like(latent_tokens)
        out = latent_tokens  # overwritten; num_blocks >= 1
        for block in self.blocks:
            out = block(latent_tokens + running)
            running = running + out
        return out


def cra_translate(translator: CRATranslator, latent_tokens: torch.Tensor) -> torch.Tensor:
    return translator(latent_tokens)


def forward_rec_loss(translated: torch.Tensor, original_target: BottleneckLatent) -> torch.Tensor:
    """MSE between translated tokens and the target's sampled latent tokens."""
    if translated.shape != original_target.sample.shape:
        raise ValueError(
            f"shape mismatch: translated {tuple(translated.shape)} vs target {tuple(original_target.sample.shape)}"
        )
    return ((original_target.sample - translated) ** 2).mean()


def reverse_cyc_loss(
    forward_translator: CRATranslator,
    reverse_translator: CRATranslator,
    source: BottleneckLatent,
) -> torch.Tensor:
    """Round-trip the source through both translators and compare to the original.

    The reverse translator must be the same module used for the T -> S
    forward direction (shared weights, not a copy).
    """
    if (
        forward_translator.source_id != reverse_translator.target_id
        or forward_translator.target_id != reverse_translator.source_id
    ):
        raise TranslatorConfigError(
            f"translator pair is not inverse: {forward_translator.source_id}->{forward_translator.target_id} "
            f"vs {reverse_translator.source_id}->{reverse_translator.target_id}"
        )
    rec = forward_translator(source.sample)
    cyc = reverse_translator(rec)
    return ((source.sample - cyc) ** 2).mean()


def combine_translations(
    remained_latents: dict[int, BottleneckLatent],
    missing_id: int,
    translators: dict[tuple[int, int], CRATranslator],
    mean_combine: bool = False,
    use_mean_path: bool = False,
) -> torch.Tensor:
    """Sum of per-source translations into the missing modality's latent space.

    `use_mean_path` feeds translator inputs from mu instead of the sample
    (deterministic inference). The optional mean combination divides by
    the number of sources; off by default.
    """
    if not remained_latents:
        raise ArityError("remained set must be nonempty")
    if missing_id in remained_latents:
        raise ArityError(f"missing modality {missing_id} appears in the remained set")
    total = None
    for j, latent in sorted(remained_latents.items()):
        tokens = latent.mu if use_mean_path else latent.sample
        out = translators[(j, missing_id)](tokens)
        total = out if total is None else total + out
    if mean_combine:
        total = total / len(remained_latents)
    return total


def translation_loss_components(
    latents: list[BottleneckLatent],
    translators: dict[tuple[int, int], CRATranslator],
) -> tuple[torch.Tensor, torch.Tensor]:
    """(forward reconstruction, reverse cyclic) losses averaged over ordered pairs."""
    U = len(latents)
    if U < 2:
        raise ArityError(f"translation loss needs >= 2 modalities, got {U}")
    for latent in latents:
        if latent is None:
            raise ArityError("translation loss requires the complete view (all latents present)")
    rec_terms, cyc_terms = [], []
    for s in range(U):
        for t in range(U):
            if s == t:
                continue
            fwd = translators[(s, t)]
            rev = translators[(t, s)]
            translated = fwd(latents[s].sample)
            rec_terms.append(forward_rec_loss(translated, latents[t]))
            cyc_terms.append(((latents[s].sample - rev(translated)) ** 2).mean())
    return torch.stack(rec_terms).mean(), torch.stack(cyc_terms).mean()


def translation_loss(
    latents: list[BottleneckLatent],
    translators: dict[tuple[int, int], CRATranslator],
) -> torch.Tensor:
    """Forward reconstruction plus reverse cyclic loss over all ordered pairs, averaged."""
    rec, cyc = translation_loss_components(latents, translators)
    return rec + cyc
