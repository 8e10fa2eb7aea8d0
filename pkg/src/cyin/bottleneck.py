"""Gaussian bottleneck latents: encoders, reparameterized sampling, closed-form KL,
token-level losses with cyclic source/target enumeration, and label-level losses.

Reduction convention, fixed so the trade-off weight has a scale-stable
meaning across configurations: KL and reconstruction terms sum over
channels, then average over tokens, then over the batch.
"""

from __future__ import annotations

from dataclasses import dataclass

import torch
import torch.nn as nn
import torch.nn.functional as F

SIGMA_FLOOR = 1e-4


class NumericalError(ValueError):
    pass


class ArityError(ValueError):
    pass


@dataclass
class BottleneckLatent:
    """Per-token Gaussian parameters and a reparameterized sample, (N, L, C_B)."""

    mu: torch.Tensor
    sigma: torch.Tensor
    sample: torch.Tensor
    modality_id: int


class GaussianIBEncoder(nn.Module):
    """Maps unimodal token representations to per-token (mu, sigma).

    Sigma positivity comes from softplus plus a floor, preventing the
    log-variance singularity in the closed-form KL.
    """

    def __init__(self, modality_id: int, in_dim: int, bottleneck_dim: int, hidden_dim: int):
        super().__init__()
        self.modality_id = modality_id
        self.net = nn.Sequential(nn.Linear(in_dim, hidden_dim), nn.Tanh())
        self.mu_head = nn.Linear(hidden_dim, bottleneck_dim)
        self.sigma_head = nn.Linear(hidden_dim, bottleneck_dim)

    def forward(
        self,
        tokens: torch.Tensor,
        training: bool,
        generator: torch.Generator | None = None,
    ) -> BottleneckLatent:
        h = self.net(tokens)
        mu = self.mu_head(h)
        sigma = F.softplus(self.sigma_head(h)) + SIGMA_FLOOR
        if not torch.isfinite(mu).all() or not torch.isfinite(sigma).all():
            raise NumericalError(f"non-finite bottleneck parameters for modality {self.modality_id}")
        if training:
            z = torch.empty_like(mu).normal_(generator=generator)
            sample = mu + sigma * z
        else:
            sample = mu
        return BottleneckLatent(mu, sigma, sample, self.modality_id)


def reparameterize(mu: torch.Tensor, sigma: torch.Tensor, generator: torch.Generator | None = None) -> torch.Tensor:
    z = torch.empty_like(mu).normal_(generator=generator)
    return mu + sigma * z


def gaussian_kl(mu: torch.Tensor, sigma: torch.Tensor) -> torch.Tensor:
    """Mean over tokens (and batch) of the channel-summed KL to N(0, I).

    Per element: -1/2 (log sigma^2 + 1 - mu^2 - sigma^2).
    """
    if (sigma <= 0).any():
        raise NumericalError("sigma must be strictly positive")
    kl = gaussian_kl_per_token(mu, sigma)
    return kl.mean()


def gaussian_kl_per_token(mu: torch.Tensor, sigma: torch.Tensor) -> torch.Tensor:
    """Channel-summed closed-form KL, keeping leading (batch, token) dims."""
    elem = -0.5 * (torch.log(sigma**2) + 1.0 - mu**2 - sigma**2)
    return elem.sum(dim=-1)


def token_ib_loss(
    source: BottleneckLatent,
    target_tokens: torch.Tensor,
    decoder: nn.Module,
    beta: float,
) -> torch.Tensor:
    """Per-token KL plus beta-weighted squared reconstruction of the target tokens."""
    if source.sample.shape[-2] != target_tokens.shape[-2]:
        raise ValueError(
            f"sequence lengths differ: source {source.sample.shape[-2]}, target {target_tokens.shape[-2]}"
        )
    kl = gaussian_kl_per_token(source.mu, source.sigma)  # (..., L)
    rec = ((target_tokens - decoder(source.sample)) ** 2).sum(dim=-1)  # (..., L)
    return (kl + beta * rec).mean()


def cyclic_token_ib_loss(
    latents: list[BottleneckLatent],
    reprs: list[torch.Tensor],
    decoders: dict[tuple[int, int], nn.Module],
    beta: float,
    self_only: bool = False,
) -> torch.Tensor:
    """Average of all self terms plus half-weighted symmetric cross terms.

    Enumerates every modality as a self pair S->S and every unordered pair
    {S, T} with the two directions weighted 1/2 each; the result is the
    mean over the enumerated combinations (U self + U(U-1)/2 cross).
    """
    U = len(latents)
    if U < 2:
        raise ArityError(f"cyclic token loss needs >= 2 modalities, got {U}")
    terms = []
    for s in range(U):
        terms.append(token_ib_loss(latents[s], reprs[s], decoders[(s, s)], beta))
    if not self_only:
        for s in range(U):
            for t in range(s + 1, U):
                fwd = token_ib_loss(latents[s], reprs[t], decoders[(s, t)], beta)
                rev = token_ib_loss(latents[t], reprs[s], decoders[(t, s)], beta)
                terms.append(0.5 * (fwd + rev))
    return torch.stack(terms).mean()


def pool_label_latent(latent: BottleneckLatent) -> tuple[torch.Tensor, torch.Tensor]:
    """Pool token Gaussians into one per-sample Gaussian summary.

    Mean of means; variance pooled as the mean of per-token variances
    (so the pooled object stays a valid Gaussian summary).
    """
    mu_bar = latent.mu.mean(dim=-2)
    sigma_bar = torch.sqrt((latent.sigma**2).mean(dim=-2))
    return mu_bar, sigma_bar


def label_ib_loss(
    latents: list[BottleneckLatent],
    predictors: list[nn.Module],
    labels: torch.Tensor,
    task: str,
    beta: float,
    training: bool,
    generator: torch.Generator | None = None,
) -> torch.Tensor:
    """Label-supervised bottleneck loss, averaged over modalities.

    Regression uses an absolute-error prediction term (exponential-of-L1
    posterior); classification uses cross-entropy against one-hot labels.
    """
    if task not in ("regression", "classification"):
        raise TypeError(f"unknown task {task!r}")
    per_modality = []
    for latent, predictor in zip(latents, predictors):
        mu_bar, sigma_bar = pool_label_latent(latent)
        kl = gaussian_kl_per_token(mu_bar, sigma_bar)  # (N,)
        b = reparameterize(mu_bar, sigma_bar, generator) if training else mu_bar
        out = predictor(b)
        if task == "regression":
            if labels.dtype.is_floating_point is False:
                raise TypeError("regression labels must be floating point")
            pred_term = torch.abs(labels - out.squeeze(-1))
        else:
            if labels.dtype.is_floating_point:
                raise TypeError("classification labels must be integer class indices")
            probs = F.softmax(out, dim=-1)
            logp = torch.log(probs.clamp_min(1e-12))
            pred_term = -logp.gather(-1, labels.unsqueeze(-1)).squeeze(-1)
        per_modality.append((kl + beta * pred_term).mean())
    return torch.stack(per_modality).mean()
