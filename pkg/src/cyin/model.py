"""Full model assembly: encoders, bottleneck space, translators, fusion, head.

The ablation tag is baked into the model because it changes which modules
exist (and, for the no_informative_space variant, the dimension the
translators and fusion operate on).
"""

from __future__ import annotations

import math

import torch
import torch.nn as nn

from cyin.bottleneck import BottleneckLatent, GaussianIBEncoder
from cyin.config import ABLATION_TAGS, ExperimentConfig, ValidationError, substream_seed
from cyin.encoders import ModalityEncoder
from cyin.fusion import FusionDecoder, PredictionHead
from cyin.translation import CRATranslator


class CyINModel(nn.Module):
    def __init__(self, config: ExperimentConfig, ablation: str = "full", dtype: torch.dtype = torch.float32):
        super().__init__()
        if ablation not in ABLATION_TAGS:
            raise ValidationError(f"unknown ablation tag {ablation!r}; expected one of {ABLATION_TAGS}")
        config.validate()
        self.config = config
        self.ablation = ablation
        spec = config.data
        U = spec.num_modalities
        self.num_modalities = U
        self.task = spec.task
        self.use_ib = ablation != "no_informative_space"
        self.fused_dim = config.ib.bottleneck_dim if self.use_ib else config.unimodal_dim

        self.encoders = nn.ModuleList(
            ModalityEncoder(u, spec.feat_dims[u], config.unimodal_dim, config.encoder_mixer)
            for u in range(U)
        )
        if self.use_ib:
            self.ib_encoders = nn.ModuleList(
                GaussianIBEncoder(u, config.unimodal_dim, config.ib.bottleneck_dim, config.ib.ib_hidden_dim)
                for u in range(U)
            )
            self.ib_decoders = nn.ModuleDict(
                {
                    f"{s}->{t}": nn.Sequential(
                        nn.Linear(config.ib.bottleneck_dim, config.ib.ib_hidden_dim),
                        nn.Tanh(),
                        nn.Linear(config.ib.ib_hidden_dim, config.unimodal_dim),
                    )
                    for s in range(U)
                    for t in range(U)
                }
            )
            pred_out = 1 if spec.task == "regression" else spec.num_classes
            self.label_predictors = nn.ModuleList(
                nn.Linear(config.ib.bottleneck_dim, pred_out) for _ in range(U)
            )
        self.translators = nn.ModuleDict(
            {
                f"{s}->{t}": CRATranslator(
                    s, t, self.fused_dim, config.cra.widths, config.cra.blocks_for(s, t)
                )
                for s in range(U)
                for t in range(U)
                if s != t
            }
        )
        self.fusion = FusionDecoder(
            U,
            self.fused_dim,
            config.fusion.num_heads,
            config.fusion.num_layers,
            config.fusion.ff_hidden_dim,
            config.fusion.literal_norm,
            config.fusion.symmetric_pairs,
            config.fusion.reduce,
        )
        self.head = PredictionHead(
            self.fusion.out_dim, config.head_hidden_dim, spec.task, spec.num_classes
        )
        if dtype is torch.float64:
            self.double()

    # -- typed accessors ---------------------------------------------------

    def decoder_map(self) -> dict[tuple[int, int], nn.Module]:
        return {
            (s, t): self.ib_decoders[f"{s}->{t}"]
            for s in range(self.num_modalities)
            for t in range(self.num_modalities)
        }

    def translator_map(self) -> dict[tuple[int, int], CRATranslator]:
        return {
            (s, t): self.translators[f"{s}->{t}"]
            for s in range(self.num_modalities)
            for t in range(self.num_modalities)
            if s != t
        }

    def encoder_parameters(self):
        return [p for enc in self.encoders for p in enc.parameters()]

    def other_parameters(self):
        encoder_ids = {id(p) for p in self.encoder_parameters()}
        return [p for p in self.parameters() if id(p) not in encoder_ids]

    # -- forward passes ----------------------------------------------------

    def encode(self, inputs: list[torch.Tensor]) -> list[torch.Tensor]:
        return [enc(x) for enc, x in zip(self.encoders, inputs)]

    def latent_view(
        self,
        inputs: list[torch.Tensor],
        training: bool,
        generator: torch.Generator | None = None,
    ) -> tuple[list[torch.Tensor], list[BottleneckLatent] | None, list[torch.Tensor]]:
        """Encode a batch and return (reprs, latents, fusion_tokens).

        `fusion_tokens` is what fusion and translation consume: the sampled
        latent during training, the mean latent at evaluation, or the raw
        unimodal representation when the bottleneck space is ablated.
        """
        reprs = self.encode(inputs)
        if not self.use_ib:
            return reprs, None, reprs
        latents = [
            ib(rep, training=training, generator=generator)
            for ib, rep in zip(self.ib_encoders, reprs)
        ]
        tokens = [lat.sample if training else lat.mu for lat in latents]
        return reprs, latents, tokens

    def substitute_missing(
        self,
        tokens: list[torch.Tensor],
        presence: torch.Tensor,
    ) -> list[torch.Tensor]:
        """Replace each missing modality's token matrix per sample.

        Present sources are combined additively through the pairwise
        translators; the no_translated_latents ablation substitutes zeros
        instead.
        """
        U = self.num_modalities
        flags = presence.to(tokens[0].dtype)  # (N, U)
        out = []
        translators = self.translator_map()
        denom_cfg = self.config.cra.mean_combine
        for i in range(U):
            if bool(presence[:, i].all()):
                out.append(tokens[i])
                continue
            if self.ablation == "no_translated_latents":
                rec = torch.zeros_like(tokens[i])
            else:
                rec = torch.zeros_like(tokens[i])
                for j in range(U):
                    if j == i:
                        continue
                    w = flags[:, j].reshape(-1, 1, 1)
                    rec = rec + w * translators[(j, i)](tokens[j])
                if denom_cfg:
                    n_src = flags.sum(dim=1, keepdim=True) - flags[:, i : i + 1]
                    rec = rec / n_src.clamp_min(1.0).reshape(-1, 1, 1)
            keep = presence[:, i].reshape(-1, 1, 1)
            out.append(torch.where(keep, tokens[i], rec))
        return out

    def predict_from_tokens(self, tokens: list[torch.Tensor]) -> torch.Tensor:
        return self.head(self.fusion(tokens))


def init_parameters(model: nn.Module, seed: int) -> None:
    """Deterministic re-initialization independent of module construction order.

    Weights get uniform(-1/sqrt(fan_in), +1/sqrt(fan_in)); biases and
    normalization offsets zero; normalization gains one.
    """
    gen = torch.Generator().manual_seed(substream_seed(seed, "init"))
    for name, param in sorted(model.named_parameters(), key=lambda kv: kv[0]):
        with torch.no_grad():
            if param.dim() >= 2:
                bound = 1.0 / math.sqrt(param.shape[-1])
                vals = torch.empty(param.shape, dtype=torch.float64)
                vals.uniform_(-bound, bound, generator=gen)
                param.copy_(vals.to(param.dtype))
            elif "weight" in name.rsplit(".", 1)[-1]:
                param.fill_(1.0)  # LayerNorm gains
            else:
                param.zero_()
