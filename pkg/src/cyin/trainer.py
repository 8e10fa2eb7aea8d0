"""Training loop, total objective assembly, and protocol evaluation.

Training runs in two stages: the first stage forces the translation
weight to zero (translators receive no gradient and stay at their
initialization), the second stage draws a per-batch random missing rate
so the single model sees the full missing spectrum while the complete
view keeps driving the bottleneck and translation losses.

All randomness flows from the root seed through named substreams, so two
runs with the same config produce identical logs and metrics.
"""

from __future__ import annotations

import json
from dataclasses import dataclass

import numpy as np
import torch

from cyin.bottleneck import BottleneckLatent, cyclic_token_ib_loss, label_ib_loss
from cyin.config import ExperimentConfig, substream_seed
from cyin.data import MultimodalSample, stack_dataset
from cyin.metrics import MetricReport, classification_report, regression_report
from cyin.model import CyINModel, init_parameters
from cyin.protocols import PresenceMask, ProtocolError, fixed_mask, random_mask
from cyin.translation import translation_loss_components


class TrainingDiverged(RuntimeError):
    def __init__(self, step: int, component: str):
        super().__init__(f"non-finite loss at step {step} (component: {component})")
        self.step = step
        self.component = component


@dataclass
class LossBundle:
    """Named scalar loss components plus the weighted total."""

    task: torch.Tensor
    tib: torch.Tensor
    lib: torch.Tensor
    rec: torch.Tensor
    cyc: torch.Tensor
    total: torch.Tensor

    def to_record(self) -> dict[str, float]:
        return {
            "task": float(self.task.detach()),
            "tib": float(self.tib.detach()),
            "lib": float(self.lib.detach()),
            "rec": float(self.rec.detach()),
            "cyc": float(self.cyc.detach()),
            "total": float(self.total.detach()),
        }


def _pseudo_latents(tokens: list[torch.Tensor]) -> list[BottleneckLatent]:
    """Wrap raw token matrices so translation losses can run without the bottleneck."""
    return [
        BottleneckLatent(t, torch.ones_like(t), t, u) for u, t in enumerate(tokens)
    ]


def total_loss(
    model: CyINModel,
    inputs: list[torch.Tensor],
    labels: torch.Tensor,
    presence: torch.Tensor,
    gamma: float,
    noise_seed: int = 0,
) -> LossBundle:
    """Assemble the full objective for one batch.

    Bottleneck and translation losses use the complete view; the task loss
    averages the complete-view and masked-view prediction losses, where the
    masked view substitutes translated latents for missing modalities.
    """
    config = model.config
    beta = config.ib.beta
    gen = torch.Generator().manual_seed(noise_seed)
    zero = torch.zeros((), dtype=inputs[0].dtype)

    reprs, latents, tokens = model.latent_view(inputs, training=True, generator=gen)

    tib = zero
    lib = zero
    if model.use_ib and model.ablation != "no_tib":
        tib = cyclic_token_ib_loss(
            latents,
            reprs,
            model.decoder_map(),
            beta,
            self_only=model.ablation == "no_cyclic_interaction",
        )
    if model.use_ib and model.ablation != "no_lib":
        lib = label_ib_loss(
            latents, list(model.label_predictors), labels, model.task, beta,
            training=True, generator=gen,
        )

    rec = zero
    cyc = zero
    if gamma > 0 and model.ablation != "no_cyclic_translation":
        tr_latents = latents if model.use_ib else _pseudo_latents(tokens)
        rec, cyc = translation_loss_components(tr_latents, model.translator_map())

    pred_complete = model.predict_from_tokens(tokens)
    from cyin.fusion import task_loss as _task_loss

    task = _task_loss(pred_complete, labels, model.task)
    if not bool(presence.all()):
        masked_inputs = [
            x * presence[:, u].to(x.dtype).reshape(-1, 1, 1) for u, x in enumerate(inputs)
        ]
        _, _, masked_tokens = model.latent_view(masked_inputs, training=True, generator=gen)
        masked_tokens = model.substitute_missing(masked_tokens, presence)
        pred_masked = model.predict_from_tokens(masked_tokens)
        task = 0.5 * (task + _task_loss(pred_masked, labels, model.task))

    total = task + (1.0 / beta) * (tib + lib) + gamma * (rec + cyc)
    return LossBundle(task, tib, lib, rec, cyc, total)


def _to_tensors(samples: list[MultimodalSample], task: str) -> tuple[list[torch.Tensor], torch.Tensor]:
    mods, labels = stack_dataset(samples)
    inputs = [torch.from_numpy(m) for m in mods]
    if task == "regression":
        y = torch.from_numpy(labels.astype(np.float32))
    else:
        y = torch.from_numpy(labels.astype(np.int64))
    return inputs, y


def train(
    config: ExperimentConfig,
    samples: list[MultimodalSample],
    ablation: str = "full",
    log_path: str | None = None,
) -> tuple[CyINModel, list[dict]]:
    """Run the two-stage schedule and return the trained model plus the step log."""
    config.validate()
    model = CyINModel(config, ablation=ablation)
    init_parameters(model, config.seed)
    model.train()

    optimizer = torch.optim.AdamW(
        [
            {"params": model.encoder_parameters(), "lr": config.lr_encoder},
            {"params": model.other_parameters(), "lr": config.lr_other},
        ],
        weight_decay=config.weight_decay,
    )

    inputs_all, labels_all = _to_tensors(samples, config.data.task)
    N = labels_all.shape[0]
    U = config.data.num_modalities
    data_rng = np.random.default_rng(substream_seed(config.seed, "data"))
    mask_rng = np.random.default_rng(substream_seed(config.seed, "masks"))

    stage1_epochs = round(config.stage_split * config.epochs)
    log: list[dict] = []
    step = 0
    for epoch in range(config.epochs):
        stage = 1 if epoch < stage1_epochs else 2
        order = data_rng.permutation(N)
        for start in range(0, N, config.batch_size):
            idx = order[start : start + config.batch_size]
            batch_inputs = [x[idx] for x in inputs_all]
            batch_labels = labels_all[idx]
            n = len(idx)

            if stage == 1:
                gamma_eff = 0.0
                presence = torch.ones((n, U), dtype=torch.bool)
            else:
                gamma_eff = config.gamma
                mr = float(mask_rng.choice(config.train_mrs))
                mask = random_mask(n, U, mr, seed=int(mask_rng.integers(2**31)))
                presence = torch.from_numpy(mask.flags)

            bundle = total_loss(
                model,
                batch_inputs,
                batch_labels,
                presence,
                gamma_eff,
                noise_seed=substream_seed(config.seed, f"noise:{step}"),
            )
            record = bundle.to_record()
            for name, value in record.items():
                if not np.isfinite(value):
                    raise TrainingDiverged(step, name)

            optimizer.zero_grad()
            bundle.total.backward()
            if config.grad_clip > 0:
                torch.nn.utils.clip_grad_norm_(model.parameters(), config.grad_clip)
            optimizer.step()

            record.update(step=step, epoch=epoch, stage=stage)
            log.append(record)
            step += 1

    if log_path is not None:
        with open(log_path, "w") as fh:
            for record in log:
                fh.write(json.dumps(record, sort_keys=True) + "\n")
    model.eval()
    return model, log


# -- evaluation ------------------------------------------------------------

MODALITY_ALIASES = {"l": 0, "a": 1, "v": 2}


def parse_protocol(spec: str, num_modalities: int) -> tuple[str, object]:
    """Parse a protocol descriptor: complete | fixed:<set> | random:<mr>.

    Fixed sets accept integer indices or the l/a/v aliases (0/1/2).
    """
    spec = spec.strip()
    if spec == "complete":
        return "complete", None
    if spec.startswith("fixed:"):
        items = [s.strip() for s in spec[len("fixed:"):].split(",") if s.strip()]
        present = set()
        for item in items:
            if item in MODALITY_ALIASES:
                present.add(MODALITY_ALIASES[item])
            elif item.isdigit():
                present.add(int(item))
            else:
                raise ProtocolError(f"unknown modality {item!r} in protocol {spec!r}")
        if not present or any(not 0 <= u < num_modalities for u in present):
            raise ProtocolError(f"invalid present set in protocol {spec!r} for U={num_modalities}")
        return "fixed", present
    if spec.startswith("random:"):
        try:
            mr = float(spec[len("random:"):])
        except ValueError as exc:
            raise ProtocolError(f"invalid missing rate in protocol {spec!r}") from exc
        return "random", mr
    raise ProtocolError(f"unknown protocol {spec!r}")


def build_mask(protocol: str, num_samples: int, num_modalities: int, mask_seed: int) -> PresenceMask:
    kind, arg = parse_protocol(protocol, num_modalities)
    if kind == "complete" or (kind == "random" and arg == 0.0):
        return fixed_mask(num_samples, set(range(num_modalities)), num_modalities)
    if kind == "fixed":
        return fixed_mask(num_samples, arg, num_modalities)
    return random_mask(num_samples, num_modalities, arg, mask_seed)


def evaluate(
    model: CyINModel,
    samples: list[MultimodalSample],
    protocol: str,
    mask_seed: int = 0,
) -> MetricReport:
    """Deterministic evaluation under a protocol mask.

    Missing modalities are zeroed at the input and their latents replaced
    by combined translator outputs on the mean path.
    """
    config = model.config
    model.eval()
    inputs, labels = _to_tensors(samples, config.data.task)
    N = labels.shape[0]
    U = config.data.num_modalities
    mask = build_mask(protocol, N, U, mask_seed)
    presence = torch.from_numpy(mask.flags)

    with torch.no_grad():
        masked_inputs = [
            x * presence[:, u].to(x.dtype).reshape(-1, 1, 1) for u, x in enumerate(inputs)
        ]
        _, _, tokens = model.latent_view(masked_inputs, training=False)
        tokens = model.substitute_missing(tokens, presence)
        preds = model.predict_from_tokens(tokens)

    if config.data.task == "regression":
        return regression_report(preds.numpy(), labels.numpy(), protocol, mask_seed)
    pred_classes = preds.argmax(dim=-1).numpy()
    return classification_report(
        pred_classes, labels.numpy(), config.data.num_classes, protocol, mask_seed
    )
