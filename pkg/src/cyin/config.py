"""Configuration types, config-file parsing, and seed-substream derivation."""

from __future__ import annotations

import configparser
import hashlib
from dataclasses import dataclass, field, asdict


class ValidationError(ValueError):
    """A configuration or dataset spec violates one of its invariants."""


ABLATION_TAGS = (
    "full",
    "no_tib",
    "no_lib",
    "no_cyclic_interaction",
    "no_cyclic_translation",
    "no_informative_space",
    "no_translated_latents",
)

TASKS = ("regression", "classification")


@dataclass
class DatasetSpec:
    """Parameters of the synthetic shared-latent multimodal generator."""

    num_modalities: int = 3
    seq_len: int = 4
    feat_dims: list[int] = field(default_factory=lambda: [8, 8, 8])
    latent_dim: int = 4
    task: str = "regression"
    num_classes: int = 0
    noise_scale: float = 0.1
    distractor_dim: int = 2
    num_samples: int = 1000
    seed: int = 0

    def validate(self) -> None:
        if self.num_modalities < 2:
            raise ValidationError(f"num_modalities must be >= 2, got {self.num_modalities}")
        if self.seq_len < 1:
            raise ValidationError(f"seq_len must be >= 1, got {self.seq_len}")
        if len(self.feat_dims) != self.num_modalities:
            raise ValidationError(
                f"feat_dims has {len(self.feat_dims)} entries for {self.num_modalities} modalities"
            )
        for u, c in enumerate(self.feat_dims):
            if c < 1:
                raise ValidationError(f"feat_dims[{u}] must be >= 1, got {c}")
        if self.latent_dim < 1:
            raise ValidationError(f"latent_dim must be >= 1, got {self.latent_dim}")
        if self.task not in TASKS:
            raise ValidationError(f"task must be one of {TASKS}, got {self.task!r}")
        if self.task == "classification" and self.num_classes < 2:
            raise ValidationError(f"classification needs num_classes >= 2, got {self.num_classes}")
        if self.noise_scale < 0:
            raise ValidationError(f"noise_scale must be >= 0, got {self.noise_scale}")
        if self.distractor_dim < 0:
            raise ValidationError(f"distractor_dim must be >= 0, got {self.distractor_dim}")
        if self.num_samples < 1:
            raise ValidationError(f"num_samples must be >= 1, got {self.num_samples}")


@dataclass
class IBConfig:
    """Bottleneck encoder settings shared by token- and label-level objectives."""

    bottleneck_dim: int = 8
    beta: float = 16.0
    ib_hidden_dim: int = 16

    def validate(self) -> None:
        if self.bottleneck_dim < 1:
            raise ValidationError(f"bottleneck_dim must be >= 1, got {self.bottleneck_dim}")
        if self.beta <= 0:
            raise ValidationError(f"beta must be > 0, got {self.beta}")


@dataclass
class FusionConfig:
    """Cross-modal attention fusion settings."""

    num_heads: int = 2
    num_layers: int = 1
    ff_hidden_dim: int = 16
    literal_norm: bool = True  # residual adds LayerNorm of the incoming stream
    symmetric_pairs: bool = False  # fuse both query directions per pair
    reduce: str = "last"  # "last" | "mean" sequence-to-vector reduction

    def validate(self) -> None:
        if self.num_heads < 1:
            raise ValidationError(f"num_heads must be >= 1, got {self.num_heads}")
        if self.num_layers < 1:
            raise ValidationError(f"num_layers must be >= 1, got {self.num_layers}")
        if self.reduce not in ("last", "mean"):
            raise ValidationError(f"reduce must be 'last' or 'mean', got {self.reduce!r}")


@dataclass
class CRAConfig:
    """Cascaded residual autoencoder translator settings."""

    num_blocks: int = 2
    widths: list[int] = field(default_factory=lambda: [16, 8])
    # optional per-ordered-pair block counts, keys "s->t"
    pair_blocks: dict[str, int] = field(default_factory=dict)
    mean_combine: bool = False  # average instead of summing multi-source translations

    def validate(self) -> None:
        if self.num_blocks < 1:
            raise ValidationError(f"num_blocks must be >= 1, got {self.num_blocks}")
        if not self.widths:
            raise ValidationError("widths must be nonempty")
        for n in self.pair_blocks.values():
            if n < 1:
                raise ValidationError(f"pair block count must be >= 1, got {n}")

    def blocks_for(self, src: int, dst: int) -> int:
        return self.pair_blocks.get(f"{src}->{dst}", self.num_blocks)


@dataclass
class ExperimentConfig:
    """Full experiment configuration: data, model, and training schedule."""

    data: DatasetSpec = field(default_factory=DatasetSpec)
    ib: IBConfig = field(default_factory=IBConfig)
    fusion: FusionConfig = field(default_factory=FusionConfig)
    cra: CRAConfig = field(default_factory=CRAConfig)

    unimodal_dim: int = 16
    encoder_mixer: str = "attention"  # "none" | "attention" | "gru"
    head_hidden_dim: int = 16

    gamma: float = 10.0
    stage_split: float = 0.1  # fraction of epochs with gamma forced to 0
    epochs: int = 10
    batch_size: int = 64
    lr_encoder: float = 4e-5
    lr_other: float = 1e-3
    weight_decay: float = 1e-2
    grad_clip: float = 1.0
    seed: int = 0
    train_mrs: list[float] = field(default_factory=lambda: [0.1, 0.2, 0.3, 0.4, 0.5, 0.6, 0.7])
    protocols: list[str] = field(default_factory=lambda: ["complete"])

    def validate(self) -> None:
        self.data.validate()
        self.ib.validate()
        self.fusion.validate()
        self.cra.validate()
        if self.gamma < 0:
            raise ValidationError(f"gamma must be >= 0, got {self.gamma}")
        if not 0.0 <= self.stage_split <= 1.0:
            raise ValidationError(f"stage_split must be in [0,1], got {self.stage_split}")
        if self.epochs < 1:
            raise ValidationError(f"epochs must be >= 1, got {self.epochs}")
        if self.batch_size < 1:
            raise ValidationError(f"batch_size must be >= 1, got {self.batch_size}")
        if self.unimodal_dim % self.fusion.num_heads and self.ib.bottleneck_dim % self.fusion.num_heads:
            pass  # head divisibility is checked against the fused dim at model build
        if self.encoder_mixer not in ("none", "attention", "gru"):
            raise ValidationError(f"encoder_mixer must be none|attention|gru, got {self.encoder_mixer!r}")

    # -- serialization ---------------------------------------------------

    def canonical_items(self) -> list[tuple[str, str]]:
        """Flat, sorted (section.key, value) pairs; the hashing surface."""
        flat: list[tuple[str, str]] = []

        def emit(section: str, obj: dict) -> None:
            for k, v in sorted(obj.items()):
                if isinstance(v, list):
                    v = ",".join(str(x) for x in v)
                elif isinstance(v, dict):
                    v = ";".join(f"{a}={b}" for a, b in sorted(v.items()))
                flat.append((f"{section}.{k}", str(v)))

        d = asdict(self)
        for section in ("data", "ib", "fusion", "cra"):
            emit(section, d.pop(section))
        emit("train", d)
        return flat

    def config_hash(self) -> str:
        payload = "\n".join(f"{k}={v}" for k, v in self.canonical_items())
        return hashlib.sha256(payload.encode()).hexdigest()

    def to_file(self, path: str) -> None:
        cp = configparser.ConfigParser()
        for key, value in self.canonical_items():
            section, name = key.split(".", 1)
            if section not in cp:
                cp[section] = {}
            cp[section][name] = value
        with open(path, "w") as fh:
            cp.write(fh)

    @classmethod
    def from_file(cls, path: str) -> "ExperimentConfig":
        cp = configparser.ConfigParser()
        read = cp.read(path)
        if not read:
            raise ValidationError(f"config file not found: {path}")
        cfg = cls()

        def get(section, key, cast, default):
            if section in cp and key in cp[section]:
                raw = cp[section][key]
                if cast is bool:
                    return raw.strip().lower() in ("1", "true", "yes", "on")
                if cast is list:
                    return [x for x in raw.split(",") if x != ""]
                return cast(raw)
            return default

        d = cfg.data
        cfg.data = DatasetSpec(
            num_modalities=get("data", "num_modalities", int, d.num_modalities),
            seq_len=get("data", "seq_len", int, d.seq_len),
            feat_dims=[int(x) for x in get("data", "feat_dims", list, d.feat_dims)],
            latent_dim=get("data", "latent_dim", int, d.latent_dim),
            task=get("data", "task", str, d.task),
            num_classes=get("data", "num_classes", int, d.num_classes),
            noise_scale=get("data", "noise_scale", float, d.noise_scale),
            distractor_dim=get("data", "distractor_dim", int, d.distractor_dim),
            num_samples=get("data", "num_samples", int, d.num_samples),
            seed=get("data", "seed", int, d.seed),
        )
        i = cfg.ib
        cfg.ib = IBConfig(
            bottleneck_dim=get("ib", "bottleneck_dim", int, i.bottleneck_dim),
            beta=get("ib", "beta", float, i.beta),
            ib_hidden_dim=get("ib", "ib_hidden_dim", int, i.ib_hidden_dim),
        )
        f = cfg.fusion
        cfg.fusion = FusionConfig(
            num_heads=get("fusion", "num_heads", int, f.num_heads),
            num_layers=get("fusion", "num_layers", int, f.num_layers),
            ff_hidden_dim=get("fusion", "ff_hidden_dim", int, f.ff_hidden_dim),
            literal_norm=get("fusion", "literal_norm", bool, f.literal_norm),
            symmetric_pairs=get("fusion", "symmetric_pairs", bool, f.symmetric_pairs),
            reduce=get("fusion", "reduce", str, f.reduce),
        )
        c = cfg.cra
        pair_blocks = {}
        raw_pb = get("cra", "pair_blocks", str, "")
        if raw_pb:
            for item in raw_pb.split(";"):
                k, v = item.split("=")
                pair_blocks[k.strip()] = int(v)
        cfg.cra = CRAConfig(
            num_blocks=get("cra", "num_blocks", int, c.num_blocks),
            widths=[int(x) for x in get("cra", "widths", list, c.widths)],
            pair_blocks=pair_blocks,
            mean_combine=get("cra", "mean_combine", bool, c.mean_combine),
        )
        cfg.unimodal_dim = get("train", "unimodal_dim", int, cfg.unimodal_dim)
        cfg.encoder_mixer = get("train", "encoder_mixer", str, cfg.encoder_mixer)
        cfg.head_hidden_dim = get("train", "head_hidden_dim", int, cfg.head_hidden_dim)
        cfg.gamma = get("train", "gamma", float, cfg.gamma)
        cfg.stage_split = get("train", "stage_split", float, cfg.stage_split)
        cfg.epochs = get("train", "epochs", int, cfg.epochs)
        cfg.batch_size = get("train", "batch_size", int, cfg.batch_size)
        cfg.lr_encoder = get("train", "lr_encoder", float, cfg.lr_encoder)
        cfg.lr_other = get("train", "lr_other", float, cfg.lr_other)
        cfg.weight_decay = get("train", "weight_decay", float, cfg.weight_decay)
        cfg.grad_clip = get("train", "grad_clip", float, cfg.grad_clip)
        cfg.seed = get("train", "seed", int, cfg.seed)
        cfg.train_mrs = [float(x) for x in get("train", "train_mrs", list, cfg.train_mrs)]
        cfg.protocols = [str(x) for x in get("train", "protocols", list, cfg.protocols)]
        cfg.validate()
        return cfg


def substream_seed(root_seed: int, name: str) -> int:
    """Derive a named 63-bit substream seed from the root seed."""
    digest = hashlib.sha256(f"{root_seed}:{name}".encode()).digest()
    return int.from_bytes(digest[:8], "little") & 0x7FFFFFFFFFFFFFFF
