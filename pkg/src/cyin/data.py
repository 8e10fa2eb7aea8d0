"""Synthetic shared-latent multimodal data, Bayes oracle, and the binary file format.

Generative model: a shared latent z ~ N(0, I_d) drives both the label and
every modality, each modality additionally carries isotropic noise and a
task-irrelevant distractor latent. Because the model is linear-Gaussian,
the regression posterior is available in closed form and serves as an
independent oracle for acceptance tests.

File format (little-endian):
    magic "CYIN" | version u16 | U u16 | L u32 | U x C_u u32 | N u64
    | task u8 (0=regression, 1=classification) | V u32
    then per sample: label (f64 regression / u32 classification)
    followed by U row-major L x C_u f32 tensors.
A sidecar "<path>.meta" file records the spec as key=value lines.
"""

from __future__ import annotations

import math
import struct
from dataclasses import dataclass, field

import numpy as np

from cyin.config import DatasetSpec, ValidationError

MAGIC = b"CYIN"
FORMAT_VERSION = 1

LABEL_MIN = -3.0
LABEL_MAX = 3.0


class DatasetFormatError(ValueError):
    """Base class for dataset file parse failures."""


class BadMagicError(DatasetFormatError):
    pass


class TruncatedFileError(DatasetFormatError):
    pass


class ShapeMismatchError(DatasetFormatError):
    pass


class UnsupportedTaskError(ValueError):
    pass


@dataclass
class MultimodalSample:
    """One sample: per-modality L x C_u token matrices plus a label."""

    modalities: list[np.ndarray]
    label: float | int
    sample_id: int


@dataclass
class GeneratorParams:
    """Fixed maps of the generative model, needed by the Bayes oracle."""

    mixing: list[np.ndarray]       # A_u: C_u x d
    distractors: list[np.ndarray]  # D_u: C_u x distractor_dim
    label_weights: np.ndarray      # w: d (regression) or V x d (classification)
    noise_scale: float


def _draw_params(spec: DatasetSpec, rng: np.random.Generator) -> GeneratorParams:
    d = spec.latent_dim
    # Decaying per-dimension scales give every modality the same dominant
    # latent direction, so the modalities are visibly correlated rather
    # than sharing z only through independent random subspaces.
    scales = 0.5 ** np.arange(d)
    scales = scales / np.linalg.norm(scales)
    mixing = [rng.standard_normal((c, d)) * scales for c in spec.feat_dims]
    distractors = [
        rng.standard_normal((c, spec.distractor_dim)) if spec.distractor_dim > 0
        else np.zeros((c, 0))
        for c in spec.feat_dims
    ]
    if spec.task == "regression":
        w = rng.standard_normal(d)
        w /= np.linalg.norm(w)
    else:
        w = rng.standard_normal((spec.num_classes, d))
    return GeneratorParams(mixing, distractors, w, spec.noise_scale)


def generator_params(spec: DatasetSpec) -> GeneratorParams:
    """Re-derive the fixed generator maps for a spec (pure function of the seed)."""
    spec.validate()
    rng = np.random.default_rng(spec.seed)
    return _draw_params(spec, rng)


def generate_dataset(spec: DatasetSpec) -> list[MultimodalSample]:
    """Draw a dataset; deterministic under spec.seed."""
    spec.validate()
    rng = np.random.default_rng(spec.seed)
    params = _draw_params(spec, rng)
    samples = []
    for n in range(spec.num_samples):
        z = rng.standard_normal(spec.latent_dim)
        if spec.task == "regression":
            label = float(np.clip(params.label_weights @ z, LABEL_MIN, LABEL_MAX))
        else:
            label = int(np.argmax(params.label_weights @ z))
        mods = []
        for u in range(spec.num_modalities):
            c = spec.feat_dims[u]
            tokens = np.tile(params.mixing[u] @ z, (spec.seq_len, 1))
            tokens = tokens + spec.noise_scale * rng.standard_normal((spec.seq_len, c))
            if spec.distractor_dim > 0:
                eta = rng.standard_normal((spec.seq_len, spec.distractor_dim))
                tokens = tokens + eta @ params.distractors[u].T
            mods.append(tokens.astype(np.float32))
        samples.append(MultimodalSample(mods, label, n))
    return samples


# -- Bayes oracle ---------------------------------------------------------


def _clamped_gaussian_mean(m: float, s: float) -> float:
    """E[clip(G, -3, 3)] for G ~ N(m, s^2), closed form via the normal CDF."""
    if s <= 0:
        return float(np.clip(m, LABEL_MIN, LABEL_MAX))
    a, b = LABEL_MIN, LABEL_MAX
    alpha = (a - m) / s
    beta = (b - m) / s
    phi = lambda x: math.exp(-0.5 * x * x) / math.sqrt(2 * math.pi)
    Phi = lambda x: 0.5 * (1.0 + math.erf(x / math.sqrt(2.0)))
    return (
        a * Phi(alpha)
        + b * (1.0 - Phi(beta))
        + m * (Phi(beta) - Phi(alpha))
        - s * (phi(beta) - phi(alpha))
    )


def bayes_oracle_regression(
    sample: MultimodalSample,
    spec: DatasetSpec,
    params: GeneratorParams,
    present: list[int] | None = None,
) -> float:
    """Posterior-mean label under the known linear-Gaussian generative model.

    `present` restricts conditioning to a subset of modalities (defaults
    to all). Noiseless data is handled exactly via least squares.
    """
    if spec.task != "regression":
        raise UnsupportedTaskError("bayes oracle is defined for the regression task only")
    if present is None:
        present = list(range(spec.num_modalities))
    if not present:
        return 0.0  # prior mean of the clamped label with w normalized is ~0; exact at m=0
    d = spec.latent_dim
    w = params.label_weights

    if params.noise_scale == 0 and spec.distractor_dim == 0:
        rows = np.vstack([params.mixing[u] for u in present])
        obs = np.concatenate([np.asarray(sample.modalities[u][0], dtype=np.float64) for u in present])
        z_hat, *_ = np.linalg.lstsq(rows, obs, rcond=None)
        return float(np.clip(w @ z_hat, LABEL_MIN, LABEL_MAX))

    precision = np.eye(d)
    info = np.zeros(d)
    for u in present:
        A = params.mixing[u]
        D = params.distractors[u]
        cov = params.noise_scale**2 * np.eye(spec.feat_dims[u]) + D @ D.T
        cov_inv = np.linalg.pinv(cov, hermitian=True)
        precision += spec.seq_len * A.T @ cov_inv @ A
        x_sum = np.asarray(sample.modalities[u], dtype=np.float64).sum(axis=0)
        info += A.T @ cov_inv @ x_sum
    post_cov = np.linalg.inv(precision)
    post_mean = post_cov @ info
    m = float(w @ post_mean)
    s = float(math.sqrt(max(w @ post_cov @ w, 0.0)))
    return _clamped_gaussian_mean(m, s)


# -- binary file IO -------------------------------------------------------


def write_dataset(samples: list[MultimodalSample], spec: DatasetSpec, path: str) -> None:
    spec.validate()
    if len(samples) != spec.num_samples:
        raise ShapeMismatchError(
            f"spec declares {spec.num_samples} samples, got {len(samples)}"
        )
    with open(path, "wb") as fh:
        fh.write(MAGIC)
        fh.write(struct.pack("<HHI", FORMAT_VERSION, spec.num_modalities, spec.seq_len))
        for c in spec.feat_dims:
            fh.write(struct.pack("<I", c))
        task_code = 0 if spec.task == "regression" else 1
        fh.write(struct.pack("<QBI", spec.num_samples, task_code, spec.num_classes))
        for s in samples:
            if len(s.modalities) != spec.num_modalities:
                raise ShapeMismatchError(
                    f"sample {s.sample_id} has {len(s.modalities)} modalities, expected {spec.num_modalities}"
                )
            if spec.task == "regression":
                fh.write(struct.pack("<d", float(s.label)))
            else:
                fh.write(struct.pack("<I", int(s.label)))
            for u, m in enumerate(s.modalities):
                m = np.asarray(m, dtype=np.float32)
                if m.shape != (spec.seq_len, spec.feat_dims[u]):
                    raise ShapeMismatchError(
                        f"sample {s.sample_id} modality {u}: shape {m.shape}, "
                        f"expected {(spec.seq_len, spec.feat_dims[u])}"
                    )
                fh.write(m.tobytes(order="C"))
    with open(path + ".meta", "w") as fh:
        fh.write(f"num_modalities={spec.num_modalities}\n")
        fh.write(f"seq_len={spec.seq_len}\n")
        fh.write(f"feat_dims={','.join(str(c) for c in spec.feat_dims)}\n")
        fh.write(f"latent_dim={spec.latent_dim}\n")
        fh.write(f"task={spec.task}\n")
        fh.write(f"num_classes={spec.num_classes}\n")
        fh.write(f"noise_scale={spec.noise_scale}\n")
        fh.write(f"distractor_dim={spec.distractor_dim}\n")
        fh.write(f"num_samples={spec.num_samples}\n")
        fh.write(f"seed={spec.seed}\n")


def _read_exact(fh, n: int, what: str) -> bytes:
    buf = fh.read(n)
    if len(buf) != n:
        raise TruncatedFileError(f"truncated while reading {what}: expected {n} bytes, got {len(buf)}")
    return buf


def read_dataset(path: str) -> tuple[DatasetSpec, list[MultimodalSample]]:
    """Read a dataset file; the sidecar (if present) refines the non-shape spec fields."""
    with open(path, "rb") as fh:
        magic = fh.read(4)
        if magic != MAGIC:
            raise BadMagicError(f"bad magic: expected {MAGIC!r}, got {magic!r}")
        version, U, L = struct.unpack("<HHI", _read_exact(fh, 8, "header"))
        if version != FORMAT_VERSION:
            raise DatasetFormatError(f"unsupported format version {version}")
        feat_dims = [struct.unpack("<I", _read_exact(fh, 4, f"channel count {u}"))[0] for u in range(U)]
        N, task_code, V = struct.unpack("<QBI", _read_exact(fh, 13, "sample header"))
        task = "regression" if task_code == 0 else "classification"
        samples = []
        for n in range(N):
            if task == "regression":
                (label,) = struct.unpack("<d", _read_exact(fh, 8, f"label of sample {n}"))
            else:
                (label,) = struct.unpack("<I", _read_exact(fh, 4, f"label of sample {n}"))
                label = int(label)
            mods = []
            for u in range(U):
                nbytes = 4 * L * feat_dims[u]
                raw = _read_exact(fh, nbytes, f"tensor of sample {n} modality {u}")
                mods.append(np.frombuffer(raw, dtype="<f4").reshape(L, feat_dims[u]).copy())
            samples.append(MultimodalSample(mods, label, n))
        trailing = fh.read(1)
        if trailing:
            raise ShapeMismatchError("trailing bytes after the declared sample count")

    spec = DatasetSpec(
        num_modalities=U,
        seq_len=L,
        feat_dims=feat_dims,
        task=task,
        num_classes=V,
        num_samples=N,
    )
    meta = _read_sidecar(path + ".meta")
    if meta:
        if int(meta.get("seq_len", L)) != L:
            raise ShapeMismatchError(
                f"sidecar seq_len {meta['seq_len']} disagrees with file seq_len {L}"
            )
        spec.latent_dim = int(meta.get("latent_dim", spec.latent_dim))
        spec.noise_scale = float(meta.get("noise_scale", spec.noise_scale))
        spec.distractor_dim = int(meta.get("distractor_dim", spec.distractor_dim))
        spec.seed = int(meta.get("seed", spec.seed))
    return spec, samples


def _read_sidecar(path: str) -> dict[str, str]:
    try:
        with open(path) as fh:
            lines = fh.read().splitlines()
    except FileNotFoundError:
        return {}
    out = {}
    for line in lines:
        if "=" in line:
            k, v = line.split("=", 1)
            out[k.strip()] = v.strip()
    return out


def stack_dataset(samples: list[MultimodalSample]) -> tuple[list[np.ndarray], np.ndarray]:
    """Stack samples into per-modality (N, L, C_u) arrays plus a label vector."""
    U = len(samples[0].modalities)
    mods = [np.stack([s.modalities[u] for s in samples]).astype(np.float32) for u in range(U)]
    labels = np.array([s.label for s in samples])
    return mods, labels
