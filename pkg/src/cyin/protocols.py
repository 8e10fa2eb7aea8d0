"""Presence masks for the fixed and random missing protocols.

A mask is an N x U boolean matrix (True = modality present). Every row
keeps at least one modality, so the achievable missing rate is bounded
by (U-1)/U. The random protocol builds an exact multiset of per-sample
kept-counts so the dataset-level missing rate matches the target up to
count rounding, rather than only in expectation. Targets above the bound
are clamped to it.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass

import numpy as np


class ProtocolError(ValueError):
    pass


@dataclass
class PresenceMask:
    flags: np.ndarray  # (N, U) bool

    def __post_init__(self):
        self.flags = np.asarray(self.flags, dtype=bool)
        if self.flags.ndim != 2:
            raise ProtocolError(f"mask must be 2-D, got shape {self.flags.shape}")
        if not self.flags.any(axis=1).all():
            raise ProtocolError("every sample must keep at least one modality")

    @property
    def num_samples(self) -> int:
        return self.flags.shape[0]

    @property
    def num_modalities(self) -> int:
        return self.flags.shape[1]

    def to_csv(self, path: str) -> None:
        with open(path, "w", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow(["sample_id"] + [f"modality_{u}" for u in range(self.num_modalities)])
            for i, row in enumerate(self.flags):
                writer.writerow([i] + [int(x) for x in row])

    @classmethod
    def from_csv(cls, path: str) -> "PresenceMask":
        with open(path, newline="") as fh:
            rows = list(csv.reader(fh))
        flags = np.array([[bool(int(x)) for x in row[1:]] for row in rows[1:]])
        return cls(flags)


def fixed_mask(num_samples: int, present_set: set[int], num_modalities: int) -> PresenceMask:
    """Every sample keeps exactly the modalities in present_set."""
    if not present_set:
        raise ProtocolError("present_set must be nonempty")
    bad = [u for u in present_set if not 0 <= u < num_modalities]
    if bad:
        raise ProtocolError(f"modality indices out of range: {bad}")
    row = np.zeros(num_modalities, dtype=bool)
    row[sorted(present_set)] = True
    return PresenceMask(np.tile(row, (num_samples, 1)))


def random_mask(num_samples: int, num_modalities: int, target_mr: float, seed: int) -> PresenceMask:
    """Per-sample random availability with an exact-count missing rate.

    Builds kept-counts k_i in {1..U} with sum(k_i) = round(N*U*(1-target_mr)),
    shuffles the assignment, and uniformly picks which modalities remain.
    """
    N, U = num_samples, num_modalities
    max_mr = (U - 1) / U
    if not 0.0 <= target_mr <= 1.0:
        raise ProtocolError(f"target_mr must be in [0, 1], got {target_mr}")
    # Targets past (U-1)/U cannot be met while every sample keeps one
    # modality; clamp to the feasible bound instead of failing the sweep.
    target_mr = min(target_mr, max_mr)
    total_kept = max(N, min(round(N * U * (1.0 - target_mr)), N * U))

    rng = np.random.default_rng(seed)
    counts = np.ones(N, dtype=int)
    surplus = total_kept - N
    # spread the surplus uniformly over samples with remaining capacity
    while surplus > 0:
        capacity = np.flatnonzero(counts < U)
        take = min(surplus, len(capacity))
        chosen = rng.choice(capacity, size=take, replace=False)
        counts[chosen] += 1
        surplus -= take
    rng.shuffle(counts)

    flags = np.zeros((N, U), dtype=bool)
    for i in range(N):
        kept = rng.choice(U, size=counts[i], replace=False)
        flags[i, kept] = True
    return PresenceMask(flags)


def compute_mr(mask: PresenceMask) -> float:
    """Missing rate: 1 - (total present slots) / (N * U)."""
    N, U = mask.flags.shape
    return 1.0 - mask.flags.sum() / (N * U)


def apply_mask(modalities: list[np.ndarray], mask: PresenceMask) -> list[np.ndarray]:
    """Zero out missing modalities at the raw-input boundary.

    `modalities` is a list of (N, L, C_u) arrays; returns new arrays with
    rows of absent modalities replaced by zeros.
    """
    if mask.num_modalities != len(modalities):
        raise ProtocolError(
            f"mask has {mask.num_modalities} modalities, batch has {len(modalities)}"
        )
    out = []
    for u, arr in enumerate(modalities):
        if arr.shape[0] != mask.num_samples:
            raise ProtocolError(
                f"mask rows ({mask.num_samples}) do not match batch samples ({arr.shape[0]})"
            )
        keep = mask.flags[:, u].reshape(-1, 1, 1)
        out.append(arr * keep.astype(arr.dtype))
    return out
