"""Bad-client behaviours.

Data-level attacks (label flipping, input noise, binary feature flips)
corrupt a client's shard once at setup; the client then trains honestly on
it. The Byzantine attack replaces local training with a random perturbation
of the broadcast model, redrawn every round.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .data import LabeledDataset
from .numerics import ParamVector

ADVERSARY_KINDS = ("none", "byzantine", "label_flip", "noisy_input", "noisy_binary_flip")


@dataclass(frozen=True)
class AdversarySpec:
    kind: str = "none"
    count: int | None = None  # default floor(0.3 K)
    ids: tuple[int, ...] | None = None  # default: the last `count` client ids
    sigma: float = 20.0
    target_label: int = 0
    noise_amplitude: float = 1.4
    flip_fraction: float = 0.3
    per_sample_flips: bool = False

    def __post_init__(self):
        if self.kind not in ADVERSARY_KINDS:
            raise ValueError(f"unknown adversary kind {self.kind!r}")
        if not self.sigma > 0:
            raise ValueError("sigma must be > 0")
        if not self.noise_amplitude > 0:
            raise ValueError("noise_amplitude must be > 0")
        if not 0.0 < self.flip_fraction < 1.0:
            raise ValueError("flip_fraction must lie in (0, 1)")
        if self.target_label < 0:
            raise ValueError("target_label must be a class index")
        if self.count is not None and self.count < 0:
            raise ValueError("count must be >= 0")
        if self.ids is not None:
            object.__setattr__(self, "ids", tuple(int(i) for i in self.ids))

    @property
    def is_data_level(self) -> bool:
        return self.kind in ("label_flip", "noisy_input", "noisy_binary_flip")


def bad_client_ids(num_clients: int, spec: AdversarySpec) -> list[int]:
    """Ids of the bad clients: explicit ``spec.ids`` or the last ``count`` ids."""
    if spec.kind == "none":
        return []
    if spec.ids is not None:
        ids = sorted(set(spec.ids))
        if ids and (ids[0] < 0 or ids[-1] >= num_clients):
            raise ValueError(f"adversary ids {ids} outside [0, {num_clients})")
        return ids
    count = int(np.floor(0.3 * num_clients)) if spec.count is None else spec.count
    if count > num_clients:
        raise ValueError(f"{count} bad clients requested but only {num_clients} clients")
    return list(range(num_clients - count, num_clients))


def byzantine_update(w_t: ParamVector, sigma: float, rng: np.random.Generator) -> ParamVector:
    """``w_t`` plus i.i.d. ``Normal(0, sigma^2)`` noise on every coordinate."""
    w_t = np.asarray(w_t, dtype=np.float64)
    return w_t + rng.normal(0.0, sigma, size=w_t.shape)


def flip_labels(shard: LabeledDataset, target: int = 0) -> LabeledDataset:
    return LabeledDataset(shard.inputs.copy(), np.full_like(shard.labels, target))


def add_input_noise(shard: LabeledDataset, amplitude: float, rng: np.random.Generator) -> LabeledDataset:
    """Add ``Uniform(-amplitude, amplitude)`` noise to every input, then clip to [-1, 1]."""
    noise = rng.uniform(-amplitude, amplitude, size=shard.inputs.shape)
    return LabeledDataset(np.clip(shard.inputs + noise, -1.0, 1.0), shard.labels.copy())


def flip_binary_features(shard: LabeledDataset, fraction: float, rng: np.random.Generator,
                         per_sample: bool = False) -> LabeledDataset:
    """Flip ``floor(fraction * features)`` binary features.

    By default one random column subset is chosen and flipped for every row;
    with ``per_sample`` each row draws its own subset.
    """
    x = shard.inputs
    if not np.all((x == 0.0) | (x == 1.0)):
        raise ValueError("flip_binary_features needs {0, 1}-valued inputs")
    n, n_feat = x.shape
    k = int(np.floor(fraction * n_feat))
    mask = np.zeros_like(x, dtype=bool)
    if k > 0:
        if per_sample:
            for row in range(n):
                mask[row, rng.choice(n_feat, size=k, replace=False)] = True
        else:
            mask[:, rng.choice(n_feat, size=k, replace=False)] = True
    return LabeledDataset(np.where(mask, 1.0 - x, x), shard.labels.copy())


def corrupt_shard(shard: LabeledDataset, spec: AdversarySpec, rng: np.random.Generator) -> LabeledDataset:
    """Apply the data-level attack named by ``spec`` (identity for other kinds)."""
    if spec.kind == "label_flip":
        return flip_labels(shard, spec.target_label)
    if spec.kind == "noisy_input":
        return add_input_noise(shard, spec.noise_amplitude, rng)
    if spec.kind == "noisy_binary_flip":
        return flip_binary_features(shard, spec.flip_fraction, rng, spec.per_sample_flips)
    return shard
