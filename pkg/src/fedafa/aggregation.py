"""Server-side aggregation rules: AFA, FA, Multi-KRUM and coordinate-wise median.

Every rule consumes a list of :class:`RoundInput`. Inputs are processed in
ascending ``client_id`` order, so results are independent of the order in
which updates arrive.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Hashable, Sequence

import numpy as np

from .numerics import ParamVector, cosine_similarities, mean_std, median, weighted_average


@dataclass(frozen=True)
class RoundInput:
    client_id: Hashable
    update: ParamVector
    shard_size: int
    good_prob: float = 0.5

    def __post_init__(self):
        if self.shard_size < 1:
            raise ValueError(f"client {self.client_id}: shard_size must be >= 1")
        if not 0.0 < self.good_prob < 1.0:
            raise ValueError(f"client {self.client_id}: good_prob must lie in (0, 1)")


@dataclass(frozen=True)
class AfaHyperParams:
    xi0: float = 2.0
    delta_xi: float = 0.5

    def __post_init__(self):
        if not self.xi0 > 0:
            raise ValueError("xi0 must be > 0")
        if not self.delta_xi > 0:
            raise ValueError("delta_xi must be > 0")


@dataclass
class AggregationOutcome:
    new_params: ParamVector
    good_set: frozenset
    bad_set: frozenset = field(default_factory=frozenset)
    removal_rounds: int = 0


def _sorted_inputs(inputs: Sequence[RoundInput]) -> list[RoundInput]:
    if len(inputs) == 0:
        raise ValueError("aggregation needs at least one client update")
    ordered = sorted(inputs, key=lambda r: r.client_id)
    ids = [r.client_id for r in ordered]
    if len(set(ids)) != len(ids):
        raise ValueError("duplicate client ids in round input")
    d = np.shape(ordered[0].update)
    for r in ordered:
        if np.shape(r.update) != d:
            raise ValueError(f"client {r.client_id}: update dimension {np.shape(r.update)} != {d}")
    return ordered


def afa_aggregate(inputs: Sequence[RoundInput], hyper: AfaHyperParams = AfaHyperParams()) -> AggregationOutcome:
    """Adaptive Federated Averaging with iterative similarity-based rejection.

    Each pass aggregates the current good set with weights ``p_k * n_k``,
    scores every member by cosine similarity to that aggregate and discards
    outliers on one side of the median: below ``median - xi * std`` when the
    mean sits below the median, above ``median + xi * std`` otherwise. ``xi``
    grows by ``delta_xi`` after every pass; the loop stops on the first pass
    that removes nobody. The returned parameters are the aggregate over the
    surviving clients.

    The updates are stacked once, so a pass costs two matrix-vector products.
    """
    ordered = _sorted_inputs(inputs)
    updates = np.stack([np.asarray(r.update, dtype=np.float64) for r in ordered])
    weights = np.array([r.good_prob * r.shard_size for r in ordered])
    norms = np.sqrt(np.einsum("ij,ij->i", updates, updates))
    good = np.arange(len(ordered))
    xi = hyper.xi0
    passes = 0
    while True:
        passes += 1
        # removed clients get weight 0; the full matrix avoids copying the good rows
        w = np.zeros_like(weights)
        w[good] = weights[good] / weights[good].sum()
        aggregate = w @ updates
        sims = cosine_similarities(updates, aggregate, norms)[good]
        mu_hat, sigma = mean_std(sims)
        mu_bar = median(sims)
        if mu_hat < mu_bar:
            flagged = sims < mu_bar - xi * sigma
        else:
            flagged = sims > mu_bar + xi * sigma
        if not flagged.any() or flagged.all():
            # flagged.all() cannot arise from the strict tests; guard so G never empties
            break
        good = good[~flagged]
        xi += hyper.delta_xi

    # the last pass removed nobody, so its aggregate is already over the final good set
    bad = np.setdiff1d(np.arange(len(ordered)), good)
    return AggregationOutcome(
        new_params=aggregate,
        good_set=frozenset(ordered[i].client_id for i in good),
        bad_set=frozenset(ordered[i].client_id for i in bad),
        removal_rounds=passes,
    )


def fa_aggregate(inputs: Sequence[RoundInput]) -> ParamVector:
    """Federated Averaging: mean of the updates weighted by shard size."""
    ordered = _sorted_inputs(inputs)
    return weighted_average([r.update for r in ordered], [r.shard_size for r in ordered])


def mkrum_defaults(num_clients: int) -> tuple[int, int]:
    """Default ``(f, m)`` for Multi-KRUM: ``f = floor(0.3 K)``, ``m = K - f``."""
    f = int(np.floor(0.3 * num_clients))
    return f, num_clients - f


def krum_scores(updates: np.ndarray, f: int) -> np.ndarray:
    """KRUM score of each row: summed squared distance to its ``K - f - 2`` nearest other rows."""
    k = updates.shape[0]
    sq = np.einsum("ij,ij->i", updates, updates)
    dist = sq[:, None] + sq[None, :] - 2.0 * (updates @ updates.T)
    np.maximum(dist, 0.0, out=dist)
    np.fill_diagonal(dist, np.inf)
    n_near = k - f - 2
    if n_near == 0:
        return np.zeros(k)
    nearest = np.partition(dist, n_near - 1, axis=1)[:, :n_near]
    return nearest.sum(axis=1)


def mkrum_aggregate(inputs: Sequence[RoundInput], f: int | None = None, m: int | None = None) -> ParamVector:
    """Multi-KRUM: unweighted mean of the ``m`` updates with the lowest KRUM scores.

    Scores that agree to within 1e-12 of the largest score are treated as
    tied and resolved by ascending client id.
    """
    ordered = _sorted_inputs(inputs)
    k = len(ordered)
    f_default, m_default = mkrum_defaults(k)
    f = f_default if f is None else f
    m = m_default if m is None else m
    if f < 0:
        raise ValueError("f must be nonnegative")
    if k < f + 3:
        raise ValueError(f"Multi-KRUM needs K >= f + 3 (K={k}, f={f})")
    if not 1 <= m <= k:
        raise ValueError(f"m must lie in [1, K] (m={m}, K={k})")

    updates = np.stack([np.asarray(r.update, dtype=np.float64) for r in ordered])
    scores = krum_scores(updates, f)
    scale = float(np.max(scores)) or 1.0
    keys = np.round(scores / scale, 12)
    chosen = np.lexsort((np.arange(k), keys))[:m]
    return weighted_average([updates[i] for i in sorted(chosen)], [1.0] * m)


def comed_aggregate(inputs: Sequence[RoundInput]) -> ParamVector:
    """Coordinate-wise median of the client updates (unweighted)."""
    ordered = _sorted_inputs(inputs)
    updates = np.stack([np.asarray(r.update, dtype=np.float64) for r in ordered])
    return np.asarray(median(updates, axis=0), dtype=np.float64)
