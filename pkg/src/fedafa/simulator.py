"""Synchronous federated-learning rounds with adversaries, AFA quality tracking and blocking.

Every random draw comes from a stream derived from ``(experiment seed,
purpose, client id, round)``, so a run is reproducible from its config alone
and does not depend on the order clients are processed in.
"""

from __future__ import annotations

import logging
import time
from dataclasses import dataclass
from typing import Callable

import numpy as np

from . import aggregation as agg
from .adversaries import AdversarySpec, bad_client_ids, byzantine_update, corrupt_shard
from .client_quality import (
    DEFAULT_ALPHA0,
    DEFAULT_BETA0,
    DEFAULT_DELTA,
    ClientQualityState,
    block,
    good_probability,
    posterior_update,
    should_block,
)
from .data import DatasetSpec, LabeledDataset, load_dataset, shard_iid
from .local_training import ModelSpec, TrainingConfig, evaluate, init_params, sgd_local_train
from .numerics import ParamVector

log = logging.getLogger(__name__)

AGGREGATORS = ("afa", "fa", "mkrum", "comed")

# stream tags for np.random.SeedSequence
_INIT, _TRAIN, _BYZANTINE, _CORRUPT, _SELECT = 1, 2, 3, 4, 5


def _stream(seed: int, *tags: int) -> np.random.Generator:
    return np.random.default_rng(np.random.SeedSequence([seed, *tags]))


class AllClientsBlockedError(RuntimeError):
    pass


@dataclass(frozen=True)
class AggregatorConfig:
    name: str = "afa"
    xi0: float = 2.0
    delta_xi: float = 0.5
    mkrum_f: int | None = None
    mkrum_m: int | None = None

    def __post_init__(self):
        if self.name not in AGGREGATORS:
            raise ValueError(f"unknown aggregator {self.name!r}")
        agg.AfaHyperParams(self.xi0, self.delta_xi)


@dataclass(frozen=True)
class QualityConfig:
    alpha0: float = DEFAULT_ALPHA0
    beta0: float = DEFAULT_BETA0
    delta: float = DEFAULT_DELTA

    def __post_init__(self):
        if not (self.alpha0 > 1 and self.beta0 > 1):
            raise ValueError("alpha0 and beta0 must both be > 1")
        if not 0.0 < self.delta < 1.0:
            raise ValueError("delta must lie in (0, 1)")


@dataclass(frozen=True)
class ExperimentConfig:
    dataset: DatasetSpec
    model: ModelSpec
    training: TrainingConfig = TrainingConfig()
    num_clients: int = 10
    clients_per_round: int | None = None  # None: every unblocked client
    aggregator: AggregatorConfig = AggregatorConfig()
    quality: QualityConfig = QualityConfig()
    adversary: AdversarySpec = AdversarySpec()
    shard_proportions: tuple[float, ...] | None = None
    rounds: int = 40
    seed: int = 0

    def __post_init__(self):
        if self.num_clients < 1:
            raise ValueError("num_clients must be >= 1")
        if self.clients_per_round is not None and not 1 <= self.clients_per_round <= self.num_clients:
            raise ValueError("clients_per_round must lie in [1, num_clients]")
        if self.rounds < 0:
            raise ValueError("rounds must be >= 0")
        if self.model.layer_sizes[0] != self.dataset.features:
            raise ValueError("model input size does not match dataset features")


@dataclass
class RoundRecord:
    round: int
    test_error: float
    participants: tuple
    good_set: frozenset
    bad_set: frozenset
    good_probability: dict
    newly_blocked: tuple
    wall_time_train: float
    wall_time_aggregate: float
    removal_rounds: int = 0


@dataclass
class ExperimentResult:
    config: ExperimentConfig
    records: list[RoundRecord]
    initial_params: ParamVector
    final_params: ParamVector
    quality: dict[int, ClientQualityState]
    bad_ids: list[int]

    @property
    def final_error(self) -> float:
        return self.records[-1].test_error if self.records else float("nan")

    def block_rounds(self) -> dict[int, int]:
        """Round in which each blocked client was blocked."""
        return {cid: rec.round for rec in self.records for cid in rec.newly_blocked}

    @property
    def messages(self) -> int:
        """Client updates received by the server over the whole run."""
        return sum(len(rec.participants) for rec in self.records)


class Federation:
    """Mutable state of one experiment: global model, shards and client posteriors."""

    def __init__(self, config: ExperimentConfig):
        self.config = config
        train, self.test = load_dataset(config.dataset, config.seed)
        shards = shard_iid(train, config.num_clients, config.shard_proportions, seed=config.seed)
        self.bad_ids = bad_client_ids(config.num_clients, config.adversary)
        if config.adversary.is_data_level:
            for cid in self.bad_ids:
                shards[cid] = corrupt_shard(shards[cid], config.adversary, _stream(config.seed, _CORRUPT, cid))
        self.shards: list[LabeledDataset] = shards
        self.params = init_params(config.model, _stream(config.seed, _INIT))
        self.initial_params = self.params.copy()
        q = config.quality
        self.quality = {cid: ClientQualityState(q.alpha0, q.beta0) for cid in range(config.num_clients)}
        self.round = 0

    @property
    def blocked(self) -> set[int]:
        return {cid for cid, st in self.quality.items() if st.blocked}

    def _select(self, t: int) -> list[int]:
        available = [cid for cid in range(self.config.num_clients) if not self.quality[cid].blocked]
        if not available:
            raise AllClientsBlockedError(f"round {t}: every client is blocked")
        k = self.config.clients_per_round
        if k is None or k >= len(available):
            return available
        picked = _stream(self.config.seed, _SELECT, t).choice(available, size=k, replace=False)
        return sorted(int(c) for c in picked)

    def _client_update(self, cid: int, t: int) -> ParamVector:
        cfg = self.config
        if cfg.adversary.kind == "byzantine" and cid in self.bad_ids:
            return byzantine_update(self.params, cfg.adversary.sigma, _stream(cfg.seed, _BYZANTINE, cid, t))
        return sgd_local_train(cfg.model, self.params, self.shards[cid], cfg.training,
                               _stream(cfg.seed, _TRAIN, cid, t))

    def run_round(self) -> RoundRecord:
        cfg = self.config
        t = self.round + 1
        selected = self._select(t)

        tic = time.perf_counter()
        updates = {cid: self._client_update(cid, t) for cid in selected}
        train_time = time.perf_counter() - tic

        tic = time.perf_counter()
        probs = {cid: good_probability(self.quality[cid]) for cid in selected}
        inputs = [agg.RoundInput(cid, updates[cid], len(self.shards[cid]), probs[cid]) for cid in selected]
        newly_blocked: list[int] = []
        removal_rounds = 0
        name = cfg.aggregator.name
        if name == "afa":
            outcome = agg.afa_aggregate(inputs, agg.AfaHyperParams(cfg.aggregator.xi0, cfg.aggregator.delta_xi))
            new_params = outcome.new_params
            good, bad = outcome.good_set, outcome.bad_set
            removal_rounds = outcome.removal_rounds
            for cid in selected:
                self.quality[cid] = posterior_update(self.quality[cid], cid in good)
                if should_block(self.quality[cid], cfg.quality.delta):
                    self.quality[cid] = block(self.quality[cid])
                    newly_blocked.append(cid)
        else:
            if name == "fa":
                new_params = agg.fa_aggregate(inputs)
            elif name == "mkrum":
                new_params = agg.mkrum_aggregate(inputs, cfg.aggregator.mkrum_f, cfg.aggregator.mkrum_m)
            else:
                new_params = agg.comed_aggregate(inputs)
            good, bad = frozenset(selected), frozenset()
        agg_time = time.perf_counter() - tic

        self.params = np.asarray(new_params, dtype=np.float64)
        self.round = t
        err = evaluate(cfg.model, self.params, self.test)
        if newly_blocked:
            log.info("round %d: blocked clients %s", t, newly_blocked)
        return RoundRecord(
            round=t,
            test_error=err,
            participants=tuple(selected),
            good_set=frozenset(good),
            bad_set=frozenset(bad),
            good_probability={cid: good_probability(st) for cid, st in self.quality.items()},
            newly_blocked=tuple(newly_blocked),
            wall_time_train=train_time,
            wall_time_aggregate=agg_time,
            removal_rounds=removal_rounds,
        )


def run_experiment(config: ExperimentConfig,
                   on_round: Callable[[RoundRecord, Federation], None] | None = None) -> ExperimentResult:
    """Build the federation and run ``config.rounds`` rounds.

    ``on_round`` is called after every round, e.g. to stream metrics to disk.
    """
    fed = Federation(config)
    records = []
    for _ in range(config.rounds):
        rec = fed.run_round()
        records.append(rec)
        if on_round is not None:
            on_round(rec, fed)
    return ExperimentResult(
        config=config,
        records=records,
        initial_params=fed.initial_params,
        final_params=fed.params.copy(),
        quality=dict(fed.quality),
        bad_ids=list(fed.bad_ids),
    )
