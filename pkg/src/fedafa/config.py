"""Experiment config files.

A config is a YAML document whose sections mirror :class:`ExperimentConfig`::

    seed: 0
    rounds: 40
    clients: 10
    clients_per_round: all        # or an integer
    shard_proportions: uniform    # or a list summing to 1
    dataset:   {source, classes, features, train_size, test_size, normalization, ...}
    model:     {kind, hidden, output, negative_slope}
    training:  {epochs, batch_size, learning_rate, momentum}
    aggregator:
      name: afa                   # afa | fa | mkrum | comed
      afa:   {xi0, delta_xi}
      mkrum: {f, m}
    quality:   {alpha0, beta0, delta}
    adversary: {kind, count, ids, sigma, target_label, noise_amplitude, flip_fraction, per_sample_flips}

Every key is optional except ``dataset.source``; unknown keys are rejected.
Relative dataset paths resolve against the config file's directory.
"""

from __future__ import annotations

import difflib
from pathlib import Path
from typing import Any

import yaml

from .adversaries import ADVERSARY_KINDS, AdversarySpec
from .data import NORMALIZATIONS, SOURCES, DatasetSpec
from .local_training import MODEL_KINDS, OUTPUTS, ModelSpec, TrainingConfig
from .simulator import AGGREGATORS, AggregatorConfig, ExperimentConfig, QualityConfig


class ConfigError(ValueError):
    """Invalid experiment config; ``path`` names the offending field."""

    def __init__(self, path: str, message: str):
        self.path = path
        super().__init__(f"{path}: {message}" if path else message)


class _Section:
    """Strict view of one mapping in the config: tracks which keys were read."""

    def __init__(self, data: Any, path: str):
        if data is None:
            data = {}
        if not isinstance(data, dict):
            raise ConfigError(path, f"expected a mapping, got {type(data).__name__}")
        self.data = data
        self.path = path

    def _key(self, key: str) -> str:
        return f"{self.path}.{key}" if self.path else key

    def check_keys(self, allowed: list[str]) -> None:
        for key in self.data:
            if key not in allowed:
                close = difflib.get_close_matches(str(key), allowed, n=1)
                hint = f" (did you mean {close[0]!r}?)" if close else ""
                raise ConfigError(self._key(str(key)), f"unknown key{hint}")

    def section(self, key: str) -> "_Section":
        return _Section(self.data.get(key), self._key(key))

    def get(self, key: str, default, kind=None, *, check=None, choices=None, nullable=False):
        path = self._key(key)
        if key not in self.data:
            return default
        value = self.data[key]
        if value is None and nullable:
            return None
        if kind is float and isinstance(value, int) and not isinstance(value, bool):
            value = float(value)
        if kind is not None and (not isinstance(value, kind) or isinstance(value, bool) and kind is not bool):
            raise ConfigError(path, f"expected {kind.__name__}, got {value!r}")
        if choices is not None and value not in choices:
            raise ConfigError(path, f"must be one of {', '.join(map(str, choices))}; got {value!r}")
        if check is not None:
            ok, rule = check
            if not ok(value):
                raise ConfigError(path, f"must be {rule}; got {value!r}")
        return value


_POSITIVE = (lambda v: v > 0, "> 0")
_AT_LEAST_1 = (lambda v: v >= 1, ">= 1")
_NONNEG = (lambda v: v >= 0, ">= 0")


def _dataset(sec: _Section, base_dir: Path) -> DatasetSpec:
    sec.check_keys(["source", "classes", "features", "train_size", "test_size", "normalization", "path",
                    "labels_path", "test_path", "test_labels_path", "skip_header", "drop_last_columns",
                    "train_fraction", "center_scale", "cluster_std"])
    if "source" not in sec.data:
        raise ConfigError(sec._key("source"), "required")

    def path(key):
        p = sec.get(key, None, str, nullable=True)
        if p is None:
            return None
        p = Path(p)
        return str(p if p.is_absolute() else base_dir / p)

    source = sec.get("source", None, str, choices=SOURCES)
    synthetic = source == "synthetic_blobs"
    return DatasetSpec(
        source=source,
        classes=sec.get("classes", 2, int, check=(lambda v: v >= 2, ">= 2")),
        features=sec.get("features", 20, int, check=_AT_LEAST_1),
        # file sources are uncapped unless a size is given
        train_size=sec.get("train_size", 4000 if synthetic else None, int, check=_AT_LEAST_1, nullable=not synthetic),
        test_size=sec.get("test_size", 1000 if synthetic else None, int, check=_AT_LEAST_1, nullable=not synthetic),
        normalization=sec.get("normalization", "none", str, choices=NORMALIZATIONS),
        path=path("path"),
        labels_path=path("labels_path"),
        test_path=path("test_path"),
        test_labels_path=path("test_labels_path"),
        skip_header=sec.get("skip_header", False, bool),
        drop_last_columns=sec.get("drop_last_columns", 0, int, check=_NONNEG),
        train_fraction=sec.get("train_fraction", 0.8, float, check=(lambda v: 0 < v < 1, "in (0, 1)")),
        center_scale=sec.get("center_scale", 0.5, float, check=_POSITIVE),
        cluster_std=sec.get("cluster_std", 0.5, float, check=_POSITIVE),
    )


def _model(sec: _Section, dataset: DatasetSpec) -> ModelSpec:
    sec.check_keys(["kind", "hidden", "output", "negative_slope"])
    kind = sec.get("kind", "logistic_regression", str, choices=MODEL_KINDS)
    default_output = "sigmoid" if dataset.classes == 2 else "softmax"
    output = sec.get("output", default_output, str, choices=OUTPUTS)
    hidden = sec.get("hidden", [], list)
    for i, h in enumerate(hidden):
        if not isinstance(h, int) or isinstance(h, bool) or h < 1:
            raise ConfigError(f"{sec._key('hidden')}[{i}]", f"must be a positive integer; got {h!r}")
    if kind == "logistic_regression" and hidden:
        raise ConfigError(sec._key("hidden"), "logistic_regression takes no hidden layers")
    if kind == "mlp" and not hidden:
        raise ConfigError(sec._key("hidden"), "mlp needs at least one hidden layer")
    if output == "sigmoid" and dataset.classes != 2:
        raise ConfigError(sec._key("output"), "sigmoid output needs a 2-class dataset")
    out_units = 1 if output == "sigmoid" else dataset.classes
    return ModelSpec(
        kind=kind,
        layer_sizes=(dataset.features, *hidden, out_units),
        output=output,
        negative_slope=sec.get("negative_slope", 0.1, float, check=_NONNEG),
    )


def _training(sec: _Section, seed: int) -> TrainingConfig:
    sec.check_keys(["epochs", "batch_size", "learning_rate", "momentum"])
    return TrainingConfig(
        epochs=sec.get("epochs", 10, int, check=_NONNEG),
        batch_size=sec.get("batch_size", 200, int, check=_AT_LEAST_1),
        learning_rate=sec.get("learning_rate", 0.1, float, check=_POSITIVE),
        momentum=sec.get("momentum", 0.9, float, check=(lambda v: 0 <= v < 1, "in [0, 1)")),
        seed=seed,
    )


def _aggregator(sec: _Section, name_override: str | None) -> AggregatorConfig:
    sec.check_keys(["name", "afa", "mkrum"])
    name = sec.get("name", "afa", str, choices=AGGREGATORS)
    if name_override is not None:
        if name_override not in AGGREGATORS:
            raise ConfigError("aggregator.name", f"must be one of {', '.join(AGGREGATORS)}; got {name_override!r}")
        name = name_override
    afa = sec.section("afa")
    afa.check_keys(["xi0", "delta_xi"])
    mkrum = sec.section("mkrum")
    mkrum.check_keys(["f", "m"])
    return AggregatorConfig(
        name=name,
        xi0=afa.get("xi0", 2.0, float, check=_POSITIVE),
        delta_xi=afa.get("delta_xi", 0.5, float, check=_POSITIVE),
        mkrum_f=mkrum.get("f", None, int, check=_NONNEG, nullable=True),
        mkrum_m=mkrum.get("m", None, int, check=_AT_LEAST_1, nullable=True),
    )


def _quality(sec: _Section) -> QualityConfig:
    sec.check_keys(["alpha0", "beta0", "delta"])
    above_one = (lambda v: v > 1, "> 1")
    return QualityConfig(
        alpha0=sec.get("alpha0", 3.0, float, check=above_one),
        beta0=sec.get("beta0", 3.0, float, check=above_one),
        delta=sec.get("delta", 0.95, float, check=(lambda v: 0 < v < 1, "in (0, 1)")),
    )


def _adversary(sec: _Section, num_clients: int) -> AdversarySpec:
    sec.check_keys(["kind", "count", "ids", "sigma", "target_label", "noise_amplitude", "flip_fraction",
                    "per_sample_flips"])
    ids = sec.get("ids", None, list, nullable=True)
    if ids is not None:
        for i, cid in enumerate(ids):
            if not isinstance(cid, int) or isinstance(cid, bool) or not 0 <= cid < num_clients:
                raise ConfigError(f"{sec._key('ids')}[{i}]", f"must be a client id in [0, {num_clients}); got {cid!r}")
    count = sec.get("count", None, int, nullable=True,
                    check=(lambda v: 0 <= v <= num_clients, f"in [0, {num_clients}]"))
    return AdversarySpec(
        kind=sec.get("kind", "none", str, choices=ADVERSARY_KINDS),
        count=count,
        ids=tuple(ids) if ids is not None else None,
        sigma=sec.get("sigma", 20.0, float, check=_POSITIVE),
        target_label=sec.get("target_label", 0, int, check=_NONNEG),
        noise_amplitude=sec.get("noise_amplitude", 1.4, float, check=_POSITIVE),
        flip_fraction=sec.get("flip_fraction", 0.3, float, check=(lambda v: 0 < v < 1, "in (0, 1)")),
        per_sample_flips=sec.get("per_sample_flips", False, bool),
    )


def config_from_dict(raw: Any, base_dir: Path | str = ".", *, aggregator: str | None = None,
                     rounds: int | None = None, seed: int | None = None) -> ExperimentConfig:
    """Validate a parsed config mapping; keyword overrides replace file values."""
    root = _Section(raw, "")
    root.check_keys(["seed", "rounds", "clients", "clients_per_round", "shard_proportions", "dataset", "model",
                     "training", "aggregator", "quality", "adversary"])
    file_seed = root.get("seed", 0, int)
    seed = file_seed if seed is None else seed
    n_rounds = root.get("rounds", 40, int, check=_NONNEG) if rounds is None else rounds
    if n_rounds < 0:
        raise ConfigError("rounds", f"must be >= 0; got {n_rounds}")
    num_clients = root.get("clients", 10, int, check=_AT_LEAST_1)

    per_round = root.data.get("clients_per_round", "all")
    if per_round == "all" or per_round is None:
        per_round = None
    elif isinstance(per_round, bool) or not isinstance(per_round, int) or not 1 <= per_round <= num_clients:
        raise ConfigError("clients_per_round", f"must be 'all' or an integer in [1, {num_clients}]; got {per_round!r}")

    props = root.data.get("shard_proportions", "uniform")
    if props == "uniform" or props is None:
        props = None
    else:
        if not isinstance(props, list) or len(props) != num_clients:
            raise ConfigError("shard_proportions", f"must be 'uniform' or a list of {num_clients} numbers")
        if any(isinstance(p, bool) or not isinstance(p, (int, float)) or p <= 0 for p in props):
            raise ConfigError("shard_proportions", "entries must be positive numbers")
        if abs(sum(props) - 1.0) > 1e-9:
            raise ConfigError("shard_proportions", f"must sum to 1; got {sum(props)!r}")
        props = tuple(float(p) for p in props)

    dataset = _dataset(root.section("dataset"), Path(base_dir))
    try:
        return ExperimentConfig(
            dataset=dataset,
            model=_model(root.section("model"), dataset),
            training=_training(root.section("training"), seed),
            num_clients=num_clients,
            clients_per_round=per_round,
            aggregator=_aggregator(root.section("aggregator"), aggregator),
            quality=_quality(root.section("quality")),
            adversary=_adversary(root.section("adversary"), num_clients),
            shard_proportions=props,
            rounds=n_rounds,
            seed=seed,
        )
    except ConfigError:
        raise
    except ValueError as exc:
        raise ConfigError("", str(exc)) from None


def parse_config(path, **overrides) -> ExperimentConfig:
    """Load and validate a YAML experiment config."""
    path = Path(path)
    if not path.exists():
        raise ConfigError("", f"config file not found: {path}")
    try:
        raw = yaml.safe_load(path.read_text(encoding="utf-8"))
    except yaml.YAMLError as exc:
        raise ConfigError("", f"{path}: invalid YAML ({exc})") from None
    return config_from_dict(raw, path.parent, **overrides)
