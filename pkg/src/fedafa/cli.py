"""Command-line front-end: ``fedafa run <config> [--seeds 0,1,2] [--out dir] ...``.

For every seed the run writes two append-only CSV streams, flushed after
each round so an interrupted run leaves a valid prefix:

* ``metrics_seed{s}.csv``: ``round,test_error,n_good,n_bad,newly_blocked,agg_time_s,train_time_s``
* ``quality_seed{s}.csv``: ``round,client_id,alpha,beta,p_good,blocked``

``newly_blocked`` lists client ids joined by ``;``. After all seeds finish,
``summary.json`` holds the across-seed statistics and ``manifest.json``
lists every emitted file with its sha256. With ``--no-timing`` the two time
columns are left empty, which makes reruns byte-identical.

Exit codes: 0 success, 1 config error, 2 experiment failure.
"""

from __future__ import annotations

import argparse
import csv
import dataclasses
import hashlib
import json
import logging
import sys
from pathlib import Path

import numpy as np

from .config import ConfigError, parse_config
from .simulator import AGGREGATORS, ExperimentConfig, ExperimentResult, Federation, RoundRecord, run_experiment

log = logging.getLogger("fedafa")

METRICS_HEADER = ("round", "test_error", "n_good", "n_bad", "newly_blocked", "agg_time_s", "train_time_s")
QUALITY_HEADER = ("round", "client_id", "alpha", "beta", "p_good", "blocked")

EXIT_OK, EXIT_CONFIG, EXIT_RUNTIME = 0, 1, 2


def _parse_seeds(text: str) -> list[int]:
    try:
        seeds = [int(s) for s in text.split(",") if s.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"seeds must be comma-separated integers, got {text!r}") from None
    if not seeds:
        raise argparse.ArgumentTypeError("at least one seed is required")
    if len(set(seeds)) != len(seeds):
        raise argparse.ArgumentTypeError("seeds must be distinct")
    return seeds


def _sha256(path: Path) -> str:
    return hashlib.sha256(path.read_bytes()).hexdigest()


class _SeedWriter:
    """Per-round CSV streams for one seed."""

    def __init__(self, out_dir: Path, seed: int, timing: bool):
        self.metrics_path = out_dir / f"metrics_seed{seed}.csv"
        self.quality_path = out_dir / f"quality_seed{seed}.csv"
        self.timing = timing
        self._mf = open(self.metrics_path, "w", newline="", encoding="utf-8")
        self._qf = open(self.quality_path, "w", newline="", encoding="utf-8")
        self._m = csv.writer(self._mf, lineterminator="\n")
        self._q = csv.writer(self._qf, lineterminator="\n")
        self._m.writerow(METRICS_HEADER)
        self._q.writerow(QUALITY_HEADER)
        self._mf.flush()
        self._qf.flush()

    def __call__(self, rec: RoundRecord, fed: Federation) -> None:
        self._m.writerow([
            rec.round,
            repr(rec.test_error),
            len(rec.good_set),
            len(rec.bad_set),
            ";".join(str(c) for c in rec.newly_blocked),
            repr(rec.wall_time_aggregate) if self.timing else "",
            repr(rec.wall_time_train) if self.timing else "",
        ])
        for cid in sorted(fed.quality):
            st = fed.quality[cid]
            self._q.writerow([rec.round, cid, repr(float(st.alpha)), repr(float(st.beta)),
                              repr(rec.good_probability[cid]), int(st.blocked)])
        self._mf.flush()
        self._qf.flush()

    def close(self) -> None:
        self._mf.close()
        self._qf.close()


def summarize(results: list[ExperimentResult]) -> dict:
    """Across-seed statistics: final error, bad-client blocking, messages.

    ``final_error_std`` is the sample standard deviation (0 for one seed).
    ``bad_blocked_fraction`` pools every bad client of every seed;
    ``mean_block_round`` averages the block round of the bad clients that
    were blocked (``None`` if there were none).
    """
    errors = np.array([r.final_error for r in results])
    bad_total = bad_blocked = honest_blocked = 0
    block_rounds = []
    for r in results:
        rounds = r.block_rounds()
        bad_total += len(r.bad_ids)
        for cid, t in rounds.items():
            if cid in r.bad_ids:
                bad_blocked += 1
                block_rounds.append(t)
            else:
                honest_blocked += 1
    return {
        "seeds": [r.config.seed for r in results],
        "aggregator": results[0].config.aggregator.name,
        "adversary": results[0].config.adversary.kind,
        "rounds": results[0].config.rounds,
        "bad_client_ids": results[0].bad_ids,
        "final_errors": [float(e) for e in errors],
        "final_error_mean": float(errors.mean()),
        "final_error_std": float(errors.std(ddof=1)) if len(errors) > 1 else 0.0,
        "bad_clients_total": bad_total,
        "bad_clients_blocked": bad_blocked,
        "bad_blocked_fraction": bad_blocked / bad_total if bad_total else None,
        "mean_block_round": float(np.mean(block_rounds)) if block_rounds else None,
        "honest_clients_blocked": honest_blocked,
        "messages_mean": float(np.mean([r.messages for r in results])),
    }


def format_table(summary: dict) -> str:
    def pct(v):
        return "-" if v is None else f"{100 * v:.2f}%"

    rows = [
        ("aggregator", summary["aggregator"]),
        ("adversary", summary["adversary"]),
        ("seeds", ",".join(str(s) for s in summary["seeds"])),
        ("final test error", f"{100 * summary['final_error_mean']:.2f} +- {100 * summary['final_error_std']:.2f} %"),
        ("bad clients blocked", f"{summary['bad_clients_blocked']}/{summary['bad_clients_total']} "
                                f"({pct(summary['bad_blocked_fraction'])})"),
        ("mean block round", "-" if summary["mean_block_round"] is None else f"{summary['mean_block_round']:.2f}"),
        ("honest clients blocked", str(summary["honest_clients_blocked"])),
        ("messages per run", f"{summary['messages_mean']:.1f}"),
    ]
    width = max(len(k) for k, _ in rows)
    return "\n".join(f"{k:<{width}}  {v}" for k, v in rows)


def run(config: ExperimentConfig, config_path: Path, seeds: list[int], out_dir: Path,
        timing: bool = True) -> dict:
    """Run every seed, write the CSV streams, summary and manifest; return the manifest."""
    out_dir.mkdir(parents=True, exist_ok=True)
    results, files = [], []
    for seed in seeds:
        cfg = dataclasses.replace(config, seed=seed,
                                  training=dataclasses.replace(config.training, seed=seed))
        writer = _SeedWriter(out_dir, seed, timing)
        try:
            results.append(run_experiment(cfg, on_round=writer))
        finally:
            writer.close()
        files += [writer.metrics_path, writer.quality_path]
        log.info("seed %d: final error %.4f", seed, results[-1].final_error)

    summary = summarize(results)
    summary_path = out_dir / "summary.json"
    summary_path.write_text(json.dumps(summary, indent=2, sort_keys=True) + "\n", encoding="utf-8")
    files.append(summary_path)
    print(format_table(summary))

    manifest = {
        "config": str(config_path),
        "seeds": seeds,
        "out_dir": str(out_dir),
        "files": [{"name": p.name, "sha256": _sha256(p)} for p in files],
    }
    (out_dir / "manifest.json").write_text(json.dumps(manifest, indent=2) + "\n", encoding="utf-8")
    return manifest


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="fedafa", description="Federated averaging with adaptive robust aggregation.")
    parser.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")
    sub = parser.add_subparsers(dest="command", required=True)
    p = sub.add_parser("run", help="run an experiment config for one or more seeds")
    p.add_argument("config", type=Path)
    p.add_argument("--seeds", type=_parse_seeds, default=None,
                   help="comma-separated seeds (default: the config's seed)")
    p.add_argument("--out", type=Path, default=Path("runs"), help="output directory (default: runs)")
    p.add_argument("--aggregator", choices=AGGREGATORS, default=None, help="override aggregator.name")
    p.add_argument("--rounds", type=int, default=None, help="override rounds")
    p.add_argument("--no-timing", action="store_true",
                   help="leave wall-time columns empty so reruns produce identical files")
    return parser


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        config = parse_config(args.config, aggregator=args.aggregator, rounds=args.rounds)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    seeds = args.seeds if args.seeds is not None else [config.seed]
    try:
        run(config, args.config, seeds, args.out, timing=not args.no_timing)
    except Exception as exc:  # any experiment failure maps to one exit code
        log.debug("experiment failed", exc_info=True)
        print(f"run failed: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_RUNTIME
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
