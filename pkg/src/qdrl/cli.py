"""Command line entry point: ``qdrl run | repro | report``.

Exit codes: 0 success, 2 invalid config or arguments, 3 I/O or file-format
failure. Every file is written below ``--out``.
"""

from __future__ import annotations

import argparse
import logging
import sys
from pathlib import Path

import numpy as np

from . import io as qio
from .algorithms import Scheduler
from .config import ConfigError, load_config, save_config
from .envs import make_env
from .repro import ReproReport, aggregate_seeds, evaluate_actor_as_archive, reevaluate_archive

log = logging.getLogger("qdrl")

EXIT_OK, EXIT_CONFIG, EXIT_IO = 0, 2, 3

METRICS_FILE = "metrics.csv"
ARCHIVE_FILE = "archive.qdrl"
LEARNER_FILE = "learner.qdrl"
CONFIG_FILE = "config.yaml"

SUMMARY_COLUMNS = (
    "source", "n_cells", "n_reps", "stored_qd_score", "expected_qd_score",
    "expected_distance_to_descriptor", "expected_distance_to_centroid", "expected_max_fitness",
)
CELL_COLUMNS = ("cell", "stored_fitness", "expected_fitness", "expected_distance", "expected_centroid_distance")


class UsageError(Exception):
    """Bad arguments or inconsistent inputs (exit 2)."""


def _out_dir(path: str) -> Path:
    out = Path(path)
    out.mkdir(parents=True, exist_ok=True)
    return out


def cmd_run(args) -> int:
    config = load_config(args.config)
    if args.seed is not None:
        config = config.replace(seed=args.seed).validate()
    out = _out_dir(args.out)
    sched = Scheduler(config, workers=args.workers)

    def progress(rep):
        log.info("gen %d evals %d qd %.3f coverage %.3f", rep.generation, rep.evaluations, rep.qd_score, rep.coverage)

    result = sched.run(progress)
    save_config(config, out / CONFIG_FILE)
    qio.write_rows(out / METRICS_FILE, qio.METRIC_COLUMNS, qio.metrics_rows(result.init_report, result.reports))
    learner = result.learner
    actor, actor_arch = None, None
    if learner is not None:
        actor, actor_arch = learner.actor, learner.actor_arch
        qio.save_learner(out / LEARNER_FILE, learner)
    meta = {"algorithm": config.algorithm, "seed": config.seed, "evaluations": result.evaluations,
            "actor_conditioned": bool(learner is not None and learner.actor_conditioned)}
    qio.save_archive(out / ARCHIVE_FILE, qio.ArchiveFile(result.archive, result.env, result.policy_arch,
                                                         actor, actor_arch, meta))
    return EXIT_OK


def _summary_row(source: str, rep: ReproReport, stored_qd: float) -> dict:
    return {
        "source": source, "n_cells": len(rep.cells), "n_reps": rep.n_reps, "stored_qd_score": stored_qd,
        "expected_qd_score": rep.expected_qd_score,
        "expected_distance_to_descriptor": rep.expected_distance_to_descriptor,
        "expected_distance_to_centroid": rep.expected_distance_to_centroid,
        "expected_max_fitness": rep.expected_max_fitness,
    }


def _cell_rows(rep: ReproReport, archive) -> list[dict]:
    return [
        {"cell": int(c), "stored_fitness": archive.fitnesses[c], "expected_fitness": f,
         "expected_distance": d, "expected_centroid_distance": cd}
        for c, f, d, cd in zip(rep.cells, rep.cell_fitness, rep.cell_distance, rep.cell_centroid_distance)
    ]


def cmd_repro(args) -> int:
    if args.reps < 1:
        raise UsageError("--reps must be >= 1")
    af = qio.load_archive(args.archive)
    stored_env = af.env
    env_id = args.env or stored_env.env_id
    if env_id != stored_env.env_id:
        raise UsageError(f"env mismatch: archive was produced on {stored_env.env_id!r}, --env is {env_id!r}")
    params = {k: v for k, v in stored_env.to_dict().items() if k != "id"}
    for name in ("action_noise", "reset_noise", "descriptor_noise"):
        value = getattr(args, name)
        if value is not None:
            params[name] = value
    try:
        env = make_env(env_id, **params)
    except (TypeError, ValueError) as exc:
        raise UsageError(str(exc)) from None
    out = _out_dir(args.out)
    arc = af.archive
    stored_qd = arc.metrics()[0]
    rep = reevaluate_archive(arc, env, af.policy_arch, args.reps, args.seed, workers=args.workers)
    rows = [_summary_row("archive", rep, stored_qd)]
    qio.write_rows(out / "repro_archive_cells.csv", CELL_COLUMNS, _cell_rows(rep, arc))
    if af.actor is not None and len(arc) > 0:
        conditioned = af.actor_arch.input_dim > env.state_dim
        if conditioned:
            arep = evaluate_actor_as_archive(af.actor, af.actor_arch, arc, env, args.reps, args.seed,
                                             folded=args.actor_path == "fold", workers=args.workers)
            rows.append(_summary_row("actor", arep, stored_qd))
            qio.write_rows(out / "repro_actor_cells.csv", CELL_COLUMNS, _cell_rows(arep, arc))
        else:
            log.info("stored actor is not descriptor-conditioned, skipping the actor-as-archive report")
    qio.write_rows(out / "repro_summary.csv", SUMMARY_COLUMNS, rows)
    return EXIT_OK


def cmd_report(args) -> int:
    runs = []
    for d in args.rundirs:
        path = Path(d) / METRICS_FILE
        try:
            columns, rows = qio.read_rows(path)
        except FileNotFoundError:
            raise UsageError(f"{d}: no {METRICS_FILE}") from None
        if tuple(columns) != qio.METRIC_COLUMNS:
            raise UsageError(f"{path}: unexpected columns {columns}")
        runs.append((d, rows))
    lengths = {d: len(rows) for d, rows in runs}
    if len(set(lengths.values())) > 1:
        common = max(set(lengths.values()), key=list(lengths.values()).count)
        offenders = ", ".join(f"{d} ({n} generations)" for d, n in lengths.items() if n != common)
        raise UsageError(f"inconsistent generation counts; expected {common}, offenders: {offenders}")
    gens = [[r["generation"] for r in rows] for _, rows in runs]
    if any(g != gens[0] for g in gens):
        raise UsageError("runs disagree on generation indices")
    metrics = qio.METRIC_COLUMNS[1:]
    series = [np.array([[r[m] for m in metrics] for r in rows]) for _, rows in runs]
    agg = aggregate_seeds(series)
    columns = ["generation"] + [f"{m}_{stat}" for m in metrics for stat in ("median", "q1", "q3")]
    out_rows = []
    for i, g in enumerate(gens[0]):
        row = {"generation": int(g)}
        for j, m in enumerate(metrics):
            for stat in ("median", "q1", "q3"):
                row[f"{m}_{stat}"] = agg[stat][i, j]
        out_rows.append(row)
    out = _out_dir(args.out)
    qio.write_rows(out / "aggregate.csv", columns, out_rows)
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="qdrl", description="Quality-diversity search with descriptor-conditioned RL.")
    p.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")
    sub = p.add_subparsers(dest="command", required=True)

    r = sub.add_parser("run", help="run one experiment from a YAML config")
    r.add_argument("config")
    r.add_argument("--seed", type=int, default=None, help="override the config's master seed")
    r.add_argument("--out", required=True)
    r.add_argument("--workers", type=int, default=1)
    r.set_defaults(func=cmd_run)

    e = sub.add_parser("repro", help="re-evaluate a saved archive (and its actor) several times")
    e.add_argument("archive")
    e.add_argument("--env", default=None, help="env id; must match the archive's")
    e.add_argument("--reps", type=int, default=32)
    e.add_argument("--seed", type=int, default=0)
    e.add_argument("--out", required=True)
    e.add_argument("--workers", type=int, default=1)
    e.add_argument("--actor-path", choices=("fold", "direct"), default="fold")
    e.add_argument("--action-noise", type=float, default=None)
    e.add_argument("--reset-noise", type=float, default=None)
    e.add_argument("--descriptor-noise", type=float, default=None)
    e.set_defaults(func=cmd_repro)

    a = sub.add_parser("report", help="median and quartiles across run directories")
    a.add_argument("rundirs", nargs="+")
    a.add_argument("--out", required=True)
    a.set_defaults(func=cmd_report)
    return p


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s", stream=sys.stderr)
    if getattr(args, "workers", 1) < 1:
        print("error: --workers must be >= 1", file=sys.stderr)
        return EXIT_CONFIG
    try:
        return args.func(args)
    except (ConfigError, UsageError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (qio.FormatError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_IO


if __name__ == "__main__":
    sys.exit(main())
