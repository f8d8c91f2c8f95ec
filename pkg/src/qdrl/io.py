"""On-disk formats: archive files, learner checkpoints and metrics CSVs.

Archive and learner files are zip containers holding a ``header.json``
member plus one ``.npy`` member per array. Members are written in a fixed
order with a fixed timestamp and no compression so identical contents give
identical bytes.
"""

from __future__ import annotations

import csv
import io as _io
import json
import math
import zipfile
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from . import nn
from .archive import Archive
from .envs import QDEnv, env_from_dict
from .rl import ActorCriticState

ARCHIVE_MAGIC = "qdrl-archive"
LEARNER_MAGIC = "qdrl-learner"
FORMAT_VERSION = 1

_EPOCH = (1980, 1, 1, 0, 0, 0)

METRIC_COLUMNS = (
    "generation", "evaluations", "qd_score", "coverage", "max_fitness",
    "improvement_ga", "improvement_pg", "improvement_ai", "improvement_init", "mean_similarity",
)


class FormatError(ValueError):
    """Unreadable file, wrong magic or unsupported version."""


def _write_container(path: str | Path, header: dict, arrays: dict[str, np.ndarray]) -> None:
    path = Path(path)
    with zipfile.ZipFile(path, "w", compression=zipfile.ZIP_STORED) as zf:
        info = zipfile.ZipInfo("header.json", date_time=_EPOCH)
        zf.writestr(info, json.dumps(header, sort_keys=True, indent=1).encode("utf-8"))
        for name in sorted(arrays):
            buf = _io.BytesIO()
            np.lib.format.write_array(buf, np.ascontiguousarray(arrays[name]), allow_pickle=False)
            zf.writestr(zipfile.ZipInfo(f"{name}.npy", date_time=_EPOCH), buf.getvalue())


def _read_container(path: str | Path, magic: str) -> tuple[dict, dict[str, np.ndarray]]:
    try:
        with zipfile.ZipFile(path, "r") as zf:
            header = json.loads(zf.read("header.json").decode("utf-8"))
            arrays = {}
            for name in zf.namelist():
                if name.endswith(".npy"):
                    arrays[name[:-4]] = np.lib.format.read_array(_io.BytesIO(zf.read(name)), allow_pickle=False)
    except (zipfile.BadZipFile, KeyError, json.JSONDecodeError) as exc:
        raise FormatError(f"{path}: not a {magic} file ({exc})") from None
    if header.get("magic") != magic:
        raise FormatError(f"{path}: expected magic {magic!r}, found {header.get('magic')!r}")
    if header.get("version") != FORMAT_VERSION:
        raise FormatError(f"{path}: unsupported format version {header.get('version')!r} "
                          f"(this build reads version {FORMAT_VERSION})")
    return header, arrays


# archives


@dataclass
class ArchiveFile:
    archive: Archive
    env: QDEnv
    policy_arch: nn.Architecture
    actor: np.ndarray | None = None
    actor_arch: nn.Architecture | None = None
    metadata: dict | None = None


def save_archive(path: str | Path, af: ArchiveFile) -> None:
    arc = af.archive
    cells = arc.occupied_indices()
    header = {
        "magic": ARCHIVE_MAGIC,
        "version": FORMAT_VERSION,
        "env": af.env.to_dict(),
        "architecture": af.policy_arch.to_dict(),
        "actor_architecture": None if af.actor_arch is None else af.actor_arch.to_dict(),
        "metadata": af.metadata or {},
    }
    arrays = {
        "centroids": arc.centroids,
        "cells": cells.astype(np.int64),
        "genotypes": arc.genotypes[cells],
        "fitnesses": arc.fitnesses[cells],
        "descriptors": arc.descriptors[cells],
    }
    if af.actor is not None:
        if af.actor_arch is None:
            raise ValueError("actor parameters need an actor architecture")
        arrays["actor"] = af.actor
    _write_container(path, header, arrays)


def load_archive(path: str | Path) -> ArchiveFile:
    header, arrays = _read_container(path, ARCHIVE_MAGIC)
    try:
        arch = nn.Architecture.from_dict(header["architecture"])
        env = env_from_dict(header["env"])
        arc = Archive(arrays["centroids"], arch.n_params)
        cells = arrays["cells"]
        arc.genotypes[cells] = arrays["genotypes"]
        arc.fitnesses[cells] = arrays["fitnesses"]
        arc.descriptors[cells] = arrays["descriptors"]
        arc.occupied[cells] = True
        actor_arch = header.get("actor_architecture")
        actor_arch = None if actor_arch is None else nn.Architecture.from_dict(actor_arch)
    except (KeyError, TypeError, ValueError, IndexError) as exc:
        raise FormatError(f"{path}: malformed archive file ({exc})") from None
    return ArchiveFile(arc, env, arch, arrays.get("actor"), actor_arch, header.get("metadata", {}))


# learner checkpoints

_LEARNER_ARRAYS = ("actor", "critics", "actor_target", "critics_target")


def save_learner(path: str | Path, state: ActorCriticState) -> None:
    header = {
        "magic": LEARNER_MAGIC,
        "version": FORMAT_VERSION,
        "actor_architecture": state.actor_arch.to_dict(),
        "critic_architecture": state.critic_arch.to_dict(),
        "dims": [state.state_dim, state.action_dim, state.descriptor_dim],
        "actor_conditioned": state.actor_conditioned,
        "critic_conditioned": state.critic_conditioned,
        "step": state.step,
        "actor_updates": state.actor_updates,
    }
    arrays = {name: getattr(state, name) for name in _LEARNER_ARRAYS}
    for name in ("actor_opt", "critics_opt"):
        opt: nn.AdamState = getattr(state, name)
        header[name] = {"step": opt.step, "lr": opt.lr, "beta1": opt.beta1, "beta2": opt.beta2, "eps": opt.eps}
        arrays[f"{name}_m"] = opt.m
        arrays[f"{name}_v"] = opt.v
    _write_container(path, header, arrays)


def load_learner(path: str | Path) -> ActorCriticState:
    h, arrays = _read_container(path, LEARNER_MAGIC)
    try:
        opts = {
            name: nn.AdamState(arrays[f"{name}_m"], arrays[f"{name}_v"], **h[name])
            for name in ("actor_opt", "critics_opt")
        }
        sd, ad, dd = h["dims"]
        return ActorCriticState(
            **{name: arrays[name] for name in _LEARNER_ARRAYS}, **opts,
            actor_arch=nn.Architecture.from_dict(h["actor_architecture"]),
            critic_arch=nn.Architecture.from_dict(h["critic_architecture"]),
            state_dim=sd, action_dim=ad, descriptor_dim=dd,
            actor_conditioned=h["actor_conditioned"], critic_conditioned=h["critic_conditioned"],
            step=h["step"], actor_updates=h["actor_updates"],
        )
    except (KeyError, TypeError, ValueError) as exc:
        raise FormatError(f"{path}: malformed learner checkpoint ({exc})") from None


# CSV


def _fmt(v) -> str:
    if isinstance(v, str):
        return v
    if isinstance(v, (bool, np.bool_)):
        return str(int(v))
    if isinstance(v, (int, np.integer)):
        return str(int(v))
    v = float(v)
    return "nan" if math.isnan(v) else repr(v)


def write_rows(path: str | Path, columns, rows) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(columns)
        for row in rows:
            w.writerow([_fmt(row[c]) for c in columns])


def read_rows(path: str | Path) -> tuple[list[str], list[dict[str, float]]]:
    with open(path, newline="", encoding="utf-8") as fh:
        r = csv.reader(fh)
        try:
            columns = next(r)
        except StopIteration:
            raise FormatError(f"{path}: empty CSV") from None
        rows = []
        for line in r:
            if len(line) != len(columns):
                raise FormatError(f"{path}: ragged row {line}")
            rows.append({c: float(v) for c, v in zip(columns, line)})
    return columns, rows


def metrics_rows(init_report, reports) -> list[dict]:
    """One row per generation; the initial population's improvement sits in the first row."""
    rows = []
    for k, rep in enumerate(reports):
        imp = rep.improvement
        rows.append({
            "generation": rep.generation,
            "evaluations": rep.evaluations,
            "qd_score": rep.qd_score,
            "coverage": rep.coverage,
            "max_fitness": rep.max_fitness,
            "improvement_ga": imp.get("ga", 0.0),
            "improvement_pg": imp.get("pg", 0.0),
            "improvement_ai": imp.get("ai", 0.0),
            "improvement_init": init_report.improvement.get("init", 0.0) if k == 0 else 0.0,
            "mean_similarity": rep.mean_similarity,
        })
    return rows
