"""Quality-diversity search with a descriptor-conditioned actor-critic."""

from __future__ import annotations

from .algorithms import (GenerationReport, RunResult, Scheduler, run, run_ablation, run_dcg_me, run_dcrl_me,
                         run_map_elites, run_pga_me)
from .archive import AddKind, AddOutcome, Archive, cvt_init
from .config import ConfigError, EnvConfig, RunConfig, load_config
from .envs import make_env, rollout
from .repro import ReproReport, aggregate_seeds, evaluate_actor_as_archive, reevaluate_archive
from .rl import Td3Config

__version__ = "0.1.0"

__all__ = [
    "AddKind", "AddOutcome", "Archive", "ConfigError", "EnvConfig", "GenerationReport", "ReproReport",
    "RunConfig", "RunResult", "Scheduler", "Td3Config", "aggregate_seeds", "cvt_init",
    "evaluate_actor_as_archive", "load_config", "make_env", "reevaluate_archive", "rollout", "run",
    "run_ablation", "run_dcg_me", "run_dcrl_me", "run_map_elites", "run_pga_me",
]
