"""Run configuration and its YAML file form."""

from __future__ import annotations

import dataclasses
from dataclasses import dataclass, field, fields
from pathlib import Path

import yaml

from .envs import ENVS, make_env
from .rl import Td3Config

ALGORITHMS = ("me", "pga_me", "dcg_me", "dcrl_me", "ablation_ai", "ablation_actor")

# (ga, pg, ai, ae) batch sizes per algorithm
DEFAULT_BATCHES = {
    "me": (256, 0, 0, 0),
    "pga_me": (128, 127, 1, 0),
    "dcg_me": (128, 128, 0, 64),
    "dcrl_me": (128, 64, 64, 0),
    "ablation_ai": (128, 128, 0, 0),
    "ablation_actor": (128, 127, 1, 0),
}


class ConfigError(ValueError):
    pass


@dataclass(frozen=True)
class EnvConfig:
    id: str = "point_mass_omni"
    episode_length: int | None = None
    action_noise: float = 0.0
    reset_noise: float = 0.0
    descriptor_noise: float = 0.0

    def make(self):
        params = {k: v for k, v in dataclasses.asdict(self).items() if k != "id" and v is not None}
        return make_env(self.id, **params)


@dataclass(frozen=True)
class RunConfig:
    algorithm: str = "dcrl_me"
    env: EnvConfig = field(default_factory=EnvConfig)
    budget: int = 50_000
    ga_batch_size: int | None = None
    pg_batch_size: int | None = None
    ai_batch_size: int | None = None
    ae_batch_size: int | None = None
    batch_size: int | None = None
    sigma_iso: float = 0.005
    sigma_line: float = 0.05
    n_centroids: int = 256
    cvt_seed: int = 0
    cvt_samples_per_centroid: int = 50
    cvt_iterations: int = 100
    policy_hidden: tuple[int, ...] = (64, 64)
    td3: Td3Config = field(default_factory=Td3Config)
    seed: int = 0

    def batches(self) -> tuple[int, int, int, int]:
        """Resolved ``(ga, pg, ai, ae)`` batch sizes."""
        defaults = DEFAULT_BATCHES[self.algorithm]
        given = (self.ga_batch_size, self.pg_batch_size, self.ai_batch_size, self.ae_batch_size)
        return tuple(d if g is None else int(g) for g, d in zip(given, defaults))

    @property
    def total_batch(self) -> int:
        ga, pg, ai, _ = self.batches()
        return ga + pg + ai

    @property
    def evaluations_per_generation(self) -> int:
        return self.total_batch + self.batches()[3]

    def validate(self) -> "RunConfig":
        if self.algorithm not in ALGORITHMS:
            raise ConfigError(f"unknown algorithm {self.algorithm!r}; choose from {ALGORITHMS}")
        if self.env.id not in ENVS:
            raise ConfigError(f"unknown env {self.env.id!r}; choose from {sorted(ENVS)}")
        ga, pg, ai, ae = self.batches()
        if min(ga, pg, ai, ae) < 0:
            raise ConfigError("batch sizes must be non-negative")
        b = ga + pg + ai
        if b < 1:
            raise ConfigError("total batch size must be >= 1")
        if self.batch_size is not None and self.batch_size != b:
            raise ConfigError(f"batch_size {self.batch_size} != ga + pg + ai = {b}")
        alg = self.algorithm
        if alg == "me" and (pg or ai or ae):
            raise ConfigError("MAP-Elites uses GA offspring only")
        if alg in ("dcrl_me", "ablation_ai", "ablation_actor", "pga_me") and ae:
            raise ConfigError(f"{alg} does not perform actor evaluation")
        if alg in ("dcg_me", "ablation_ai") and ai:
            raise ConfigError(f"{alg} does not perform actor injection")
        if self.budget < b:
            raise ConfigError(f"budget {self.budget} is smaller than the batch size {b}")
        if self.sigma_iso < 0 or self.sigma_line < 0:
            raise ConfigError("GA sigmas must be non-negative")
        if self.n_centroids < 1 or self.cvt_samples_per_centroid < 1:
            raise ConfigError("n_centroids and cvt_samples_per_centroid must be >= 1")
        if alg != "me" and tuple(self.td3.actor_hidden) != tuple(self.policy_hidden):
            raise ConfigError("actor_hidden must equal policy_hidden so the actor can enter the archive")
        try:
            self.td3.validate()
            self.env.make()
        except (ValueError, TypeError) as exc:
            raise ConfigError(str(exc)) from None
        return self

    def replace(self, **changes) -> "RunConfig":
        return dataclasses.replace(self, **changes)

    def to_dict(self) -> dict:
        return _plain(dataclasses.asdict(self))


def _plain(obj):
    if isinstance(obj, dict):
        return {k: _plain(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_plain(v) for v in obj]
    return obj


def _build(cls, data: dict, where: str):
    if not isinstance(data, dict):
        raise ConfigError(f"{where}: expected a mapping")
    known = {f.name: f for f in fields(cls)}
    unknown = sorted(set(data) - set(known))
    if unknown:
        raise ConfigError(f"{where}: unknown keys {unknown}")
    kwargs = {}
    for name, value in data.items():
        if name == "env":
            value = _build(EnvConfig, value, "env")
        elif name == "td3":
            value = _build(Td3Config, value, "td3")
        elif name in ("policy_hidden", "actor_hidden", "critic_hidden"):
            value = tuple(int(v) for v in value)
        kwargs[name] = value
    return cls(**kwargs)


def config_from_dict(data: dict) -> RunConfig:
    return _build(RunConfig, data or {}, "config").validate()


def load_config(path: str | Path) -> RunConfig:
    with open(path, encoding="utf-8") as fh:
        try:
            data = yaml.safe_load(fh)
        except yaml.YAMLError as exc:
            raise ConfigError(f"{path}: {exc}") from None
    return config_from_dict(data)


def dump_config(config: RunConfig) -> str:
    return yaml.safe_dump(config.to_dict(), sort_keys=False)


def save_config(config: RunConfig, path: str | Path) -> None:
    Path(path).write_text(dump_config(config), encoding="utf-8")
