"""Experiment configuration: schema, defaults, validation.

Config documents are JSON. Unknown keys are rejected and every validation
problem is reported in one pass. The ``SRMT_SEED`` environment variable
overrides the document's seed.
"""

from __future__ import annotations

import json
import os
from dataclasses import dataclass, field
from pathlib import Path

from .errors import ConfigError
from .policy.network import CORE_KINDS, PolicyConfig
from .rewards import RewardScheme

MODES = ("classical", "lifelong")

# Training defaults per mode: learning rate, schedule, discount, entropy.
_MODE_DEFAULTS = {
    "classical": {"learning_rate": 0.00013, "lr_schedule": "adaptive_kl",
                  "gamma": 0.9716, "entropy_coef": 0.0156, "workers": 4},
    "lifelong": {"learning_rate": 0.00022, "lr_schedule": "constant",
                 "gamma": 0.9756, "entropy_coef": 0.023, "workers": 8},
}

_POLICY_MODE_DEFAULTS = {
    "classical": {"obs_size": 5, "filters": 8, "res_blocks": 1, "mlp_hidden": 16,
                  "d": 16, "heads": 4, "blocks": 1},
    "lifelong": {"obs_size": 11, "filters": 64, "res_blocks": 8, "mlp_hidden": 512,
                 "d": 512, "heads": 8, "blocks": 2},
}


@dataclass
class PPOConfig:
    learning_rate: float = 0.00013
    lr_schedule: str = "adaptive_kl"
    gamma: float = 0.9716
    clip_ratio: float = 0.2
    batch_size: int = 16384
    epochs: int = 1
    entropy_coef: float = 0.0156
    value_loss_coef: float = 0.5
    gae_lambda: float = 0.95
    recurrence_rollout: int = 8
    workers: int = 4
    envs_per_worker: int = 4
    total_steps: int = 20_000_000
    kl_target: float = 0.008
    lr_min: float = 1e-6
    lr_max: float = 1e-2
    grad_clip: float | None = None
    checkpoint_every: int = 50
    precision: str = "float64"

    def problems(self) -> list[str]:
        out = []
        if self.lr_schedule not in ("adaptive_kl", "constant"):
            out.append(f"ppo.lr_schedule must be adaptive_kl or constant, got {self.lr_schedule!r}")
        if not 0.0 <= self.gamma <= 1.0:
            out.append(f"ppo.gamma must lie in [0, 1], got {self.gamma}")
        for name in ("learning_rate", "clip_ratio", "entropy_coef", "value_loss_coef"):
            if getattr(self, name) < 0:
                out.append(f"ppo.{name} must be non-negative")
        for name in ("batch_size", "epochs", "recurrence_rollout", "workers",
                     "envs_per_worker", "total_steps", "checkpoint_every"):
            if getattr(self, name) < 1:
                out.append(f"ppo.{name} must be >= 1")
        if not 0.0 <= self.gae_lambda <= 1.0:
            out.append(f"ppo.gae_lambda must lie in [0, 1], got {self.gae_lambda}")
        if self.precision not in ("float64", "float32"):
            out.append(f"ppo.precision must be float64 or float32, got {self.precision!r}")
        return out


@dataclass
class MapSource:
    kind: str = "bottleneck"
    # bottleneck
    count: int = 16
    min_len: int = 3
    max_len: int = 30
    room_size: int = 5
    fixed_placement: bool = False
    # random
    width: int = 20
    height: int = 20
    density: float = 0.3
    # files
    paths: list = field(default_factory=list)

    KINDS = ("bottleneck", "random", "maze", "files")

    def problems(self) -> list[str]:
        out = []
        if self.kind not in self.KINDS:
            out.append(f"map_source.kind must be one of {self.KINDS}, got {self.kind!r}")
        if self.kind == "bottleneck":
            if self.min_len < 1 or self.max_len < self.min_len:
                out.append("map_source corridor lengths need 1 <= min_len <= max_len")
            if self.count < 1:
                out.append("map_source.count must be >= 1")
        if self.kind == "files" and not self.paths:
            out.append("map_source.paths must list at least one map file")
        if self.kind in ("random", "maze") and (self.width < 2 or self.height < 2):
            out.append("map_source width/height must be >= 2")
        return out


@dataclass
class ExperimentConfig:
    mode: str = "classical"
    seed: int = 0
    output_dir: str = "runs/experiment"
    num_agents: int = 2
    episode_length: int = 512
    core: str = "srmt"
    reward_scheme: str = "directional"
    lifelong_goal_bonus: bool = False
    map_source: MapSource = field(default_factory=MapSource)
    policy: PolicyConfig = field(default_factory=PolicyConfig)
    ppo: PPOConfig = field(default_factory=PPOConfig)

    def problems(self) -> list[str]:
        out = []
        if self.mode not in MODES:
            out.append(f"mode must be one of {MODES}, got {self.mode!r}")
        if self.core not in CORE_KINDS:
            out.append(f"core must be one of {CORE_KINDS}, got {self.core!r}")
        try:
            scheme = RewardScheme.from_name(self.reward_scheme)
        except Exception:
            out.append(f"reward_scheme {self.reward_scheme!r} is unknown")
            scheme = None
        if scheme is RewardScheme.LIFELONG_FOLLOW and self.mode != "lifelong":
            out.append("lifelong_follow reward requires lifelong mode")
        if self.num_agents < 1:
            out.append("num_agents must be >= 1")
        if self.episode_length < 1:
            out.append("episode_length must be >= 1")
        out.extend(self.map_source.problems())
        out.extend(self.ppo.problems())
        return out

    def to_dict(self) -> dict:
        doc = {
            "mode": self.mode, "seed": self.seed, "output_dir": self.output_dir,
            "num_agents": self.num_agents, "episode_length": self.episode_length,
            "core": self.core, "reward_scheme": self.reward_scheme,
            "lifelong_goal_bonus": self.lifelong_goal_bonus,
            "map_source": {k: getattr(self.map_source, k) for k in (
                "kind", "count", "min_len", "max_len", "room_size", "fixed_placement",
                "width", "height", "density", "paths")},
            "policy": self.policy.to_dict(),
            "ppo": {k: getattr(self.ppo, k) for k in (
                "learning_rate", "lr_schedule", "gamma", "clip_ratio", "batch_size",
                "epochs", "entropy_coef", "value_loss_coef", "gae_lambda",
                "recurrence_rollout", "workers", "envs_per_worker", "total_steps",
                "kl_target", "lr_min", "lr_max", "grad_clip", "checkpoint_every",
                "precision")},
        }
        return doc


def _apply_section(target, doc: dict, section: str, problems: list[str]) -> None:
    known = set(vars(target))
    for key, value in doc.items():
        if key not in known:
            problems.append(f"unknown key {section}.{key}")
            continue
        setattr(target, key, value)


def config_from_dict(doc: dict) -> ExperimentConfig:
    """Build and validate an ExperimentConfig, reporting all problems at once."""
    if not isinstance(doc, dict):
        raise ConfigError("config document must be a JSON object")
    problems: list[str] = []
    doc = dict(doc)
    mode = doc.get("mode", "classical")

    ppo = PPOConfig()
    if mode in _MODE_DEFAULTS:
        for key, value in _MODE_DEFAULTS[mode].items():
            setattr(ppo, key, value)
    policy_defaults = dict(_POLICY_MODE_DEFAULTS.get(mode, _POLICY_MODE_DEFAULTS["classical"]))
    policy_defaults["core"] = doc.get("core", "srmt")
    try:
        policy = PolicyConfig(**policy_defaults)
    except ConfigError as exc:
        problems.append(str(exc))
        policy = PolicyConfig()

    cfg = ExperimentConfig(ppo=ppo, policy=policy)
    top_known = {"mode", "seed", "output_dir", "num_agents", "episode_length", "core",
                 "reward_scheme", "lifelong_goal_bonus", "map_source", "policy", "ppo"}
    for key in doc:
        if key not in top_known:
            problems.append(f"unknown key {key}")
    for key in top_known - {"map_source", "policy", "ppo"}:
        if key in doc:
            setattr(cfg, key, doc[key])

    if "map_source" in doc:
        if isinstance(doc["map_source"], dict):
            _apply_section(cfg.map_source, doc["map_source"], "map_source", problems)
        else:
            problems.append("map_source must be an object")
    if "ppo" in doc:
        if isinstance(doc["ppo"], dict):
            _apply_section(cfg.ppo, doc["ppo"], "ppo", problems)
        else:
            problems.append("ppo must be an object")
    if "policy" in doc:
        if isinstance(doc["policy"], dict):
            unknown = set(doc["policy"]) - set(cfg.policy.to_dict())
            problems.extend(f"unknown key policy.{k}" for k in sorted(unknown))
            merged = cfg.policy.to_dict()
            merged.update({k: v for k, v in doc["policy"].items() if k not in unknown})
            merged["core"] = cfg.core
            try:
                cfg.policy = PolicyConfig(**merged)
            except ConfigError as exc:
                problems.append(str(exc))
        else:
            problems.append("policy must be an object")
    else:
        merged = cfg.policy.to_dict()
        merged["core"] = cfg.core
        merged["obs_size"] = cfg.policy.obs_size
        try:
            cfg.policy = PolicyConfig(**merged)
        except ConfigError as exc:
            problems.append(str(exc))

    env_seed = os.environ.get("SRMT_SEED")
    if env_seed is not None:
        try:
            cfg.seed = int(env_seed)
        except ValueError:
            problems.append(f"SRMT_SEED must be an integer, got {env_seed!r}")

    problems.extend(cfg.problems())
    if problems:
        raise ConfigError("invalid experiment config:\n  - " + "\n  - ".join(problems),
                          problems=problems)
    return cfg


def load_config(path) -> ExperimentConfig:
    try:
        doc = json.loads(Path(path).read_text(encoding="utf-8"))
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from exc
    except json.JSONDecodeError as exc:
        raise ConfigError(f"config {path} is not valid JSON: {exc}") from exc
    return config_from_dict(doc)
