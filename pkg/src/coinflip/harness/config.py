"""Experiment configuration: dataclasses, strict JSON loading, and echo.

A config file is a JSON object whose keys are the fields of
:class:`ExperimentConfig`.  The nested ``env``, ``cfn``, ``rnd`` and
``agent`` objects take the fields of the corresponding component configs.
Unknown keys anywhere are rejected.  The four toggles live at the top level
only, so a run has exactly one place where each is set; likewise the agent's
bonus source and intrinsic scale come from ``methods`` and ``lambdas``.
"""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path

from coinflip.agent import AgentConfig
from coinflip.baselines import RndConfig
from coinflip.cfn import CfnConfig
from coinflip.envs import GridworldConfig
from coinflip.errors import InvalidArgumentError

KINDS = ("validate-estimator", "linear-check", "bonus-accuracy", "ablation", "rl", "noise-sweep")
POLICIES = ("random", "epsilon_greedy")
METHODS = ("cfn", "rnd", "none")
TOGGLES = ("prior_enabled", "prioritization_enabled", "zero_flip_mode", "reward_normalization")
# nested fields owned by the top level
_OWNED = {
    "cfn": {"prior_enabled", "prioritization_enabled", "zero_flip_mode"},
    "agent": {"reward_normalization", "intrinsic_scale", "bonus_source"},
}
MIN_ABLATION_SEEDS = 5
CONFIG_ECHO = "config.json"

# per-kind defaults; anything not listed falls back to the dataclass default
_KIND_DEFAULTS = {
    "validate-estimator": dict(seeds=[7], trials=100_000),
    "linear-check": dict(seeds=[0], trials=10_000),
    "bonus-accuracy": dict(env=dict(width=42, height=42), total_steps=100_000),
    "ablation": dict(env=dict(width=42, height=42), total_steps=100_000),
    "rl": dict(total_steps=200_000),
    "noise-sweep": dict(total_steps=200_000, methods=["cfn", "rnd"]),
}


@dataclass
class ExperimentConfig:
    kind: str
    env: GridworldConfig = field(default_factory=GridworldConfig)
    cfn: CfnConfig = field(default_factory=CfnConfig)
    rnd: RndConfig = field(default_factory=RndConfig)
    agent: AgentConfig = field(default_factory=AgentConfig)
    seeds: list = field(default_factory=lambda: list(range(10)))
    total_steps: int = 100_000
    out_dir: str = "runs"
    # toggles
    prior_enabled: bool = True
    prioritization_enabled: bool = True
    zero_flip_mode: bool = False
    reward_normalization: bool = True
    # bonus-accuracy / ablation
    policy: str = "random"
    bonus_source: str = "cfn"
    eval_every: int = 5_000
    histogram_bins: int = 20
    # rl / noise-sweep
    methods: list = field(default_factory=lambda: ["cfn"])
    lambdas: list = field(default_factory=lambda: [0.01])
    noise_levels: list = field(default_factory=lambda: [0.0, 0.1, 0.3, 0.5])
    final_episodes: int = 50
    # validate-estimator / linear-check
    trials: int = 100_000
    n_list: list = field(default_factory=lambda: [1, 2, 5, 25, 100])
    d_list: list = field(default_factory=lambda: [1, 20])

    def __post_init__(self):
        if self.kind not in KINDS:
            raise InvalidArgumentError(f"kind must be one of {KINDS}, got {self.kind!r}")
        self.seeds = [int(s) for s in self.seeds]
        if not self.seeds:
            raise InvalidArgumentError("at least one seed is required")
        if len(set(self.seeds)) != len(self.seeds):
            raise InvalidArgumentError("seeds must be distinct")
        if self.total_steps < 0:
            raise InvalidArgumentError("total_steps must be >= 0")
        if self.eval_every < 1 or self.histogram_bins < 1 or self.final_episodes < 1:
            raise InvalidArgumentError("eval_every, histogram_bins and final_episodes must be positive")
        if self.policy not in POLICIES:
            raise InvalidArgumentError(f"policy must be one of {POLICIES}")
        if self.bonus_source not in ("cfn", "rnd"):
            raise InvalidArgumentError("bonus_source must be 'cfn' or 'rnd'")
        bad = [m for m in self.methods if m not in METHODS]
        if bad or not self.methods:
            raise InvalidArgumentError(f"methods must be a non-empty subset of {METHODS}")
        for lam in self.lambdas:
            if lam < 0:
                raise InvalidArgumentError("intrinsic scales must be >= 0")
        for eta in self.noise_levels:
            if not 0.0 <= eta < 1.0:
                raise InvalidArgumentError(f"noise level {eta} outside [0, 1)")
            if eta > 0.9:
                raise InvalidArgumentError(f"noise level {eta} above the supported 0.9")
        if self.trials < 2:
            raise InvalidArgumentError("trials must be >= 2")
        if any(n < 1 for n in self.n_list) or any(d < 1 for d in self.d_list):
            raise InvalidArgumentError("n_list and d_list entries must be >= 1")

    # components with the toggles applied -----------------------------------

    def cfn_config(self, **overrides) -> CfnConfig:
        values = asdict(self.cfn)
        values.update(prior_enabled=self.prior_enabled, prioritization_enabled=self.prioritization_enabled,
                      zero_flip_mode=self.zero_flip_mode)
        values.update(overrides)
        return CfnConfig(**values)

    def agent_config(self, **overrides) -> AgentConfig:
        values = asdict(self.agent)
        values["reward_normalization"] = self.reward_normalization
        values.update(overrides)
        return AgentConfig(**values)

    def env_config(self, **overrides) -> GridworldConfig:
        values = asdict(self.env)
        values.update(overrides)
        return GridworldConfig(**values)

    def to_dict(self) -> dict:
        out = asdict(self)
        for name, owned in _OWNED.items():
            for key in owned:
                out[name].pop(key, None)
        return out


_NESTED = {"env": GridworldConfig, "cfn": CfnConfig, "rnd": RndConfig, "agent": AgentConfig}


def _field_names(cls) -> set[str]:
    return {f.name for f in fields(cls)}


def _build_nested(name: str, values) -> object:
    cls = _NESTED[name]
    if not isinstance(values, dict):
        raise InvalidArgumentError(f"{name!r} must be a JSON object")
    allowed = _field_names(cls) - _OWNED.get(name, set())
    unknown = sorted(set(values) - allowed)
    if unknown:
        raise InvalidArgumentError(f"unknown keys in {name!r}: {unknown}")
    try:
        return cls(**values)
    except TypeError as exc:
        raise InvalidArgumentError(f"bad {name!r} section: {exc}") from exc


def config_from_dict(data: dict) -> ExperimentConfig:
    """Build a config, layering ``data`` over the defaults for its kind."""
    if not isinstance(data, dict):
        raise InvalidArgumentError("config must be a JSON object")
    unknown = sorted(set(data) - _field_names(ExperimentConfig))
    if unknown:
        raise InvalidArgumentError(f"unknown config keys: {unknown}")
    if "kind" not in data:
        raise InvalidArgumentError("config needs a 'kind'")
    merged = {k: (dict(v) if isinstance(v, dict) else v) for k, v in _KIND_DEFAULTS.get(data["kind"], {}).items()}
    for key, value in data.items():
        if key in _NESTED and isinstance(value, dict) and isinstance(merged.get(key), dict):
            merged[key].update(value)
        else:
            merged[key] = value
    kwargs = {k: (_build_nested(k, v) if k in _NESTED else v) for k, v in merged.items()}
    try:
        return ExperimentConfig(**kwargs)
    except TypeError as exc:
        raise InvalidArgumentError(f"bad config: {exc}") from exc


def default_config(kind: str, **overrides) -> ExperimentConfig:
    return config_from_dict({"kind": kind, **overrides})


def load_config(path) -> ExperimentConfig:
    try:
        data = json.loads(Path(path).read_text(encoding="utf-8"))
    except json.JSONDecodeError as exc:
        raise InvalidArgumentError(f"{path}: invalid JSON ({exc})") from exc
    return config_from_dict(data)


def echo_config(config: ExperimentConfig, out_dir) -> Path:
    """Write the fully resolved config next to the run outputs."""
    path = Path(out_dir) / CONFIG_ECHO
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(json.dumps(config.to_dict(), indent=2, sort_keys=True) + "\n", encoding="utf-8")
    return path
