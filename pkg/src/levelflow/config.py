"""Run configuration: strict JSON with per-game presets."""
from __future__ import annotations

import json
from dataclasses import dataclass, field, fields

from .errors import ConfigError

Size = tuple[int, int]

# Built-in presets: size curriculum and the best-known feature toggles.
PRESET_SIZES: dict[str, dict[str, list[Size]]] = {
    "sokoban": {
        "seed": [(3, 3)],
        "intermediate": [(4, 4), (5, 5), (6, 6)],
        "desired": [(7, 7)],
    },
    "zelda": {
        "seed": [(3, 4)],
        "intermediate": [(3, 6), (5, 4), (5, 6), (7, 6), (5, 11)],
        "desired": [(7, 11)],
    },
    "dave": {
        "seed": [(3, 4)],
        "intermediate": [(3, 6), (5, 4), (5, 6), (7, 6), (5, 11)],
        "desired": [(7, 11)],
    },
}

PRESET_TOGGLES: dict[str, dict[str, bool]] = {
    "sokoban": {"diversity_sampling": True, "property_reward": True,
                "augmentation": True, "signature_key": False},
    "zelda": {"diversity_sampling": True, "property_reward": True,
              "augmentation": True, "signature_key": False},
    "dave": {"diversity_sampling": True, "property_reward": False,
             "augmentation": True, "signature_key": False},
}


@dataclass
class RunConfig:
    """Everything a training run needs, round-trippable through JSON."""

    game: str
    seed_sizes: list[Size]
    intermediate_sizes: list[Size] = field(default_factory=list)
    desired_sizes: list[Size] = field(default_factory=list)
    iterations: int = 10_000
    batch_size: int = 32
    replay_batch: int = 16
    lr_policy: float = 1e-3
    lr_flow: float = 1e-2
    diversity_sampling: bool = True
    property_reward: bool = True
    augmentation: bool = True
    signature_key: bool = False
    grad_clip_norm: float | None = None
    seed: int = 0
    checkpoint_every: int = 500
    out_dir: str | None = None

    def __post_init__(self) -> None:
        self.seed_sizes = [tuple(s) for s in self.seed_sizes]
        self.intermediate_sizes = [tuple(s) for s in self.intermediate_sizes]
        self.desired_sizes = [tuple(s) for s in self.desired_sizes]
        if not self.seed_sizes:
            raise ConfigError("seed_sizes must not be empty")
        sizes = self.all_sizes
        if len(set(sizes)) != len(sizes):
            raise ConfigError(f"sizes must be distinct, got {sizes}")
        for w, h in sizes:
            if w < 1 or h < 1:
                raise ConfigError(f"invalid size {w}x{h}")
        for name in ("iterations", "batch_size", "replay_batch",
                     "checkpoint_every", "seed"):
            value = getattr(self, name)
            if not isinstance(value, int) or isinstance(value, bool) or value < 0:
                raise ConfigError(f"{name} must be a non-negative integer, got {value!r}")
        if self.lr_policy <= 0 or self.lr_flow <= 0:
            raise ConfigError("learning rates must be positive")

    @property
    def all_sizes(self) -> list[Size]:
        return list(self.seed_sizes) + list(self.intermediate_sizes) + list(self.desired_sizes)


def default_config(game: str, **overrides) -> RunConfig:
    """Preset configuration for one of the built-in games."""
    if game not in PRESET_SIZES:
        raise ConfigError(f"no preset for game {game!r}; known: {sorted(PRESET_SIZES)}")
    sizes = PRESET_SIZES[game]
    kwargs = {
        "game": game,
        "seed_sizes": list(sizes["seed"]),
        "intermediate_sizes": list(sizes["intermediate"]),
        "desired_sizes": list(sizes["desired"]),
        **PRESET_TOGGLES[game],
    }
    kwargs.update(overrides)
    return RunConfig(**kwargs)


_SIZE_FIELDS = {"seed_sizes", "intermediate_sizes", "desired_sizes"}


def config_to_dict(config: RunConfig) -> dict:
    out: dict = {}
    for f in fields(RunConfig):
        value = getattr(config, f.name)
        if f.name in _SIZE_FIELDS:
            value = [list(s) for s in value]
        out[f.name] = value
    return out


def render_config(config: RunConfig) -> str:
    return json.dumps(config_to_dict(config), indent=2, sort_keys=True) + "\n"


def config_from_dict(data: dict) -> RunConfig:
    if not isinstance(data, dict):
        raise ConfigError(f"config must be a JSON object, got {type(data).__name__}")
    known = {f.name for f in fields(RunConfig)}
    unknown = sorted(set(data) - known)
    if unknown:
        raise ConfigError(f"unknown config fields: {', '.join(unknown)}")
    if "game" not in data:
        raise ConfigError("config is missing required field 'game'")
    if "seed_sizes" not in data:
        raise ConfigError("config is missing required field 'seed_sizes'")
    kwargs = dict(data)
    for name in _SIZE_FIELDS & set(kwargs):
        raw = kwargs[name]
        if not isinstance(raw, list) or not all(
                isinstance(s, (list, tuple)) and len(s) == 2 for s in raw):
            raise ConfigError(f"{name} must be a list of [w, h] pairs")
        kwargs[name] = [tuple(int(v) for v in s) for s in raw]
    return RunConfig(**kwargs)


def parse_config(text: str) -> RunConfig:
    try:
        data = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ConfigError(f"config is not valid JSON: {exc}") from exc
    return config_from_dict(data)
