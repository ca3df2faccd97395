"""Controllable multi-size level generators trained as flow networks."""

from .config import RunConfig, default_config, parse_config, render_config
from .errors import (
    CheckpointError,
    ConfigError,
    DimensionMismatch,
    EmptyBufferError,
    LevelFlowError,
    LevelParseError,
    MissingFlowHead,
    MissingPropertyError,
    NonFiniteValue,
    TailoredGmmError,
)
from .games import (
    Analysis,
    ControlSpec,
    GameSpec,
    Level,
    flip_level,
    game_names,
    get_game,
    measure_controls,
    parse_level,
    register_game,
    render_level,
)
from .gmm import GmmModel, conditional_sample_gmm, fit_gmm, sample_gmm, tailored_gmm
from .model import FlowHeads, PolicyNet, scan_order
from .training import (
    ReplayBuffer,
    Trainer,
    diversity_log_reward,
    log_reward,
    sample_conditions,
    tb_loss,
    total_log_reward,
    train_run,
)

__version__ = "0.1.0"

__all__ = [
    "Analysis", "CheckpointError", "ConfigError", "ControlSpec",
    "DimensionMismatch", "EmptyBufferError", "FlowHeads", "GameSpec",
    "GmmModel", "Level", "LevelFlowError", "LevelParseError",
    "MissingFlowHead", "MissingPropertyError", "NonFiniteValue",
    "PolicyNet", "ReplayBuffer", "RunConfig", "TailoredGmmError", "Trainer",
    "conditional_sample_gmm", "default_config", "diversity_log_reward",
    "fit_gmm", "flip_level", "game_names", "get_game", "log_reward",
    "measure_controls", "parse_config", "parse_level", "register_game",
    "render_config", "render_level", "sample_conditions", "sample_gmm",
    "scan_order", "tailored_gmm", "tb_loss", "total_log_reward", "train_run",
]
