"""Dual-teacher knowledge distillation for image restoration, on a small numpy autograd core."""
from .checkpoint import load_checkpoint, save_checkpoint
from .config import NetConfig, RunConfig, parse_config
from .errors import ConfigError, ContractViolation, FormatError
from .kernels import BACKEND
from .net import Model, build_network, count_complexity, forward

__version__ = "0.1.0"

__all__ = [
    "BACKEND", "ConfigError", "ContractViolation", "FormatError", "Model", "NetConfig",
    "RunConfig", "build_network", "count_complexity", "forward", "load_checkpoint",
    "parse_config", "save_checkpoint",
]
