"""Same-subject self-supervised representation learning for 10-second ECG strips."""

from .config import RunConfig, load_config
from .sbncl import HeadConfig, SSLConfig, TrainConfig, TrainerState, ema_update, sbncl_loss, train
from .vit1d import ModelConfig, param_count

__version__ = "0.1.0"

__all__ = [
    "HeadConfig",
    "ModelConfig",
    "RunConfig",
    "SSLConfig",
    "TrainConfig",
    "TrainerState",
    "ema_update",
    "load_config",
    "param_count",
    "sbncl_loss",
    "train",
]
