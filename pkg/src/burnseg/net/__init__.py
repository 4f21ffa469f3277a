from .model import MtlNetwork
from .optim import AdamWState, adamw_step
from .train import TrainConfig, predict, train

__all__ = ["MtlNetwork", "AdamWState", "adamw_step", "TrainConfig", "train", "predict"]
