from . import functional
from .checkpoint import NetworkCheckpoint, load, save
from .layers import LayerSpec, Parameter
from .network import Network
from .optim import ScheduleSpec, sgd_step

__all__ = [
    "LayerSpec",
    "Network",
    "NetworkCheckpoint",
    "Parameter",
    "ScheduleSpec",
    "functional",
    "load",
    "save",
    "sgd_step",
]
