"""Desk-scale simulator of a drone-to-ground decoy-state BB84 link."""
from .config import RunConfig, load_config, load_preset
from .core import IntensityClass, LinkBudget, ProtocolParams, binary_entropy, validate_params
from .decoy import DecoyEstimate, bound_e1, bound_y1, secure_key_length, secure_key_rate

__all__ = [
    "DecoyEstimate", "IntensityClass", "LinkBudget", "ProtocolParams", "RunConfig",
    "binary_entropy", "bound_e1", "bound_y1", "load_config", "load_preset",
    "secure_key_length", "secure_key_rate", "validate_params",
]
__version__ = "0.1.0"
