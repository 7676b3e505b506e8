"""Desk-scale simulator for multi-modal federated RF fingerprinting."""

__version__ = "0.1.0"

from . import analysis, config, datafile, experiment, federation, modality, models, waveforms

__all__ = [
    "__version__",
    "analysis",
    "config",
    "datafile",
    "experiment",
    "federation",
    "modality",
    "models",
    "waveforms",
]
