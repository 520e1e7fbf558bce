"""Streaming prototype classifier with autonomous new-class discovery."""

from cloudclass.classifier import Event, EventKind, Prediction, XClassModel
from cloudclass.config import ClassifierConfig, NoveltyConfig

__version__ = "0.1.0"

__all__ = [
    "ClassifierConfig",
    "Event",
    "EventKind",
    "NoveltyConfig",
    "Prediction",
    "XClassModel",
    "__version__",
]
