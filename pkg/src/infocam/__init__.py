"""Softmax classifiers as mutual-information estimators, and the
CAM/infoCAM weakly supervised localization pipeline built on them."""

from . import cam, config, data, gaussmix, miest, nn, report, train, wsol

__version__ = "0.1.0"

__all__ = ["cam", "config", "data", "gaussmix", "miest", "nn", "report",
           "train", "wsol", "__version__"]
