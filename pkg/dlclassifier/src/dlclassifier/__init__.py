"""CNN+LSTM classifier for cache-contention trace datasets."""

__version__ = "0.1.0"

from .data import TraceDataset, featurize, load_dataset
from .model import ModelConfig, TraceNet
from .train import train_eval

__all__ = ["TraceDataset", "featurize", "load_dataset", "ModelConfig", "TraceNet",
           "train_eval", "__version__"]
