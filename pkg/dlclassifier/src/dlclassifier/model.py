"""The convolutional-recurrent trace classifier.

Architecture (fixed hyperparameters, overridable only where noted):
two 256-kernel convolutions (widths 16 and 8, relu), max-pool 4, the pooled
feature maps treated as a time-major sequence of 256-dim vectors into an
LSTM with 32 tanh units, dropout 0.7, dense softmax. The LSTM sequence is
collapsed by averaging over time before the dense layer (translation
tolerant and trains far better than last-step readout on CPU budgets);
the choice is recorded in every emitted report header.
"""

from __future__ import annotations

from dataclasses import dataclass

import torch
import torch.nn as nn


@dataclass(frozen=True)
class ModelConfig:
    optimizer: str = "adam"
    learning_rate: float = 0.001
    batch_size: int = 128
    conv_layers: int = 2
    conv_kernels: int = 256
    kernel_sizes: tuple = (16, 8)
    pool_size: int = 4
    conv_activation: str = "relu"
    lstm_units: int = 32
    lstm_activation: str = "tanh"
    dropout: float = 0.7
    # early stop on validation accuracy (validation loss breaks accuracy
    # ties, since a small validation fold saturates early); patience,
    # floor, and cap are flag-overridable
    patience: int = 10
    min_epochs: int = 40
    max_epochs: int = 100

    def __post_init__(self):
        if len(self.kernel_sizes) != self.conv_layers:
            raise ValueError("need one kernel size per convolution layer")
        if self.optimizer != "adam" or self.conv_activation != "relu" \
                or self.lstm_activation != "tanh":
            raise ValueError("optimizer/activations are fixed: adam, relu, tanh")


class TraceNet(nn.Module):
    def __init__(self, n_classes: int, config: ModelConfig = ModelConfig()):
        super().__init__()
        convs = []
        in_ch = 1
        for ks in config.kernel_sizes:
            convs.append(nn.Conv1d(in_ch, config.conv_kernels, ks, padding="same"))
            in_ch = config.conv_kernels
        self.convs = nn.ModuleList(convs)
        self.pool = nn.MaxPool1d(config.pool_size)
        self.lstm = nn.LSTM(config.conv_kernels, config.lstm_units, batch_first=True)
        self.drop = nn.Dropout(config.dropout)
        self.fc = nn.Linear(config.lstm_units, n_classes)

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        for conv in self.convs:
            x = torch.relu(conv(x))
        x = self.pool(x).transpose(1, 2)  # time-major sequence of 256-dim vectors
        out, _ = self.lstm(x)
        return self.fc(self.drop(out.mean(dim=1)))

    def probabilities(self, x: torch.Tensor) -> torch.Tensor:
        return torch.softmax(self.forward(x), dim=1)
