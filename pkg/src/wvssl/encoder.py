"""Small residual convolutional encoder with a projection head.

The backbone ends in global average pooling, so its representation width is
the last stage width; the projection head is a two-layer MLP whose output
feeds the contrastive loss. Only the backbone representation is meant for
transfer.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import torch
import torch.nn as nn

from .errors import ConfigError, DataError


@dataclass
class EncoderConfig:
    input_side: int = 64
    stage_widths: tuple = (32, 64, 128, 256)
    blocks_per_stage: int = 1
    stem_stride: int = 2
    projector_widths: tuple = (256, 128)

    def __post_init__(self):
        self.stage_widths = tuple(int(w) for w in self.stage_widths)
        self.projector_widths = tuple(int(w) for w in self.projector_widths)
        if self.input_side < 4:
            raise ConfigError(f"input side {self.input_side} too small")
        if not self.stage_widths or any(w <= 0 for w in self.stage_widths):
            raise ConfigError("stage widths must be positive")
        if not self.projector_widths or any(w <= 0 for w in self.projector_widths):
            raise ConfigError("projector widths must be positive")
        if self.blocks_per_stage < 0:
            raise ConfigError("blocks_per_stage must be >= 0")
        if self.stem_stride not in (1, 2):
            raise ConfigError("stem_stride must be 1 or 2")
        if self.projection_dim < 2:
            raise ConfigError("projection dim must be >= 2")
        if self.representation_dim < self.projection_dim:
            raise ConfigError(
                f"representation dim {self.representation_dim} smaller than "
                f"projection dim {self.projection_dim}")

    @property
    def representation_dim(self) -> int:
        return self.stage_widths[-1]

    @property
    def projection_dim(self) -> int:
        return self.projector_widths[-1]

    def to_dict(self) -> dict:
        return {
            "input_side": self.input_side,
            "stage_widths": list(self.stage_widths),
            "blocks_per_stage": self.blocks_per_stage,
            "stem_stride": self.stem_stride,
            "projector_widths": list(self.projector_widths),
        }

    @classmethod
    def from_dict(cls, d: dict) -> "EncoderConfig":
        return cls(
            input_side=int(d["input_side"]),
            stage_widths=tuple(d["stage_widths"]),
            blocks_per_stage=int(d["blocks_per_stage"]),
            stem_stride=int(d.get("stem_stride", 2)),
            projector_widths=tuple(d["projector_widths"]),
        )


class ResidualBlock(nn.Module):
    def __init__(self, width: int):
        super().__init__()
        self.conv1 = nn.Conv2d(width, width, 3, padding=1, bias=False)
        self.bn1 = nn.BatchNorm2d(width)
        self.conv2 = nn.Conv2d(width, width, 3, padding=1, bias=False)
        self.bn2 = nn.BatchNorm2d(width)
        self.relu = nn.ReLU(inplace=True)

    def forward(self, x):
        out = self.relu(self.bn1(self.conv1(x)))
        out = self.bn2(self.conv2(out))
        return self.relu(out + x)


class Encoder(nn.Module):
    """Backbone plus projection head; forward returns (h, z)."""

    def __init__(self, config: EncoderConfig):
        super().__init__()
        self.config = config
        widths = config.stage_widths
        layers = [
            nn.Conv2d(3, widths[0], 3, stride=config.stem_stride, padding=1,
                      bias=False),
            nn.BatchNorm2d(widths[0]),
            nn.ReLU(inplace=True),
        ]
        prev = widths[0]
        for i, width in enumerate(widths):
            if i > 0:
                layers += [
                    nn.Conv2d(prev, width, 3, stride=2, padding=1, bias=False),
                    nn.BatchNorm2d(width),
                    nn.ReLU(inplace=True),
                ]
            layers += [ResidualBlock(width) for _ in range(config.blocks_per_stage)]
            prev = width
        layers += [nn.AdaptiveAvgPool2d(1), nn.Flatten()]
        self.backbone = nn.Sequential(*layers)

        proj = []
        prev = config.representation_dim
        for i, width in enumerate(config.projector_widths):
            proj.append(nn.Linear(prev, width))
            if i < len(config.projector_widths) - 1:
                proj.append(nn.ReLU(inplace=True))
            prev = width
        self.projector = nn.Sequential(*proj)

    def forward(self, x):
        if x.ndim != 4 or x.shape[1] != 3:
            raise DataError(f"expected (N, 3, S, S) input, got {tuple(x.shape)}")
        if x.shape[2] != self.config.input_side or x.shape[3] != self.config.input_side:
            raise DataError(
                f"input side {tuple(x.shape[2:])} does not match configured "
                f"{self.config.input_side}")
        h = self.backbone(x)
        z = self.projector(h)
        return h, z


def build_encoder(config: EncoderConfig, seed: int | None = None) -> Encoder:
    """Construct an encoder; with a seed, initialization is reproducible."""
    if seed is not None:
        torch.manual_seed(seed)
    return Encoder(config)


def parameter_count(model: nn.Module) -> int:
    return sum(p.numel() for p in model.parameters())


def state_to_arrays(model: nn.Module) -> dict:
    """Model state as named float32 numpy arrays (includes batch-norm
    running statistics)."""
    out = {}
    for name, tensor in model.state_dict().items():
        out[name] = tensor.detach().cpu().to(torch.float32).numpy().copy()
    return out


def arrays_to_state(model: nn.Module, arrays: dict) -> None:
    state = model.state_dict()
    missing = set(state) - set(arrays)
    extra = set(arrays) - set(state)
    if missing or extra:
        raise DataError(
            f"checkpoint/model mismatch: missing {sorted(missing)[:3]}, "
            f"unexpected {sorted(extra)[:3]}")
    loaded = {}
    for name, arr in arrays.items():
        target = state[name]
        tensor = torch.from_numpy(np.asarray(arr).copy())
        if tuple(tensor.shape) != tuple(target.shape):
            raise DataError(
                f"checkpoint tensor {name} has shape {tuple(tensor.shape)}, "
                f"model expects {tuple(target.shape)}")
        loaded[name] = tensor.to(target.dtype)
    model.load_state_dict(loaded)

