"""Model registry: small desk-scale CNNs plus torchvision entries.

Every entry knows which layers to export by default, which layer's pooled
output feeds the classifier, and whether that classifier is GAP+linear
(exportable directly) or an MLP over flattened features (head must be
distilled onto pooled features).
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable

import torch
from torch import nn


@dataclass(frozen=True)
class ModelEntry:
    build: Callable[[int, int], nn.Module]  # (num_classes, seed) -> model
    default_layers: tuple[str, ...]
    head_input_layer: str
    head_kind: str  # "gap_linear" | "mlp"
    # Exported activations are taken after the block's final nonlinearity.
    nonlinearity: str = "post_relu"


class SmallResNet(nn.Module):
    """Two residual stages, GAP, linear head; hooks on 'layer1'/'layer2'."""

    def __init__(self, num_classes: int = 4, width: int = 16):
        super().__init__()
        self.stem = nn.Sequential(
            nn.Conv2d(3, width, 3, padding=1, bias=False),
            nn.BatchNorm2d(width),
            nn.ReLU(inplace=True),
        )
        self.layer1 = _ResidualBlock(width, width, stride=1)
        self.layer2 = _ResidualBlock(width, 2 * width, stride=2)
        self.pool = nn.AdaptiveAvgPool2d(1)
        self.fc = nn.Linear(2 * width, num_classes)

    def forward(self, x):
        x = self.stem(x)
        x = self.layer1(x)
        x = self.layer2(x)
        return self.fc(torch.flatten(self.pool(x), 1))


class _ResidualBlock(nn.Module):
    def __init__(self, c_in: int, c_out: int, stride: int):
        super().__init__()
        self.conv1 = nn.Conv2d(c_in, c_out, 3, stride=stride, padding=1, bias=False)
        self.bn1 = nn.BatchNorm2d(c_out)
        self.conv2 = nn.Conv2d(c_out, c_out, 3, padding=1, bias=False)
        self.bn2 = nn.BatchNorm2d(c_out)
        self.skip = (
            nn.Sequential(nn.Conv2d(c_in, c_out, 1, stride=stride, bias=False), nn.BatchNorm2d(c_out))
            if (stride != 1 or c_in != c_out)
            else nn.Identity()
        )

    def forward(self, x):
        out = torch.relu(self.bn1(self.conv1(x)))
        out = self.bn2(self.conv2(out))
        return torch.relu(out + self.skip(x))


class SmallVgg(nn.Module):
    """Two conv blocks, flatten, two-layer MLP head; hooks on 'block1'/'block2'."""

    def __init__(self, num_classes: int = 4, width: int = 16, image_size: int = 32):
        super().__init__()
        self.block1 = nn.Sequential(
            nn.Conv2d(3, width, 3, padding=1),
            nn.ReLU(inplace=True),
            nn.Conv2d(width, width, 3, padding=1),
            nn.ReLU(inplace=True),
            nn.MaxPool2d(2),
        )
        self.block2 = nn.Sequential(
            nn.Conv2d(width, 2 * width, 3, padding=1),
            nn.ReLU(inplace=True),
            nn.Conv2d(2 * width, 2 * width, 3, padding=1),
            nn.ReLU(inplace=True),
            nn.MaxPool2d(2),
        )
        flat = 2 * width * (image_size // 4) ** 2
        self.classifier = nn.Sequential(
            nn.Flatten(),
            nn.Linear(flat, 4 * width),
            nn.ReLU(inplace=True),
            nn.Linear(4 * width, num_classes),
        )

    def forward(self, x):
        return self.classifier(self.block2(self.block1(x)))


def _build_small_resnet(num_classes: int, seed: int) -> nn.Module:
    torch.manual_seed(seed)
    return SmallResNet(num_classes=num_classes)


def _build_small_vgg(num_classes: int, seed: int) -> nn.Module:
    torch.manual_seed(seed)
    return SmallVgg(num_classes=num_classes)


def _build_torchvision(name: str):
    def build(num_classes: int, seed: int) -> nn.Module:
        from torchvision import models

        torch.manual_seed(seed)
        model = getattr(models, name)(weights=None, num_classes=num_classes)
        return model

    return build


REGISTRY: dict[str, ModelEntry] = {
    "small_resnet": ModelEntry(
        build=_build_small_resnet,
        default_layers=("layer1", "layer2"),
        head_input_layer="layer2",
        head_kind="gap_linear",
    ),
    "small_vgg": ModelEntry(
        build=_build_small_vgg,
        default_layers=("block1", "block2"),
        head_input_layer="block2",
        head_kind="mlp",
    ),
    "resnet18": ModelEntry(
        build=_build_torchvision("resnet18"),
        default_layers=("layer3", "layer4"),
        head_input_layer="layer4",
        head_kind="gap_linear",
    ),
    "resnet50": ModelEntry(
        build=_build_torchvision("resnet50"),
        default_layers=("layer3", "layer4"),
        head_input_layer="layer4",
        head_kind="gap_linear",
    ),
    "vgg19": ModelEntry(
        build=_build_torchvision("vgg19"),
        default_layers=("features",),
        head_input_layer="features",
        head_kind="mlp",
    ),
}


def build_model(name: str, num_classes: int, seed: int = 0) -> tuple[nn.Module, ModelEntry]:
    if name not in REGISTRY:
        raise ValueError(f"unknown model '{name}'; known: {sorted(REGISTRY)}")
    entry = REGISTRY[name]
    model = entry.build(num_classes, seed)
    model.eval()
    return model, entry


def export_gap_linear_head(model: nn.Module) -> tuple:
    """Weights/bias of the model's own final linear layer (GAP+linear heads)."""
    fc = getattr(model, "fc", None)
    if fc is None or not isinstance(fc, nn.Linear):
        raise ValueError("model has no final nn.Linear named 'fc'")
    return fc.weight.detach().numpy(), fc.bias.detach().numpy()
