"""Convolutional backbone producing dense activation grids.

The stack is VGG16's convolutional part truncated at a tap point in the
fifth block; both taps emit 512 channels at stride 16, so an r x r input
yields a floor(r/16) x floor(r/16) x 512 grid. Weights come either from
the torchvision ImageNet checkpoint ("pretrained", needs the download to
be available) or from a seeded random initialization ("random"), which is
enough for format and geometry work on machines without the checkpoint.
"""

from __future__ import annotations

import numpy as np
import torch
import torchvision

# Truncation index into vgg16().features, inclusive of the tap's ReLU.
TAP_POINTS = {
    "block5_conv2": 28,  # penultimate conv of the fifth block
    "block5_conv3": 30,  # last conv of the fifth block
}

CHANNELS = 512
STRIDE = 16

# torchvision ImageNet statistics, applied to [0, 1] RGB.
_MEAN = np.array([0.485, 0.456, 0.406], dtype=np.float32)
_STD = np.array([0.229, 0.224, 0.225], dtype=np.float32)


class Vgg16Backbone:
    """VGG16 conv stack up to a fifth-block tap point."""

    def __init__(self, tap: str = "block5_conv2", weights: str = "pretrained",
                 seed: int = 0):
        if tap not in TAP_POINTS:
            raise ValueError(f"unknown tap '{tap}', expected one of {sorted(TAP_POINTS)}")
        if weights == "pretrained":
            model = torchvision.models.vgg16(
                weights=torchvision.models.VGG16_Weights.IMAGENET1K_V1
            )
        elif weights == "random":
            torch.manual_seed(seed)
            model = torchvision.models.vgg16(weights=None)
        else:
            raise ValueError(f"weights must be 'pretrained' or 'random', got '{weights}'")
        self.tap = tap
        self.weights = weights
        self.model = model.features[: TAP_POINTS[tap]].eval()
        for p in self.model.parameters():
            p.requires_grad_(False)

    def features(self, rgb: np.ndarray) -> np.ndarray:
        """Activation grid for one RGB image given as H x W x 3 in [0, 1]."""
        if rgb.ndim != 3 or rgb.shape[2] != 3:
            raise ValueError(f"expected H x W x 3 RGB input, got shape {rgb.shape}")
        normalized = (rgb.astype(np.float32) - _MEAN) / _STD
        batch = torch.from_numpy(normalized.transpose(2, 0, 1)).unsqueeze(0)
        with torch.no_grad():
            out = self.model(batch)
        return out.squeeze(0).permute(1, 2, 0).numpy().astype(np.float32)
