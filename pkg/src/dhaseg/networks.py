"""Small convolutional networks: exemplar-conditioned generator, patch
discriminators, and the segmentation network, plus checkpoint I/O.

All constructors take a seed and initialize from a private torch.Generator, so
identical seeds give identical weights regardless of global RNG state.
"""
from __future__ import annotations

from pathlib import Path

import numpy as np
import torch
import torch.nn as nn
import torch.nn.functional as TF

from .data import NUM_CLASSES

CHECKPOINT_FORMAT_VERSION = 1


def _init_conv(conv: nn.Conv2d, g: torch.Generator, gain: float = 2.0) -> None:
    fan_in = conv.in_channels * conv.kernel_size[0] * conv.kernel_size[1]
    with torch.no_grad():
        conv.weight.copy_(torch.randn(conv.weight.shape, generator=g)
                          * (gain / fan_in) ** 0.5)
        if conv.bias is not None:
            conv.bias.zero_()


def _init_linear(lin: nn.Linear, g: torch.Generator, scale: float = 0.1) -> None:
    with torch.no_grad():
        lin.weight.copy_(torch.randn(lin.weight.shape, generator=g)
                         * scale / lin.in_features ** 0.5)
        lin.bias.zero_()


def images_to_tensor(images: np.ndarray, dtype=torch.float32) -> torch.Tensor:
    """(B,H,W,3) or (H,W,3) numpy in [0,1] -> (B,3,H,W) tensor."""
    arr = np.asarray(images)
    if arr.ndim == 3:
        arr = arr[None]
    return torch.from_numpy(np.ascontiguousarray(arr.transpose(0, 3, 1, 2))).to(dtype)


def tensor_to_images(t: torch.Tensor) -> np.ndarray:
    return t.detach().cpu().numpy().transpose(0, 2, 3, 1)


class ModulatedResBlock(nn.Module):
    """Residual block whose features are instance-normalized and re-scaled by a
    per-channel affine transform predicted from the style vector."""

    def __init__(self, channels: int, style_dim: int, g: torch.Generator):
        super().__init__()
        self.conv1 = nn.Conv2d(channels, channels, 3, padding=1)
        self.conv2 = nn.Conv2d(channels, channels, 3, padding=1)
        self.affine1 = nn.Linear(style_dim, 2 * channels)
        self.affine2 = nn.Linear(style_dim, 2 * channels)
        for c in (self.conv1, self.conv2):
            _init_conv(c, g)
        for a in (self.affine1, self.affine2):
            _init_linear(a, g)

    @staticmethod
    def _modulate(h, affine, style):
        gamma, beta = affine(style).chunk(2, dim=1)
        mu = h.mean(dim=(2, 3), keepdim=True)
        sigma = h.var(dim=(2, 3), keepdim=True, unbiased=False).add(1e-6).sqrt()
        hn = (h - mu) / sigma
        return (1.0 + gamma[:, :, None, None]) * hn + beta[:, :, None, None]

    def forward(self, h, style):
        t = TF.relu(self._modulate(self.conv1(h), self.affine1, style))
        t = self._modulate(self.conv2(t), self.affine2, style)
        return h + t


class Generator(nn.Module):
    """Exemplar-guided translator: content encoder downsamples to 1/4 resolution;
    the decoder is conditioned on the exemplar's style code and emits an image
    in [0,1] at the input resolution."""

    def __init__(self, style_dim: int = 64, seed: int = 0):
        super().__init__()
        self.style_dim = style_dim
        g = torch.Generator().manual_seed(seed)
        self.enc1 = nn.Conv2d(3, 32, 3, stride=1, padding=1)
        self.enc2 = nn.Conv2d(32, 64, 3, stride=2, padding=1)
        self.enc3 = nn.Conv2d(64, 64, 3, stride=2, padding=1)
        self.res1 = ModulatedResBlock(64, style_dim, g)
        self.res2 = ModulatedResBlock(64, style_dim, g)
        self.up1 = nn.Conv2d(64, 32, 3, padding=1)
        self.up2 = nn.Conv2d(32, 16, 3, padding=1)
        self.out = nn.Conv2d(16, 3, 3, padding=1)
        for c in (self.enc1, self.enc2, self.enc3, self.up1, self.up2, self.out):
            _init_conv(c, g)

    def forward(self, image: torch.Tensor, style: torch.Tensor) -> torch.Tensor:
        if image.ndim != 4 or image.shape[1] != 3:
            raise ValueError(f"expected (B,3,H,W) input, got {tuple(image.shape)}")
        if style.ndim != 2 or style.shape[1] != self.style_dim:
            raise ValueError(f"expected (B,{self.style_dim}) style, got {tuple(style.shape)}")
        h = TF.relu(self.enc1(image))
        h = TF.relu(self.enc2(h))
        h = TF.relu(self.enc3(h))
        h = self.res1(h, style)
        h = self.res2(h, style)
        h = TF.relu(self.up1(TF.interpolate(h, scale_factor=2, mode="nearest")))
        h = TF.relu(self.up2(TF.interpolate(h, scale_factor=2, mode="nearest")))
        return torch.sigmoid(self.out(h))


class PatchDiscriminator(nn.Module):
    """3 stride-2 conv layers; per-patch logits are averaged and squashed to a
    single score per sample in (0,1)."""

    def __init__(self, in_channels: int, seed: int = 0):
        super().__init__()
        g = torch.Generator().manual_seed(seed)
        self.c1 = nn.Conv2d(in_channels, 32, 4, stride=2, padding=1)
        self.c2 = nn.Conv2d(32, 64, 4, stride=2, padding=1)
        self.c3 = nn.Conv2d(64, 64, 4, stride=2, padding=1)
        self.head = nn.Conv2d(64, 1, 1)
        for c in (self.c1, self.c2, self.c3, self.head):
            _init_conv(c, g)

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        h = TF.leaky_relu(self.c1(x), 0.2)
        h = TF.leaky_relu(self.c2(h), 0.2)
        h = TF.leaky_relu(self.c3(h), 0.2)
        logits = self.head(h).mean(dim=(1, 2, 3))
        return torch.sigmoid(logits)


class ImageDiscriminator(PatchDiscriminator):
    def __init__(self, seed: int = 0):
        super().__init__(3, seed=seed)


class StyleDiscriminator(PatchDiscriminator):
    """Scores an ordered pair of images (channel-concatenated)."""

    def __init__(self, seed: int = 0):
        super().__init__(6, seed=seed)

    def forward(self, first: torch.Tensor, second: torch.Tensor = None) -> torch.Tensor:
        if second is not None:
            if first.shape != second.shape:
                raise ValueError("pair images must share a shape")
            first = torch.cat([first, second], dim=1)
        return super().forward(first)


class OutputDiscriminator(PatchDiscriminator):
    """Discriminates H x W x C segmentation probability maps."""

    def __init__(self, num_classes: int = NUM_CLASSES, seed: int = 0):
        super().__init__(num_classes, seed=seed)


class SegNetwork(nn.Module):
    """Segmentation net: 4 conv layers (two stride-2), bilinear upsampling back
    to input resolution, 1x1 head, softmax probabilities."""

    def __init__(self, num_classes: int = NUM_CLASSES, seed: int = 0):
        super().__init__()
        self.num_classes = num_classes
        g = torch.Generator().manual_seed(seed)
        self.c1 = nn.Conv2d(3, 32, 3, stride=1, padding=1)
        self.c2 = nn.Conv2d(32, 64, 3, stride=2, padding=1)
        self.c3 = nn.Conv2d(64, 64, 3, stride=2, padding=1)
        self.c4 = nn.Conv2d(64, 64, 3, stride=1, padding=1)
        self.head = nn.Conv2d(64, num_classes, 1)
        for c in (self.c1, self.c2, self.c3, self.c4, self.head):
            _init_conv(c, g)

    def features(self, image: torch.Tensor) -> torch.Tensor:
        """Penultimate feature map (B, 64, H/4, W/4)."""
        h = TF.relu(self.c1(image))
        h = TF.relu(self.c2(h))
        h = TF.relu(self.c3(h))
        return TF.relu(self.c4(h))

    def forward(self, image: torch.Tensor) -> torch.Tensor:
        if image.ndim != 4 or image.shape[1] != 3:
            raise ValueError(f"expected (B,3,H,W) input, got {tuple(image.shape)}")
        h = self.head(self.features(image))
        h = TF.interpolate(h, size=image.shape[-2:], mode="bilinear",
                           align_corners=False)
        return torch.softmax(h, dim=1)


def freeze(module: nn.Module) -> nn.Module:
    for p in module.parameters():
        p.requires_grad_(False)
    return module.eval()


# ---------------------------------------------------------------------------
# checkpoint I/O (single-file blobs with format version and config hash)

def save_checkpoint(path: Path, state_dict: dict, config_hash: str,
                    extra: dict | None = None) -> None:
    blob = {
        "format_version": CHECKPOINT_FORMAT_VERSION,
        "config_hash": config_hash,
        "state_dict": state_dict,
        "extra": extra or {},
    }
    Path(path).parent.mkdir(parents=True, exist_ok=True)
    torch.save(blob, path)


def load_checkpoint(path: Path) -> dict:
    path = Path(path)
    if not path.exists():
        raise FileNotFoundError(f"checkpoint not found: {path}")
    blob = torch.load(path, map_location="cpu", weights_only=False)
    version = blob.get("format_version")
    if version != CHECKPOINT_FORMAT_VERSION:
        raise ValueError(f"unsupported checkpoint format version {version!r}")
    return blob
