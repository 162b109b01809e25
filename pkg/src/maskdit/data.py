"""Synthetic class-conditional images: one jittered Gaussian blob per image."""

from __future__ import annotations

from dataclasses import dataclass

import torch

from .errors import ConfigError

# Pixel mean and inverse-scaled std of the default dataset, estimated once from
# 200k seeded images (see demos/03_synthetic_data.py) and pinned here.
_DEFAULT_OFFSET = 0.09536
_DEFAULT_SCALE = 2.4291


@dataclass(frozen=True)
class DatasetSpec:
    image_size: int = 16
    channels: int = 1
    num_classes: int = 2
    centers: tuple = ((4.0, 4.0), (11.0, 11.0))
    blob_width: float = 2.0
    jitter: float = 1.0
    noise: float = 0.05
    norm_offset: float = _DEFAULT_OFFSET
    norm_scale: float = _DEFAULT_SCALE

    def __post_init__(self):
        object.__setattr__(self, "centers", tuple(tuple(float(v) for v in c) for c in self.centers))
        if len(self.centers) != self.num_classes:
            raise ConfigError(f"need {self.num_classes} centers, got {len(self.centers)}")
        if any(len(c) != 2 for c in self.centers):
            raise ConfigError("centers are (row, col) pairs")
        if self.image_size <= 0 or self.channels <= 0 or self.blob_width <= 0 or self.norm_scale <= 0:
            raise ConfigError("image_size, channels, blob_width and norm_scale must be positive")

    def normalize(self, raw: torch.Tensor) -> torch.Tensor:
        return (raw - self.norm_offset) * self.norm_scale

    def denormalize(self, x: torch.Tensor) -> torch.Tensor:
        return x / self.norm_scale + self.norm_offset


def render_blobs(spec: DatasetSpec, centers: torch.Tensor) -> torch.Tensor:
    """Noise-free blobs ``exp(-|p - c|^2 / (2 s^2))`` for ``centers`` of shape ``(B, 2)``."""
    coords = torch.arange(spec.image_size, dtype=torch.float64)
    dr = coords.view(1, -1, 1) - centers[:, 0].view(-1, 1, 1)
    dc = coords.view(1, 1, -1) - centers[:, 1].view(-1, 1, 1)
    return torch.exp(-(dr**2 + dc**2) / (2 * spec.blob_width**2))


def make_batch(spec: DatasetSpec, batch_size: int, generator: torch.Generator | None = None, raw: bool = False):
    """Return ``(images, labels, centers)``.

    ``images`` is ``(B, C, H, W)`` float32, normalized unless ``raw``;
    ``centers`` holds each blob's jittered (row, col) position.
    """
    if batch_size <= 0:
        raise ValueError("batch_size must be positive")
    labels = torch.randint(spec.num_classes, (batch_size,), generator=generator)
    jitter = (torch.rand(batch_size, 2, generator=generator, dtype=torch.float64) * 2 - 1) * spec.jitter
    centers = torch.tensor(spec.centers, dtype=torch.float64)[labels] + jitter
    blobs = render_blobs(spec, centers).unsqueeze(1).expand(-1, spec.channels, -1, -1)
    shape = (batch_size, spec.channels, spec.image_size, spec.image_size)
    images = blobs + spec.noise * torch.randn(shape, generator=generator, dtype=torch.float64)
    if not raw:
        images = spec.normalize(images)
    return images.float(), labels, centers


def estimate_normalization(spec: DatasetSpec, num_images: int = 200_000, seed: int = 0, target_std: float = 0.5):
    """Per-channel pixel mean and the scale that maps the pixel std to ``target_std``."""
    g = torch.Generator().manual_seed(seed)
    total, total_sq, count = 0.0, 0.0, 0
    remaining = num_images
    while remaining > 0:
        n = min(remaining, 10_000)
        images, _, _ = make_batch(spec, n, g, raw=True)
        x = images.double()
        total += float(x.sum())
        total_sq += float((x**2).sum())
        count += x.numel()
        remaining -= n
    mean = total / count
    std = (total_sq / count - mean**2) ** 0.5
    return mean, target_std / std
