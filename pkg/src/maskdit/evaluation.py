"""Sample generation and desk-scale quality checks."""

from __future__ import annotations

import dataclasses

import numpy as np
import torch

from .data import DatasetSpec, make_batch
from .metrics import pixel_frechet
from .sampler import SamplerConfig, sample


def balanced_labels(count: int, num_classes: int) -> torch.Tensor:
    return torch.arange(count) % num_classes


def generate(model, labels, cfg: SamplerConfig, seed: int, consts, batch_size: int = 128):
    """Sample in chunks from one seeded generator.

    Returns ``(images, evaluations)`` where ``evaluations`` counts the
    conditional and unconditional network calls along one trajectory.
    """
    g = torch.Generator().manual_seed(seed)
    chunks, evals = [], {}
    labels = torch.as_tensor(labels)
    for start in range(0, len(labels), batch_size):
        out, den = sample(model, labels[start : start + batch_size], cfg, g, consts, return_denoiser=True)
        chunks.append(out)
        evals = {"cond": den.cond_evals, "uncond": den.uncond_evals}
    return torch.cat(chunks), evals


def real_images(spec: DatasetSpec, count: int, seed: int):
    images, labels, centers = make_batch(spec, count, torch.Generator().manual_seed(seed))
    return images, labels, centers


def brightest_pixel(images) -> np.ndarray:
    """``(row, col)`` of the maximum of each image's channel mean, shape ``(M, 2)``."""
    x = np.asarray(images, dtype=np.float64).mean(axis=1)
    flat = x.reshape(len(x), -1).argmax(axis=1)
    return np.stack(np.unravel_index(flat, x.shape[1:]), axis=1)


def class_consistency(images, labels, spec: DatasetSpec) -> float:
    """Fraction of images whose brightest pixel is nearer their own class center than any other."""
    peaks = brightest_pixel(images).astype(np.float64)
    centers = np.asarray(spec.centers, dtype=np.float64)
    dist = np.linalg.norm(peaks[:, None, :] - centers[None, :, :], axis=-1)
    return float(np.mean(dist.argmin(axis=1) == np.asarray(labels)))


def frechet_to_real(generated, spec: DatasetSpec, seed: int) -> float:
    real, _, _ = real_images(spec, len(generated), seed)
    return pixel_frechet(real.numpy(), np.asarray(generated))


def with_guidance(cfg: SamplerConfig, w: float) -> SamplerConfig:
    return dataclasses.replace(cfg, guidance_scale=w)
