"""Pixel-space Fréchet distance between two image sets."""

from __future__ import annotations

import numpy as np


def gaussian_stats(samples) -> tuple[np.ndarray, np.ndarray]:
    x = np.asarray(samples, dtype=np.float64).reshape(len(samples), -1)
    if x.shape[0] < 2:
        raise ValueError(f"need at least 2 samples, got {x.shape[0]}")
    return x.mean(axis=0), np.cov(x, rowvar=False).reshape(x.shape[1], x.shape[1])


def _psd_sqrt(a: np.ndarray) -> np.ndarray:
    vals, vecs = np.linalg.eigh((a + a.T) / 2)
    return (vecs * np.sqrt(np.clip(vals, 0, None))) @ vecs.T


def frechet_from_stats(mu1, cov1, mu2, cov2) -> float:
    """``|mu1 - mu2|^2 + tr(cov1 + cov2 - 2 (cov1 cov2)^(1/2))``.

    The trace of the root is taken from the symmetric similar matrix
    ``cov1^(1/2) cov2 cov1^(1/2)``; negative eigenvalues from round-off are
    clamped to zero.
    """
    diff = np.asarray(mu1) - np.asarray(mu2)
    root1 = _psd_sqrt(cov1)
    inner = root1 @ cov2 @ root1
    eig = np.clip(np.linalg.eigvalsh((inner + inner.T) / 2), 0, None)
    value = diff @ diff + np.trace(cov1) + np.trace(cov2) - 2 * np.sqrt(eig).sum()
    return float(max(value, 0.0))


def pixel_frechet(real, generated) -> float:
    """Fréchet distance between Gaussian fits of two ``(M, ...)`` sample sets in raw pixel space."""
    return frechet_from_stats(*gaussian_stats(real), *gaussian_stats(generated))
