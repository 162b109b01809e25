"""EDM-parameterized diffusion process.

Forward noising is ``x = x0 + sigma * eps`` and the network is wrapped with the
sigma-dependent skip connection of Karras et al. (2022). All functions accept a
scalar sigma or a per-sample sigma of shape ``(B,)``; per-sample values are
broadcast over the trailing dimensions of ``x``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import torch

from .errors import ConfigError, ShapeError


@dataclass(frozen=True)
class EdmConstants:
    sigma_data: float = 0.5
    p_mean: float = -1.2
    p_std: float = 1.2

    def __post_init__(self):
        if not (self.sigma_data > 0 and math.isfinite(self.sigma_data)):
            raise ConfigError(f"sigma_data must be positive, got {self.sigma_data}")
        if not (self.p_std > 0 and math.isfinite(self.p_std)):
            raise ConfigError(f"p_std must be positive, got {self.p_std}")
        if not math.isfinite(self.p_mean):
            raise ConfigError(f"p_mean must be finite, got {self.p_mean}")


def _as_sigma(sigma, like: torch.Tensor) -> torch.Tensor:
    sigma = torch.as_tensor(sigma, dtype=like.dtype, device=like.device)
    if not bool(torch.all(sigma > 0)) or not bool(torch.all(torch.isfinite(sigma))):
        raise ValueError("sigma must be positive and finite")
    if sigma.ndim == 0:
        return sigma
    if sigma.ndim != 1 or sigma.shape[0] != like.shape[0]:
        raise ShapeError(
            f"per-sample sigma must have shape ({like.shape[0]},), got {tuple(sigma.shape)}"
        )
    return sigma.reshape(-1, *([1] * (like.ndim - 1)))


def add_noise(x0: torch.Tensor, sigma, eps: torch.Tensor) -> torch.Tensor:
    """Return ``x0 + sigma * eps``; ``eps`` is drawn by the caller."""
    if x0.shape != eps.shape:
        raise ShapeError(f"x0 {tuple(x0.shape)} and eps {tuple(eps.shape)} differ")
    return x0 + _as_sigma(sigma, x0) * eps


def edm_coefficients(sigma, consts: EdmConstants = EdmConstants()):
    """Return ``(c_skip, c_out, c_in, c_noise)`` for the given noise level(s)."""
    sigma = torch.as_tensor(sigma, dtype=torch.float64) if not torch.is_tensor(sigma) else sigma
    if not bool(torch.all(sigma > 0)):
        raise ValueError("sigma must be positive")
    sd = consts.sigma_data
    denom = (sigma**2 + sd**2).sqrt()
    c_skip = sd**2 / (sigma**2 + sd**2)
    c_out = sigma * sd / denom
    c_in = 1.0 / denom
    c_noise = sigma.log() / 4
    return c_skip, c_out, c_in, c_noise


def precondition(raw_output_fn, x: torch.Tensor, sigma, consts: EdmConstants = EdmConstants()):
    """Evaluate the preconditioned denoiser ``D(x, sigma)``.

    ``raw_output_fn(scaled_x, c_noise)`` is the backbone; ``c_noise`` is passed
    with shape ``(B,)`` (or scalar when sigma is scalar).
    """
    s = _as_sigma(sigma, x)
    c_skip, c_out, c_in, _ = edm_coefficients(s, consts)
    c_noise = torch.as_tensor(sigma, dtype=x.dtype, device=x.device).log() / 4
    raw = raw_output_fn(c_in * x, c_noise)
    if raw.shape != x.shape:
        raise ShapeError(f"backbone returned {tuple(raw.shape)}, expected {tuple(x.shape)}")
    return c_skip * x + c_out * raw


def score_from_denoiser(denoised: torch.Tensor, x: torch.Tensor, sigma) -> torch.Tensor:
    """Score estimate ``(D - x) / sigma**2``."""
    if denoised.shape != x.shape:
        raise ShapeError(f"denoised {tuple(denoised.shape)} and x {tuple(x.shape)} differ")
    return (denoised - x) / _as_sigma(sigma, x) ** 2


def sample_training_sigma(
    batch_size: int,
    generator: torch.Generator | None = None,
    consts: EdmConstants = EdmConstants(),
    dtype=torch.float32,
) -> torch.Tensor:
    """Draw per-sample training noise levels with ``ln(sigma) ~ N(p_mean, p_std**2)``."""
    z = torch.randn(batch_size, generator=generator, dtype=dtype)
    return (z * consts.p_std + consts.p_mean).exp()


def loss_weight(sigma, consts: EdmConstants = EdmConstants()):
    """EDM loss weighting ``(sigma**2 + sd**2) / (sigma * sd)**2``."""
    if torch.is_tensor(sigma):
        if not bool(torch.all(sigma > 0)):
            raise ValueError("sigma must be positive")
    elif not sigma > 0:
        raise ValueError(f"sigma must be positive, got {sigma}")
    sd = consts.sigma_data
    return (sigma**2 + sd**2) / (sigma * sd) ** 2
