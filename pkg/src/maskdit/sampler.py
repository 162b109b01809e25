"""Deterministic probability-flow ODE sampling with Heun's method and classifier-free guidance."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import torch

from .diffusion import EdmConstants
from .errors import ConfigError


@dataclass(frozen=True)
class SamplerConfig:
    num_steps: int = 40
    t_min: float = 0.002
    t_max: float = 80.0
    rho: float = 7.0
    guidance_scale: float = 1.0

    def __post_init__(self):
        if self.num_steps < 2:
            raise ConfigError(f"num_steps must be at least 2, got {self.num_steps}")
        if not 0 < self.t_min < self.t_max:
            raise ConfigError(f"need 0 < t_min < t_max, got {self.t_min}, {self.t_max}")
        if self.rho <= 0:
            raise ConfigError(f"rho must be positive, got {self.rho}")
        if self.guidance_scale < 1:
            raise ConfigError(f"guidance_scale must be >= 1, got {self.guidance_scale}")


def time_schedule(cfg: SamplerConfig = SamplerConfig()) -> np.ndarray:
    """``num_steps`` decreasing times from ``t_max`` to ``t_min`` followed by a terminal 0."""
    n, rho = cfg.num_steps, cfg.rho
    i = np.arange(n, dtype=np.float64)
    lo, hi = cfg.t_min ** (1 / rho), cfg.t_max ** (1 / rho)
    t = (hi + i / (n - 1) * (lo - hi)) ** rho
    return np.append(t, 0.0)


def cfg_denoise(d_cond, d_uncond, w: float):
    """Guided denoiser ``d_uncond + w * (d_cond - d_uncond)``; ``w == 1`` returns ``d_cond`` as is."""
    if w == 1:
        return d_cond
    return d_uncond + w * (d_cond - d_uncond)


def heun_step(x, t_cur: float, t_next: float, denoise_fn):
    """One step of the probability-flow ODE ``dx/dt = (x - D(x, t)) / t``.

    Second-order (Heun) when ``t_next > 0``, plain Euler into ``t_next == 0``.
    """
    if not t_cur > t_next >= 0:
        raise ValueError(f"need t_cur > t_next >= 0, got {t_cur}, {t_next}")
    d = (x - denoise_fn(x, t_cur)) / t_cur
    x_next = x + (t_next - t_cur) * d
    if t_next > 0:
        d_next = (x_next - denoise_fn(x_next, t_next)) / t_next
        x_next = x + (t_next - t_cur) * (0.5 * d + 0.5 * d_next)
    return x_next


def integrate(x, denoise_fn, cfg: SamplerConfig = SamplerConfig()):
    """Run ``heun_step`` over the whole schedule starting from ``x`` at ``t_max``."""
    times = time_schedule(cfg)
    for t_cur, t_next in zip(times[:-1], times[1:]):
        x = heun_step(x, float(t_cur), float(t_next), denoise_fn)
    return x


class CountingDenoiser:
    """Wraps a network so every conditional / unconditional evaluation is counted.

    Calling the instance returns the guided denoiser output. With guidance
    scale 1 the unconditional branch is never evaluated.
    """

    def __init__(self, model, labels, guidance_scale: float = 1.0, consts: EdmConstants = EdmConstants()):
        self.model = model
        self.labels = torch.as_tensor(labels, dtype=torch.long)
        self.null = torch.full_like(self.labels, model.config.null_label)
        self.w = guidance_scale
        self.consts = consts
        self.cond_evals = 0
        self.uncond_evals = 0

    @property
    def evaluations(self) -> int:
        return self.cond_evals + self.uncond_evals

    def __call__(self, x, t):
        sigma = torch.full((x.shape[0],), t, dtype=x.dtype)
        d_cond = self.model.denoise_images(x, sigma, self.labels, self.consts)
        self.cond_evals += 1
        if self.w == 1:
            return d_cond
        d_uncond = self.model.denoise_images(x, sigma, self.null, self.consts)
        self.uncond_evals += 1
        return cfg_denoise(d_cond, d_uncond, self.w)


@torch.no_grad()
def sample(
    model,
    labels,
    cfg: SamplerConfig = SamplerConfig(),
    generator: torch.Generator | None = None,
    consts: EdmConstants = EdmConstants(),
    return_denoiser: bool = False,
):
    """Draw one image per label by integrating the ODE from ``N(0, t_max^2 I)``.

    The network runs unmasked. Returns ``(B, C, H, W)`` images, plus the
    counting denoiser when ``return_denoiser`` is set.
    """
    labels = torch.as_tensor(labels, dtype=torch.long).reshape(-1)
    k = model.config.num_classes
    if labels.numel() == 0 or int(labels.min()) < 0 or int(labels.max()) >= k:
        raise ValueError(f"labels must be class indices in [0, {k})")
    was_training = model.training
    model.eval()
    c, s = model.config.channels, model.config.image_size
    dtype = next(model.parameters()).dtype
    x = torch.randn(labels.shape[0], c, s, s, generator=generator, dtype=torch.float64).to(dtype)
    x = x * cfg.t_max
    denoiser = CountingDenoiser(model, labels, cfg.guidance_scale, consts)
    try:
        out = integrate(x, denoiser, cfg)
    finally:
        model.train(was_training)
    return (out, denoiser) if return_denoiser else out
