"""Masked training objective: DSM on visible tokens plus MAE reconstruction on masked ones.

Both terms reduce by a per-image mean over the contributing elements and then
average over the batch, so the balance set by ``lam`` does not depend on the
mask ratio or the token count.
"""

from __future__ import annotations

from dataclasses import dataclass

import torch

from .errors import ShapeError

DSM_MODES = ("unmasked", "full")


@dataclass
class LossBreakdown:
    dsm: torch.Tensor
    mae: torch.Tensor
    total: torch.Tensor
    lam: float

    def as_floats(self) -> dict:
        return {k: float(getattr(self, k).detach()) for k in ("dsm", "mae", "total")} | {"lam": self.lam}


def _masked_mean(sq_err: torch.Tensor, keep: torch.Tensor) -> torch.Tensor:
    """Per-image mean of ``sq_err`` over tokens where ``keep`` is set. Shape ``(B,)``."""
    keep = keep.to(sq_err.dtype).unsqueeze(-1)
    count = keep.sum(dim=(1, 2)) * sq_err.shape[-1]
    return (sq_err * keep).sum(dim=(1, 2)) / count


def _check(pred, target, mask):
    if pred.shape != target.shape:
        raise ShapeError(f"prediction {tuple(pred.shape)} and target {tuple(target.shape)} differ")
    if mask is not None and mask.shape != pred.shape[:2]:
        raise ShapeError(f"mask {tuple(mask.shape)} does not match tokens {tuple(pred.shape[:2])}")


def dsm_loss(pred, x0_tokens, mask=None, mode: str = "unmasked", weight=1.0) -> torch.Tensor:
    """Weighted denoising loss of the preconditioned prediction against clean tokens.

    ``mode="unmasked"`` averages over visible tokens only; ``mode="full"`` over
    all tokens. ``weight`` is a scalar or per-image ``(B,)`` tensor.
    """
    _check(pred, x0_tokens, mask)
    if mode not in DSM_MODES:
        raise ValueError(f"mode must be one of {DSM_MODES}, got {mode!r}")
    if mask is None:
        mask = torch.zeros(pred.shape[:2], dtype=torch.bool)
    keep = ~mask if mode == "unmasked" else torch.ones_like(mask)
    if bool(torch.any(keep.sum(dim=1) == 0)):
        raise ValueError("no unmasked tokens to score; lower the mask ratio")
    per_image = _masked_mean((pred - x0_tokens) ** 2, keep)
    return (per_image * weight).mean()


def mae_loss(pred, noisy_tokens, mask=None) -> torch.Tensor:
    """Reconstruction error on masked tokens against the diffused input ``x0 + n``.

    Zero when nothing is masked.
    """
    _check(pred, noisy_tokens, mask)
    if mask is None or not bool(mask.any()):
        return pred.new_zeros(())
    return _masked_mean((pred - noisy_tokens) ** 2, mask).mean()


def total_loss(dsm, mae, lam: float = 0.1) -> LossBreakdown:
    if lam < 0:
        raise ValueError(f"lambda must be non-negative, got {lam}")
    return LossBreakdown(dsm=dsm, mae=mae, total=dsm + lam * mae, lam=lam)
