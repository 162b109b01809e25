"""Patch tokens, random masks, and masking-ratio schedules.

Images are ``(B, C, H, W)``. Tokens are ``(B, N, p*p*C)`` in row-major grid order,
each token flattened in ``(row, col, channel)`` order. Masks are boolean
``(B, N)`` tensors where ``True`` marks a removed (masked) patch.
"""

from __future__ import annotations

import math

import torch

from .errors import ShapeError


def patchify(images: torch.Tensor, patch_size: int) -> torch.Tensor:
    if images.ndim != 4:
        raise ShapeError(f"expected (B, C, H, W) images, got shape {tuple(images.shape)}")
    b, c, h, w = images.shape
    p = patch_size
    if p <= 0 or h % p or w % p:
        raise ShapeError(f"patch size {p} does not divide image size {h}x{w}")
    x = images.reshape(b, c, h // p, p, w // p, p)
    x = x.permute(0, 2, 4, 3, 5, 1)  # B, gh, gw, p, p, C
    return x.reshape(b, (h // p) * (w // p), p * p * c)


def unpatchify(tokens: torch.Tensor, patch_size: int, grid_h: int, grid_w: int) -> torch.Tensor:
    if tokens.ndim != 3:
        raise ShapeError(f"expected (B, N, D) tokens, got shape {tuple(tokens.shape)}")
    b, n, dim = tokens.shape
    p = patch_size
    if n != grid_h * grid_w:
        raise ShapeError(f"{n} tokens do not fill a {grid_h}x{grid_w} grid")
    if p <= 0 or dim % (p * p):
        raise ShapeError(f"token length {dim} is not a multiple of p*p = {p * p}")
    c = dim // (p * p)
    x = tokens.reshape(b, grid_h, grid_w, p, p, c)
    x = x.permute(0, 5, 1, 3, 2, 4)
    return x.reshape(b, c, grid_h * p, grid_w * p)


def num_masked(n_tokens: int, ratio: float) -> int:
    """``floor(ratio * n_tokens)``, validated."""
    if not 0.0 <= ratio < 1.0:
        raise ValueError(f"mask ratio must lie in [0, 1), got {ratio}")
    # the epsilon absorbs binary rounding such as 0.29 * 100 = 28.999...
    return math.floor(ratio * n_tokens + 1e-9)


def sample_mask(
    n_tokens: int,
    ratio: float,
    generator: torch.Generator | None = None,
    batch_size: int = 1,
) -> torch.Tensor:
    """Independent uniform masks, one per image, each with exactly ``floor(r*N)`` ones.

    Each row is a seeded shuffle of ``0..N-1``; the first ``floor(r*N)`` shuffled
    positions are masked.
    """
    k = num_masked(n_tokens, ratio)
    order = torch.rand(batch_size, n_tokens, generator=generator).argsort(dim=1)
    mask = torch.zeros(batch_size, n_tokens, dtype=torch.bool)
    mask.scatter_(1, order[:, :k], True)
    return mask


def _check_mask(tokens: torch.Tensor, mask: torch.Tensor) -> int:
    if mask.shape != tokens.shape[:2]:
        raise ShapeError(f"mask {tuple(mask.shape)} does not match tokens {tuple(tokens.shape[:2])}")
    counts = mask.sum(dim=1)
    if bool(torch.any(counts != counts[0])):
        raise ShapeError("every image in a batch must mask the same number of patches")
    return int(counts[0]) if counts.numel() else 0


def gather_unmasked(tokens: torch.Tensor, mask: torch.Tensor):
    """Return ``(visible, ids_keep)``: unmasked tokens in their original order and their indices."""
    k = _check_mask(tokens, mask)
    n_keep = tokens.shape[1] - k
    # stable sort puts unmasked (False) first, preserving ascending index order
    ids_keep = torch.argsort(mask.to(torch.uint8), dim=1, stable=True)[:, :n_keep]
    visible = torch.gather(tokens, 1, ids_keep.unsqueeze(-1).expand(-1, -1, tokens.shape[-1]))
    return visible, ids_keep


def scatter_with_mask_token(
    visible: torch.Tensor, ids_keep: torch.Tensor, mask: torch.Tensor, mask_token: torch.Tensor
) -> torch.Tensor:
    """Place ``visible`` back at ``ids_keep`` and fill every masked slot with ``mask_token``."""
    b, n = mask.shape
    dim = visible.shape[-1]
    if visible.shape[:2] != ids_keep.shape:
        raise ShapeError("visible tokens and their indices disagree in shape")
    n_keep = n - (int(mask[0].sum()) if b else 0)
    if visible.shape[1] != n_keep:
        raise ShapeError(f"expected {n_keep} visible tokens, got {visible.shape[1]}")
    if ids_keep.numel() and (int(ids_keep.min()) < 0 or int(ids_keep.max()) >= n):
        raise IndexError(f"token index out of range for sequence length {n}")
    if mask_token.numel() != dim:
        raise ShapeError(f"mask token has {mask_token.numel()} entries, tokens have {dim}")
    full = mask_token.reshape(1, 1, dim).to(visible.dtype).expand(b, n, dim)
    return full.scatter(1, ids_keep.unsqueeze(-1).expand(-1, -1, dim), visible)


def cosine_ratio(step: int, total: int) -> float:
    """Unmasking-tuning ratio ``0.5 * cos(pi/2 * step/total) ** 4``."""
    if total <= 0:
        raise ValueError(f"total steps must be positive, got {total}")
    if not 0 <= step <= total:
        raise ValueError(f"step {step} outside [0, {total}]")
    if step == total:
        return 0.0
    return 0.5 * math.cos(math.pi / 2 * step / total) ** 4
