"""Asymmetric encoder-decoder diffusion transformer.

The encoder sees only the visible patch tokens; a narrower decoder sees the
full sequence after shared mask tokens are inserted. Every block is a DiT block
with adaLN-Zero conditioning on the sum of a noise-level embedding and a class
embedding (the extra class index ``num_classes`` is the null label).

Parameters enumerate in ``named_parameters()`` order: the module's own
parameter first, then submodules in definition order:

    mask_token, x_embedder, t_embedder, y_embedder, encoder_blocks,
    encoder_norm, decoder_embed, decoder_blocks, final_layer

Checkpoints rely on that order.
"""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass

import numpy as np
import torch
import torch.nn as nn
import torch.nn.functional as F

from .diffusion import EdmConstants, precondition
from .errors import ConfigError, ShapeError
from .patching import gather_unmasked, patchify, scatter_with_mask_token, unpatchify


@dataclass(frozen=True)
class BackboneConfig:
    image_size: int = 16
    channels: int = 1
    patch_size: int = 2
    num_classes: int = 2
    encoder_depth: int = 6
    encoder_width: int = 192
    encoder_heads: int = 6
    decoder_depth: int = 2
    decoder_width: int = 96
    decoder_heads: int = 6
    mlp_ratio: float = 4.0
    frequency_dim: int = 256

    def __post_init__(self):
        for name, value in asdict(self).items():
            if not value > 0:
                raise ConfigError(f"{name} must be positive, got {value}")
        if self.image_size % self.patch_size:
            raise ConfigError(f"patch size {self.patch_size} does not divide {self.image_size}")
        for stage in ("encoder", "decoder"):
            width, heads = getattr(self, f"{stage}_width"), getattr(self, f"{stage}_heads")
            if width % heads:
                raise ConfigError(f"{stage}_width {width} not divisible by {stage}_heads {heads}")
            if width % 4:
                raise ConfigError(f"{stage}_width {width} must be a multiple of 4 for 2-D sin-cos embeddings")
        if self.frequency_dim % 2:
            raise ConfigError("frequency_dim must be even")

    @property
    def grid_size(self) -> int:
        return self.image_size // self.patch_size

    @property
    def num_tokens(self) -> int:
        return self.grid_size**2

    @property
    def token_dim(self) -> int:
        return self.patch_size**2 * self.channels

    @property
    def null_label(self) -> int:
        return self.num_classes


def sincos_pos_embed_2d(width: int, grid_h: int, grid_w: int) -> np.ndarray:
    """Fixed 2-D sine-cosine embeddings, shape ``(grid_h * grid_w, width)``, row-major.

    The first half of the channels encodes the row, the second half the column.
    """
    if width % 4:
        raise ValueError("width must be a multiple of 4")
    quarter = width // 4
    omega = 1.0 / 10000 ** (np.arange(quarter, dtype=np.float64) / quarter)
    rows, cols = np.meshgrid(np.arange(grid_h, dtype=np.float64), np.arange(grid_w, dtype=np.float64), indexing="ij")

    def embed_1d(pos):
        out = np.outer(pos.reshape(-1), omega)
        return np.concatenate([np.sin(out), np.cos(out)], axis=1)

    return np.concatenate([embed_1d(rows), embed_1d(cols)], axis=1)


def timestep_embedding(c_noise: torch.Tensor, dim: int, max_period: float = 10000.0) -> torch.Tensor:
    half = dim // 2
    freqs = torch.exp(
        -math.log(max_period) * torch.arange(half, dtype=c_noise.dtype, device=c_noise.device) / half
    )
    args = c_noise.reshape(-1, 1) * freqs
    return torch.cat([torch.cos(args), torch.sin(args)], dim=-1)


def modulate(x, shift, scale):
    return x * (1 + scale) + shift


class Attention(nn.Module):
    def __init__(self, width: int, heads: int):
        super().__init__()
        self.heads = heads
        self.qkv = nn.Linear(width, 3 * width)
        self.proj = nn.Linear(width, width)

    def forward(self, x):
        b, n, d = x.shape
        qkv = self.qkv(x).reshape(b, n, 3, self.heads, d // self.heads).permute(2, 0, 3, 1, 4)
        out = F.scaled_dot_product_attention(qkv[0], qkv[1], qkv[2])
        return self.proj(out.transpose(1, 2).reshape(b, n, d))


class DiTBlock(nn.Module):
    def __init__(self, width: int, heads: int, mlp_ratio: float, cond_dim: int):
        super().__init__()
        hidden = int(width * mlp_ratio)
        self.norm1 = nn.LayerNorm(width, elementwise_affine=False, eps=1e-6)
        self.attn = Attention(width, heads)
        self.norm2 = nn.LayerNorm(width, elementwise_affine=False, eps=1e-6)
        self.mlp = nn.Sequential(nn.Linear(width, hidden), nn.GELU(approximate="tanh"), nn.Linear(hidden, width))
        self.adaLN_modulation = nn.Sequential(nn.SiLU(), nn.Linear(cond_dim, 6 * width))

    def forward(self, x, c):
        shift1, scale1, gate1, shift2, scale2, gate2 = self.adaLN_modulation(c).unsqueeze(1).chunk(6, dim=-1)
        x = x + gate1 * self.attn(modulate(self.norm1(x), shift1, scale1))
        x = x + gate2 * self.mlp(modulate(self.norm2(x), shift2, scale2))
        return x


class FinalLayer(nn.Module):
    def __init__(self, width: int, out_dim: int, cond_dim: int):
        super().__init__()
        self.norm = nn.LayerNorm(width, elementwise_affine=False, eps=1e-6)
        self.linear = nn.Linear(width, out_dim)
        self.adaLN_modulation = nn.Sequential(nn.SiLU(), nn.Linear(cond_dim, 2 * width))

    def forward(self, x, c):
        shift, scale = self.adaLN_modulation(c).unsqueeze(1).chunk(2, dim=-1)
        return self.linear(modulate(self.norm(x), shift, scale))


class MaskDiT(nn.Module):
    """Masked diffusion transformer over patch tokens.

    ``forward`` maps c_in-scaled noisy tokens ``(B, N, p*p*C)`` to the raw
    network output of the same shape. ``denoise`` wraps it with EDM
    preconditioning.
    """

    def __init__(self, config: BackboneConfig = BackboneConfig()):
        super().__init__()
        self.config = config
        cfg = config
        enc, dec = cfg.encoder_width, cfg.decoder_width
        self.x_embedder = nn.Linear(cfg.token_dim, enc)
        self.t_embedder = nn.Sequential(nn.Linear(cfg.frequency_dim, enc), nn.SiLU(), nn.Linear(enc, enc))
        self.y_embedder = nn.Embedding(cfg.num_classes + 1, enc)
        self.encoder_blocks = nn.ModuleList(
            DiTBlock(enc, cfg.encoder_heads, cfg.mlp_ratio, enc) for _ in range(cfg.encoder_depth)
        )
        self.encoder_norm = nn.LayerNorm(enc, eps=1e-6)
        self.decoder_embed = nn.Linear(enc, dec)
        self.mask_token = nn.Parameter(torch.zeros(dec))
        self.decoder_blocks = nn.ModuleList(
            DiTBlock(dec, cfg.decoder_heads, cfg.mlp_ratio, enc) for _ in range(cfg.decoder_depth)
        )
        self.final_layer = FinalLayer(dec, cfg.token_dim, enc)

        g = cfg.grid_size
        self.register_buffer("pos_embed", torch.from_numpy(sincos_pos_embed_2d(enc, g, g)).float(), persistent=False)
        self.register_buffer(
            "decoder_pos_embed", torch.from_numpy(sincos_pos_embed_2d(dec, g, g)).float(), persistent=False
        )
        self.reset_parameters()
        if self.decoder_parameter_count() >= self.encoder_parameter_count():
            raise ConfigError("decoder must have fewer parameters than the encoder")

    def reset_parameters(self):
        """DiT initialization: xavier linears, zeroed adaLN outputs and output head."""
        for module in self.modules():
            if isinstance(module, nn.Linear):
                nn.init.xavier_uniform_(module.weight)
                nn.init.zeros_(module.bias)
        nn.init.normal_(self.y_embedder.weight, std=0.02)
        nn.init.normal_(self.t_embedder[0].weight, std=0.02)
        nn.init.normal_(self.t_embedder[2].weight, std=0.02)
        nn.init.normal_(self.mask_token, std=0.02)
        for block in [*self.encoder_blocks, *self.decoder_blocks, self.final_layer]:
            nn.init.zeros_(block.adaLN_modulation[-1].weight)
            nn.init.zeros_(block.adaLN_modulation[-1].bias)
        nn.init.zeros_(self.final_layer.linear.weight)
        nn.init.zeros_(self.final_layer.linear.bias)

    def _count(self, prefixes):
        return sum(p.numel() for name, p in self.named_parameters() if name.startswith(prefixes))

    def encoder_parameter_count(self) -> int:
        return self._count(("x_embedder", "t_embedder", "y_embedder", "encoder_"))

    def decoder_parameter_count(self) -> int:
        return self._count(("decoder_", "mask_token", "final_layer"))

    def condition_embed(self, c_noise, labels, p_uncond: float = 0.0, generator=None):
        """Noise-level embedding plus class embedding.

        In training mode each label is replaced by the null label with
        probability ``p_uncond``; in eval mode labels are never dropped.
        """
        labels = torch.as_tensor(labels, dtype=torch.long)
        k = self.config.num_classes
        if labels.numel() and (int(labels.min()) < 0 or int(labels.max()) > k):
            raise ValueError(f"labels must lie in [0, {k}] ({k} is the null label)")
        if self.training and p_uncond > 0:
            drop = torch.rand(labels.shape, generator=generator) < p_uncond
            labels = torch.where(drop, torch.full_like(labels, k), labels)
        dtype = self.x_embedder.weight.dtype
        c_noise = torch.as_tensor(c_noise, dtype=dtype).reshape(-1).expand(labels.shape[0])
        t_emb = self.t_embedder(timestep_embedding(c_noise, self.config.frequency_dim))
        return t_emb + self.y_embedder(labels)

    def forward(self, x, c_noise, labels, mask=None, *, p_uncond=0.0, generator=None, trace=None):
        """Raw network output for all N token slots.

        ``mask`` is a boolean ``(B, N)`` tensor (``True`` = removed) or None for
        no masking. If ``trace`` is a list, ``(stage, block_index, n_tokens)``
        is appended for every transformer block that runs.
        """
        cfg = self.config
        if x.ndim != 3 or x.shape[1:] != (cfg.num_tokens, cfg.token_dim):
            raise ShapeError(f"expected tokens (B, {cfg.num_tokens}, {cfg.token_dim}), got {tuple(x.shape)}")
        c = self.condition_embed(c_noise, labels, p_uncond, generator)
        if c.shape[0] != x.shape[0]:
            raise ShapeError(f"{c.shape[0]} labels for a batch of {x.shape[0]}")

        h = self.x_embedder(x) + self.pos_embed.to(x.dtype)
        if mask is not None and bool(mask.any()):
            h, ids_keep = gather_unmasked(h, mask)
        else:
            mask, ids_keep = None, None
        for i, block in enumerate(self.encoder_blocks):
            if trace is not None:
                trace.append(("encoder", i, h.shape[1]))
            h = block(h, c)
        h = self.decoder_embed(self.encoder_norm(h))
        if mask is not None:
            h = scatter_with_mask_token(h, ids_keep, mask, self.mask_token)
        h = h + self.decoder_pos_embed.to(x.dtype)
        for i, block in enumerate(self.decoder_blocks):
            if trace is not None:
                trace.append(("decoder", i, h.shape[1]))
            h = block(h, c)
        return self.final_layer(h, c)

    def denoise(self, x, sigma, labels, mask=None, consts: EdmConstants = EdmConstants(), **kwargs):
        """Preconditioned denoiser ``D(x, sigma)`` on tokens ``x = x0 + n``."""
        return precondition(lambda xin, cn: self(xin, cn, labels, mask, **kwargs), x, sigma, consts)

    def denoise_images(self, images, sigma, labels, consts: EdmConstants = EdmConstants()):
        """Unmasked denoiser on ``(B, C, H, W)`` images, as used for sampling."""
        g, p = self.config.grid_size, self.config.patch_size
        out = self.denoise(patchify(images, p), sigma, labels, None, consts)
        return unpatchify(out, p, g, g)
