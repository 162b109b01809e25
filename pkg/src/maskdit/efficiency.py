"""Closed-form FLOPs accounting for one forward pass of one image.

Counting convention: a multiply-accumulate is 2 FLOPs; only matrix products are
counted (norms, activations, softmax and additions are ignored).

* encoder block on ``n`` tokens of width ``d`` with MLP width ``h``:
  attention ``2 * (4*n*d**2 + 2*n**2*d)`` (qkv + output projections, scores and
  weighted sum), MLP ``2 * (2*n*d*h)``, adaLN projection ``2 * c * 6*d``
* decoder blocks: the same formula on all ``N`` tokens
* ``head_flops``: everything outside the blocks, as the forward pass runs it:
  patch embedding on all ``N`` tokens, noise-level MLP, encoder-to-decoder
  projection on the ``n`` visible tokens, final adaLN + linear head on ``N``
"""

from __future__ import annotations

from dataclasses import asdict, dataclass

from .backbone import BackboneConfig
from .errors import TokenCountError
from .patching import num_masked


@dataclass(frozen=True)
class CostReport:
    encoder_flops: int
    decoder_flops: int
    head_flops: int
    total_flops: int
    visible_tokens: int
    ratio_vs_unmasked: float

    def to_dict(self) -> dict:
        return asdict(self)


def attention_flops(n: int, d: int) -> int:
    return 2 * (4 * n * d * d + 2 * n * n * d)


def mlp_flops(n: int, d: int, hidden: int) -> int:
    return 2 * (2 * n * d * hidden)


def block_flops(n: int, d: int, hidden: int, cond_dim: int) -> int:
    return attention_flops(n, d) + mlp_flops(n, d, hidden) + 2 * cond_dim * 6 * d


def _raw_counts(cfg: BackboneConfig, n_tokens: int, ratio: float):
    n = n_tokens - num_masked(n_tokens, ratio)
    enc, dec, c = cfg.encoder_width, cfg.decoder_width, cfg.encoder_width
    enc_flops = cfg.encoder_depth * block_flops(n, enc, int(enc * cfg.mlp_ratio), c)
    dec_flops = cfg.decoder_depth * block_flops(n_tokens, dec, int(dec * cfg.mlp_ratio), c)
    head = (
        2 * n_tokens * cfg.token_dim * enc  # patch embedding
        + 2 * (cfg.frequency_dim * enc + enc * enc)  # noise-level MLP
        + 2 * n * enc * dec  # encoder -> decoder projection
        + 2 * c * 2 * dec  # final adaLN
        + 2 * n_tokens * dec * cfg.token_dim  # output head
    )
    return enc_flops, dec_flops, head, n


def flops_count(cfg: BackboneConfig = BackboneConfig(), n_tokens: int | None = None, ratio: float = 0.5) -> CostReport:
    n_tokens = cfg.num_tokens if n_tokens is None else n_tokens
    enc_flops, dec_flops, head, n = _raw_counts(cfg, n_tokens, ratio)
    total = enc_flops + dec_flops + head
    full = sum(_raw_counts(cfg, n_tokens, 0.0)[:3])
    return CostReport(enc_flops, dec_flops, head, total, n, total / full)


def verify_token_counts(trace, ratio: float, n_tokens: int) -> bool:
    """Check an instrumented forward trace: encoder blocks saw ``N - floor(rN)`` tokens, decoder blocks ``N``.

    ``trace`` is the list filled by ``MaskDiT.forward(..., trace=...)``.
    Raises ``TokenCountError`` listing every block's count on mismatch.
    """
    expected = {"encoder": n_tokens - num_masked(n_tokens, ratio), "decoder": n_tokens}
    bad = [(stage, i, n) for stage, i, n in trace if n != expected[stage]]
    stages = {stage for stage, _, _ in trace}
    if bad or stages != {"encoder", "decoder"}:
        listing = ", ".join(f"{s}[{i}]={n}" for s, i, n in trace)
        raise TokenCountError(
            f"expected encoder={expected['encoder']} decoder={expected['decoder']} tokens per block; got {listing}",
            trace,
        )
    return True
