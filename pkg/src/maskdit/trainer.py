"""Training loop: masked main phase followed by optional unmasking tuning."""

from __future__ import annotations

import copy
import csv
import json
import logging
import math
import time
from dataclasses import dataclass
from pathlib import Path

import numpy as np
import torch

from . import patching
from .backbone import MaskDiT
from .config import RunConfig
from .data import make_batch
from .diffusion import EdmConstants, add_noise, loss_weight, sample_training_sigma
from .errors import NonFiniteLossError
from .objective import LossBreakdown, dsm_loss, mae_loss, total_loss

log = logging.getLogger(__name__)

METRIC_COLUMNS = (
    "step", "phase", "mask_ratio", "sigma_mean", "loss_total", "loss_dsm", "loss_mae", "grad_norm", "lr", "wallclock_s",
)


@dataclass
class TrainState:
    model: MaskDiT
    ema: MaskDiT
    optimizer: torch.optim.AdamW
    generator: torch.Generator
    config: RunConfig
    step: int = 0

    def tensors(self) -> dict:
        """Every tensor in the state under its checkpoint name, in checkpoint order."""
        out = {}
        ema = dict(self.ema.named_parameters())
        for name, p in self.model.named_parameters():
            st = self.optimizer.state.get(p, {})
            out[f"params/{name}"] = p.detach()
            out[f"ema/{name}"] = ema[name].detach()
            out[f"adam_m/{name}"] = st.get("exp_avg", torch.zeros_like(p)).detach()
            out[f"adam_v/{name}"] = st.get("exp_avg_sq", torch.zeros_like(p)).detach()
        return out

    def adam_steps(self) -> dict:
        return {
            name: int(self.optimizer.state[p]["step"]) if p in self.optimizer.state else 0
            for name, p in self.model.named_parameters()
        }


def _seeds(seed: int):
    init_seed, data_seed = np.random.SeedSequence(seed).generate_state(2)
    return int(init_seed), int(data_seed)


def build_optimizer(model, cfg) -> torch.optim.AdamW:
    return torch.optim.AdamW(
        model.parameters(), lr=cfg.lr, betas=tuple(cfg.adam_betas), weight_decay=cfg.weight_decay, foreach=False
    )


def create_train_state(config: RunConfig = RunConfig()) -> TrainState:
    init_seed, data_seed = _seeds(config.training.seed)
    with torch.random.fork_rng(devices=[]):
        torch.manual_seed(init_seed)
        model = MaskDiT(config.backbone)
    ema = copy.deepcopy(model).requires_grad_(False)
    ema.eval()
    return TrainState(
        model=model,
        ema=ema,
        optimizer=build_optimizer(model, config.training),
        generator=torch.Generator().manual_seed(data_seed),
        config=config,
    )


@torch.no_grad()
def ema_update(ema, params, decay: float = 0.9999):
    """``ema <- decay * ema + (1 - decay) * params``, in place.

    Accepts modules or matching sequences of tensors.
    """
    if not 0 <= decay < 1:
        raise ValueError(f"decay must lie in [0, 1), got {decay}")
    ema_t = list(ema.parameters()) if isinstance(ema, torch.nn.Module) else list(ema)
    par_t = list(params.parameters()) if isinstance(params, torch.nn.Module) else list(params)
    if len(ema_t) != len(par_t) or any(e.shape != p.shape for e, p in zip(ema_t, par_t)):
        raise ValueError("EMA and parameter shapes differ")
    for e, p in zip(ema_t, par_t):
        e.mul_(decay).add_(p.detach(), alpha=1 - decay)
    return ema


def training_loss(
    model, x0_tokens, labels, sigma, eps, mask, lam=0.1, dsm_mode="unmasked",
    consts: EdmConstants = EdmConstants(), p_uncond=0.0, generator=None,
) -> LossBreakdown:
    """Loss for fixed noise, noise levels, and masks."""
    x = add_noise(x0_tokens, sigma, eps)
    pred = model.denoise(x, sigma, labels, mask, consts, p_uncond=p_uncond, generator=generator)
    dsm = dsm_loss(pred, x0_tokens, mask, dsm_mode, loss_weight(sigma, consts))
    mae = mae_loss(pred, x, mask)
    return total_loss(dsm, mae, lam)


def train_step(state: TrainState, images, labels, mask_ratio: float | None = None, lr: float | None = None):
    """One optimizer update. Returns ``(state, losses, stats)``.

    ``mask_ratio`` and ``lr`` default to the phase-1 values of the run config.
    """
    tc, consts = state.config.training, state.config.edm
    mask_ratio = tc.mask_ratio if mask_ratio is None else mask_ratio
    lr = tc.lr if lr is None else lr
    model, g = state.model, state.generator
    model.train()

    b = images.shape[0]
    p = model.config.patch_size
    sigma = sample_training_sigma(b, g, consts)
    x0 = patching.patchify(images, p)
    eps = torch.randn(x0.shape, generator=g)
    n_tokens = x0.shape[1]
    mask = None
    if patching.num_masked(n_tokens, mask_ratio) > 0:
        mask = patching.sample_mask(n_tokens, mask_ratio, g, b)

    losses = training_loss(
        model, x0, labels, sigma, eps, mask, tc.mae_weight, tc.dsm_mode, consts, tc.p_uncond, g
    )
    if not torch.isfinite(losses.total):
        raise NonFiniteLossError(
            f"non-finite loss at step {state.step}",
            {
                "step": state.step,
                "losses": losses.as_floats(),
                "sigma": sigma.tolist(),
                "labels": labels.tolist(),
                "mask_ratio": mask_ratio,
            },
        )
    state.optimizer.zero_grad(set_to_none=True)
    losses.total.backward()
    grads = [q.grad for q in model.parameters() if q.grad is not None]
    grad_norm = float(torch.sqrt(sum((gr.double() ** 2).sum() for gr in grads)))
    for group in state.optimizer.param_groups:
        group["lr"] = lr
    state.optimizer.step()
    ema_update(state.ema, model, tc.ema_decay)
    state.step += 1
    stats = {"sigma_mean": float(sigma.mean()), "grad_norm": grad_norm, "mask_ratio": mask_ratio, "lr": lr}
    return state, losses, stats


def phase_settings(tc, step: int):
    """``(phase, mask_ratio, lr, batch_size)`` for a global 0-based step."""
    if step < tc.phase1_steps:
        return "masked", tc.mask_ratio, tc.lr, tc.batch_size
    i = step - tc.phase1_steps
    if tc.schedule == "zero":
        ratio = 0.0
    else:
        # span the schedule over the tuning steps so the last step lands on r = 0
        ratio = patching.cosine_ratio(i, max(tc.phase2_steps - 1, 1)) if tc.phase2_steps > 1 else 0.0
    return "tune", ratio, tc.tune_lr, tc.tune_batch_size or tc.batch_size


class MetricsWriter:
    """Appends one CSV row per step; truncates rows past ``resume_step`` on resume."""

    def __init__(self, path, resume_step: int | None = None):
        self.path = Path(path)
        rows = []
        if resume_step is not None and self.path.exists():
            with self.path.open(newline="") as fh:
                rows = [r for r in csv.DictReader(fh) if int(r["step"]) < resume_step]
        self._fh = self.path.open("w", newline="")
        self._writer = csv.DictWriter(self._fh, fieldnames=METRIC_COLUMNS)
        self._writer.writeheader()
        self._writer.writerows(rows)

    def write(self, row: dict):
        self._writer.writerow({k: row[k] for k in METRIC_COLUMNS})

    def flush(self):
        self._fh.flush()

    def close(self):
        self._fh.close()


def run_training(config: RunConfig, out_dir=None, state: TrainState | None = None, resume=None, max_steps=None):
    """Run both phases up to ``phase1_steps + phase2_steps`` total steps.

    Starts from ``state``, from the checkpoint at ``resume``, or fresh. With
    ``out_dir`` set, writes ``metrics.csv`` and ``ckpt_XXXXXX.mdit`` files every
    ``ckpt_every`` steps plus at step 0 and at the end. ``max_steps`` stops
    early, as if the run were interrupted. Returns ``(state, rows)``.
    """
    from .checkpoint import load_checkpoint, save_checkpoint

    if resume is not None:
        state = load_checkpoint(resume)
        state.config = config
    elif state is None:
        state = create_train_state(config)
    else:
        state.config = config
    tc = config.training
    total = tc.phase1_steps + tc.phase2_steps
    out = Path(out_dir) if out_dir is not None else None
    writer = None
    if out is not None:
        out.mkdir(parents=True, exist_ok=True)
        writer = MetricsWriter(out / "metrics.csv", resume_step=state.step if resume is not None else None)
        if resume is None:
            save_checkpoint(state, out / f"ckpt_{state.step:06d}.mdit")

    rows = []
    start = time.perf_counter()
    try:
        while state.step < total and (max_steps is None or len(rows) < max_steps):
            phase, ratio, lr, batch = phase_settings(tc, state.step)
            images, labels, _ = make_batch(config.data, batch, state.generator)
            step = state.step
            try:
                state, losses, stats = train_step(state, images, labels, ratio, lr)
            except NonFiniteLossError as exc:
                if out is not None:
                    (out / "diagnostic.json").write_text(json.dumps(exc.diagnostics, indent=2))
                raise
            row = {
                "step": step,
                "phase": phase,
                "mask_ratio": ratio,
                "sigma_mean": stats["sigma_mean"],
                "loss_total": float(losses.total.detach()),
                "loss_dsm": float(losses.dsm.detach()),
                "loss_mae": float(losses.mae.detach()),
                "grad_norm": stats["grad_norm"],
                "lr": lr,
                "wallclock_s": round(time.perf_counter() - start, 3),
            }
            rows.append(row)
            if writer is not None:
                writer.write(row)
                if state.step % tc.ckpt_every == 0 or state.step == total:
                    writer.flush()
                    save_checkpoint(state, out / f"ckpt_{state.step:06d}.mdit")
            if step % 100 == 0:
                log.info("step %d %s r=%.3f loss=%.4f", step, phase, ratio, row["loss_total"])
    finally:
        if writer is not None:
            writer.close()
    return state, rows


def latest_checkpoint(out_dir):
    ckpts = sorted(Path(out_dir).glob("ckpt_*.mdit"))
    return ckpts[-1] if ckpts else None


def median_loss(rows, lo: int, hi: int) -> float:
    vals = [r["loss_total"] for r in rows if lo <= r["step"] <= hi]
    return float(np.median(vals)) if vals else math.nan
