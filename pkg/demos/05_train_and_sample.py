"""
A short masked-training run
===========================

Train a small model for a few hundred steps at mask ratio 0.5, tune it
briefly without masking, then sample each class with guidance. The full
default run is ``maskdit train`` (about an hour on one CPU core).
"""

import logging
import sys

import torch

from maskdit.backbone import BackboneConfig
from maskdit.config import RunConfig
from maskdit.evaluation import balanced_labels, class_consistency, frechet_to_real, generate, with_guidance
from maskdit.ppm import make_grid, to_uint8, write_ppm
from maskdit.trainer import median_loss, run_training

logging.basicConfig(level=logging.INFO, format="%(message)s")
steps = int(sys.argv[1]) if len(sys.argv) > 1 else 400

backbone = BackboneConfig(encoder_depth=4, encoder_width=128, encoder_heads=4,
                          decoder_depth=1, decoder_width=64, decoder_heads=4, frequency_dim=128)
config = RunConfig(backbone=backbone).replace_training(
    phase1_steps=steps, phase2_steps=steps // 6, ckpt_every=max(steps // 2, 1), ema_decay=0.99
)
state, rows = run_training(config, "runs/demo")
print("loss median, first 50 steps:", median_loss(rows, 0, 50))
print("loss median, last 50 masked steps:", median_loss(rows, steps - 50, steps))

labels = balanced_labels(64, 2)
images, evals = generate(state.ema, labels, with_guidance(config.sampler, 1.5), seed=0, consts=config.edm)
print("network calls per trajectory:", evals)
print("pixel Frechet to fresh data:", frechet_to_real(images.numpy(), config.data, seed=1234))
print("class consistency:", class_consistency(images.numpy(), labels.numpy(), config.data))

order = torch.argsort(labels, stable=True)
pixels = to_uint8(config.data.denormalize(images[order].double()).numpy())
print("wrote", write_ppm("runs/demo/samples.ppm", make_grid(pixels)))
