"""
The synthetic blob dataset
==========================

Each class puts a Gaussian blob near its own center; the label decides the
center, a +-1 px jitter and a little pixel noise do the rest. Pixels are then
shifted and scaled so the data std sits near sigma_data = 0.5.
"""

import numpy as np
import torch

from maskdit.data import DatasetSpec, estimate_normalization, make_batch
from maskdit.evaluation import brightest_pixel
from maskdit.ppm import make_grid, to_uint8, write_ppm

spec = DatasetSpec()
print(spec)

# the pinned normalization constants come from this estimate (200k images, seed 0)
offset, scale = estimate_normalization(spec, num_images=200_000, seed=0)
print(f"estimated offset {offset:.5f}, scale {scale:.4f}")
print(f"pinned    offset {spec.norm_offset:.5f}, scale {spec.norm_scale:.4f}")

images, labels, centers = make_batch(spec, 1024, torch.Generator().manual_seed(1))
print("normalized mean / std:", float(images.mean()), float(images.std()))

# the brightest pixel tracks the jittered center
peaks = brightest_pixel(images.numpy())
print("max peak-to-center distance:", np.linalg.norm(peaks - centers.numpy(), axis=1).max())

# look at a few of them
raw = spec.denormalize(images[:16].double()).numpy()
print("wrote", write_ppm("blobs.ppm", make_grid(to_uint8(raw))))
