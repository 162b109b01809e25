"""
Patches, masks and the mask token
=================================

Walk through the token bookkeeping used by masked training on one 8x8 image.
"""

import torch

from maskdit.patching import gather_unmasked, num_masked, patchify, sample_mask, scatter_with_mask_token, unpatchify

# an 8x8 single-channel image whose pixels count upward
img = torch.arange(64.0).reshape(1, 1, 8, 8)

# 2x2 patches -> a 4x4 grid of 16 tokens, each holding 4 pixel values
tokens = patchify(img, 2)
print("tokens:", tuple(tokens.shape))
print("token 1 (top row, second patch):", tokens[0, 1].tolist())

# the layout is a bijection
assert torch.equal(unpatchify(tokens, 2, 4, 4), img)

# mask floor(r * N) tokens per image, chosen independently per image
g = torch.Generator().manual_seed(0)
mask = sample_mask(16, 0.5, g, batch_size=1)
print("masked slots:", mask[0].nonzero().flatten().tolist(), "count", num_masked(16, 0.5))

# the encoder only sees the visible half
visible, ids_keep = gather_unmasked(tokens, mask)
print("encoder input:", tuple(visible.shape), "kept slots", ids_keep[0].tolist())

# before the decoder, masked slots are refilled with one shared learned vector
mask_token = torch.full((4,), -1.0)
full = scatter_with_mask_token(visible, ids_keep, mask, mask_token)
print(unpatchify(full, 2, 4, 4)[0, 0])
