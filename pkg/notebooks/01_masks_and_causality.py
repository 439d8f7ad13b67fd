"""
Zero frames that cannot change the answer
=========================================

A streaming encoder sees audio one chunk at a time. ZeroPrompt appends a
few all-zero frames after each chunk and asks the model to "predict" what
comes next. This walk-through shows the attention mask that makes this
safe, then checks on a random model that the real-frame outputs do not
move at all when the zero frames are added.
"""

import numpy as np

from zeroprompt import EncoderConfig, Model, ZeroPromptSpec, build_chunk_mask
from zeroprompt.cli import format_mask
from zeroprompt.encoder import random_weights, stream_logprobs

# One streaming step: 2 cached frames, a 3-frame chunk, and 6 zero frames
# split into blocks of 3. '#' marks a key the query may attend to.
mask = build_chunk_mask(n_cache=2, n_real=3, n_zp=6, block=3)
print(format_mask(mask, n_cache=2, n_real=3))

# Real rows (r*) never look at the zero columns (z*). Each zero block sees
# the real chunk, earlier zero blocks, and itself.
assert not mask[:3, 5:].any()

# %%
# Now a random 3-layer model. Decode the same features with and without
# zero frames and compare the real-frame log-probabilities bit for bit.
cfg = EncoderConfig(num_layers=3, d_model=16, n_heads=2, ffn_dim=32,
                    vocab_size=6, feat_dim=5, chunk_frames=4, left_chunks=2)
model = Model(cfg, random_weights(cfg, seed=1))
feats = np.random.default_rng(0).normal(size=(37, cfg.feat_dim)).astype(np.float32)

plain, _ = stream_logprobs(cfg, model.weights, feats)
for n_zp in (2, 4, 8):
    for layer in (0, 1, 2):
        prompted, zp_rows = stream_logprobs(cfg, model.weights, feats, ZeroPromptSpec(n_zp, layer))
        same = np.array_equal(plain, prompted)
        print(f"zp={n_zp} frames, start layer {layer}: identical={same}, "
              f"zp rows per chunk={zp_rows[0].shape[0]}")
        assert same

# %%
# The equality is exact, not approximate. The library's matmul walks each
# row in a fixed order, so adding rows (the zero frames) never changes the
# arithmetic of existing rows.
