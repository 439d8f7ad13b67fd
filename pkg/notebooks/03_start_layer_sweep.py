"""
Where to inject the zero frames
===============================

Zero frames can enter the encoder at any layer rather than at the input.
Starting later is cheaper, and the prompts get more conservative. This
script sweeps the start layer on the pinned toy model's held-out set and
prints the same report the ``bench`` command writes.
"""

from pathlib import Path

from zeroprompt import StreamConfig
from zeroprompt.formats import load_corpus, load_model
from zeroprompt.metrics import format_ppc, format_table
from zeroprompt.trainer import ToyRecipe, evaluate, train_toy

pinned = Path(__file__).resolve().parent.parent / "models" / "toy-seed0"
if (pinned / "model.zpm").exists():
    model = load_model(pinned / "model.zpm")
    heldout = load_corpus(pinned / "heldout.corpus")
else:
    res = train_toy(ToyRecipe(epochs=10))
    model, heldout = res.model, res.heldout

chunk_ms = model.config.chunk_frames * model.config.frame_ms
layers = list(range(model.config.num_layers)) + [-1]
configs = [StreamConfig(chunk_ms)] + [
    StreamConfig(chunk_ms, "zeroprompt", zp_ms=chunk_ms, start_layer=k) for k in layers
]
reports = evaluate(model, heldout, configs)
print(format_table(reports))

# %%
# Reading the table: WER never changes, because the zero frames cannot
# reach the real frames. PPC (prompt tokens per chunk) shrinks as the
# start layer rises, since fewer layers are left to turn zeros into a
# guess. Layer -1 is the plain causal decode.
print("PPC by start layer:", [format_ppc(r.per_a[1], r.total_chunks) for r in reports[1:-1]])
