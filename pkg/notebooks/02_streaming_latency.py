"""
What the screen shows, chunk by chunk
=====================================

Loads the pinned toy model (or trains a quick one if it is missing) and
decodes one held-out utterance three ways: plain causal chunks, ZeroPrompt,
and a lookahead baseline. For each chunk we print the committed text and
the provisional prompt, then the first/last token display times.
"""

from pathlib import Path

from zeroprompt import StreamConfig, stream_decode, tdt
from zeroprompt.formats import load_corpus, load_model
from zeroprompt.trainer import ToyRecipe, train_toy

pinned = Path(__file__).resolve().parent.parent / "models" / "toy-seed0"
if (pinned / "model.zpm").exists():
    model = load_model(pinned / "model.zpm")
    heldout = load_corpus(pinned / "heldout.corpus")
else:
    print("pinned model not found, training a short run (about a minute)")
    res = train_toy(ToyRecipe(epochs=10))
    model, heldout = res.model, res.heldout

chunk_ms = model.config.chunk_frames * model.config.frame_ms
utt = next(u for u in heldout if len(u.ref) >= 6)
print(f"utterance {utt.uid}: {len(utt.feats)} frames, reference {utt.ref}")

# %%
configs = {
    "causal": StreamConfig(chunk_ms),
    "zeroprompt": StreamConfig(chunk_ms, "zeroprompt", zp_ms=chunk_ms),
    "lookahead": StreamConfig(chunk_ms, "lookahead", lookahead_ms=chunk_ms),
}
for name, cfg in configs.items():
    tl = stream_decode(model, utt.feats, cfg, uid=utt.uid)
    print(f"\n{name}")
    for ev in tl.events:
        committed = " ".join(map(str, ev.committed))
        prompt = " ".join(map(str, ev.prompt))
        print(f"  {ev.cumulative_ms:5d} ms  {committed:<30} [{prompt}]")
    first, last = tdt(tl)
    print(f"  first token shown at {first} ms, full length reached at {last} ms")
    print(f"  final hypothesis {list(tl.final_hyp)}")

# %%
# All three modes end on the same final hypothesis. ZeroPrompt shows
# text earlier by guessing ahead (the bracketed prompt), and later chunks
# either confirm or replace those guesses. Lookahead buys accuracy of the
# intermediate text with extra delay.
