import numpy as np
import pytest

from zeroprompt.encoder import EncoderConfig, EncoderWeights, Model, init_weights, random_weights

ACCEPTANCE_LINES = []


def small_config(**overrides) -> EncoderConfig:
    base = dict(num_layers=2, d_model=8, n_heads=2, ffn_dim=12, vocab_size=5, feat_dim=3, chunk_frames=4)
    base.update(overrides)
    return EncoderConfig(**base)


def random_model(seed: int = 0, **overrides) -> Model:
    cfg = small_config(**overrides)
    return Model(cfg, random_weights(cfg, seed, scale=1.5))


def identity_model(vocab_size: int = 4, blank_bias: float = 5.0, gain: float = 50.0) -> Model:
    """One-layer model whose frame argmax is the one-hot feature index.

    Attention and FFN outputs are zeroed, so every frame's logits are
    ``gain * feats + positions + bias``; zero frames decode as blank.
    """
    cfg = EncoderConfig(num_layers=1, d_model=vocab_size, n_heads=1, ffn_dim=4,
                        vocab_size=vocab_size, feat_dim=vocab_size, chunk_frames=60)
    w = init_weights(cfg, 0)
    t = {k: np.zeros_like(v) for k, v in w.named_tensors().items()}
    for name in ("layers.0.ln1_g", "layers.0.ln2_g"):
        t[name] = np.ones_like(t[name])
    t["in_w"] = (gain * np.eye(vocab_size)).astype(np.float32)
    t["out_w"] = np.eye(vocab_size, dtype=np.float32)
    t["out_b"][0] = blank_bias
    return Model(cfg, EncoderWeights.from_named_tensors(t, 1))


def one_hot_frames(tokens_per_frame, vocab_size: int = 4) -> np.ndarray:
    out = np.zeros((len(tokens_per_frame), vocab_size), dtype=np.float32)
    for i, tok in enumerate(tokens_per_frame):
        if tok:
            out[i, tok] = 1.0
    return out


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in sorted(ACCEPTANCE_LINES):
            terminalreporter.write_line(line)
