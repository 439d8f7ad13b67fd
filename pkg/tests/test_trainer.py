import math

import numpy as np
import pytest

from zeroprompt.encoder import EncoderConfig, Model, init_weights
from zeroprompt.trainer import (
    SyntheticGrammar,
    ToyRecipe,
    TrainConfig,
    TrainingDiverged,
    gen_corpus,
    greedy_wer,
    loss_and_grads,
    phrase_grammar,
    time_mask,
    train,
)


def tiny_grammar(**kw):
    t = np.array([[0.0, 0.5, 0.5], [0.3, 0.2, 0.5], [0.4, 0.6, 0.0]])
    emb = np.array([[0.0] * 4, [1.0, 0, 0, 0], [0, 0, 1.0, 0]])
    return SyntheticGrammar(3, t, emb, **kw)


def test_grammar_validation():
    with pytest.raises(ValueError, match="sum to 1"):
        SyntheticGrammar(2, np.array([[0.0, 0.9], [0.5, 0.5]]), np.zeros((2, 2)))
    with pytest.raises(ValueError, match="frames_per_token"):
        tiny_grammar(frames_per_token=1)
    with pytest.raises(ValueError, match="silence"):
        SyntheticGrammar(2, np.array([[0.0, 1.0], [1.0, 0.0]]), np.ones((2, 2)))
    with pytest.raises(ValueError, match="immediately"):
        SyntheticGrammar(2, np.array([[1.0, 0.0], [1.0, 0.0]]), np.zeros((2, 2)))


def test_phrase_grammar_is_row_stochastic_and_round_trips():
    g = phrase_grammar(seed=3)
    assert g.vocab_size == 16
    np.testing.assert_allclose(g.transitions.sum(1), 1, atol=1e-12)
    back = SyntheticGrammar.from_dict(g.to_dict())
    assert np.array_equal(back.transitions, g.transitions) and np.array_equal(back.onsets, g.onsets)


def test_noise_free_features_reconstruct_from_embeddings():
    g = tiny_grammar(noise_std=0.0, frames_per_token=3, lead_silence=(2, 2), trail_silence=(1, 1))
    (utt,) = gen_corpus(g, 1, seed=5)
    expected = np.concatenate([np.zeros((2, 4))] + [g.token_frames(t) for t in utt.ref] + [np.zeros((1, 4))])
    assert np.array_equal(utt.feats, expected.astype(np.float32))


def test_corpus_deterministic_under_seed():
    g = phrase_grammar()
    a, b = gen_corpus(g, 20, seed=9, silence_frac=0.2), gen_corpus(g, 20, seed=9, silence_frac=0.2)
    assert all(x.ref == y.ref and np.array_equal(x.feats, y.feats) for x, y in zip(a, b))
    assert any(not u.ref for u in a)
    assert all(not u.feats.any() for u in a if not u.ref)


def test_bigram_frequencies_match_table():
    g = tiny_grammar(noise_std=0.0)
    corpus = gen_corpus(g, 10000, len_range=(1, 10**6), seed=11)
    counts = np.zeros((3, 3))
    for u in corpus:
        seq = [0] + u.ref + [0]
        for a, b in zip(seq, seq[1:]):
            counts[a, b] += 1
    freq = counts / counts.sum(1, keepdims=True)
    assert np.abs(freq - g.transitions).max() < 0.02


def test_gen_corpus_length_bounds():
    g = phrase_grammar()
    corpus = gen_corpus(g, 50, len_range=(3, 5), seed=2)
    assert all(3 <= len(u.ref) <= 5 for u in corpus)
    with pytest.raises(ValueError):
        gen_corpus(g, 0)


def test_time_mask_zeroes_spans():
    rng = np.random.default_rng(0)
    x = np.ones((20, 3))
    y = time_mask(x, 2, 4, rng)
    zero_rows = (~y.any(1)).sum()
    assert 1 <= zero_rows <= 8 and x.all()
    assert np.array_equal(time_mask(x, 0, 4, rng), x)


def small_cfg(**kw):
    base = dict(num_layers=2, d_model=8, n_heads=2, ffn_dim=8, vocab_size=3, feat_dim=4, chunk_frames=3)
    base.update(kw)
    return EncoderConfig(**base)


def test_loss_and_grads_finite_differences():
    cfg = small_cfg()
    w = init_weights(cfg, 4).astype(np.float64)
    p = {k: v + np.random.default_rng(1).normal(0, 0.1, v.shape) for k, v in w.named_tensors().items()}
    feats = np.random.default_rng(2).normal(size=(7, 4))
    ref = [1, 2, 2]
    _, grads = loss_and_grads(p, cfg, feats, ref)
    rng = np.random.default_rng(3)
    eps = 1e-6
    for name in ["in_w", "layers.0.wq", "layers.1.ln2_g", "layers.0.w1", "out_b", "layers.1.bk"]:
        idx = tuple(int(rng.integers(0, s)) for s in p[name].shape)
        old = p[name][idx]
        p[name][idx] = old + eps
        up, _ = loss_and_grads(p, cfg, feats, ref)
        p[name][idx] = old - eps
        down, _ = loss_and_grads(p, cfg, feats, ref)
        p[name][idx] = old
        num = (up - down) / (2 * eps)
        assert abs(num - grads[name][idx]) <= 1e-4 * max(1.0, abs(num)), name


def test_zero_learning_rate_keeps_weights():
    g = tiny_grammar()
    cfg = small_cfg(feat_dim=4)
    corpus = gen_corpus(g, 3, len_range=(1, 3), seed=0)
    w0 = init_weights(cfg, 0)
    w, curve = train(cfg, corpus, TrainConfig(epochs=3, learning_rate=0.0), weights=w0)
    assert all(np.array_equal(a, b) for a, b in zip(w.named_tensors().values(), w0.named_tensors().values()))
    assert curve[0] == pytest.approx(curve[-1])


def test_single_utterance_overfit():
    g = tiny_grammar(lead_silence=(2, 2), trail_silence=(2, 2))
    cfg = small_cfg(feat_dim=4)
    corpus = gen_corpus(g, 1, len_range=(4, 4), seed=3)
    w, curve = train(cfg, corpus, TrainConfig(epochs=150, learning_rate=0.1, clip=5.0))
    assert curve[-1] < 0.05 < curve[0]
    assert greedy_wer(Model(cfg, w), corpus) == 0.0


def test_training_is_deterministic():
    g = tiny_grammar()
    cfg = small_cfg(feat_dim=4)
    corpus = gen_corpus(g, 4, len_range=(1, 3), seed=0)
    tc = TrainConfig(epochs=2, learning_rate=0.05, seed=7, time_masks=1, time_mask_width=2)
    (w1, c1), (w2, c2) = train(cfg, corpus, tc), train(cfg, corpus, tc)
    assert c1 == c2
    assert all(np.array_equal(a, b) for a, b in zip(w1.named_tensors().values(), w2.named_tensors().values()))


@pytest.mark.filterwarnings("ignore::RuntimeWarning")
def test_divergence_reports_step():
    g = tiny_grammar()
    cfg = small_cfg(feat_dim=4)
    corpus = gen_corpus(g, 2, len_range=(1, 2), seed=0)
    w = init_weights(cfg, 0)
    t = w.named_tensors()
    t["out_w"] = np.full_like(t["out_w"], np.inf)
    from zeroprompt.encoder import EncoderWeights

    with pytest.raises(TrainingDiverged) as err:
        train(cfg, corpus, TrainConfig(epochs=1), weights=EncoderWeights.from_named_tensors(t, 2))
    assert err.value.step == 0


def test_train_config_validation():
    with pytest.raises(ValueError):
        TrainConfig(batch_size=0)
    with pytest.raises(ValueError):
        TrainConfig(learning_rate=-1)


def test_recipe_builds_consistent_configs():
    r = ToyRecipe()
    g = r.grammar()
    cfg = r.encoder_config(g)
    assert cfg.vocab_size == g.vocab_size == 16 and cfg.feat_dim == g.feat_dim
    assert r.train_config().seed == r.seed and math.isfinite(r.learning_rate)
