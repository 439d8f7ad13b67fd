"""Chunk-streaming transformer encoder with ZeroPrompt support.

The encoder is a stack of pre-norm transformer layers with absolute
sinusoidal positions and a CTC output head. Audio is processed chunk by
chunk; each layer keeps the keys and values of past real frames in an
:class:`AttentionCache`. A ZeroPrompt appends zero-valued frames after the
real ones, either at the input projection (``start_layer == 0``) or as
zero hidden rows at an intermediate layer. The chunk mask keeps real rows
blind to those frames, so the real-frame outputs are bit-identical to a
run without them.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field, replace
from typing import Optional

import numpy as np

from .linalg import DTYPE, as_matrix, layer_norm, log_softmax, masked_attention, matmul


@dataclass(frozen=True)
class EncoderConfig:
    num_layers: int
    d_model: int
    n_heads: int
    ffn_dim: int
    vocab_size: int
    feat_dim: int
    chunk_frames: int
    left_chunks: Optional[int] = None  # None = unlimited history
    frame_ms: int = 10
    subsample: int = 1

    def __post_init__(self):
        if self.num_layers < 1:
            raise ValueError("num_layers must be >= 1")
        if self.d_model % self.n_heads != 0:
            raise ValueError(f"d_model={self.d_model} not divisible by n_heads={self.n_heads}")
        if self.chunk_frames < 1:
            raise ValueError("chunk_frames must be >= 1")
        if self.vocab_size < 2:
            raise ValueError("vocab_size must include blank plus at least one token")
        if self.left_chunks is not None and self.left_chunks < 0:
            raise ValueError("left_chunks must be >= 0 or None")
        if self.subsample < 1 or self.frame_ms < 1:
            raise ValueError("subsample and frame_ms must be positive")

    @property
    def input_dim(self) -> int:
        return self.feat_dim * self.subsample

    @property
    def cache_limit(self) -> Optional[int]:
        if self.left_chunks is None:
            return None
        return self.left_chunks * self.chunk_frames

    def frames_for_ms(self, ms: int) -> int:
        """Convert a duration to encoder frames, rejecting non-multiples."""
        step = self.frame_ms * self.subsample
        if ms < 0 or ms % step:
            raise ValueError(f"{ms}ms is not a non-negative multiple of the {step}ms encoder frame")
        return ms // step


LAYER_PARAMS = (
    "ln1_g", "ln1_b", "wq", "bq", "wk", "bk", "wv", "bv", "wo", "bo",
    "ln2_g", "ln2_b", "w1", "b1", "w2", "b2",
)


@dataclass
class LayerWeights:
    ln1_g: np.ndarray
    ln1_b: np.ndarray
    wq: np.ndarray
    bq: np.ndarray
    wk: np.ndarray
    bk: np.ndarray
    wv: np.ndarray
    bv: np.ndarray
    wo: np.ndarray
    bo: np.ndarray
    ln2_g: np.ndarray
    ln2_b: np.ndarray
    w1: np.ndarray
    b1: np.ndarray
    w2: np.ndarray
    b2: np.ndarray


@dataclass
class EncoderWeights:
    in_w: np.ndarray
    in_b: np.ndarray
    layers: list
    out_w: np.ndarray
    out_b: np.ndarray

    def named_tensors(self) -> dict:
        """Flat ``name -> array`` view in a stable order (used by the model file)."""
        out = {"in_w": self.in_w, "in_b": self.in_b}
        for i, layer in enumerate(self.layers):
            for name in LAYER_PARAMS:
                out[f"layers.{i}.{name}"] = getattr(layer, name)
        out["out_w"] = self.out_w
        out["out_b"] = self.out_b
        return out

    @classmethod
    def from_named_tensors(cls, tensors: dict, num_layers: int) -> "EncoderWeights":
        layers = [
            LayerWeights(**{name: tensors[f"layers.{i}.{name}"] for name in LAYER_PARAMS})
            for i in range(num_layers)
        ]
        return cls(tensors["in_w"], tensors["in_b"], layers, tensors["out_w"], tensors["out_b"])

    def astype(self, dtype) -> "EncoderWeights":
        t = {k: np.ascontiguousarray(v, dtype=dtype) for k, v in self.named_tensors().items()}
        return EncoderWeights.from_named_tensors(t, len(self.layers))

    def copy(self) -> "EncoderWeights":
        return self.astype(self.in_w.dtype)

    def check(self, cfg: EncoderConfig) -> None:
        """Raise ``ValueError`` if any tensor disagrees with ``cfg`` or is non-finite."""
        d, f, v = cfg.d_model, cfg.ffn_dim, cfg.vocab_size
        expected = {"in_w": (cfg.input_dim, d), "in_b": (d,), "out_w": (d, v), "out_b": (v,)}
        per_layer = {
            "ln1_g": (d,), "ln1_b": (d,), "ln2_g": (d,), "ln2_b": (d,),
            "wq": (d, d), "wk": (d, d), "wv": (d, d), "wo": (d, d),
            "bq": (d,), "bk": (d,), "bv": (d,), "bo": (d,),
            "w1": (d, f), "b1": (f,), "w2": (f, d), "b2": (d,),
        }
        if len(self.layers) != cfg.num_layers:
            raise ValueError(f"weights have {len(self.layers)} layers, config says {cfg.num_layers}")
        for i in range(cfg.num_layers):
            for name, shape in per_layer.items():
                expected[f"layers.{i}.{name}"] = shape
        for name, arr in self.named_tensors().items():
            if arr.shape != expected[name]:
                raise ValueError(f"tensor {name} has shape {arr.shape}, expected {expected[name]}")
            if not np.all(np.isfinite(arr)):
                raise ValueError(f"tensor {name} has non-finite entries")


@dataclass
class Model:
    config: EncoderConfig
    weights: EncoderWeights


def init_weights(cfg: EncoderConfig, seed: int = 0) -> EncoderWeights:
    """Random Glorot-uniform projections, unit layer-norm gains, zero biases."""
    rng = np.random.default_rng(seed)

    def glorot(n_in, n_out):
        limit = math.sqrt(6.0 / (n_in + n_out))
        return rng.uniform(-limit, limit, size=(n_in, n_out)).astype(DTYPE)

    d, f = cfg.d_model, cfg.ffn_dim
    zeros = lambda n: np.zeros(n, dtype=DTYPE)  # noqa: E731
    ones = lambda n: np.ones(n, dtype=DTYPE)  # noqa: E731
    layers = [
        LayerWeights(
            ln1_g=ones(d), ln1_b=zeros(d),
            wq=glorot(d, d), bq=zeros(d), wk=glorot(d, d), bk=zeros(d),
            wv=glorot(d, d), bv=zeros(d), wo=glorot(d, d), bo=zeros(d),
            ln2_g=ones(d), ln2_b=zeros(d),
            w1=glorot(d, f), b1=zeros(f), w2=glorot(f, d), b2=zeros(d),
        )
        for _ in range(cfg.num_layers)
    ]
    return EncoderWeights(
        in_w=glorot(cfg.input_dim, d), in_b=zeros(d), layers=layers,
        out_w=glorot(d, cfg.vocab_size), out_b=zeros(cfg.vocab_size),
    )


def random_weights(cfg: EncoderConfig, seed: int = 0, scale: float = 1.0) -> EncoderWeights:
    """Like :func:`init_weights` but with random biases and layer-norm affines too."""
    w = init_weights(cfg, seed)
    rng = np.random.default_rng(seed + 1)
    t = w.named_tensors()
    for name, arr in t.items():
        if arr.ndim == 1:
            base = 1.0 if name.endswith("_g") else 0.0
            t[name] = (base + scale * rng.normal(0, 0.3, size=arr.shape)).astype(DTYPE)
        else:
            t[name] = (arr * scale).astype(DTYPE)
    return EncoderWeights.from_named_tensors(t, cfg.num_layers)


@dataclass(frozen=True)
class ZeroPromptSpec:
    """How many zeroed frames to append, and at which layer.

    ``start_layer == -1`` is the baseline; it forces ``zp_frames`` to 0.
    """

    zp_frames: int = 0
    start_layer: int = 0

    def __post_init__(self):
        if self.zp_frames < 0:
            raise ValueError("zp_frames must be >= 0")
        if self.start_layer < -1:
            raise ValueError("start_layer must be >= -1")
        if self.start_layer == -1:
            object.__setattr__(self, "zp_frames", 0)

    @property
    def enabled(self) -> bool:
        return self.zp_frames > 0


DISABLED = ZeroPromptSpec(0, -1)


@dataclass(frozen=True)
class AttentionCache:
    """Per-layer keys/values of the most recent real frames.

    ``frames_seen`` counts every real encoder frame consumed so far and is
    the absolute position of the next incoming frame.
    """

    keys: tuple
    values: tuple
    frames_seen: int = 0

    @classmethod
    def empty(cls, cfg: EncoderConfig) -> "AttentionCache":
        blank = np.zeros((0, cfg.d_model), dtype=DTYPE)
        return cls(tuple(blank for _ in range(cfg.num_layers)),
                   tuple(blank for _ in range(cfg.num_layers)), 0)

    def __len__(self) -> int:
        return self.keys[0].shape[0] if self.keys else 0


@dataclass
class ChunkOutput:
    logprobs_real: np.ndarray
    logprobs_zp: np.ndarray
    cache: AttentionCache = field(repr=False)


def sinusoidal_positions(start: int, n: int, d_model: int) -> np.ndarray:
    """Absolute sinusoidal encodings for positions ``start .. start+n-1``."""
    pos = np.arange(start, start + n, dtype=np.float64)[:, None]
    i = np.arange(0, d_model, 2, dtype=np.float64)
    angle = pos / np.power(10000.0, i / d_model)
    pe = np.zeros((n, d_model), dtype=np.float64)
    pe[:, 0::2] = np.sin(angle)
    pe[:, 1::2] = np.cos(angle[:, : d_model // 2])
    return pe.astype(DTYPE)


def build_chunk_mask(n_cache: int, n_real: int, n_zp: int, block: int) -> np.ndarray:
    """Chunk-level autoregressive mask for one streaming step.

    Rows are the real queries followed by the zero-prompt queries; columns are
    cache, real and zero-prompt keys in that order. Real rows see cache and
    real keys only. The zero-prompt region is cut into consecutive blocks of
    ``block`` frames; a zero-prompt row additionally sees every zero-prompt
    key up to the end of its own block.
    """
    if block < 1:
        raise ValueError("block must be >= 1")
    if n_real < 1 and n_zp < 1:
        raise ValueError("need at least one real or zero-prompt query")
    past = n_cache + n_real
    mask = np.zeros((n_real + n_zp, past + n_zp), dtype=bool)
    mask[:, :past] = True
    for z in range(n_zp):
        end = min((z // block + 1) * block, n_zp)
        mask[n_real + z, past : past + end] = True
    return mask


def build_offline_mask(n: int, chunk: int, left_chunks: Optional[int]) -> np.ndarray:
    """Whole-utterance mask equivalent to chunked streaming with a history cache."""
    c = np.arange(n) // chunk
    diff = c[:, None] - c[None, :]
    mask = diff >= 0
    if left_chunks is not None:
        mask &= diff <= left_chunks
    return mask


def stack_frames(feats: np.ndarray, factor: int) -> np.ndarray:
    """Concatenate ``factor`` consecutive frames; the tail is zero-padded."""
    if factor == 1:
        return feats
    n, d = feats.shape
    rows = -(-n // factor)
    padded = np.zeros((rows * factor, d), dtype=feats.dtype)
    padded[:n] = feats
    return padded.reshape(rows, factor * d)


def _split_heads(x: np.ndarray, n_heads: int) -> list:
    dh = x.shape[1] // n_heads
    return [np.ascontiguousarray(x[:, h * dh : (h + 1) * dh]) for h in range(n_heads)]


def _layer(cfg, lw: LayerWeights, h, past_k, past_v, mask):
    """One pre-norm block. Returns (new hidden, this step's keys, values)."""
    a = layer_norm(h, lw.ln1_g, lw.ln1_b)
    q = matmul(a, lw.wq) + lw.bq
    k = matmul(a, lw.wk) + lw.bk
    v = matmul(a, lw.wv) + lw.bv
    keys = np.concatenate([past_k, k]) if past_k.shape[0] else k
    vals = np.concatenate([past_v, v]) if past_v.shape[0] else v
    scale = 1.0 / math.sqrt(cfg.d_model // cfg.n_heads)
    heads = [
        masked_attention(qh, kh, vh, mask, scale)
        for qh, kh, vh in zip(
            _split_heads(q, cfg.n_heads), _split_heads(keys, cfg.n_heads), _split_heads(vals, cfg.n_heads)
        )
    ]
    h = h + (matmul(np.concatenate(heads, axis=1), lw.wo) + lw.bo)
    b = layer_norm(h, lw.ln2_g, lw.ln2_b)
    ff = matmul(np.maximum(matmul(b, lw.w1) + lw.b1, DTYPE(0)), lw.w2) + lw.b2
    return h + ff, k, v


def _check_cache(cfg: EncoderConfig, cache: AttentionCache) -> None:
    if len(cache.keys) != cfg.num_layers or len(cache.values) != cfg.num_layers:
        raise ValueError(f"cache has {len(cache.keys)} layers, config says {cfg.num_layers}")
    for k, v in zip(cache.keys, cache.values):
        if k.shape != v.shape or k.ndim != 2 or k.shape[1] != cfg.d_model:
            raise ValueError(f"cache tensors {k.shape}/{v.shape} inconsistent with d_model={cfg.d_model}")
        if cfg.cache_limit is not None and k.shape[0] > cfg.cache_limit:
            raise ValueError(f"cache holds {k.shape[0]} frames, limit is {cfg.cache_limit}")


def _trim(x: np.ndarray, limit: Optional[int]) -> np.ndarray:
    if limit is None or x.shape[0] <= limit:
        return x
    return x[x.shape[0] - limit :] if limit else x[:0]


def forward_chunk(
    cfg: EncoderConfig,
    weights: EncoderWeights,
    cache: AttentionCache,
    real_feats: np.ndarray,
    zp: ZeroPromptSpec = DISABLED,
) -> ChunkOutput:
    """Run one chunk of real frames (plus optional zero prompt) through the encoder.

    The returned cache is a new value; ``cache`` itself is not modified.
    """
    real_feats = as_matrix(real_feats, "real_feats")
    if real_feats.shape[1] != cfg.feat_dim:
        raise ValueError(f"features have {real_feats.shape[1]} dims, config says {cfg.feat_dim}")
    if real_feats.shape[0] < 1:
        raise ValueError("chunk must contain at least one real frame")
    if zp.start_layer >= cfg.num_layers:
        raise ValueError(f"start_layer {zp.start_layer} >= num_layers {cfg.num_layers}")
    _check_cache(cfg, cache)

    x = stack_frames(real_feats, cfg.subsample)
    n_real = x.shape[0]
    n_zp = zp.zp_frames if zp.enabled else 0
    pos0 = cache.frames_seen

    h = matmul(x, weights.in_w) + weights.in_b + sinusoidal_positions(pos0, n_real, cfg.d_model)
    if n_zp and zp.start_layer == 0:
        z = matmul(np.zeros((n_zp, cfg.input_dim), dtype=DTYPE), weights.in_w) + weights.in_b
        h = np.concatenate([h, z + sinusoidal_positions(pos0 + n_real, n_zp, cfg.d_model)])

    new_keys, new_vals = [], []
    for i, lw in enumerate(weights.layers):
        if n_zp and i == zp.start_layer and i > 0:
            h = np.concatenate([h, np.zeros((n_zp, cfg.d_model), dtype=DTYPE)])
        n_zp_here = h.shape[0] - n_real
        mask = build_chunk_mask(len(cache.keys[i]), n_real, n_zp_here, cfg.chunk_frames)
        h, k, v = _layer(cfg, lw, h, cache.keys[i], cache.values[i], mask)
        new_keys.append(_trim(np.concatenate([cache.keys[i], k[:n_real]]), cfg.cache_limit))
        new_vals.append(_trim(np.concatenate([cache.values[i], v[:n_real]]), cfg.cache_limit))

    logprobs = log_softmax(matmul(h, weights.out_w) + weights.out_b)
    new_cache = AttentionCache(tuple(new_keys), tuple(new_vals), pos0 + n_real)
    return ChunkOutput(logprobs[:n_real], logprobs[n_real:], new_cache)


def forward_offline(cfg: EncoderConfig, weights: EncoderWeights, feats: np.ndarray) -> np.ndarray:
    """Whole-utterance pass under the chunk-causal mask streaming would induce."""
    feats = as_matrix(feats, "feats")
    if feats.shape[0] < 1:
        raise ValueError("feats must have at least one frame")
    if feats.shape[1] != cfg.feat_dim:
        raise ValueError(f"features have {feats.shape[1]} dims, config says {cfg.feat_dim}")
    x = stack_frames(feats, cfg.subsample)
    n = x.shape[0]
    h = matmul(x, weights.in_w) + weights.in_b + sinusoidal_positions(0, n, cfg.d_model)
    mask = build_offline_mask(n, cfg.chunk_frames, cfg.left_chunks)
    empty = np.zeros((0, cfg.d_model), dtype=DTYPE)
    for lw in weights.layers:
        h, _, _ = _layer(cfg, lw, h, empty, empty, mask)
    return log_softmax(matmul(h, weights.out_w) + weights.out_b)


def stream_logprobs(
    cfg: EncoderConfig, weights: EncoderWeights, feats: np.ndarray, zp: ZeroPromptSpec = DISABLED
) -> tuple:
    """Feed ``feats`` chunk by chunk; return (real log-probs, list of per-chunk zp log-probs)."""
    feats = as_matrix(feats, "feats")
    step = cfg.chunk_frames * cfg.subsample
    cache = AttentionCache.empty(cfg)
    real, zps = [], []
    for start in range(0, feats.shape[0], step):
        out = forward_chunk(cfg, weights, cache, feats[start : start + step], zp)
        cache = out.cache
        real.append(out.logprobs_real)
        zps.append(out.logprobs_zp)
    return np.concatenate(real), zps


def with_chunk(cfg: EncoderConfig, chunk_frames: int) -> EncoderConfig:
    return replace(cfg, chunk_frames=chunk_frames)
