"""Chunk-by-chunk streaming decode with ZeroPrompt and Prompt-and-Refine display.

Three modes share one decode loop:

``causal``
    each chunk's real frames are decoded and shown as soon as the chunk is full.
``zeroprompt``
    zero frames are appended after every chunk except the final one, and the
    tokens decoded from them are shown as a provisional prompt after the
    committed text.
``lookahead``
    the causal decode, with every display event delayed until
    ``lookahead_ms`` of further audio has arrived (capped at the utterance end).

Final hypotheses are identical across modes for a given model and chunk size.
"""
from __future__ import annotations

import json
import time
from dataclasses import dataclass, field, replace
from typing import IO, Iterable, Iterator, List, Optional, Sequence, Tuple

import numpy as np

from .ctc import CollapseState, greedy_collapse
from .encoder import DISABLED, AttentionCache, Model, ZeroPromptSpec, forward_chunk, with_chunk
from .linalg import as_matrix
from .metrics import PromptRecord

MODES = ("causal", "zeroprompt", "lookahead")


@dataclass(frozen=True)
class StreamConfig:
    chunk_ms: int
    mode: str = "causal"
    zp_ms: int = 0
    start_layer: int = 0
    lookahead_ms: int = 0

    def __post_init__(self):
        if self.mode not in MODES:
            raise ValueError(f"mode must be one of {MODES}, got {self.mode!r}")
        if self.chunk_ms <= 0:
            raise ValueError("chunk_ms must be positive")
        if self.zp_ms < 0 or self.lookahead_ms < 0:
            raise ValueError("zp_ms and lookahead_ms must be >= 0")
        if self.start_layer < -1:
            raise ValueError("start_layer must be >= -1")

    def zp_spec(self, model: Model) -> ZeroPromptSpec:
        """The encoder-level prompt spec; disabled outside ``zeroprompt`` mode."""
        if self.mode != "zeroprompt":
            return DISABLED
        if self.start_layer >= model.config.num_layers:
            raise ValueError(
                f"start_layer {self.start_layer} out of range for a {model.config.num_layers}-layer model"
            )
        frames = model.config.frames_for_ms(self.zp_ms)
        if frames == 0 or self.start_layer == -1:
            return DISABLED
        return ZeroPromptSpec(frames, self.start_layer)


@dataclass(frozen=True)
class DisplayEvent:
    cumulative_ms: int
    committed: Tuple[int, ...]
    prompt: Tuple[int, ...] = ()

    @property
    def display(self) -> Tuple[int, ...]:
        return refine((), self)


@dataclass
class Timeline:
    uid: str
    events: List[DisplayEvent]
    final_hyp: Tuple[int, ...]
    processing_seconds: float
    audio_seconds: float
    n_chunks: int = 0
    records: List[PromptRecord] = field(default_factory=list, repr=False)


def extract_prompts(logprobs_zp: np.ndarray, state: CollapseState) -> Tuple[int, ...]:
    """Greedy prompt tokens from zero-prompt rows, merging with the last real frame."""
    if logprobs_zp.shape[0] == 0:
        return ()
    tokens, _ = greedy_collapse(np.argmax(logprobs_zp, axis=1), state)
    return tuple(tokens)


def refine(prev_display: Sequence[int], event: DisplayEvent) -> Tuple[int, ...]:
    """On-screen text after ``event``: whatever was shown before is replaced outright."""
    return tuple(event.committed) + tuple(event.prompt)


def _chunk_geometry(model: Model, cfg: StreamConfig):
    enc = model.config
    enc_frames = enc.frames_for_ms(cfg.chunk_ms)
    if enc_frames == 0:
        raise ValueError("chunk_ms must cover at least one encoder frame")
    return with_chunk(enc, enc_frames), enc_frames * enc.subsample


def stream_decode(model: Model, feats: np.ndarray, cfg: StreamConfig, uid: str = "utt") -> Timeline:
    """Decode one utterance chunk by chunk and record what the screen shows after each chunk."""
    feats = as_matrix(feats, "feats")
    if feats.shape[0] == 0:
        raise ValueError("feature matrix is empty")
    enc, step = _chunk_geometry(model, cfg)
    if feats.shape[1] != enc.feat_dim:
        raise ValueError(f"features have {feats.shape[1]} dims, model expects {enc.feat_dim}")
    model.weights.check(model.config)
    zp = cfg.zp_spec(model)

    n = feats.shape[0]
    utt_ms = n * enc.frame_ms
    cache = AttentionCache.empty(enc)
    state = CollapseState()
    committed: List[int] = []
    events, records = [], []

    t0 = time.perf_counter()
    starts = range(0, n, step)
    for i, start in enumerate(starts):
        # the end of the stream is known, so the final chunk gets no prompt
        spec = zp if start + step < n else DISABLED
        out = forward_chunk(enc, model.weights, cache, feats[start : start + step], spec)
        cache = out.cache
        new, state = greedy_collapse(np.argmax(out.logprobs_real, axis=1), state)
        committed.extend(new)
        prompt = extract_prompts(out.logprobs_zp, state) if spec.enabled else ()
        events.append(DisplayEvent(min((i + 1) * cfg.chunk_ms, utt_ms), tuple(committed), prompt))
        if spec.enabled:
            records.append(PromptRecord(uid, i, i == 0, False, prompt, len(committed)))
    elapsed = time.perf_counter() - t0

    if records:
        records[-1] = replace(records[-1], is_last_chunk=True)
    if cfg.mode == "lookahead":
        events = _delay(events, cfg.lookahead_ms, utt_ms)
    return Timeline(
        uid=uid,
        events=events,
        final_hyp=tuple(committed),
        processing_seconds=elapsed,
        audio_seconds=utt_ms / 1000.0,
        n_chunks=len(starts),
        records=records,
    )


def _delay(events: List[DisplayEvent], lookahead_ms: int, utt_ms: int) -> List[DisplayEvent]:
    # Chunks within lookahead_ms of the end all fire at utt_ms; keep only the
    # newest of them so event times stay strictly increasing.
    out: List[DisplayEvent] = []
    for ev in events:
        shifted = replace(ev, cumulative_ms=min(ev.cumulative_ms + lookahead_ms, utt_ms))
        if out and out[-1].cumulative_ms == shifted.cumulative_ms:
            out[-1] = shifted
        else:
            out.append(shifted)
    return out


def _tokens_text(tokens: Iterable[int]) -> str:
    return " ".join(str(t) for t in tokens)


def _text_tokens(text: str) -> Tuple[int, ...]:
    return tuple(int(t) for t in text.split())


def write_timeline_log(fp: IO[str], timelines: Iterable[Timeline]) -> None:
    """One JSON object per line: each display event, then a final record per utterance."""
    for tl in timelines:
        for ev in tl.events:
            rec = {"utt": tl.uid, "cumulative_ms": ev.cumulative_ms,
                   "committed": _tokens_text(ev.committed), "prompt": _tokens_text(ev.prompt)}
            fp.write(json.dumps(rec, sort_keys=True) + "\n")
        final = {"utt": tl.uid, "final_hyp": _tokens_text(tl.final_hyp), "n_chunks": tl.n_chunks,
                 "processing_seconds": tl.processing_seconds, "audio_seconds": tl.audio_seconds}
        fp.write(json.dumps(final, sort_keys=True) + "\n")


def read_timeline_log(fp: IO[str]) -> Iterator[Timeline]:
    """Inverse of :func:`write_timeline_log` (prompt records are not stored)."""
    events: List[DisplayEvent] = []
    uid: Optional[str] = None
    for lineno, line in enumerate(fp, 1):
        if not line.strip():
            continue
        rec = json.loads(line)
        if uid is not None and rec["utt"] != uid:
            raise ValueError(f"line {lineno}: utterance {uid!r} has no final record")
        uid = rec["utt"]
        if "final_hyp" in rec:
            yield Timeline(uid, events, _text_tokens(rec["final_hyp"]), rec["processing_seconds"],
                           rec["audio_seconds"], rec.get("n_chunks", len(events)))
            events, uid = [], None
        else:
            events.append(DisplayEvent(rec["cumulative_ms"], _text_tokens(rec["committed"]),
                                       _text_tokens(rec["prompt"])))
    if uid is not None:
        raise ValueError(f"log ends before the final record of {uid!r}")
