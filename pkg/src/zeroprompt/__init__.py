"""Streaming CTC recognition with ZeroPrompt latency reduction, in plain numpy."""

__version__ = "0.1.0"

from .ctc import BLANK, CollapseState, ctc_grad, ctc_loss, edit_distance, greedy_collapse
from .encoder import (
    AttentionCache,
    EncoderConfig,
    EncoderWeights,
    Model,
    ZeroPromptSpec,
    build_chunk_mask,
    forward_chunk,
    forward_offline,
)
from .engine import DisplayEvent, StreamConfig, Timeline, extract_prompts, refine, stream_decode
from .metrics import MetricsReport, PromptRecord, aggregate, prompt_errors, tdt, wer

__all__ = [
    "AttentionCache", "BLANK", "CollapseState", "DisplayEvent", "EncoderConfig", "EncoderWeights",
    "MetricsReport", "Model", "PromptRecord", "StreamConfig", "Timeline", "ZeroPromptSpec",
    "aggregate", "build_chunk_mask", "ctc_grad", "ctc_loss", "edit_distance", "extract_prompts",
    "forward_chunk", "forward_offline", "greedy_collapse", "prompt_errors", "refine",
    "stream_decode", "tdt", "wer",
]
