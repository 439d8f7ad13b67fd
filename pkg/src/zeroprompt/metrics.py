"""Latency and prompt-quality metrics computed from decode timelines.

Rates are formatted by truncation, never rounding, so that for example
``87 / 2191`` prints as ``3.9%`` and ``23450 / 59081`` as ``0.39``.
"""
from __future__ import annotations

import json
from dataclasses import dataclass, field
from typing import Dict, Iterable, Mapping, Optional, Sequence, Tuple

from .ctc import edit_distance


@dataclass(frozen=True)
class PromptRecord:
    """One chunk's prompt together with where it sits in the utterance."""

    uid: str
    chunk_index: int
    is_first_chunk: bool
    is_last_chunk: bool
    prompt: Tuple[int, ...]
    committed_len_at_emission: int

    def __post_init__(self):
        object.__setattr__(self, "prompt", tuple(int(t) for t in self.prompt))
        if self.chunk_index < 0 or self.committed_len_at_emission < 0:
            raise ValueError("chunk_index and committed_len_at_emission must be >= 0")


def tdt(timeline) -> Tuple[Optional[int], Optional[int]]:
    """First and last token display times in ms, or ``(None, None)`` for an empty hypothesis."""
    if not timeline.events:
        raise ValueError(f"timeline {timeline.uid!r} has no events")
    final_len = len(timeline.final_hyp)
    if final_len == 0:
        return None, None
    first = last = None
    for ev in timeline.events:
        shown = len(ev.committed) + len(ev.prompt)
        if first is None and shown > 0:
            first = ev.cumulative_ms
        if shown >= final_len:
            last = ev.cumulative_ms
            break
    return first, last


def prompt_errors(rec: PromptRecord, final_hyp: Sequence[int]) -> Tuple[int, int]:
    """``(PE, NP)``: position-wise mismatches against the final hypothesis continuation."""
    base = rec.committed_len_at_emission
    pe = 0
    for offset, tok in enumerate(rec.prompt):
        pos = base + offset
        if pos >= len(final_hyp) or final_hyp[pos] != tok:
            pe += 1
    return pe, len(rec.prompt)


def truncate_ratio(num: int, den: int, decimals: int, scale: int = 1) -> str:
    """Decimal string of ``scale * num / den`` cut (not rounded) to ``decimals`` places."""
    if den <= 0 or num < 0:
        raise ValueError(f"cannot format {num}/{den}")
    q = (scale * num * 10**decimals) // den
    whole, frac = divmod(q, 10**decimals)
    return f"{whole}.{frac:0{decimals}d}" if decimals else str(whole)


def format_per(pair: Tuple[int, int]) -> str:
    pe, n = pair
    if n == 0:
        return "-"
    return f"{pe} / {n} = {truncate_ratio(pe, n, 1, scale=100)}%"


def format_ppc(total_prompts: int, total_chunks: int) -> str:
    return truncate_ratio(total_prompts, total_chunks, 2)


def wer_counts(hyps: Mapping[str, Sequence[int]], refs: Mapping[str, Sequence[int]]):
    """Corpus totals ``(S, D, I, ref_len)`` summed over per-utterance alignments."""
    missing = sorted(set(hyps) - set(refs))
    if missing:
        raise KeyError(f"no reference for utterances: {missing}")
    s = d = i = n = 0
    for uid in sorted(hyps):
        ds, dd, di = edit_distance(hyps[uid], refs[uid])
        s, d, i, n = s + ds, d + dd, i + di, n + len(refs[uid])
    return s, d, i, n


def wer(hyps: Mapping[str, Sequence[int]], refs: Mapping[str, Sequence[int]]) -> float:
    s, d, i, n = wer_counts(hyps, refs)
    if n == 0:
        raise ValueError("references contain no tokens")
    return (s + d + i) / n


def _add(a, b):
    return a[0] + b[0], a[1] + b[1]


def _mean(values):
    vals = [v for v in values if v is not None]
    return sum(vals) / len(vals) if vals else None


@dataclass
class MetricsReport:
    tdt_f_ms: Dict[str, Optional[int]]
    tdt_l_ms: Dict[str, Optional[int]]
    per_f: Tuple[int, int]
    per_l: Tuple[int, int]
    per_a: Tuple[int, int]
    total_chunks: int
    wer_s: int
    wer_d: int
    wer_i: int
    ref_len: int
    processing_seconds: float = 0.0
    audio_seconds: float = 0.0
    labels: dict = field(default_factory=dict)

    @property
    def tdt_f_mean(self) -> Optional[float]:
        return _mean(self.tdt_f_ms.values())

    @property
    def tdt_l_mean(self) -> Optional[float]:
        return _mean(self.tdt_l_ms.values())

    @staticmethod
    def _rate(pair):
        return pair[0] / pair[1] if pair[1] else None

    @property
    def per_f_rate(self):
        return self._rate(self.per_f)

    @property
    def per_l_rate(self):
        return self._rate(self.per_l)

    @property
    def per_a_rate(self):
        return self._rate(self.per_a)

    @property
    def ppc(self) -> float:
        return self.per_a[1] / self.total_chunks

    @property
    def wer(self) -> float:
        return (self.wer_s + self.wer_d + self.wer_i) / self.ref_len if self.ref_len else 0.0

    @property
    def rtf(self) -> Optional[float]:
        return self.processing_seconds / self.audio_seconds if self.audio_seconds else None

    def raw(self) -> dict:
        """Deterministic counts only; wall-clock fields live in :meth:`timing`."""
        return {
            **self.labels,
            "tdt_f_mean_ms": self.tdt_f_mean,
            "tdt_l_mean_ms": self.tdt_l_mean,
            "tdt_f_ms": self.tdt_f_ms,
            "tdt_l_ms": self.tdt_l_ms,
            "per_f": list(self.per_f),
            "per_l": list(self.per_l),
            "per_a": list(self.per_a),
            "total_prompts": self.per_a[1],
            "total_chunks": self.total_chunks,
            "wer": {"S": self.wer_s, "D": self.wer_d, "I": self.wer_i, "ref_len": self.ref_len},
        }

    def timing(self) -> dict:
        return {
            **self.labels,
            "processing_seconds": self.processing_seconds,
            "audio_seconds": self.audio_seconds,
            "rtf": self.rtf,
        }


def aggregate(records: Iterable[PromptRecord], timelines: Sequence, refs: Mapping[str, Sequence[int]],
              labels: Optional[dict] = None) -> MetricsReport:
    """Fold prompt records and timelines of one configuration into a report."""
    timelines = list(timelines)
    if not timelines:
        raise ValueError("empty corpus")
    by_uid = {tl.uid: tl for tl in timelines}
    if len(by_uid) != len(timelines):
        raise ValueError("duplicate utterance ids in timelines")

    per_f = per_l = per_a = (0, 0)
    for rec in records:
        if rec.uid not in by_uid:
            raise KeyError(f"prompt record for unknown utterance {rec.uid!r}")
        pair = prompt_errors(rec, by_uid[rec.uid].final_hyp)
        per_a = _add(per_a, pair)
        if rec.is_first_chunk:
            per_f = _add(per_f, pair)
        if rec.is_last_chunk:
            per_l = _add(per_l, pair)

    tdt_f, tdt_l = {}, {}
    for tl in timelines:
        tdt_f[tl.uid], tdt_l[tl.uid] = tdt(tl)
    s, d, i, n = wer_counts({tl.uid: tl.final_hyp for tl in timelines}, refs)
    return MetricsReport(
        tdt_f_ms=tdt_f, tdt_l_ms=tdt_l, per_f=per_f, per_l=per_l, per_a=per_a,
        total_chunks=sum(tl.n_chunks for tl in timelines),
        wer_s=s, wer_d=d, wer_i=i, ref_len=n,
        processing_seconds=sum(tl.processing_seconds for tl in timelines),
        audio_seconds=sum(tl.audio_seconds for tl in timelines),
        labels=dict(labels or {}),
    )


TABLE_COLUMNS = ("chunk", "zp", "layer", "TDT-F", "TDT-L", "PER-F", "PER-L", "PER-A", "WER", "PPC")


def _ms(v):
    return "-" if v is None else f"{v:.0f}ms"


def table_row(rep: MetricsReport) -> list:
    lab = rep.labels
    prompts = rep.per_a[1] > 0
    layer = lab.get("start_layer")
    return [
        f"{lab.get('chunk_ms', '?')}ms",
        f"{lab.get('zp_ms', 0)}ms",
        "-" if layer is None else str(layer),
        _ms(rep.tdt_f_mean),
        _ms(rep.tdt_l_mean),
        format_per(rep.per_f),
        format_per(rep.per_l),
        format_per(rep.per_a),
        f"{100 * rep.wer:.2f}",
        format_ppc(rep.per_a[1], rep.total_chunks) if prompts or lab.get("zp_ms") else "-",
    ]


def format_table(reports: Sequence[MetricsReport]) -> str:
    """Fixed-width text table with one row per configuration.

    RTF is left out so the table is reproducible byte for byte; it is
    reported in the timing section of :func:`report_document`.
    """
    rows = [list(TABLE_COLUMNS)] + [table_row(r) for r in reports]
    widths = [max(len(r[c]) for r in rows) for c in range(len(TABLE_COLUMNS))]
    lines = ["  ".join(cell.rjust(w) for cell, w in zip(row, widths)) for row in rows]
    lines.insert(1, "  ".join("-" * w for w in widths))
    return "\n".join(lines) + "\n"


def report_document(reports: Sequence[MetricsReport]) -> str:
    """Full report: text table, then a JSON block of raw counts and one of timings."""
    raw = json.dumps([r.raw() for r in reports], indent=1, sort_keys=True)
    timing = json.dumps([r.timing() for r in reports], indent=1, sort_keys=True)
    return f"{format_table(reports)}\n[raw]\n{raw}\n\n[timing]\n{timing}\n"
