import json

import pytest

from zeroprompt.engine import DisplayEvent, Timeline
from zeroprompt.metrics import (
    PromptRecord,
    aggregate,
    format_per,
    format_ppc,
    format_table,
    prompt_errors,
    report_document,
    tdt,
    truncate_ratio,
    wer,
    wer_counts,
)


def timeline(uid, events, final, n_chunks=None, proc=0.5, audio=1.0):
    events = [DisplayEvent(t, tuple(c), tuple(p)) for t, c, p in events]
    return Timeline(uid, events, tuple(final), proc, audio, n_chunks or len(events))


def rec(uid, idx, prompt, committed_len, first=False, last=False):
    return PromptRecord(uid, idx, first, last, tuple(prompt), committed_len)


def test_prompt_error_examples():
    x, y, z, q = 1, 2, 3, 4
    assert prompt_errors(rec("u", 0, [x, q], 1), [9, x, q]) == (0, 2)
    assert prompt_errors(rec("u", 0, [], 1), [9]) == (0, 0)
    assert prompt_errors(rec("u", 0, [x, y, z], 0), [x, q]) == (2, 3)


def test_truncation_not_rounding():
    assert format_per((87, 2191)) == "87 / 2191 = 3.9%"
    assert format_per((7, 947)) == "7 / 947 = 0.7%"
    assert format_per((266, 4351)) == "266 / 4351 = 6.1%"
    assert format_ppc(12059, 59081) == "0.20"
    assert format_ppc(23450, 59081) == "0.39"
    assert truncate_ratio(2, 3, 2) == "0.66"
    assert truncate_ratio(5, 1, 0) == "5"
    assert format_per((0, 0)) == "-"
    with pytest.raises(ValueError):
        truncate_ratio(1, 0, 1)


def test_tdt_examples():
    tl = timeline("u", [(600, [], []), (1200, [1], []), (1800, [1, 2], [])], [1, 2])
    assert tdt(tl) == (1200, 1800)
    one = timeline("v", [(640, [1, 2, 3], [])], [1, 2, 3])
    assert tdt(one) == (640, 640)
    refined = timeline("w", [(640, [1], [7, 8]), (1280, [1, 2], [9]), (1500, [1, 2, 3], [])], [1, 2, 3])
    assert tdt(refined) == (640, 640)
    assert tdt(timeline("e", [(640, [], [])], [])) == (None, None)
    with pytest.raises(ValueError):
        tdt(Timeline("x", [], (), 0, 0))


def test_wer_examples():
    refs = {"a": list(range(1, 11))}
    assert wer({"a": list(range(1, 11))}, refs) == 0
    hyp = list(range(1, 11))
    hyp[3] = 99
    assert wer({"a": hyp}, refs) == pytest.approx(0.1)
    assert wer_counts({"a": [1, 3, 3, 4], "b": []}, {"a": [1, 2, 3], "b": [5]}) == (1, 1, 1, 4)
    with pytest.raises(KeyError, match="zz"):
        wer({"zz": [1]}, refs)


def test_aggregate_sums_and_ppc():
    tls = [
        timeline("a", [(80, [1], []), (160, [1, 2], []), (200, [1, 2, 3], [])], [1, 2, 3]),
        timeline("b", [(80, [], []), (100, [5], [])], [5]),
    ]
    records = [
        rec("a", 0, [2, 9], 1, first=True),
        rec("a", 1, [3, 4], 2, last=True),
        rec("b", 0, [5], 0, first=True, last=True),
    ]
    r = aggregate(records, tls, {"a": [1, 2, 3], "b": [6]}, {"chunk_ms": 80, "zp_ms": 80})
    assert r.per_f == (1, 3) and r.per_l == (1, 3) and r.per_a == (2, 5)
    assert r.total_chunks == 5 and r.ppc == 1.0
    assert (r.wer_s, r.wer_d, r.wer_i, r.ref_len) == (1, 0, 0, 4)
    assert r.tdt_f_ms == {"a": 80, "b": 100} and r.tdt_f_mean == 90
    assert r.rtf == pytest.approx(0.5)
    for pair in (r.per_f, r.per_l):
        assert pair[0] <= r.per_a[0] and pair[1] <= r.per_a[1]


def test_aggregate_errors():
    with pytest.raises(ValueError, match="empty"):
        aggregate([], [], {})
    tl = timeline("a", [(80, [1], [])], [1])
    with pytest.raises(KeyError):
        aggregate([rec("zz", 0, [1], 0)], [tl], {"a": [1]})
    with pytest.raises(ValueError, match="duplicate"):
        aggregate([], [tl, tl], {"a": [1]})


def test_table_dashes_without_prompts_and_raw_section():
    tl = timeline("a", [(80, [1], [])], [1])
    base = aggregate([], [tl], {"a": [1]}, {"chunk_ms": 80, "zp_ms": 0, "start_layer": None})
    row = format_table([base]).splitlines()[2].split()
    assert row[:3] == ["80ms", "0ms", "-"]
    assert row[5:8] == ["-", "-", "-"] and row[-1] == "-"
    doc = report_document([base])
    raw = json.loads(doc.split("[raw]\n")[1].split("\n\n[timing]")[0])
    assert raw[0]["total_chunks"] == 1 and "rtf" not in raw[0]
    assert "rtf" in doc.split("[timing]")[1]
