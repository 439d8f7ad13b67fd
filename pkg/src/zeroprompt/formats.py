"""On-disk formats: model file, corpus file and loss curve.

Model and corpus files share one layout: a UTF-8 text header that ends with
a line reading ``end``, followed by raw little-endian float32 tensor data.
Every tensor line in the header gives a name, a shape and a byte offset
into the data section, and tensors are stored in header order::

    zeroprompt-model 1
    config {"chunk_frames": 8, ...}
    tensor in_w 12 32 0
    tensor in_b 32 1536
    ...
    end
    <raw float32 data>

Corpus headers hold ``utt <id> <n_frames> <feat_dim> <offset> <ref ids...>``
lines instead of tensor lines.
"""
from __future__ import annotations

import dataclasses
import json
from pathlib import Path
from typing import List, Sequence, Tuple, Union

import numpy as np

from .encoder import EncoderConfig, EncoderWeights, Model

MODEL_MAGIC = "zeroprompt-model"
CORPUS_MAGIC = "zeroprompt-corpus"
FORMAT_VERSION = 1
_LE_F32 = np.dtype("<f4")

PathLike = Union[str, Path]


def _split_header(blob: bytes, magic: str) -> Tuple[List[str], bytes]:
    marker = b"\nend\n"
    cut = blob.find(marker)
    if cut < 0:
        raise ValueError("file has no header terminator")
    lines = blob[:cut].decode("utf-8").split("\n")
    head = lines[0].split()
    if len(head) != 2 or head[0] != magic:
        raise ValueError(f"not a {magic} file (starts with {lines[0][:40]!r})")
    if int(head[1]) != FORMAT_VERSION:
        raise ValueError(f"unsupported format version {head[1]}; this reader knows {FORMAT_VERSION}")
    return lines[1:], blob[cut + len(marker):]


def _tensor(data: bytes, offset: int, shape: Tuple[int, ...], what: str) -> np.ndarray:
    count = int(np.prod(shape)) if shape else 1
    end = offset + 4 * count
    if offset < 0 or end > len(data):
        raise ValueError(f"{what}: data section too short for shape {shape} at offset {offset}")
    return np.frombuffer(data, dtype=_LE_F32, count=count, offset=offset).reshape(shape).astype(np.float32)


def dump_model(model: Model) -> bytes:
    model.weights.check(model.config)
    header = [f"{MODEL_MAGIC} {FORMAT_VERSION}",
              "config " + json.dumps(dataclasses.asdict(model.config), sort_keys=True)]
    chunks, offset = [], 0
    for name, arr in model.weights.named_tensors().items():
        raw = np.ascontiguousarray(arr, dtype=_LE_F32).tobytes()
        header.append(" ".join(["tensor", name, *map(str, arr.shape), str(offset)]))
        chunks.append(raw)
        offset += len(raw)
    header.append("end")
    return ("\n".join(header) + "\n").encode("utf-8") + b"".join(chunks)


def load_model_bytes(blob: bytes) -> Model:
    lines, data = _split_header(blob, MODEL_MAGIC)
    cfg = None
    tensors = {}
    for line in lines:
        kind, _, rest = line.partition(" ")
        if kind == "config":
            cfg = EncoderConfig(**json.loads(rest))
        elif kind == "tensor":
            parts = rest.split()
            name, dims, offset = parts[0], tuple(int(p) for p in parts[1:-1]), int(parts[-1])
            tensors[name] = _tensor(data, offset, dims, name)
        elif line.strip():
            raise ValueError(f"unexpected header line {line!r}")
    if cfg is None:
        raise ValueError("model header has no config line")
    try:
        weights = EncoderWeights.from_named_tensors(tensors, cfg.num_layers)
    except KeyError as exc:
        raise ValueError(f"model file is missing tensor {exc.args[0]}") from None
    weights.check(cfg)
    return Model(cfg, weights)


def save_model(path: PathLike, model: Model) -> None:
    Path(path).write_bytes(dump_model(model))


def load_model(path: PathLike) -> Model:
    return load_model_bytes(Path(path).read_bytes())


def dump_corpus(corpus: Sequence) -> bytes:
    header = [f"{CORPUS_MAGIC} {FORMAT_VERSION}"]
    chunks, offset = [], 0
    for utt in corpus:
        if not utt.uid or any(c.isspace() for c in utt.uid):
            raise ValueError(f"utterance id {utt.uid!r} must be non-empty without whitespace")
        feats = np.ascontiguousarray(utt.feats, dtype=_LE_F32)
        rows, cols = feats.shape
        header.append(" ".join(["utt", utt.uid, str(rows), str(cols), str(offset), *map(str, utt.ref)]))
        raw = feats.tobytes()
        chunks.append(raw)
        offset += len(raw)
    header.append("end")
    return ("\n".join(header) + "\n").encode("utf-8") + b"".join(chunks)


def load_corpus_bytes(blob: bytes) -> list:
    from .trainer import Utterance

    lines, data = _split_header(blob, CORPUS_MAGIC)
    out = []
    for line in lines:
        parts = line.split()
        if not parts:
            continue
        if parts[0] != "utt" or len(parts) < 5:
            raise ValueError(f"unexpected header line {line!r}")
        uid, rows, cols, offset = parts[1], int(parts[2]), int(parts[3]), int(parts[4])
        feats = _tensor(data, offset, (rows, cols), uid)
        out.append(Utterance(uid, feats, [int(t) for t in parts[5:]]))
    return out


def save_corpus(path: PathLike, corpus: Sequence) -> None:
    Path(path).write_bytes(dump_corpus(corpus))


def load_corpus(path: PathLike) -> list:
    return load_corpus_bytes(Path(path).read_bytes())


def save_loss_curve(path: PathLike, curve: Sequence[float]) -> None:
    """Two columns: epoch number and mean training loss."""
    lines = [f"{i + 1} {loss:.10g}" for i, loss in enumerate(curve)]
    Path(path).write_text("\n".join(lines) + "\n")


def load_loss_curve(path: PathLike) -> List[float]:
    return [float(line.split()[1]) for line in Path(path).read_text().splitlines() if line.strip()]
