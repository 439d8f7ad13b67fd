"""Command-line entry point: ``zeroprompt {train-toy,decode,bench,inspect-mask}``.

Exit codes: 0 on success, 2 for usage errors, 1 for runtime failures.
Each command that writes files also writes a ``*.manifest.json`` next to
them recording the command, every resolved flag, paths, seed and version.
"""
from __future__ import annotations

import argparse
import dataclasses
import json
import logging
import sys
from pathlib import Path
from typing import List, Optional

import numpy as np

from . import __version__
from .encoder import build_chunk_mask
from .engine import MODES, StreamConfig, stream_decode, write_timeline_log
from .formats import load_corpus, load_model, save_corpus, save_loss_curve, save_model
from .metrics import report_document
from .trainer import ToyRecipe, Utterance, evaluate, train_toy

log = logging.getLogger("zeroprompt")


class UsageError(Exception):
    """Bad flag combination detected after parsing; maps to exit code 2."""


def write_manifest(path: Path, command: str, config: dict, inputs: dict, outputs: dict,
                   seed: Optional[int] = None) -> None:
    manifest = {
        "command": command,
        "config": config,
        "inputs": {k: str(v) for k, v in inputs.items()},
        "outputs": {k: str(v) for k, v in outputs.items()},
        "seed": seed,
        "version": __version__,
    }
    path.write_text(json.dumps(manifest, indent=1, sort_keys=True) + "\n")


def _flags(args) -> dict:
    return {k: v for k, v in sorted(vars(args).items()) if k != "func"}


def cmd_train_toy(args) -> int:
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    recipe = ToyRecipe(seed=args.seed)
    if args.epochs is not None:
        recipe = dataclasses.replace(recipe, epochs=args.epochs)
    result = train_toy(recipe)
    paths = {
        "model": out / "model.zpm",
        "train_corpus": out / "train.corpus",
        "heldout_corpus": out / "heldout.corpus",
        "loss_curve": out / "loss.txt",
        "grammar": out / "grammar.json",
    }
    save_model(paths["model"], result.model)
    save_corpus(paths["train_corpus"], result.train)
    save_corpus(paths["heldout_corpus"], result.heldout)
    save_loss_curve(paths["loss_curve"], result.curve)
    paths["grammar"].write_text(json.dumps(result.grammar.to_dict(), indent=1, sort_keys=True) + "\n")
    config = {**_flags(args), "recipe": dataclasses.asdict(recipe)}
    write_manifest(out / "manifest.json", "train-toy", config, {}, paths, seed=recipe.seed)
    print(f"heldout greedy WER {100 * result.heldout_wer:.2f}% after {recipe.epochs} epochs")
    return 0


def _load_feats(path: Path) -> List[Utterance]:
    if path.suffix == ".npy":
        return [Utterance(path.stem, np.load(path), [])]
    return load_corpus(path)


def cmd_decode(args) -> int:
    if args.mode != "zeroprompt" and (args.zp_ms is not None or args.start_layer is not None):
        log.warning("--zp-ms/--start-layer only apply to --mode zeroprompt; ignoring them")
    if args.mode != "lookahead" and args.lookahead_ms is not None:
        log.warning("--lookahead-ms only applies to --mode lookahead; ignoring it")
    model = load_model(args.model)
    start_layer = 0 if args.start_layer is None else args.start_layer
    if not -1 <= start_layer < model.config.num_layers:
        raise UsageError(f"--start-layer must be in [-1, {model.config.num_layers - 1}], got {start_layer}")
    cfg = StreamConfig(
        chunk_ms=args.chunk_ms,
        mode=args.mode,
        zp_ms=args.zp_ms or 0,
        start_layer=start_layer,
        lookahead_ms=args.lookahead_ms or 0,
    )
    cfg.zp_spec(model)  # validates ms conversions before any decoding
    model.config.frames_for_ms(cfg.chunk_ms)
    utts = _load_feats(Path(args.feats))
    timelines = [stream_decode(model, u.feats, cfg, uid=u.uid) for u in utts]
    out = Path(args.out)
    with out.open("w") as fp:
        write_timeline_log(fp, timelines)
    write_manifest(Path(str(out) + ".manifest.json"), "decode",
                   {**_flags(args), "resolved": dataclasses.asdict(cfg)},
                   {"model": args.model, "feats": args.feats}, {"timeline": out})
    return 0


def cmd_bench(args) -> int:
    if args.threads != 1:
        raise UsageError("bench measures single-thread RTF; only --threads 1 is supported")
    model = load_model(args.model)
    corpus = load_corpus(args.corpus)
    for layer in args.start_layer:
        if not -1 <= layer < model.config.num_layers:
            raise UsageError(f"--start-layer {layer} out of range for a {model.config.num_layers}-layer model")
    configs = []
    for chunk in args.chunk_ms:
        for zp in args.zp_ms:
            layers = args.start_layer if zp else [0]
            for layer in layers:
                configs.append(StreamConfig(chunk, "zeroprompt" if zp else "causal", zp, layer))
    reports = evaluate(model, corpus, configs)
    doc = report_document(reports)
    out = Path(args.out) if args.out else None
    if out is None:
        sys.stdout.write(doc)
    else:
        out.write_text(doc)
        write_manifest(Path(str(out) + ".manifest.json"), "bench", _flags(args),
                       {"model": args.model, "corpus": args.corpus}, {"report": out})
    return 0


def format_mask(mask: np.ndarray, n_cache: int, n_real: int) -> str:
    """Render a chunk mask; ``#`` is an allowed key and ``.`` a blocked one."""
    kinds = ["c"] * n_cache + ["r"] * n_real + ["z"] * (mask.shape[1] - n_cache - n_real)
    rows = ["   " + "".join(kinds)]
    for i, row in enumerate(mask):
        label = f"r{i}" if i < n_real else f"z{i - n_real}"
        rows.append(f"{label:<3s}" + "".join("#" if x else "." for x in row))
    return "\n".join(rows) + "\n"


def cmd_inspect_mask(args) -> int:
    for name in ("cache", "real", "zp"):
        if getattr(args, name) < 0:
            raise UsageError(f"--{name} must be >= 0")
    if args.block < 1:
        raise UsageError("--block must be >= 1")
    mask = build_chunk_mask(args.cache, args.real, args.zp, args.block)
    text = format_mask(mask, args.cache, args.real)
    if args.out:
        out = Path(args.out)
        out.write_text(text)
        write_manifest(Path(str(out) + ".manifest.json"), "inspect-mask", _flags(args), {}, {"grid": out})
    else:
        sys.stdout.write(text)
    return 0


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="zeroprompt", description=__doc__.splitlines()[0])
    p.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    p.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")
    sub = p.add_subparsers(dest="command", required=True)

    t = sub.add_parser("train-toy", help="train the toy model on a synthetic corpus")
    t.add_argument("--seed", type=int, default=ToyRecipe.seed)
    t.add_argument("--out", required=True, help="output directory")
    t.add_argument("--epochs", type=int, default=None, help="override the recipe's epoch budget")
    t.set_defaults(func=cmd_train_toy)

    d = sub.add_parser("decode", help="stream-decode features and write a timeline log")
    d.add_argument("--model", required=True)
    d.add_argument("--feats", required=True, help="corpus file, or a .npy feature matrix")
    d.add_argument("--out", required=True, help="timeline log path (JSON lines)")
    d.add_argument("--chunk-ms", type=int, required=True)
    d.add_argument("--mode", choices=MODES, default="causal")
    d.add_argument("--zp-ms", type=int, default=None)
    d.add_argument("--start-layer", type=int, default=None)
    d.add_argument("--lookahead-ms", type=int, default=None)
    d.set_defaults(func=cmd_decode)

    b = sub.add_parser("bench", help="sweep chunk/zero-prompt/start-layer settings over a corpus")
    b.add_argument("--model", required=True)
    b.add_argument("--corpus", required=True)
    b.add_argument("--chunk-ms", type=int, nargs="+", required=True)
    b.add_argument("--zp-ms", type=int, nargs="+", default=[0])
    b.add_argument("--start-layer", type=int, nargs="+", default=[0])
    b.add_argument("--threads", type=int, default=1)
    b.add_argument("--out", default=None, help="report path (default: stdout)")
    b.set_defaults(func=cmd_bench)

    m = sub.add_parser("inspect-mask", help="print a chunk attention mask")
    m.add_argument("--cache", type=int, default=0)
    m.add_argument("--real", type=int, default=4)
    m.add_argument("--zp", type=int, default=0)
    m.add_argument("--block", type=int, default=4)
    m.add_argument("--out", default=None)
    m.set_defaults(func=cmd_inspect_mask)
    return p


def main(argv: Optional[List[str]] = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s: %(message)s")
    try:
        return args.func(args)
    except UsageError as exc:
        parser.print_usage(sys.stderr)
        print(f"{parser.prog}: error: {exc}", file=sys.stderr)
        return 2
    except (ValueError, KeyError, OSError) as exc:
        print(f"{parser.prog}: error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
