"""Command-line surface tying the pipeline together.

Exit codes: 0 ok, 2 usage/parse error, 3 data error, 4 numeric failure.
"""

from __future__ import annotations

import argparse
import json
import sys

import numpy as np

from . import autodiff, ids
from .data import DataError, load_dataset, read_pgm
from .image_encoder import ImageEncodeError, encode_image
from .model import (
    ArchFlags,
    CheckpointError,
    ConfigError,
    ModelConfig,
    config_from_meta,
    flags_from_meta,
    load_checkpoint,
)
from .recognize import RecognizeError, evaluate_split
from .synth import Protocol, SynthError, SynthParams, build_dataset
from .train import TrainError, train
from .tree_encoder import TreeEncodeError, encode_tree

EXIT_OK = 0
EXIT_USAGE = 2
EXIT_DATA = 3
EXIT_NUMERIC = 4


def _cmd_parse(args) -> int:
    tree = ids.parse_text(args.ids)
    if args.emit == "dot":
        print(ids.tree_to_dot(tree))
    else:
        print(json.dumps(ids.tree_to_json(tree), indent=2))
    return EXIT_OK


def _cmd_synth(args) -> int:
    params = SynthParams(
        radicals=args.radicals, chars=args.chars, renders=args.renders, seed=args.seed
    )
    protocol = Protocol.parse(args.protocol)
    dataset = build_dataset(args.out, params, protocol)
    train_n = len(dataset.split_chars("train"))
    test_n = len(dataset.split_chars("test"))
    print(
        f"wrote {len(dataset.chars)} characters ({train_n} train / {test_n} test), "
        f"{sum(len(c.images) for c in dataset.chars)} images to {args.out}"
    )
    return EXIT_OK


def _flags_from_args(args) -> ArchFlags:
    return ArchFlags(
        sequential=args.sequential,
        azimuth_pe=not args.no_azimuth_pe,
        special_node=args.special_node,
        tree_mask=not args.no_tree_mask,
    )


def _cmd_train(args) -> int:
    dataset = load_dataset(args.data)
    cfg = ModelConfig.from_json_file(args.config) if args.config else ModelConfig()
    if args.mask_ratio is not None:
        cfg.mask_ratio = args.mask_ratio
        cfg.__post_init__()
    flags = _flags_from_args(args)
    _, trace = train(
        dataset, cfg, flags, out_ckpt=args.out, log_path=args.log, progress=True
    )
    final = trace[-1][1] if trace else float("nan")
    print(f"trained {len(trace)} steps, final loss {final:.4f}, checkpoint {args.out}")
    return EXIT_OK


def _cmd_eval(args) -> int:
    dataset = load_dataset(args.data)
    params, meta = load_checkpoint(args.ckpt)
    cfg = config_from_meta(meta)
    flags = flags_from_meta(meta)
    report = evaluate_split(dataset, args.split, params, cfg, flags)
    print(json.dumps(report.to_dict(), indent=2))
    return EXIT_OK


def _cmd_encode(args) -> int:
    params, meta = load_checkpoint(args.ckpt)
    cfg = config_from_meta(meta)
    flags = flags_from_meta(meta)
    if args.ids:
        tree = ids.parse_text(args.ids, set(range(params.vocab_size)))
        emb = encode_tree(tree, params, cfg, flags)
    else:
        emb = encode_image(read_pgm(args.image), params, cfg)
    print(json.dumps([float(v) for v in emb]))
    return EXIT_OK


def _cmd_bench_mask(args) -> int:
    dataset = load_dataset(args.data)
    base = ModelConfig.from_json_file(args.config) if args.config else ModelConfig()
    ratios = [float(r) for r in args.ratios.split(",")]
    lines = ["mask_ratio,mean_step_ms,final_accuracy"]
    print(lines[0])
    for ratio in ratios:
        cfg = ModelConfig(
            **{**_config_dict(base), "mask_ratio": ratio}
        )
        params, trace = train(dataset, cfg)
        mean_ms = float(np.mean([ms for _, _, ms in trace]))
        split = "test" if dataset.split_chars("test") else "train"
        report = evaluate_split(dataset, split, params, cfg)
        line = f"{ratio},{mean_ms:.3f},{report.accuracy:.4f}"
        lines.append(line)
        print(line, flush=True)
    if args.out:
        with open(args.out, "w") as fh:
            fh.write("\n".join(lines) + "\n")
    return EXIT_OK


def _config_dict(cfg: ModelConfig) -> dict:
    import dataclasses

    return dataclasses.asdict(cfg)


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="glyphtree")
    sub = p.add_subparsers(dest="command", required=True)

    q = sub.add_parser("parse", help="parse an IDS string and print the tree")
    q.add_argument("ids")
    q.add_argument("--emit", choices=["json", "dot"], default="json")
    q.set_defaults(func=_cmd_parse)

    q = sub.add_parser("synth", help="generate a synthetic glyph dataset")
    q.add_argument("--radicals", type=int, default=40)
    q.add_argument("--chars", type=int, default=400)
    q.add_argument("--renders", type=int, default=20)
    q.add_argument("--seed", type=int, default=7)
    q.add_argument("--protocol", default="char-zeroshot:300")
    q.add_argument("--out", required=True)
    q.set_defaults(func=_cmd_synth)

    q = sub.add_parser("train", help="contrastive training on a dataset")
    q.add_argument("--data", required=True)
    q.add_argument("--config")
    q.add_argument("--out", required=True)
    q.add_argument("--log")
    q.add_argument("--mask-ratio", type=float, default=None)
    q.add_argument("--sequential", action="store_true")
    q.add_argument("--no-azimuth-pe", action="store_true")
    q.add_argument("--special-node", action="store_true")
    q.add_argument("--no-tree-mask", action="store_true")
    q.set_defaults(func=_cmd_train)

    q = sub.add_parser("eval", help="evaluate a checkpoint on a dataset split")
    q.add_argument("--data", required=True)
    q.add_argument("--ckpt", required=True)
    q.add_argument("--split", default="test")
    q.set_defaults(func=_cmd_eval)

    q = sub.add_parser("encode", help="print an embedding for an IDS string or image")
    q.add_argument("--ckpt", required=True)
    group = q.add_mutually_exclusive_group(required=True)
    group.add_argument("--ids")
    group.add_argument("--image")
    q.set_defaults(func=_cmd_encode)

    q = sub.add_parser("bench-mask", help="step-time/accuracy CSV across mask ratios")
    q.add_argument("--data", required=True)
    q.add_argument("--config")
    q.add_argument("--ratios", default="0,0.25,0.5,0.75")
    q.add_argument("--out")
    q.set_defaults(func=_cmd_bench_mask)
    return p


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as e:
        return EXIT_USAGE if e.code not in (0, None) else EXIT_OK
    try:
        return args.func(args)
    except (ids.IdsError, SynthError, ConfigError) as e:
        print(f"error: {e}", file=sys.stderr)
        return EXIT_USAGE
    except (DataError, CheckpointError, RecognizeError, OSError) as e:
        print(f"error: {e}", file=sys.stderr)
        return EXIT_DATA
    except (TrainError, TreeEncodeError, ImageEncodeError, autodiff.AutodiffError) as e:
        print(f"error: {e}", file=sys.stderr)
        return EXIT_NUMERIC


if __name__ == "__main__":
    sys.exit(main())
