"""Command-line entry point: ``crgan {dataset-gen,train,translate,eval}``.

Exit codes: 0 success, 1 runtime error, 2 usage or configuration error.
"""
from __future__ import annotations

import argparse
import json
import logging
import sys
from dataclasses import asdict, replace
from pathlib import Path

from crgan.checkpoint import load_checkpoint
from crgan.config import load_config
from crgan.data.dataset import DatasetConfig, generate_dataset
from crgan.data.images import assemble_patches, extract_patches, load_png, resize_to_height, save_png
from crgan.errors import ConfigError
from crgan.evaluate import compare_models
from crgan.models import translate_sequence
from crgan.train import TrainingConfig, train

log = logging.getLogger("crgan")

EXIT_OK, EXIT_RUNTIME, EXIT_USAGE = 0, 1, 2
RESOLVED = "resolved-config.json"


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        raise UsageError(f"{self.prog}: {message}")


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--seed", type=int, help="seed override (recorded in the resolved config)")
    common.add_argument("-v", "--verbose", action="count", default=0)

    p = _Parser(prog="crgan", description="Word-level font translation with a convolutional recurrent GAN.")
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)

    d = sub.add_parser("dataset-gen", parents=[common], help="render the synthetic word corpus")
    d.add_argument("--config", required=True, type=Path)
    d.add_argument("--out", required=True, type=Path)
    d.add_argument("-o", "--override", action="append", default=[], metavar="KEY=VALUE")

    t = sub.add_parser("train", parents=[common], help="train a generator / discriminator / classifier")
    t.add_argument("--config", required=True, type=Path)
    t.add_argument("--data", type=Path, help="dataset manifest (overrides the config's manifest)")
    t.add_argument("--out", required=True, type=Path)
    t.add_argument("-o", "--override", action="append", default=[], metavar="KEY=VALUE")
    t.add_argument("--resume", action="store_true", help="continue from the latest checkpoint in --out")

    tr = sub.add_parser("translate", parents=[common], help="convert one word image")
    tr.add_argument("--checkpoint", required=True, type=Path)
    tr.add_argument("--input", required=True, type=Path)
    tr.add_argument("--target-font", required=True, type=int)
    tr.add_argument("--out", required=True, type=Path)

    e = sub.add_parser("eval", parents=[common], help="compare recurrent and baseline checkpoints")
    e.add_argument("--recurrent", required=True, type=Path)
    e.add_argument("--baseline", required=True, type=Path)
    e.add_argument("--data", required=True, type=Path)
    e.add_argument("--out", required=True, type=Path)
    return p


def _require_file(path: Path, flag: str):
    if not path.is_file():
        raise FileNotFoundError(f"{flag} {path}: no such file")


def _write_resolved(out: Path, cfg):
    out.mkdir(parents=True, exist_ok=True)
    (out / RESOLVED).write_text(json.dumps(asdict(cfg), indent=1))


def cmd_dataset_gen(args) -> int:
    _require_file(args.config, "--config")
    cfg = load_config(DatasetConfig, args.config, args.override)
    if args.seed is not None:
        cfg = replace(cfg, seed=args.seed)
    _write_resolved(args.out, cfg)
    manifest = generate_dataset(cfg.catalog(), cfg.words(), cfg.source_font_id, args.out, cfg.seed)
    print(f"wrote {len(manifest.samples)} samples to {args.out / 'manifest.json'}")
    return EXIT_OK


def cmd_train(args) -> int:
    _require_file(args.config, "--config")
    cfg = load_config(TrainingConfig, args.config, args.override)
    if args.seed is not None:
        cfg = replace(cfg, seed=args.seed)
    if args.data is not None:
        cfg = replace(cfg, manifest=str(args.data.resolve()))
    if cfg.manifest is None:
        raise ConfigError("--data", "no dataset manifest given (use --data or the 'manifest' key)")
    _require_file(Path(cfg.manifest), "--data")
    _write_resolved(args.out, cfg)
    result = train(cfg, args.out, resume=args.resume)
    print(f"trained {result.state.step} steps in {result.wall_seconds:.1f}s; final checkpoint {result.final_checkpoint}")
    return EXIT_OK


def cmd_translate(args) -> int:
    _require_file(args.checkpoint, "--checkpoint")
    _require_file(args.input, "--input")
    ck = load_checkpoint(args.checkpoint)
    if not 0 <= args.target_font < ck.num_fonts:
        raise ConfigError("--target-font", f"must be in 0..{ck.num_fonts - 1} for {args.checkpoint}")
    img = load_png(args.input)
    if img.height != 32:
        img = resize_to_height(img)
    out = assemble_patches(translate_sequence(extract_patches(img), args.target_font, ck.gen))
    args.out.parent.mkdir(parents=True, exist_ok=True)
    save_png(out, args.out)
    print(f"wrote {out.height}x{out.width} image to {args.out}")
    return EXIT_OK


def cmd_eval(args) -> int:
    for path, flag in ((args.recurrent, "--recurrent"), (args.baseline, "--baseline"), (args.data, "--data")):
        _require_file(path, flag)
    report = compare_models(args.recurrent, args.baseline, args.data, args.out)
    agg = report["aggregate"]
    for name in ("recurrent", "baseline"):
        print(f"{name}: mean L1 {agg[name]['l1']['mean']:.4f}, mean seam ratio {agg[name]['seam_ratio']['mean']}")
    print(f"report written to {args.out / 'report.json'}")
    return EXIT_OK


COMMANDS = {"dataset-gen": cmd_dataset_gen, "train": cmd_train, "translate": cmd_translate, "eval": cmd_eval}


def run(argv: list[str] | None = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except UsageError as exc:
        print(exc, file=sys.stderr)
        return EXIT_USAGE
    except SystemExit as exc:  # --help
        return int(exc.code or 0)
    level = logging.WARNING - 10 * min(args.verbose, 2)
    logging.basicConfig(level=level, format="%(levelname)s %(name)s: %(message)s")
    try:
        return COMMANDS[args.command](args)
    except ConfigError as exc:
        print(f"crgan {args.command}: configuration error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except Exception as exc:  # every other failure is a runtime error
        log.debug("traceback", exc_info=True)
        print(f"crgan {args.command}: error: {exc}", file=sys.stderr)
        return EXIT_RUNTIME


def main():
    sys.exit(run())


if __name__ == "__main__":
    main()
