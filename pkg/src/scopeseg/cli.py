"""Command-line entry point: ``scopeseg <command> [options] [--key=value ...]``."""

from __future__ import annotations

import argparse
import logging
import sys
from pathlib import Path

from . import pipeline
from .config import KEYS, ConfigError, RunConfig, apply, load_config_file
from .gradcheck import TOLERANCE, run_gradcheck
from .imaging import PGMError
from .nn.checkpoint import CheckpointError

EXIT_OK = 0
EXIT_USAGE = 2
EXIT_DATASET = 3
EXIT_IO = 4
EXIT_CHECKPOINT = 5
EXIT_PAIRING = 6
EXIT_GRADCHECK = 7

EPILOG = f"""\
config keys (file lines key=value, or --key=value flags):
  {", ".join(KEYS)}

exit codes:
  {EXIT_OK}  success
  {EXIT_USAGE}  bad arguments or configuration
  {EXIT_DATASET}  dataset missing, empty manifest or inconsistent image sizes
  {EXIT_IO}  file read/write failure or malformed PGM
  {EXIT_CHECKPOINT}  checkpoint unreadable or incompatible with the network
  {EXIT_PAIRING}  prediction and ground-truth files do not pair up
  {EXIT_GRADCHECK}  a gradient check exceeded relative error {TOLERANCE:g}

environment:
  SCOPE_THREADS  worker threads for evaluation (default 1)
"""


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="scopeseg",
        description="Graph-based continuity-preserving segmentation and topology evaluation.",
        epilog=EPILOG,
        formatter_class=argparse.RawDescriptionHelpFormatter,
    )
    parser.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")
    sub = parser.add_subparsers(dest="command", required=True)

    def add(name, help_text):
        p = sub.add_parser(name, help=help_text, epilog=EPILOG, formatter_class=argparse.RawDescriptionHelpFormatter)
        p.add_argument("--config", help="key=value config file")
        return p

    p = add("synth", "generate a synthetic vessel dataset")
    p.add_argument("--count", type=int, help="number of pairs (default: synth.count)")
    p.add_argument("--out", help="output directory (default: dataset)")

    add("train", "train on the even-index half of the dataset")

    p = add("infer", "predict one image with a trained checkpoint")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--image", required=True)
    p.add_argument("--out", required=True, help="soft prediction PGM; the mask goes to *_mask.pgm")

    p = add("eval", "evaluate a directory of predicted masks against ground truth")
    p.add_argument("--pred", required=True)
    p.add_argument("--gt", required=True)
    p.add_argument("--out", required=True, help="CSV report path")

    p = add("gradcheck", "finite-difference checks of every gradient path")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--perturb", type=float, default=0.0, help=argparse.SUPPRESS)

    p = add("ablate", "loss x patch-size ablation on the held-out split")
    p.add_argument("--out", help="CSV path (default: <output>/ablation.csv)")
    return parser


def _overrides(extra: list[str]) -> dict[str, str]:
    values = {}
    for item in extra:
        if not item.startswith("--") or "=" not in item:
            raise ConfigError(f"unrecognised argument {item!r} (expected --key=value)")
        key, value = item[2:].split("=", 1)
        values[key] = value
    return values


def resolve_config(args, extra: list[str]) -> RunConfig:
    values = load_config_file(args.config) if getattr(args, "config", None) else {}
    values.update(_overrides(extra))
    return apply(RunConfig(), values)


def run(argv: list[str] | None = None) -> int:
    parser = build_parser()
    args, extra = parser.parse_known_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(message)s")
    try:
        cfg = resolve_config(args, extra)
        return _dispatch(args, cfg)
    except ConfigError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except pipeline.DatasetError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_DATASET
    except CheckpointError as exc:
        print(f"error: checkpoint: {exc}", file=sys.stderr)
        return EXIT_CHECKPOINT
    except pipeline.PairingError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_PAIRING
    except (OSError, PGMError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_IO
    except ValueError as exc:
        # grid/patch-size mismatches surface as ValueError from the library
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE


def _dispatch(args, cfg: RunConfig) -> int:
    if args.command == "synth":
        out = args.out or cfg.dataset
        pairs = pipeline.cmd_synth(args.count if args.count is not None else cfg.synth_count, cfg.synth, out)
        print(f"wrote {len(pairs)} pairs to {out}")
    elif args.command == "train":
        ckpt, log_path = pipeline.cmd_train(cfg)
        print(f"checkpoint {ckpt}\nlog {log_path}")
    elif args.command == "infer":
        prob, mask = pipeline.cmd_infer(args.checkpoint, args.image, args.out, cfg)
        print(f"prediction {prob}\nmask {mask}")
    elif args.command == "eval":
        report = pipeline.cmd_eval(args.pred, args.gt, args.out, cfg.threshold)
        for name, msg in report.errors:
            print(f"skipped {name}: {msg}", file=sys.stderr)
        means = report.means() if report.rows else {}
        print(" ".join(f"{c}={means[c]:.6f}" for c in pipeline.CSV_COLUMNS if c in means))
    elif args.command == "gradcheck":
        results = run_gradcheck(args.seed, perturb=args.perturb)
        print(f"{'component':<14} {'max_rel_err':>12} {'checked':>8} {'rejected':>9}  status")
        for r in results:
            status = "ok" if r.ok else "FAIL"
            print(f"{r.component:<14} {r.max_rel_error:>12.3e} {r.checked:>8d} {r.rejected:>9d}  {status}")
        if not all(r.ok for r in results):
            return EXIT_GRADCHECK
    elif args.command == "ablate":
        out = Path(args.out) if args.out else Path(cfg.output) / "ablation.csv"
        out.parent.mkdir(parents=True, exist_ok=True)
        rows = pipeline.cmd_ablate(cfg, out)
        print(pipeline.format_ablation(rows), end="")
    return EXIT_OK


def main() -> None:
    sys.exit(run())


if __name__ == "__main__":
    main()
