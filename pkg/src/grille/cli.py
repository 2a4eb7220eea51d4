"""Command-line surface.

Verbs: ingest, train, keygen, encrypt, decrypt, eval-ber, eval-pe,
toy-demo, audit.  Exit codes: 0 success, 2 bad arguments, 3 capacity
exceeded, 4 key/mask pairing failure, 5 training or search divergence,
6 I/O or file-format failure.
"""

from __future__ import annotations

import argparse
import json
import sys

import torch

from . import pipeline
from .errors import (
    CapacityExceededError,
    InvalidArgumentError,
    KeyFormatError,
    KeyPairingError,
    SearchDivergedError,
    TrainingDivergedError,
)

EXIT_OK = 0
EXIT_USAGE = 2
EXIT_CAPACITY = 3
EXIT_KEY_PAIRING = 4
EXIT_DIVERGED = 5
EXIT_IO = 6


def _build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="grille", description=__doc__)
    parser.add_argument("--config", help="pipeline config JSON file")
    parser.add_argument("--seed", type=int, help="override the master seed")
    parser.add_argument(
        "--deterministic",
        action="store_true",
        help="force single-threaded torch execution",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("ingest", help="normalize an image directory into an archive")
    p.add_argument("src_dir")
    p.add_argument("--archive", help="output archive path (default from config)")

    sub.add_parser("train", help="train the generator pair on the archive")

    p = sub.add_parser("keygen", help="derive a grille key and write the key file")
    p.add_argument("out_key")
    p.add_argument("--key-seed", help="256-bit secret as 64 hex chars (default: derived)")

    p = sub.add_parser("encrypt", help="embed a message and synthesize the stego image")
    p.add_argument("message_file")
    p.add_argument("key_file")
    p.add_argument("cover_image")
    p.add_argument("stego_out", help="output PNG path")
    p.add_argument("--manifest", help="manifest JSON to append the run record to")

    p = sub.add_parser("decrypt", help="extract message bits from a stego image")
    p.add_argument("stego_image")
    p.add_argument("key_file")
    p.add_argument("bits_out", nargs="?", help="output .bits file (default: stdout)")

    p = sub.add_parser("eval-ber", help="extraction error vs iterations per bit plane")
    p.add_argument("out_csv")
    p.add_argument("--bpi", type=int, nargs="+", default=[1, 3, 5, 8])
    p.add_argument("--images", type=int, default=50)

    p = sub.add_parser("eval-pe", help="SPAM-ensemble detection error sweep")
    p.add_argument("out_csv")
    p.add_argument("--payload", type=float, nargs="+", default=[0.1])
    p.add_argument("--bpi", type=int, nargs="+", default=[1])
    p.add_argument("--images", type=int, default=200)
    p.add_argument("--splits", type=int, default=10)

    p = sub.add_parser("toy-demo", help="sample toy-cipher ciphertext clouds to CSV")
    p.add_argument("out_csv")
    p.add_argument("--samples", type=int, default=2000)
    p.add_argument("--message", type=float, default=5.0)

    p = sub.add_parser("audit", help="recompute manifest BER values from artifacts")
    p.add_argument("manifest")

    return parser


def _load_config(args) -> pipeline.PipelineConfig:
    cfg = pipeline.PipelineConfig.load(args.config) if args.config else pipeline.PipelineConfig()
    if args.seed is not None:
        cfg.master_seed = args.seed
    return cfg


def _dispatch(args) -> int:
    if args.deterministic:
        torch.set_num_threads(1)
    cfg = _load_config(args)

    if args.command == "ingest":
        manifest = pipeline.cmd_ingest(args.src_dir, cfg, args.archive)
        print(json.dumps(manifest, indent=2, sort_keys=True))
    elif args.command == "train":
        _gen, _disc, report = pipeline.cmd_train(cfg)
        print(f"trained {len(report.d_loss)} epochs in {report.wall_clock:.1f}s; "
              f"checkpoint at {cfg.checkpoint}")
    elif args.command == "keygen":
        key_seed = bytes.fromhex(args.key_seed) if args.key_seed else None
        key = pipeline.cmd_keygen(cfg, args.out_key, key_seed)
        print(f"wrote {args.out_key}: capacity {key.cells.sum()} bits, "
              f"bpi {key.bpi}, channel {key.channel}")
    elif args.command == "encrypt":
        record = pipeline.cmd_encrypt(
            cfg, args.message_file, args.key_file, args.cover_image,
            args.stego_out, manifest_path=args.manifest,
        )
        print(json.dumps(record, indent=2, sort_keys=True))
    elif args.command == "decrypt":
        bits = pipeline.cmd_decrypt(args.stego_image, args.key_file, args.bits_out)
        if not args.bits_out:
            print(bits.to_bitstring())
    elif args.command == "eval-ber":
        rows = pipeline.cmd_eval_ber(cfg, args.bpi, args.images, args.out_csv)
        print(f"wrote {args.out_csv} ({len(rows)} rows)")
    elif args.command == "eval-pe":
        reports = pipeline.cmd_eval_pe(
            cfg, args.payload, args.bpi, args.images, args.out_csv, splits=args.splits
        )
        for r in reports:
            print(f"payload={r.payload} bpi={r.bpi}: P_E={r.p_e:.3f} (+-{r.pe_stderr:.3f})")
    elif args.command == "toy-demo":
        rows = pipeline.cmd_toy_demo(args.out_csv, n=args.samples, seed=cfg.master_seed,
                                     m=args.message)
        print(f"wrote {args.out_csv} ({len(rows)} rows)")
    elif args.command == "audit":
        problems = pipeline.cmd_audit(args.manifest)
        if problems:
            print(json.dumps(problems, indent=2, sort_keys=True))
            return EXIT_IO
        print("audit clean")
    return EXIT_OK


def main(argv=None) -> int:
    args = _build_parser().parse_args(argv)
    try:
        return _dispatch(args)
    except CapacityExceededError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CAPACITY
    except KeyPairingError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_KEY_PAIRING
    except (SearchDivergedError, TrainingDivergedError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_DIVERGED
    except (KeyFormatError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_IO
    except InvalidArgumentError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE


if __name__ == "__main__":
    sys.exit(main())
