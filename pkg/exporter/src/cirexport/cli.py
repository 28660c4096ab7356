"""cirexport: export-images, export-text, serve-provider."""

from __future__ import annotations

import argparse
import sys
from pathlib import Path

from .datasets import ADAPTERS
from .encoders import DEFAULT_CLIP, make_encoder
from .export import ExportJob, export_images, export_vocab_and_composed
from .provider import serve


def _add_encoder_args(p: argparse.ArgumentParser) -> None:
    p.add_argument("--encoder", default="clip", choices=("clip", "toy"))
    p.add_argument("--model", default=DEFAULT_CLIP, help="HF model id for the clip encoder")
    p.add_argument("--dim", type=int, default=32, help="embedding dim of the toy encoder")
    p.add_argument("--batch-size", type=int, default=32)


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="cirexport", description=__doc__)
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("export-images", help="encode an image tree into database/query FDEM files + manifest")
    _add_encoder_args(p)
    p.add_argument("--root", required=True)
    p.add_argument("--adapter", default="generic", choices=sorted(ADAPTERS))
    p.add_argument("--out-dir", required=True)
    p.add_argument("--query-fraction", type=float, default=None)
    p.add_argument("--query-list", default=None, help="file of relative paths forming the query split")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--photo-root", default=None, help="extra photo-domain tree (imagenet-r)")

    p = sub.add_parser("export-text", help="encode the vocabulary and per-domain composed tables")
    _add_encoder_args(p)
    p.add_argument("--vocab", required=True)
    p.add_argument("--manifest", required=True, help="manifest.json written by export-images")
    p.add_argument("--out-dir", required=True)

    p = sub.add_parser("serve-provider", help="stdin/stdout line protocol: string -> unit vector")
    _add_encoder_args(p)
    return parser


def _records(args):
    adapter = ADAPTERS[args.adapter]
    if args.adapter == "generic":
        return adapter(args.root, query_fraction=args.query_fraction, query_list=args.query_list, seed=args.seed)
    if args.adapter == "nico":
        fraction = args.query_fraction if args.query_fraction is not None else 0.1
        return adapter(args.root, query_fraction=fraction, seed=args.seed)
    if args.adapter == "minidomainnet":
        return adapter(args.root, test_list=args.query_list)
    if args.adapter == "imagenet-r":
        return adapter(args.root, photo_root=args.photo_root)
    return adapter(args.root)


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    encoder = make_encoder(args.encoder, model_id=args.model, dim=args.dim, batch_size=args.batch_size)

    if args.command == "export-images":
        job = ExportJob(out_dir=Path(args.out_dir), encoder=encoder, encoder_id=args.encoder, seed=args.seed)
        try:
            summary = export_images(job, _records(args))
        except ValueError as exc:
            print(f"error: {exc}", file=sys.stderr)
            return 2
        print(f"database rows: {summary.n_database}")
        print(f"query rows: {summary.n_query}")
        print(f"skipped unreadable: {len(summary.skipped)}")
        for rid in summary.skipped:
            print(f"  skipped: {rid}")
        return 0

    if args.command == "export-text":
        job = ExportJob(out_dir=Path(args.out_dir), encoder=encoder, encoder_id=args.encoder, vocab_path=Path(args.vocab))
        try:
            index = export_vocab_and_composed(job, args.manifest)
        except ValueError as exc:
            print(f"error: {exc}", file=sys.stderr)
            return 2
        print(f"vocab rows: {index['vocab_rows']}")
        print(f"tables: {sorted(index['tables'])}")
        if "aux" in index:
            print(f"aux names: {len(index['aux']['names'])}")
        return 0

    if args.command == "serve-provider":
        serve(encoder)
        return 0

    return 1


if __name__ == "__main__":
    raise SystemExit(main())
