"""Command-line surface: validate / query / bench / sweep / hist / oracle.

Exit codes: 0 success, 1 usage error, 2 data error. All subcommands are
randomness-free; reports isolate wall-clock content under a ``timing`` key
so identical invocations produce byte-identical deterministic payloads.
"""

from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

from .compose import METHODS, ComposedQuery, LineProtocolClient, QueryParams, provider_from_bundle, run_query
from .errors import DataError
from .evalbench import RECALL_HIT, RECALL_PROPORTIONAL, benchmark, histogram, oracle_run, sweep
from .knn import rank_indices
from .stores import load_bundle

CLI_METHODS = ("text", "image", "sum", "product", "weicom", "single", "early", "late", "freedom")


class _Parser(argparse.ArgumentParser):
    """argparse exits 2 on usage errors; the contract reserves 2 for data errors."""

    def error(self, message):
        self.print_usage(sys.stderr)
        print(f"{self.prog}: error: {message}", file=sys.stderr)
        raise SystemExit(1)


def _int_list(text: str) -> list[int]:
    try:
        return [int(p) for p in text.split(",") if p != ""]
    except ValueError as exc:
        raise argparse.ArgumentTypeError(f"expected comma-separated integers, got {text!r}") from exc


def _parse_metrics(text: str) -> tuple[list[str], tuple[int, ...]]:
    metrics, ks = [], []
    for part in text.split(","):
        part = part.strip()
        if not part:
            continue
        if part == "map":
            metrics.append("map")
        elif part.startswith("recall@"):
            ks.append(int(part.split("@", 1)[1]))
            metrics.append(part)
        else:
            raise argparse.ArgumentTypeError(f"unknown metric {part!r}")
    return metrics, tuple(ks)


def _add_bundle_args(p: argparse.ArgumentParser) -> None:
    p.add_argument("--manifest", required=True)
    p.add_argument("--db-emb", required=True)
    p.add_argument("--query-emb", required=True)
    p.add_argument("--vocab", required=True)
    p.add_argument("--vocab-emb", required=True)
    p.add_argument("--composed", required=True, help="composed-table index JSON")
    p.add_argument("--renormalize", action="store_true", help="divide rows by their norm instead of validating")


def _add_run_args(p: argparse.ArgumentParser, multi: bool = False) -> None:
    if multi:
        p.add_argument("--method", default="freedom", help="comma-separated method list")
        p.add_argument("--k", type=_int_list, default=[20])
        p.add_argument("--n", type=_int_list, default=[7])
        p.add_argument("--m", type=_int_list, default=[7])
    else:
        p.add_argument("--method", default="freedom", choices=CLI_METHODS)
        p.add_argument("--k", type=int, default=20)
        p.add_argument("--n", type=int, default=7)
        p.add_argument("--m", type=int, default=7)
    p.add_argument("--metric", default="map", help="comma list: map,recall@10,recall@50")
    p.add_argument("--out", default=None)
    p.add_argument("--format", default="json", choices=("json", "csv"))
    p.add_argument("--threads", type=int, default=0, help="0 = auto")
    p.add_argument("--recall", default=RECALL_PROPORTIONAL, choices=(RECALL_PROPORTIONAL, RECALL_HIT))
    p.add_argument("--provider", default=None, help="string-tier provider command (needed by method=early)")


def _load(args):
    return load_bundle(
        args.manifest, args.db_emb, args.query_emb, args.vocab, args.vocab_emb, args.composed,
        renormalize=args.renormalize,
    )


def _string_backend(args, bundle, methods):
    if args.provider and "early" in methods:
        return LineProtocolClient(args.provider, bundle.dim)
    return None


def _emit(text: str, out: str | None) -> None:
    if out:
        Path(out).write_text(text, encoding="utf-8")
    else:
        sys.stdout.write(text if text.endswith("\n") else text + "\n")


def build_parser() -> _Parser:
    parser = _Parser(prog="dcir", description=__doc__)
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("validate", help="load a bundle and report its shape")
    _add_bundle_args(p)

    p = sub.add_parser("query", help="rank the database for one composed query")
    _add_bundle_args(p)
    _add_run_args(p)
    p.add_argument("--id", required=True, help="query image id from the manifest")
    p.add_argument("--target", required=True, help="target domain name")
    p.add_argument("--top", type=int, default=10)

    p = sub.add_parser("bench", help="full benchmark over all source->target pairs")
    _add_bundle_args(p)
    _add_run_args(p)

    p = sub.add_parser("sweep", help="grid of benchmarks over method/k/n/m")
    _add_bundle_args(p)
    _add_run_args(p, multi=True)

    p = sub.add_parser("hist", help="similarity histogram per relevance category for one query")
    _add_bundle_args(p)
    _add_run_args(p)
    p.add_argument("--id", required=True)
    p.add_argument("--target", required=True)
    p.add_argument("--bins", type=int, default=40)

    p = sub.add_parser("oracle", help="paired baseline-vs-oracle benchmark")
    _add_bundle_args(p)
    _add_run_args(p)
    p.add_argument("--kind", required=True, choices=("inject_inlier", "inject_outlier", "upper_bound", "remove_words"))
    p.add_argument("--ell", type=int, default=None, help="words removed per class (remove_words)")
    return parser


def _check_target(bundle, target: str) -> None:
    if target not in bundle.manifest.domain_names:
        raise DataError(f"unknown target domain {target!r}; manifest has {bundle.manifest.domain_names}")


def _composed_query(bundle, query_id: str, target: str) -> ComposedQuery:
    _check_target(bundle, target)
    qidx = bundle.query_index()
    if query_id not in qidx:
        raise DataError(f"query id {query_id!r} not in the manifest query split")
    item = next(it for it in bundle.manifest.split_items("query") if it.id == query_id)
    return ComposedQuery(
        query_id=query_id,
        y=bundle.queries.embeddings.row(qidx[query_id]),
        target_domain=target,
        source_domain=bundle.manifest.domain_names[item.domain_id],
    )


def _run(args) -> int:
    if args.command == "validate":
        bundle = _load(args)
        b = bundle
        print(f"manifest: {len(b.manifest.items)} items, {len(b.manifest.class_names)} classes, "
              f"{len(b.manifest.domain_names)} domains")
        print(f"database: {b.database.embeddings.rows} x {b.dim}")
        print(f"queries: {b.queries.embeddings.rows} x {b.queries.embeddings.dim}")
        print(f"vocabulary: {len(b.vocab)} words, embeddings {b.vocab.embeddings.rows} x {b.vocab.embeddings.dim}")
        for name in b.manifest.domain_names:
            print(f"composed[{name}]: {b.composed[name].embeddings.rows} x {b.composed[name].embeddings.dim}")
        if b.aux is not None:
            print(f"aux: {len(b.aux.names)} names, tables for {sorted(b.aux.tables)}")
        print("ok")
        return 0

    bundle = _load(args)

    if args.command == "query":
        q = _composed_query(bundle, args.id, args.target)
        backend = _string_backend(args, bundle, [args.method])
        provider = provider_from_bundle(bundle, string_fn=backend)
        scores = run_query(q, args.method, QueryParams(k=args.k, n=args.n, m=args.m), bundle, provider=provider)
        self_idx = bundle.database_index().get(args.id)
        order = [i for i in rank_indices(scores) if i != self_idx][: args.top]
        for i in order:
            print(f"{bundle.database.image_ids[i]}\t{scores[i]:.6f}")
        if backend:
            backend.close()
        return 0

    if args.command == "bench":
        _, recall_ks = _parse_metrics(args.metric)
        backend = _string_backend(args, bundle, [args.method])
        report = benchmark(
            bundle, method=args.method, params=QueryParams(k=args.k, n=args.n, m=args.m),
            recall_ks=recall_ks, recall_mode=args.recall, threads=args.threads, string_fn=backend,
        )
        for notice in report.notices:
            print(f"notice: {notice}", file=sys.stderr)
        _emit(report.to_csv() if args.format == "csv" else report.to_json(), args.out)
        if backend:
            backend.close()
        return 0

    if args.command == "sweep":
        methods = tuple(p.strip() for p in args.method.split(",") if p.strip())
        for m in methods:
            if m not in METHODS:
                raise DataError(f"unknown method {m!r} in sweep")
        _, recall_ks = _parse_metrics(args.metric)
        backend = _string_backend(args, bundle, methods)
        result = sweep(
            bundle, methods=methods, ks=tuple(args.k), ns=tuple(args.n), ms=tuple(args.m),
            recall_ks=recall_ks, recall_mode=args.recall, threads=args.threads, string_fn=backend,
        )
        _emit(result.to_csv() if args.format == "csv" else result.to_json(), args.out)
        if backend:
            backend.close()
        return 0

    if args.command == "hist":
        q = _composed_query(bundle, args.id, args.target)
        backend = _string_backend(args, bundle, [args.method])
        result = histogram(
            q, args.method, QueryParams(k=args.k, n=args.n, m=args.m), bundle, bins=args.bins, string_fn=backend
        )
        _emit(result.to_csv(), args.out)
        if backend:
            backend.close()
        return 0

    if args.command == "oracle":
        _, recall_ks = _parse_metrics(args.metric)
        result = oracle_run(
            args.kind, bundle, method=args.method, params=QueryParams(k=args.k, n=args.n, m=args.m),
            ell=args.ell, recall_ks=recall_ks, recall_mode=args.recall, threads=args.threads,
        )
        _emit(result.to_json(), args.out)
        return 0

    raise DataError(f"unhandled command {args.command!r}")


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    try:
        return _run(args)
    except DataError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except FileNotFoundError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    raise SystemExit(main())
