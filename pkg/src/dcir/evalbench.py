"""Benchmark harness: query enumeration, mAP/Recall@k, sweeps, histograms, oracles.

A database image is relevant to a composed query iff its class equals the
query image's class and its domain equals the target domain. Every
(source domain, target domain) pair is scored separately; the grand average
is the unweighted mean over pairs. Rankings are never truncated for AP.

Reports separate the deterministic payload from wall-clock timing so two
runs with identical inputs serialize byte-identically outside the
``timing`` key.
"""

from __future__ import annotations

import json
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from .compose import ComposedQuery, EmbeddingProvider, QueryParams, provider_from_bundle, run_query
from .errors import BundleError, DataError
from .inversion import INJECT_APPEND, INJECT_REPLACE_ALL, inject_label, remove_nearest_words
from .knn import rank_indices, top_k
from .stores import Bundle, TextMemory

RECALL_PROPORTIONAL = "proportional"
RECALL_HIT = "hit"


class SkipQuery(Exception):
    """Raised by oracle hooks when a query cannot be run (e.g. unresolvable name)."""


def average_precision(ranked_ids, relevant) -> float | None:
    """AP over a full ranking; None when the relevant set is empty (skip)."""
    relevant = set(relevant)
    if not relevant:
        return None
    flags = np.fromiter((rid in relevant for rid in ranked_ids), dtype=bool)
    return _ap_from_flags(flags, len(relevant))


def _ap_from_flags(flags: np.ndarray, n_relevant: int) -> float:
    hits = np.cumsum(flags)
    ranks = np.arange(1, flags.size + 1)
    return float((hits[flags] / ranks[flags]).sum() / n_relevant)


def recall_at_k(ranked_ids, relevant, k: int, mode: str = RECALL_PROPORTIONAL) -> float | None:
    """Fraction of the relevant set inside the top-k (or 1/0 under ``hit``)."""
    if k < 1:
        raise DataError(f"k must be >= 1, got {k}")
    relevant = set(relevant)
    if not relevant:
        return None
    found = sum(1 for rid in list(ranked_ids)[:k] if rid in relevant)
    if mode == RECALL_HIT:
        return 1.0 if found else 0.0
    if mode != RECALL_PROPORTIONAL:
        raise DataError(f"unknown recall mode {mode!r}")
    return found / len(relevant)


def _recall_from_flags(flags: np.ndarray, n_relevant: int, k: int, mode: str) -> float:
    found = int(flags[:k].sum())
    if mode == RECALL_HIT:
        return 1.0 if found else 0.0
    return found / n_relevant


def enumerate_queries(bundle: Bundle) -> list[ComposedQuery]:
    """One composed query per (query image, target domain) with target != source."""
    out = []
    names = bundle.manifest.domain_names
    for row, item in enumerate(bundle.manifest.split_items("query")):
        for t, target in enumerate(names):
            if t == item.domain_id:
                continue
            out.append(
                ComposedQuery(
                    query_id=item.id,
                    y=bundle.queries.embeddings.row(row),
                    target_domain=target,
                    source_domain=names[item.domain_id],
                )
            )
    return out


@dataclass
class PairResult:
    source: str
    target: str
    map: float
    recalls: dict[int, float]
    n_queries: int
    n_skipped: int


@dataclass
class EvalReport:
    config: dict
    pairs: list[PairResult]
    per_source: list[dict]
    grand: dict
    notices: list[str] = field(default_factory=list)
    timing: dict = field(default_factory=dict)

    def payload(self) -> dict:
        """Deterministic part of the report (no wall-clock content)."""
        return {
            "config": self.config,
            "pairs": [
                {
                    "source": p.source,
                    "target": p.target,
                    "map": p.map,
                    "recalls": {str(k): v for k, v in sorted(p.recalls.items())},
                    "n_queries": p.n_queries,
                    "n_skipped": p.n_skipped,
                }
                for p in self.pairs
            ],
            "per_source": self.per_source,
            "grand": self.grand,
            "notices": self.notices,
        }

    def to_json(self) -> str:
        doc = self.payload()
        doc["timing"] = self.timing
        return json.dumps(doc, sort_keys=True, indent=1)

    def to_csv(self) -> str:
        """Per-pair mAP matrix: rows = source domain, columns = target domain."""
        sources = [p.source for p in self.pairs]
        targets = [p.target for p in self.pairs]
        domains = list(dict.fromkeys(sources + targets))
        cell = {(p.source, p.target): p.map for p in self.pairs}
        src_avg = {row["source"]: row["map"] for row in self.per_source}
        lines = ["source," + ",".join(domains) + ",avg"]
        for s in domains:
            row = [s]
            for t in domains:
                row.append("" if (s, t) not in cell else f"{cell[(s, t)]:.6f}")
            row.append("" if s not in src_avg else f"{src_avg[s]:.6f}")
            lines.append(",".join(row))
        lines.append("avg" + "," * len(domains) + f",{self.grand.get('map', float('nan')):.6f}")
        return "\n".join(lines) + "\n"


def benchmark(
    bundle: Bundle,
    method: str = "freedom",
    params: QueryParams = QueryParams(),
    recall_ks: tuple[int, ...] = (),
    recall_mode: str = RECALL_PROPORTIONAL,
    threads: int = 0,
    string_fn=None,
    provider: EmbeddingProvider | None = None,
    label_transform=None,
    text_memory_fn=None,
) -> EvalReport:
    """Run every enumerated composed query and aggregate per-pair metrics."""
    if provider is None:
        provider = provider_from_bundle(bundle, string_fn=string_fn)
    queries = enumerate_queries(bundle)

    db_items = bundle.manifest.split_items("database")
    db_class = np.array([it.class_id for it in db_items], dtype=np.int64)
    db_domain = np.array([it.domain_id for it in db_items], dtype=np.int64)
    domain_id = {name: i for i, name in enumerate(bundle.manifest.domain_names)}
    query_class = {it.id: it.class_id for it in bundle.manifest.split_items("query")}
    db_index = bundle.database_index()

    def eval_one(q: ComposedQuery):
        c, t = query_class[q.query_id], domain_id[q.target_domain]
        relevant = (db_class == c) & (db_domain == t)
        try:
            text_memory = text_memory_fn(q) if text_memory_fn is not None else None
            t0 = time.perf_counter()
            scores = run_query(
                q, method, params, bundle, provider=provider, text_memory=text_memory, label_transform=label_transform
            )
            elapsed = time.perf_counter() - t0
        except SkipQuery as exc:
            return {"skip": f"query {q.query_id}->{q.target_domain}: {exc}"}
        order = rank_indices(scores)
        self_idx = db_index.get(q.query_id)
        if self_idx is not None:
            order = order[order != self_idx]
            relevant = relevant.copy()
            relevant[self_idx] = False
        n_rel = int(relevant.sum())
        if n_rel == 0:
            return {"empty": True, "latency": elapsed}
        flags = relevant[order]
        return {
            "ap": _ap_from_flags(flags, n_rel),
            "recalls": {k: _recall_from_flags(flags, n_rel, k, recall_mode) for k in recall_ks},
            "latency": elapsed,
        }

    if threads == 1 or len(queries) <= 1:
        results = [eval_one(q) for q in queries]
    else:
        workers = threads if threads > 0 else min(32, (len(queries) or 1))
        with ThreadPoolExecutor(max_workers=workers) as pool:
            results = list(pool.map(eval_one, queries))

    acc: dict[tuple[str, str], dict] = {}
    notices: list[str] = []
    latencies: list[float] = []
    for q, res in zip(queries, results):
        key = (q.source_domain, q.target_domain)
        slot = acc.setdefault(key, {"aps": [], "recalls": {k: [] for k in recall_ks}, "skipped": 0})
        if "latency" in res:
            latencies.append(res["latency"])
        if "skip" in res:
            slot["skipped"] += 1
            notices.append(res["skip"])
        elif "empty" in res:
            slot["skipped"] += 1
        else:
            slot["aps"].append(res["ap"])
            for k in recall_ks:
                slot["recalls"][k].append(res["recalls"][k])

    names = bundle.manifest.domain_names
    order_keys = sorted(acc.keys(), key=lambda st: (names.index(st[0]), names.index(st[1])))
    pairs = []
    for s, t in order_keys:
        slot = acc[(s, t)]
        if not slot["aps"]:
            notices.append(f"pair {s}->{t}: all {slot['skipped']} queries skipped")
            continue
        pairs.append(
            PairResult(
                source=s,
                target=t,
                map=float(np.mean(slot["aps"])),
                recalls={k: float(np.mean(v)) for k, v in slot["recalls"].items()},
                n_queries=len(slot["aps"]),
                n_skipped=slot["skipped"],
            )
        )

    per_source = []
    for s in names:
        mine = [p for p in pairs if p.source == s]
        if not mine:
            continue
        per_source.append(
            {
                "source": s,
                "map": float(np.mean([p.map for p in mine])),
                "recalls": {str(k): float(np.mean([p.recalls[k] for p in mine])) for k in recall_ks},
            }
        )
    grand = {
        "map": float(np.mean([p.map for p in pairs])) if pairs else 0.0,
        "recalls": {str(k): float(np.mean([p.recalls[k] for p in pairs])) for k in recall_ks} if pairs else {},
        "n_pairs": len(pairs),
        "n_queries": int(sum(p.n_queries for p in pairs)),
        "n_skipped": int(sum(p.n_skipped for p in pairs)),
    }
    if not queries:
        notices.append("empty benchmark: manifest enumerates no (source, target) pairs")
    timing = {}
    if latencies:
        arr = np.array(latencies) * 1000.0
        timing = {"mean_ms": float(arr.mean()), "p50_ms": float(np.percentile(arr, 50)), "p95_ms": float(np.percentile(arr, 95))}
    config = {
        "method": method,
        "k": params.k,
        "n": params.n,
        "m": params.m,
        "recall_ks": list(recall_ks),
        "recall_mode": recall_mode,
        "files": dict(sorted(bundle.file_hashes.items())),
    }
    return EvalReport(config=config, pairs=pairs, per_source=per_source, grand=grand, notices=notices, timing=timing)


@dataclass
class SweepResult:
    cells: list[dict]

    def to_json(self) -> str:
        return json.dumps({"cells": self.cells}, sort_keys=True, indent=1)

    def to_csv(self) -> str:
        """Matrix CSV when exactly two axes vary, long form otherwise."""
        axes = {}
        for name in ("method", "k", "n", "m"):
            values = list(dict.fromkeys(c[name] for c in self.cells))
            if len(values) > 1:
                axes[name] = values
        if len(axes) == 2:
            (row_name, row_vals), (col_name, col_vals) = axes.items()
            cell = {(c[row_name], c[col_name]): c["map"] for c in self.cells}
            lines = [f"{row_name}\\{col_name}," + ",".join(str(v) for v in col_vals)]
            for r in row_vals:
                lines.append(",".join([str(r)] + [f"{cell[(r, c)]:.6f}" for c in col_vals]))
            return "\n".join(lines) + "\n"
        lines = ["method,k,n,m,map"]
        for c in self.cells:
            lines.append(f"{c['method']},{c['k']},{c['n']},{c['m']},{c['map']:.6f}")
        return "\n".join(lines) + "\n"


def sweep(
    bundle: Bundle,
    methods: tuple[str, ...] = ("freedom",),
    ks: tuple[int, ...] = (20,),
    ns: tuple[int, ...] = (7,),
    ms: tuple[int, ...] = (7,),
    **bench_kwargs,
) -> SweepResult:
    """Grand-average mAP for every (method, k, n, m) grid cell."""
    if not (methods and ks and ns and ms):
        raise DataError("sweep grids must be nonempty")
    cells = []
    for method in methods:
        for k in ks:
            for n in ns:
                for m in ms:
                    report = benchmark(bundle, method=method, params=QueryParams(k=k, n=n, m=m), **bench_kwargs)
                    cells.append({"method": method, "k": k, "n": n, "m": m, "map": report.grand["map"]})
    return SweepResult(cells=cells)


CATEGORY_NAMES = ("neg", "pos_object", "pos_domain", "pos")


@dataclass
class HistogramResult:
    bin_edges: np.ndarray
    counts: np.ndarray  # (4, bins) ints, rows follow CATEGORY_NAMES
    ap: float | None
    category_sizes: tuple[int, int, int, int]

    def to_csv(self) -> str:
        lines = ["bin_left,bin_right," + ",".join(CATEGORY_NAMES)]
        for b in range(self.counts.shape[1]):
            row = [f"{self.bin_edges[b]:.6f}", f"{self.bin_edges[b + 1]:.6f}"]
            row += [str(int(self.counts[c, b])) for c in range(4)]
            lines.append(",".join(row))
        return "\n".join(lines) + "\n"


def histogram(
    q: ComposedQuery,
    method: str,
    params: QueryParams,
    bundle: Bundle,
    bins: int,
    partition: np.ndarray | None = None,
    string_fn=None,
) -> HistogramResult:
    """Binned database-score counts per relevance category for one query."""
    if bins < 2:
        raise DataError(f"bins must be >= 2, got {bins}")
    scores = run_query(q, method, params, bundle, provider=provider_from_bundle(bundle, string_fn=string_fn))
    db_items = bundle.manifest.split_items("database")
    if partition is None:
        c = {it.id: it.class_id for it in bundle.manifest.split_items("query")}[q.query_id]
        t = bundle.manifest.domain_names.index(q.target_domain)
        partition = np.zeros(len(db_items), dtype=np.int64)
        for i, it in enumerate(db_items):
            obj, dom = it.class_id == c, it.domain_id == t
            partition[i] = 3 if (obj and dom) else (1 if obj else (2 if dom else 0))
    partition = np.asarray(partition, dtype=np.int64)
    if partition.shape[0] != len(db_items):
        raise DataError("partition length does not match the database")

    keep = np.ones(len(db_items), dtype=bool)
    self_idx = bundle.database_index().get(q.query_id)
    if self_idx is not None:
        keep[self_idx] = False
    scores, partition = scores[keep], partition[keep]

    edges = np.histogram_bin_edges(scores, bins=bins)
    counts = np.zeros((4, bins), dtype=np.int64)
    for cat in range(4):
        counts[cat], _ = np.histogram(scores[partition == cat], bins=edges)
    order = rank_indices(scores)
    flags = (partition == 3)[order]
    n_rel = int(flags.sum())
    ap = _ap_from_flags(flags, n_rel) if n_rel else None
    sizes = tuple(int((partition == cat).sum()) for cat in range(4))
    return HistogramResult(bin_edges=edges, counts=counts, ap=ap, category_sizes=sizes)


ORACLE_KINDS = ("inject_inlier", "inject_outlier", "upper_bound", "remove_words")


@dataclass
class OracleResult:
    kind: str
    baseline: EvalReport
    oracle: EvalReport
    extras: dict = field(default_factory=dict)

    def delta_map(self) -> float:
        return self.oracle.grand["map"] - self.baseline.grand["map"]

    def payload(self) -> dict:
        base, orc = self.baseline.payload(), self.oracle.payload()
        deltas = []
        base_pairs = {(p["source"], p["target"]): p["map"] for p in base["pairs"]}
        for p in orc["pairs"]:
            key = (p["source"], p["target"])
            if key in base_pairs:
                deltas.append({"source": key[0], "target": key[1], "delta_map": p["map"] - base_pairs[key]})
        return {
            "kind": self.kind,
            "baseline": base,
            "oracle": orc,
            "delta": {"map": self.delta_map(), "pairs": deltas},
            "extras": self.extras,
        }

    def to_json(self) -> str:
        return json.dumps(self.payload(), sort_keys=True, indent=1)


def oracle_run(
    kind: str,
    bundle: Bundle,
    method: str = "freedom",
    params: QueryParams = QueryParams(),
    ell: int | None = None,
    **bench_kwargs,
) -> OracleResult:
    """Paired baseline-vs-oracle benchmark (ground-truth injection or vocabulary ablation)."""
    if kind not in ORACLE_KINDS:
        raise DataError(f"unknown oracle kind {kind!r}")
    query_class = {it.id: it.class_id for it in bundle.manifest.split_items("query")}
    class_names = bundle.manifest.class_names
    extras: dict = {}

    baseline = benchmark(bundle, method=method, params=params, **bench_kwargs)

    if kind in ("inject_inlier", "inject_outlier", "upper_bound"):

        def transform(labels, q):
            text = class_names[query_class[q.query_id]] if kind != "inject_outlier" else q.source_domain
            label_id = bundle.resolve_text(text)
            if label_id is None:
                raise SkipQuery(f"{text!r} resolves to no vocabulary word or aux name")
            mode = INJECT_REPLACE_ALL if kind == "upper_bound" else INJECT_APPEND
            return inject_label(labels, label_id, 1.0, mode)

        oracle = benchmark(bundle, method=method, params=params, label_transform=transform, **bench_kwargs)
    else:
        if ell is None or ell < 0:
            raise DataError("remove_words needs ell >= 0")
        cache: dict[int, TextMemory | None] = {}
        removed_words: dict[str, list[str]] = {}

        def ablated_memory(q) -> TextMemory:
            c = query_class[q.query_id]
            if c not in cache:
                name = class_names[c]
                try:
                    anchor = bundle.bare_text_embedding(name)
                except BundleError:
                    cache[c] = None
                else:
                    cache[c] = remove_nearest_words(bundle.vocab, anchor, ell)
                    if ell > 0:
                        nearest = top_k(anchor, bundle.vocab.embeddings, ell)
                        removed_words[name] = [bundle.vocab.words[nb.index] for nb in nearest]
            if cache[c] is None:
                raise SkipQuery(f"class name {class_names[c]!r} has no bare embedding in the bundle")
            return cache[c]

        oracle = benchmark(bundle, method=method, params=params, text_memory_fn=ablated_memory, **bench_kwargs)
        extras["ell"] = ell
        extras["removed_words"] = {k: removed_words[k] for k in sorted(removed_words)}

    return OracleResult(kind=kind, baseline=baseline, oracle=oracle, extras=extras)
