"""Composed-query construction and scoring.

A query image is represented by vocabulary words (see inversion); each word
is merged with the target-domain text either as one long string (early
fusion) or as per-word composed strings whose embeddings are combined
linearly (late fusion). Composed text embeddings come from an
EmbeddingProvider: a precomputed table tier covering every
(word, domain) pair, plus an optional string tier for arbitrary strings,
which only early fusion needs.

Also implements the simple baseline scorers (text, image, sum, product,
weicom) that operate directly on the unimodal embeddings.
"""

from __future__ import annotations

import shlex
import subprocess
import threading
import warnings
from dataclasses import dataclass

import numpy as np
from scipy.special import ndtr

from .errors import BundleError, CapabilityError, DataError, DegenerateQueryError
from .inversion import Label, LabelSet, expanded_invert, nn_invert
from .knn import all_scores
from .stores import Bundle, EmbeddingMatrix, TextMemory

BASELINE_METHODS = ("text", "image", "sum", "product", "weicom")
# `single` and `late` invert the query directly; `early` and `freedom` run
# proxy expansion first (k=1 collapses to plain inversion); `late+` is the
# expanded-but-uniform late-fusion ablation variant.
INVERSION_METHODS = ("single", "early", "late", "freedom", "late+")
METHODS = BASELINE_METHODS + INVERSION_METHODS

WEIGHTS_UNIFORM = "uniform"
WEIGHTS_FREQUENCY = "frequency"


@dataclass(frozen=True)
class ComposedQuery:
    query_id: str
    y: np.ndarray
    target_domain: str
    source_domain: str


@dataclass(frozen=True)
class QueryParams:
    k: int = 20
    n: int = 7
    m: int = 7


def _unit(v: np.ndarray) -> np.ndarray:
    norm = float(np.linalg.norm(v))
    if norm < 1e-12:
        raise DegenerateQueryError("composed embedding collapsed to the zero vector")
    return v / norm


class EmbeddingProvider:
    """Resolves composed text keys to unit vectors.

    Table tier: (label id, domain) -> precomputed row; label ids past the
    vocabulary index into the bundle's aux tables. String tier: arbitrary
    string -> vector, via ``string_fn``; absent by default.
    """

    def __init__(
        self,
        tables: dict[str, EmbeddingMatrix],
        label_names: list[str],
        aux_tables: dict[str, EmbeddingMatrix] | None = None,
        aux_offset: int | None = None,
        string_fn=None,
    ):
        self.tables = tables
        self.label_names = label_names
        self.aux_tables = aux_tables or {}
        self.aux_offset = aux_offset if aux_offset is not None else len(label_names)
        self.string_fn = string_fn

    @property
    def has_string_tier(self) -> bool:
        return self.string_fn is not None

    def label_text(self, label_id: int) -> str:
        if 0 <= label_id < len(self.label_names):
            return self.label_names[label_id]
        raise DataError(f"label id {label_id} out of range")

    def lookup(self, label_id: int, domain: str) -> np.ndarray:
        if label_id < 0:
            raise DataError(f"invalid label id {label_id}")
        if label_id < self.aux_offset:
            table = self.tables.get(domain)
            if table is None:
                raise BundleError(f"no composed table for domain {domain!r}")
            if label_id >= table.rows:
                raise BundleError(f"composed table for {domain!r} has no row {label_id}")
            return table.row(label_id)
        aux = self.aux_tables.get(domain)
        if aux is None:
            raise BundleError(f"no aux composed table for domain {domain!r} (needed for label id {label_id})")
        i = label_id - self.aux_offset
        if i >= aux.rows:
            raise BundleError(f"aux table for {domain!r} has no row {i}")
        return aux.row(i)

    def embed_string(self, text: str) -> np.ndarray:
        if self.string_fn is None:
            raise CapabilityError(
                "this provider resolves precomputed tables only; early fusion over "
                "multiple words needs arbitrary strings, rerun with an online provider "
                "(--provider <command>)"
            )
        v = np.asarray(self.string_fn(text), dtype=np.float64).reshape(-1)
        return _unit(v)


def provider_from_bundle(bundle: Bundle, string_fn=None) -> EmbeddingProvider:
    names = list(bundle.vocab.words)
    aux_tables = None
    if bundle.aux is not None:
        names = names + list(bundle.aux.names)
        aux_tables = bundle.aux.tables
    return EmbeddingProvider(
        tables={d: t.embeddings for d, t in bundle.composed.items()},
        label_names=names,
        aux_tables=aux_tables,
        aux_offset=len(bundle.vocab.words),
        string_fn=string_fn,
    )


class LineProtocolClient:
    """String-tier backend over a child process.

    Protocol: one UTF-8 line out (the composed string), one line back with
    ``dim`` space-separated decimal floats forming a unit vector. Calls are
    serialized with a lock; the channel is stateful.
    """

    def __init__(self, command: str | list[str], dim: int):
        argv = shlex.split(command) if isinstance(command, str) else list(command)
        self.dim = dim
        self._lock = threading.Lock()
        self._proc = subprocess.Popen(
            argv, stdin=subprocess.PIPE, stdout=subprocess.PIPE, text=True, encoding="utf-8", bufsize=1
        )

    def __call__(self, text: str) -> np.ndarray:
        if "\n" in text or "\r" in text:
            raise DataError("composed strings must be single-line")
        with self._lock:
            if self._proc.poll() is not None:
                raise DataError("embedding provider process exited")
            self._proc.stdin.write(text + "\n")
            self._proc.stdin.flush()
            reply = self._proc.stdout.readline()
        if not reply:
            raise DataError("embedding provider closed its output")
        parts = reply.split()
        try:
            vec = np.array([float(p) for p in parts], dtype=np.float64)
        except ValueError as exc:
            raise DataError(f"provider reply is not a float vector: {reply[:80]!r}") from exc
        if vec.shape[0] != self.dim:
            raise DataError(f"provider replied with {vec.shape[0]} floats, expected {self.dim}")
        norm = float(np.linalg.norm(vec))
        if abs(norm - 1.0) > 1e-3:
            raise DataError(f"provider reply has norm {norm:.6f}, expected a unit vector")
        return vec

    def close(self) -> None:
        if self._proc.poll() is None:
            self._proc.stdin.close()
            self._proc.wait(timeout=10)


def compose_single(labels: LabelSet, domain: str, provider: EmbeddingProvider) -> np.ndarray:
    """Embedding of ``w1 + " " + domain`` (the leading label only)."""
    if len(labels) < 1:
        raise DataError("label set is empty")
    row = provider.lookup(labels.labels[0].word_id, domain)
    return _unit(np.asarray(row, dtype=np.float64))


def compose_early(labels: LabelSet, domain: str, provider: EmbeddingProvider) -> np.ndarray:
    """Embedding of the full concatenation ``w1 ... wm domain``.

    A singleton label set composes the same string as compose_single, so it
    resolves through the table tier and needs no string backend.
    """
    if len(labels) < 1:
        raise DataError("label set is empty")
    if len(labels) == 1:
        return compose_single(labels, domain, provider)
    text = " ".join(provider.label_text(l.word_id) for l in labels.labels) + " " + domain
    return _unit(provider.embed_string(text))


def compose_late(
    labels: LabelSet, domain: str, provider: EmbeddingProvider, weights: str = WEIGHTS_UNIFORM
) -> np.ndarray:
    """Weighted sum of per-word composed embeddings, renormalized."""
    if len(labels) < 1:
        raise DataError("label set is empty")
    if weights == WEIGHTS_UNIFORM:
        a = np.ones(len(labels), dtype=np.float64)
    elif weights == WEIGHTS_FREQUENCY:
        a = labels.weights()
    else:
        raise DataError(f"unknown weighting {weights!r}")
    acc = np.zeros(provider.lookup(labels.labels[0].word_id, domain).shape[0], dtype=np.float64)
    for coeff, label in zip(a, labels.labels):
        acc += coeff * np.asarray(provider.lookup(label.word_id, domain), dtype=np.float64)
    return _unit(acc)


def score_embedding(h: np.ndarray, database: EmbeddingMatrix, threads: int = 0) -> np.ndarray:
    return all_scores(h, database, threads=threads)


def score_baseline(kind: str, t_emb: np.ndarray, y_emb: np.ndarray, database: EmbeddingMatrix) -> np.ndarray:
    """Similarity vectors for the training-free baselines."""
    if kind == "text":
        return all_scores(t_emb, database)
    if kind == "image":
        return all_scores(y_emb, database)
    if kind == "sum":
        fused = np.asarray(t_emb, dtype=np.float64) + np.asarray(y_emb, dtype=np.float64)
        return all_scores(_unit(fused), database)
    if kind == "product":
        return all_scores(t_emb, database) * all_scores(y_emb, database)
    if kind == "weicom":
        out = np.zeros(database.rows, dtype=np.float64)
        for s in (all_scores(t_emb, database), all_scores(y_emb, database)):
            mu, sigma = float(np.mean(s)), float(np.std(s))
            if sigma == 0.0:
                warnings.warn("weicom: constant similarity vector, using CDF value 0.5 for this modality")
                out += 0.5
            else:
                out += ndtr((s - mu) / sigma)
        return out
    raise DataError(f"unknown baseline {kind!r}")


def invert_for_method(
    method: str,
    q: ComposedQuery,
    bundle: Bundle,
    params: QueryParams,
    text_memory: TextMemory | None = None,
) -> LabelSet:
    """Labels for an inversion-based method; visual memory is the database."""
    memory = bundle.database
    vocab = text_memory if text_memory is not None else bundle.vocab
    if method == "single":
        labels = nn_invert(q.y, vocab, 1)
    elif method == "late":
        labels = nn_invert(q.y, vocab, params.m)
    elif method in ("early", "late+", "freedom"):
        labels = expanded_invert(q.y, memory, vocab, params.k, params.n, params.m)
    else:
        raise DataError(f"method {method!r} does not use inversion")
    remap = vocab.source_ids
    if not np.array_equal(remap, np.arange(len(vocab))):
        labels = LabelSet(
            labels=[Label(int(remap[l.word_id]), l.weight) for l in labels.labels],
            provenance=labels.provenance,
        )
    return labels


def run_query(
    q: ComposedQuery,
    method: str,
    params: QueryParams,
    bundle: Bundle,
    provider: EmbeddingProvider | None = None,
    text_memory: TextMemory | None = None,
    label_transform=None,
    threads: int = 0,
) -> np.ndarray:
    """End-to-end scoring of one composed query against the database.

    ``label_transform(labels, q) -> labels`` hooks between inversion and
    composition, for the oracle experiments.
    """
    if method in BASELINE_METHODS:
        t_emb = None if method == "image" else bundle.bare_text_embedding(q.target_domain)
        return score_baseline(method, t_emb, q.y, bundle.database.embeddings)
    if method not in INVERSION_METHODS:
        raise DataError(f"unknown method {method!r}")
    if provider is None:
        provider = provider_from_bundle(bundle)
    labels = invert_for_method(method, q, bundle, params, text_memory=text_memory)
    if label_transform is not None:
        labels = label_transform(labels, q)
    if method == "single":
        h = compose_single(labels, q.target_domain, provider)
    elif method == "early":
        h = compose_early(labels, q.target_domain, provider)
    elif method in ("late", "late+"):
        h = compose_late(labels, q.target_domain, provider, weights=WEIGHTS_UNIFORM)
    else:  # freedom
        h = compose_late(labels, q.target_domain, provider, weights=WEIGHTS_FREQUENCY)
    return score_embedding(h, bundle.database.embeddings, threads=threads)
