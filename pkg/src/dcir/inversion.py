"""Map a query image embedding to vocabulary words.

Plain inversion picks the m nearest vocabulary words. Expanded inversion
first grows the query into proxy images from a visual memory, inverts every
proxy, and keeps the m words that occur most often across proxies, weighted
by occurrence count normalized so the top weight is 1.0.

Frequency ties break by the word's similarity to the original query, then
by ascending word id; the result is therefore independent of the iteration
order over proxies.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import DataError
from .knn import all_scores, all_scores_multi, rank_indices, top_indices, top_k
from .stores import EmbeddingMatrix, TextMemory, VisualMemory

PROVENANCE_PLAIN = "plain"
PROVENANCE_EXPANDED = "expanded"
PROVENANCE_ORACLE = "oracle"

# a memory row this close to the query is the query itself and is skipped
DUPLICATE_SIM = 1.0 - 1e-6


@dataclass(frozen=True)
class Label:
    word_id: int
    weight: float


@dataclass
class LabelSet:
    """Words assigned to a query, ordered by nonincreasing positive weight."""

    labels: list[Label]
    provenance: str = PROVENANCE_PLAIN

    def __post_init__(self):
        ids = [l.word_id for l in self.labels]
        if len(set(ids)) != len(ids):
            raise DataError("label word ids are not unique")
        for l in self.labels:
            if l.weight <= 0:
                raise DataError(f"label weight must be positive, got {l.weight} for word {l.word_id}")
        weights = [l.weight for l in self.labels]
        if any(a < b for a, b in zip(weights, weights[1:])):
            raise DataError("label weights must be nonincreasing")

    def word_ids(self) -> list[int]:
        return [l.word_id for l in self.labels]

    def weights(self) -> np.ndarray:
        return np.array([l.weight for l in self.labels], dtype=np.float64)

    def __len__(self) -> int:
        return len(self.labels)


@dataclass
class ProxyEntry:
    source: str  # "query" | "memory"
    memory_index: int | None
    embedding: np.ndarray


@dataclass
class ProxySet:
    """Query plus its nearest visual-memory rows; entry 0 is always the query."""

    entries: list[ProxyEntry]
    k: int
    degenerate: bool = False  # no memory available, query-only

    def embeddings(self) -> np.ndarray:
        return np.stack([np.asarray(e.embedding, dtype=np.float64) for e in self.entries])


def nn_invert(y: np.ndarray, text_memory: TextMemory, m: int) -> LabelSet:
    """The m nearest vocabulary words, all with weight 1.0."""
    if m < 1:
        raise DataError(f"m must be >= 1, got {m}")
    if len(text_memory) == 0:
        raise DataError("text memory is empty")
    neighbors = top_k(y, text_memory.embeddings, m)
    return LabelSet(labels=[Label(word_id=nb.index, weight=1.0) for nb in neighbors], provenance=PROVENANCE_PLAIN)


def expand_proxies(y: np.ndarray, memory: VisualMemory | None, k: int) -> ProxySet:
    """Query plus its k-1 nearest memory rows, skipping stored copies of the query."""
    if k < 1:
        raise DataError(f"k must be >= 1, got {k}")
    y = np.asarray(y, dtype=np.float64).reshape(-1)
    query_entry = ProxyEntry(source="query", memory_index=None, embedding=y)
    if memory is None:
        return ProxySet(entries=[query_entry], k=k, degenerate=k > 1)
    if k == 1:
        return ProxySet(entries=[query_entry], k=k)
    scores = all_scores(y, memory.embeddings)

    def collect(order):
        out = [query_entry]
        for i in order:
            if len(out) >= k:
                break
            if scores[i] >= DUPLICATE_SIM:
                continue
            out.append(ProxyEntry(source="memory", memory_index=int(i), embedding=memory.embeddings.row(i)))
        return out

    rows = memory.embeddings.rows
    prefix = top_indices(scores, min(rows, k + 4))
    entries = collect(prefix)
    if len(entries) < k and len(prefix) < rows:
        entries = collect(rank_indices(scores))  # many stored copies of the query
    return ProxySet(entries=entries, k=k)


def invert_proxies(proxies: ProxySet, text_memory: TextMemory, n: int, m: int) -> LabelSet:
    """Aggregate per-proxy word lists into the m most frequent words.

    Each proxy votes for its n nearest words; a word's count is the number
    of proxies that list it. Weights are count / max count, so the leading
    weight is always 1.0.
    """
    if n < 1 or m < 1:
        raise DataError(f"n and m must be >= 1, got n={n} m={m}")
    if len(text_memory) == 0:
        raise DataError("text memory is empty")
    scores = all_scores_multi(proxies.embeddings(), text_memory.embeddings)
    n_eff = min(n, len(text_memory))
    counts = np.zeros(len(text_memory), dtype=np.int64)
    for j in range(scores.shape[0]):
        counts[top_indices(scores[j], n_eff)] += 1
    candidates = np.nonzero(counts)[0]
    sims_to_query = scores[0]  # proxy 0 is the query itself
    order = sorted(candidates, key=lambda w: (-counts[w], -sims_to_query[w], w))
    chosen = order[: min(m, len(order))]
    top = counts[chosen[0]]
    return LabelSet(
        labels=[Label(word_id=int(w), weight=float(counts[w] / top)) for w in chosen],
        provenance=PROVENANCE_EXPANDED,
    )


def expanded_invert(
    y: np.ndarray, memory: VisualMemory | None, text_memory: TextMemory, k: int, n: int, m: int
) -> LabelSet:
    """Proxy expansion followed by frequency aggregation (the full inversion)."""
    return invert_proxies(expand_proxies(y, memory, k), text_memory, n, m)


def remove_nearest_words(text_memory: TextMemory, anchor: np.ndarray, ell: int) -> TextMemory:
    """Derived memory with the ell words nearest to ``anchor`` removed.

    ``source_ids`` of the result keep pointing at the original word ids, so
    removed words are the complement against the input memory.
    """
    if ell < 0:
        raise DataError(f"ell must be >= 0, got {ell}")
    if ell >= len(text_memory):
        raise DataError(f"cannot remove {ell} words from a {len(text_memory)}-word memory")
    if ell == 0:
        return text_memory
    removed = {nb.index for nb in top_k(anchor, text_memory.embeddings, ell)}
    keep = np.array([i for i in range(len(text_memory)) if i not in removed], dtype=np.int64)
    return TextMemory(
        words=[text_memory.words[i] for i in keep],
        embeddings=EmbeddingMatrix(text_memory.embeddings.data[keep]),
        source_ids=text_memory.source_ids[keep],
    )


INJECT_APPEND = "append"
INJECT_REPLACE_ALL = "replace_all"


def inject_label(labels: LabelSet, word_id: int, weight: float, mode: str) -> LabelSet:
    """Oracle label surgery: add a word, or replace the whole set with it."""
    if word_id < 0:
        raise DataError(f"invalid word id {word_id}")
    if weight <= 0:
        raise DataError(f"injected weight must be positive, got {weight}")
    if mode == INJECT_REPLACE_ALL:
        return LabelSet(labels=[Label(word_id=word_id, weight=1.0)], provenance=PROVENANCE_ORACLE)
    if mode != INJECT_APPEND:
        raise DataError(f"unknown injection mode {mode!r}")
    merged = {l.word_id: l.weight for l in labels.labels}
    merged[word_id] = max(weight, merged.get(word_id, 0.0))
    new = list(labels.labels)
    if any(l.word_id == word_id for l in new):
        new = [Label(l.word_id, merged[l.word_id]) for l in new]
    else:
        new.append(Label(word_id, weight))
    new.sort(key=lambda l: -l.weight)  # stable: injected label stays after equal weights
    return LabelSet(labels=new, provenance=PROVENANCE_ORACLE)
