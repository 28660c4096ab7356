"""Training-free composed image retrieval for domain conversion.

The engine runs entirely on precomputed embeddings: it inverts a query
image into vocabulary words by nearest-neighbor search, expands it through
proxy images in a visual memory, composes weighted per-word text queries
for the target domain, and ranks a database by cosine similarity.
"""

from .compose import ComposedQuery, QueryParams, run_query
from .evalbench import average_precision, benchmark, enumerate_queries, histogram, oracle_run, recall_at_k, sweep
from .inversion import LabelSet, expand_proxies, expanded_invert, inject_label, nn_invert, remove_nearest_words
from .knn import Neighbor, all_scores, top_k
from .stores import Bundle, EmbeddingMatrix, TextMemory, VisualMemory, load_bundle, load_matrix, write_matrix

__all__ = [
    "Bundle",
    "ComposedQuery",
    "EmbeddingMatrix",
    "LabelSet",
    "Neighbor",
    "QueryParams",
    "TextMemory",
    "VisualMemory",
    "all_scores",
    "average_precision",
    "benchmark",
    "enumerate_queries",
    "expand_proxies",
    "expanded_invert",
    "histogram",
    "inject_label",
    "load_bundle",
    "load_matrix",
    "nn_invert",
    "oracle_run",
    "recall_at_k",
    "remove_nearest_words",
    "run_query",
    "sweep",
    "top_k",
    "write_matrix",
]
