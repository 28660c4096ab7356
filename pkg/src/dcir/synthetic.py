"""Synthetic benchmark bundles with known geometry.

Every (class, domain) pair gets its own orthonormal direction; database and
query embeddings are noisy copies of their cluster direction. The
vocabulary holds one word per class (correlated with all domains of that
class), one word per domain (with an extra non-visual component, so domain
words are not systematically the strongest labels), and filler words
confined to the subspace no image occupies (an off-topic label then adds
mass no database item responds to). Composed-table rows for class words
point at the exact (class, domain) direction, so a correct inversion plus
late fusion ranks the right cluster first; filler rows follow the word's
class affinity, like a real text encoder would.

Knobs degrade the construction on purpose: ``class_word_noise`` makes
inversion unreliable, ``source_bleed`` leaks the source-domain word into
query neighborhoods (the conflicting-domain failure mode), and
``class_names_in_vocab=False`` moves class names into the aux tables.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .stores import (
    AuxMemory,
    Bundle,
    ComposedTable,
    DatasetManifest,
    ManifestItem,
    TextMemory,
    VisualMemory,
    new_matrix,
    write_matrix,
)

CLASS_NAME_POOL = [
    "shark", "heron", "badger", "orchid", "castle", "violin",
    "glacier", "lantern", "beetle", "comet", "anchor", "walrus",
    "bonsai", "turbine", "falcon", "mosaicfish",
]
DOMAIN_NAME_POOL = ["sketch", "origami", "cartoon", "sculpture", "fresco", "tapestry"]


def _unit_rows(rows: np.ndarray) -> np.ndarray:
    return rows / np.linalg.norm(rows, axis=-1, keepdims=True)


@dataclass
class SyntheticBundle:
    bundle: Bundle
    directions: np.ndarray  # (classes, domains, dim) orthonormal cluster axes
    config: dict
    _bare: dict = field(default_factory=dict, repr=False)

    def string_fn(self, text: str):
        """Stand-in text encoder: mean of the known per-token directions.

        The last whitespace token is treated as the domain; merging all
        words into one vector reproduces early fusion's domain mixing.
        """
        tokens = text.split(" ")
        acc = np.zeros(self.directions.shape[-1], dtype=np.float64)
        for tok in tokens:
            acc += self._bare.get(tok, np.zeros_like(acc))
        norm = np.linalg.norm(acc)
        if norm == 0:
            rng = np.random.default_rng(abs(hash(text)) % (2**32))
            acc = rng.standard_normal(self.directions.shape[-1])
            norm = np.linalg.norm(acc)
        return acc / norm


def make_bundle(
    n_classes: int = 6,
    n_domains: int = 4,
    per_cluster: int = 10,
    queries_per_cluster: int = 2,
    dim: int = 64,
    noise: float = 0.05,
    n_fillers: int = 30,
    seed: int = 0,
    class_word_noise: float = 0.0,
    source_bleed: float = 0.0,
    class_names_in_vocab: bool = True,
) -> SyntheticBundle:
    if n_classes > len(CLASS_NAME_POOL) or n_domains > len(DOMAIN_NAME_POOL):
        raise ValueError("not enough names in the pools for the requested sizes")
    if n_classes * n_domains + n_domains > dim:
        raise ValueError(f"dim={dim} too small for {n_classes}x{n_domains} orthonormal directions")
    rng = np.random.default_rng(seed)
    class_names = CLASS_NAME_POOL[:n_classes]
    domain_names = DOMAIN_NAME_POOL[:n_domains]

    basis, _ = np.linalg.qr(rng.standard_normal((dim, dim)))
    dirs = basis.T[: n_classes * n_domains].reshape(n_classes, n_domains, dim)
    # abstract directions keep domain words textual rather than image-like
    abstract = basis.T[n_classes * n_domains : n_classes * n_domains + n_domains]

    # bare "text embeddings" of the known words
    class_vecs = _unit_rows(dirs.sum(axis=1) + class_word_noise * rng.standard_normal((n_classes, dim)))
    domain_vecs = _unit_rows(dirs.sum(axis=0) + 2.0 * np.sqrt(n_classes) * abstract)
    # off-topic words live outside the image-cluster subspace, so picking
    # them up as labels adds mass that no database item responds to
    complement = basis.T[n_classes * n_domains + n_domains :]
    if complement.shape[0] < 2:
        raise ValueError(f"dim={dim} leaves no room for filler words")
    filler_vecs = _unit_rows(rng.standard_normal((n_fillers, complement.shape[0])) @ complement)
    filler_names = [f"filler{i:03d}" for i in range(n_fillers)]

    items: list[ManifestItem] = []
    db_rows, q_rows = [], []
    for c in range(n_classes):
        for d in range(n_domains):
            center = dirs[c, d]
            for j in range(per_cluster):
                db_rows.append(center + noise * rng.standard_normal(dim))
                items.append(ManifestItem(id=f"db_{len(db_rows)-1:05d}", class_id=c, domain_id=d, split="database"))
    for c in range(n_classes):
        for d in range(n_domains):
            center = dirs[c, d]
            for j in range(queries_per_cluster):
                y = center + noise * rng.standard_normal(dim)
                if source_bleed:
                    y = y + source_bleed * domain_vecs[d]
                q_rows.append(y)
                items.append(ManifestItem(id=f"q_{len(q_rows)-1:05d}", class_id=c, domain_id=d, split="query"))

    vocab_words = list(domain_names) + list(filler_names)
    vocab_vecs = [domain_vecs, filler_vecs]
    if class_names_in_vocab:
        vocab_words = list(class_names) + vocab_words
        vocab_vecs = [class_vecs] + vocab_vecs
    vocab_emb = np.concatenate(vocab_vecs, axis=0)

    def composed_row(word: str, d: int) -> np.ndarray:
        if word in class_names:
            return dirs[class_names.index(word), d]
        if word in domain_names:
            # a domain word composed with the target spreads mass over both domains
            s = domain_names.index(word)
            return _unit_rows(dirs[:, s].sum(axis=0) + dirs[:, d].sum(axis=0))
        # composing a generic word with a domain lands near the classes the
        # word itself is close to, like a real text encoder would
        f = filler_vecs[filler_names.index(word)]
        affinity = np.clip(class_vecs @ f, 0.0, None) ** 2
        return _unit_rows(affinity @ dirs[:, d] + 0.02 * f)

    composed = {}
    for d, dname in enumerate(domain_names):
        rows = np.stack([composed_row(w, d) for w in vocab_words])
        composed[dname] = ComposedTable(domain=dname, embeddings=new_matrix(_unit_rows(rows), origin=f"composed[{dname}]"))

    aux = None
    if not class_names_in_vocab:
        aux_tables = {
            dname: new_matrix(_unit_rows(dirs[:, d]), origin=f"aux[{dname}]")
            for d, dname in enumerate(domain_names)
        }
        aux = AuxMemory(names=list(class_names), bare=new_matrix(class_vecs, origin="aux bare"), tables=aux_tables)

    manifest = DatasetManifest(items=items, class_names=class_names, domain_names=domain_names)
    db_items = [it for it in items if it.split == "database"]
    q_items = [it for it in items if it.split == "query"]
    bundle = Bundle(
        manifest=manifest,
        database=VisualMemory(image_ids=[it.id for it in db_items], embeddings=new_matrix(_unit_rows(np.stack(db_rows)))),
        queries=VisualMemory(image_ids=[it.id for it in q_items], embeddings=new_matrix(_unit_rows(np.stack(q_rows)))),
        vocab=TextMemory(words=vocab_words, embeddings=new_matrix(vocab_emb)),
        composed=composed,
        aux=aux,
        file_hashes={"synthetic_seed": str(seed)},
    )
    sb = SyntheticBundle(
        bundle=bundle,
        directions=dirs,
        config={
            "n_classes": n_classes,
            "n_domains": n_domains,
            "per_cluster": per_cluster,
            "queries_per_cluster": queries_per_cluster,
            "dim": dim,
            "noise": noise,
            "n_fillers": n_fillers,
            "seed": seed,
            "class_word_noise": class_word_noise,
            "source_bleed": source_bleed,
        },
    )
    bare = {w: vocab_emb[i] for i, w in enumerate(vocab_words)}
    for c, name in enumerate(class_names):
        bare.setdefault(name, class_vecs[c])
    sb._bare = bare
    return sb


def write_bundle(sb: SyntheticBundle, out_dir: str | Path) -> dict[str, str]:
    """Serialize a synthetic bundle into engine-loadable files; returns the paths."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    b = sb.bundle
    paths = {
        "manifest": str(out / "manifest.json"),
        "db_emb": str(out / "database.fdem"),
        "query_emb": str(out / "queries.fdem"),
        "vocab": str(out / "vocab.txt"),
        "vocab_emb": str(out / "vocab.fdem"),
        "composed_index": str(out / "composed_index.json"),
    }
    manifest_doc = {
        "class_names": b.manifest.class_names,
        "domain_names": b.manifest.domain_names,
        "items": [
            {"id": it.id, "class": it.class_id, "domain": it.domain_id, "split": it.split} for it in b.manifest.items
        ],
    }
    Path(paths["manifest"]).write_text(json.dumps(manifest_doc, sort_keys=True, indent=1), encoding="utf-8")
    write_matrix(paths["db_emb"], b.database.embeddings)
    write_matrix(paths["query_emb"], b.queries.embeddings)
    Path(paths["vocab"]).write_text("\n".join(b.vocab.words) + "\n", encoding="utf-8")
    write_matrix(paths["vocab_emb"], b.vocab.embeddings)
    index = {"vocab_rows": len(b.vocab.words), "tables": {}}
    for dname, table in b.composed.items():
        fname = f"composed_{dname}.fdem"
        write_matrix(out / fname, table.embeddings)
        index["tables"][dname] = fname
    if b.aux is not None:
        write_matrix(out / "aux_bare.fdem", b.aux.bare)
        aux_tables = {}
        for dname, table in b.aux.tables.items():
            fname = f"aux_{dname}.fdem"
            write_matrix(out / fname, table)
            aux_tables[dname] = fname
        index["aux"] = {"names": b.aux.names, "bare": "aux_bare.fdem", "tables": aux_tables}
    Path(paths["composed_index"]).write_text(json.dumps(index, sort_keys=True, indent=1), encoding="utf-8")
    return paths
