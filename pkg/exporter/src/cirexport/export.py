"""Export pipelines: image embeddings + manifest, vocabulary + composed tables.

Output files follow the engine's formats exactly: FDEM matrices whose row
order matches manifest item order per split (database rows first in
manifest, then query rows), a vocab.fdem aligned with the vocabulary file's
line order, one composed table per domain (row i embeds
``word_i + " " + domain``), and a composed_index.json tying them together.
Class or domain names missing from the vocabulary go into the index's aux
section so the engine's oracle runs can resolve them.
"""

from __future__ import annotations

import hashlib
import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from PIL import Image

from .datasets import SPLIT_BOTH, SPLIT_DATABASE, SPLIT_QUERY, ImageRecord
from .fdem import unit_f32, write_fdem


@dataclass
class ExportJob:
    out_dir: Path
    encoder: object
    encoder_id: str = "toy"
    vocab_path: Path | None = None
    seed: int | None = None
    batch_size: int = 32


@dataclass
class ExportSummary:
    n_database: int = 0
    n_query: int = 0
    skipped: list[str] = field(default_factory=list)


def _readable(path: Path) -> bool:
    try:
        with Image.open(path) as img:
            img.verify()
        return True
    except Exception:
        return False


def export_images(job: ExportJob, records: list[ImageRecord]) -> ExportSummary:
    """Encode all records, write database/queries FDEM files and the manifest."""
    out = Path(job.out_dir)
    out.mkdir(parents=True, exist_ok=True)

    summary = ExportSummary()
    usable = []
    for r in records:
        if _readable(r.path):
            usable.append(r)
        else:
            summary.skipped.append(r.id)
    if not usable:
        raise ValueError("no readable images to export")

    paths = sorted({str(r.path) for r in usable})
    embeddings = unit_f32(job.encoder.encode_images(paths))
    by_path = {p: embeddings[i] for i, p in enumerate(paths)}

    class_names = sorted({r.class_name for r in usable})
    domain_names = sorted({r.domain_name for r in usable})
    class_id = {c: i for i, c in enumerate(class_names)}
    domain_id = {d: i for i, d in enumerate(domain_names)}

    db_rows, q_rows, items = [], [], []
    for split, rows in ((SPLIT_DATABASE, db_rows), (SPLIT_QUERY, q_rows)):
        for r in usable:
            if r.split in (split, SPLIT_BOTH):
                rows.append(by_path[str(r.path)])
                items.append({"id": r.id, "class": class_id[r.class_name], "domain": domain_id[r.domain_name], "split": split})
    if not db_rows or not q_rows:
        raise ValueError("export needs at least one database and one query item")
    summary.n_database, summary.n_query = len(db_rows), len(q_rows)

    write_fdem(out / "database.fdem", np.stack(db_rows))
    write_fdem(out / "queries.fdem", np.stack(q_rows))
    manifest = {
        "class_names": class_names,
        "domain_names": domain_names,
        "items": items,
        "meta": {
            "encoder": job.encoder_id,
            "seed": job.seed,
            "skipped": summary.skipped,
        },
    }
    (out / "manifest.json").write_text(json.dumps(manifest, sort_keys=True, indent=1), encoding="utf-8")
    return summary


def read_vocab(path: str | Path) -> list[str]:
    words = Path(path).read_text(encoding="utf-8").split("\n")
    if words and words[-1] == "":
        words.pop()
    if not words:
        raise ValueError(f"{path}: vocabulary file is empty")
    return words


def export_vocab_and_composed(job: ExportJob, manifest_path: str | Path) -> dict:
    """Write vocab.fdem, per-domain composed tables, aux tables, and the index."""
    if job.vocab_path is None:
        raise ValueError("job has no vocabulary path")
    out = Path(job.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    words = read_vocab(job.vocab_path)
    manifest = json.loads(Path(manifest_path).read_text(encoding="utf-8"))
    domains = list(manifest["domain_names"])
    classes = list(manifest["class_names"])

    write_fdem(out / "vocab.fdem", job.encoder.encode_texts(words))
    if (out / "vocab.txt").resolve() != Path(job.vocab_path).resolve():
        (out / "vocab.txt").write_text("\n".join(words) + "\n", encoding="utf-8")

    # pins the exact word-list revision the tables were built from
    vocab_sha = hashlib.sha256(Path(job.vocab_path).read_bytes()).hexdigest()
    index = {"vocab_rows": len(words), "vocab_sha256": vocab_sha, "tables": {}}
    for domain in domains:
        rows = job.encoder.encode_texts([f"{w} {domain}" for w in words])
        fname = f"composed_{domain}.fdem"
        write_fdem(out / fname, rows)
        index["tables"][domain] = fname

    in_vocab = set(words)
    aux_names = [n for n in classes + domains if n not in in_vocab]
    if aux_names:
        write_fdem(out / "aux_bare.fdem", job.encoder.encode_texts(aux_names))
        aux_tables = {}
        for domain in domains:
            fname = f"aux_{domain}.fdem"
            write_fdem(out / fname, job.encoder.encode_texts([f"{n} {domain}" for n in aux_names]))
            aux_tables[domain] = fname
        index["aux"] = {"names": aux_names, "bare": "aux_bare.fdem", "tables": aux_tables}

    (out / "composed_index.json").write_text(json.dumps(index, sort_keys=True, indent=1), encoding="utf-8")
    return index
