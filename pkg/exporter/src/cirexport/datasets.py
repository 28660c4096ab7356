"""Dataset adapters: turn image folders into (id, class, domain, split) records.

All adapters walk sorted paths, so record order is deterministic for a
given tree. ``split`` may be ``both``: the image is a database item and
also queries against the rest (the engine drops it from its own ranking).

Layouts:
  * generic / nico / minidomainnet / ltll: ``root/<domain>/<class>/<image>``
  * imagenet_r: ``root/<class>/<domain>_<anything>.<ext>`` with an optional
    separate ``photo_root/<class>/<image>`` tree mapped to domain ``photo``
"""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path

import numpy as np

IMAGE_EXTS = {".jpg", ".jpeg", ".png", ".bmp", ".webp"}

SPLIT_QUERY = "query"
SPLIT_DATABASE = "database"
SPLIT_BOTH = "both"


@dataclass(frozen=True)
class ImageRecord:
    id: str
    class_name: str
    domain_name: str
    split: str
    path: Path


def _images_under(folder: Path):
    return sorted(p for p in folder.rglob("*") if p.suffix.lower() in IMAGE_EXTS)


def _tree_records(root: Path) -> list[ImageRecord]:
    root = Path(root)
    records = []
    for domain_dir in sorted(p for p in root.iterdir() if p.is_dir()):
        for class_dir in sorted(p for p in domain_dir.iterdir() if p.is_dir()):
            for img in _images_under(class_dir):
                rid = img.relative_to(root).as_posix()
                records.append(ImageRecord(rid, class_dir.name, domain_dir.name, SPLIT_BOTH, img))
    if not records:
        raise ValueError(f"no images found under {root} (expected domain/class/image)")
    return records


def _apply_query_list(records: list[ImageRecord], listed: set[str]) -> list[ImageRecord]:
    out = []
    for r in records:
        split = SPLIT_QUERY if r.id in listed else SPLIT_DATABASE
        out.append(ImageRecord(r.id, r.class_name, r.domain_name, split, r.path))
    return out


def _apply_query_fraction(records: list[ImageRecord], fraction: float, seed: int) -> list[ImageRecord]:
    rng = np.random.default_rng(seed)
    n_query = max(1, int(round(fraction * len(records))))
    chosen = set(rng.choice(len(records), size=n_query, replace=False).tolist())
    return [
        ImageRecord(r.id, r.class_name, r.domain_name, SPLIT_QUERY if i in chosen else SPLIT_DATABASE, r.path)
        for i, r in enumerate(records)
    ]


def generic(root, query_fraction=None, query_list=None, seed=0) -> list[ImageRecord]:
    records = _tree_records(Path(root))
    if query_list is not None:
        listed = {line.split()[0] for line in Path(query_list).read_text(encoding="utf-8").splitlines() if line.strip()}
        return _apply_query_list(records, listed)
    if query_fraction is not None:
        return _apply_query_fraction(records, query_fraction, seed)
    return records


def nico(root, query_fraction=0.1, seed=0) -> list[ImageRecord]:
    """Context-domain tree; a seeded random fraction becomes the query set."""
    return generic(root, query_fraction=query_fraction, seed=seed)


def minidomainnet(root, test_list) -> list[ImageRecord]:
    """Official test-list lines (``<relative path> [label]``) become the query set."""
    if test_list is None:
        raise ValueError("minidomainnet needs --query-list (the official test list)")
    return generic(root, query_list=test_list)


def ltll(root) -> list[ImageRecord]:
    """today/archive location tree; every image queries against all the rest."""
    records = _tree_records(Path(root))
    unknown = {r.domain_name for r in records} - {"today", "archive"}
    if unknown:
        raise ValueError(f"ltll expects domains today/archive, found {sorted(unknown)}")
    return records


def imagenet_r(root, photo_root=None, domains=("cartoon", "origami", "sculpture", "toy")) -> list[ImageRecord]:
    """Rendition tags come from filename prefixes, classes from folder names."""
    root = Path(root)
    records = []
    for class_dir in sorted(p for p in root.iterdir() if p.is_dir()):
        for img in _images_under(class_dir):
            tag = img.stem.split("_", 1)[0].lower()
            if tag not in domains:
                continue
            rid = img.relative_to(root).as_posix()
            records.append(ImageRecord(rid, class_dir.name, tag, SPLIT_BOTH, img))
    if photo_root is not None:
        photo_root = Path(photo_root)
        for class_dir in sorted(p for p in photo_root.iterdir() if p.is_dir()):
            for img in _images_under(class_dir):
                rid = "photo/" + img.relative_to(photo_root).as_posix()
                records.append(ImageRecord(rid, class_dir.name, "photo", SPLIT_BOTH, img))
    if not records:
        raise ValueError(f"no rendition images found under {root}")
    return records


ADAPTERS = {
    "generic": generic,
    "imagenet-r": imagenet_r,
    "minidomainnet": minidomainnet,
    "nico": nico,
    "ltll": ltll,
}
