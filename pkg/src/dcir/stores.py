"""Immutable data stores: embedding matrices, vocabularies, manifests, bundles.

All embedding files share one binary layout (FDEM):

    magic   4 bytes  ``FDEM`` (0x46 0x44 0x45 0x4D)
    version u32 LE   must be 1
    dtype   u32 LE   must be 0 (float32)
    rows    u64 LE
    dim     u64 LE
    payload rows*dim little-endian float32, row-major, no padding, no footer

Every row is required to be unit-norm within ``NORM_TOL`` of 1.0; loading
validates this rather than silently repairing (pass ``renormalize=True`` to
divide rows by their norm instead, for third-party files).

Row identity conventions:
  * vocabulary embeddings: row i belongs to line i (0-based) of the vocab file
  * database/query embeddings: row j belongs to the j-th manifest item of the
    corresponding split, in manifest order
  * composed tables: row i is the embedding of ``word_i + " " + domain``
"""

from __future__ import annotations

import hashlib
import json
import struct
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import BundleError, CorruptionError, FormatError, NormalizationError

FDEM_MAGIC = b"FDEM"
FDEM_VERSION = 1
FDEM_DTYPE_F32 = 0
_HEADER = struct.Struct("<4sIIQQ")

NORM_TOL = 1e-3


@dataclass
class EmbeddingMatrix:
    """Dense row-major matrix of unit-norm float32 vectors.

    ``data`` is read-only after construction. ``f64()`` memoizes a float64
    copy for repeated full-matrix scans (the copy is also read-only).
    """

    data: np.ndarray
    _f64: np.ndarray | None = field(default=None, repr=False, compare=False)

    def __post_init__(self):
        data = np.ascontiguousarray(self.data, dtype=np.float32)
        if data.ndim != 2:
            raise FormatError(f"embedding matrix must be 2-D, got shape {data.shape}")
        if data.shape[0] < 1 or data.shape[1] < 1:
            raise FormatError(f"embedding matrix needs rows >= 1 and dim >= 1, got {data.shape}")
        data.flags.writeable = False
        object.__setattr__(self, "data", data)

    @property
    def rows(self) -> int:
        return self.data.shape[0]

    @property
    def dim(self) -> int:
        return self.data.shape[1]

    def f64(self) -> np.ndarray:
        if self._f64 is None:
            cast = self.data.astype(np.float64)
            cast.flags.writeable = False
            object.__setattr__(self, "_f64", cast)
        return self._f64

    def row(self, i: int) -> np.ndarray:
        return self.data[i]


def _check_norms(data: np.ndarray, origin: str) -> None:
    norms = np.linalg.norm(data.astype(np.float64), axis=1)
    # negated <= so NaN/inf norms are flagged too
    bad = np.where(~(np.abs(norms - 1.0) <= NORM_TOL))[0]
    if bad.size:
        i = int(bad[0])
        raise NormalizationError(
            f"{origin}: row {i} has norm {norms[i]:.6f}, outside [1-{NORM_TOL}, 1+{NORM_TOL}]"
            + (f" ({bad.size} rows total)" if bad.size > 1 else "")
        )


def _renormalize(data: np.ndarray, origin: str) -> np.ndarray:
    norms = np.linalg.norm(data.astype(np.float64), axis=1)
    bad = np.where(~np.isfinite(norms) | (norms == 0.0))[0]
    if bad.size:
        raise NormalizationError(f"{origin}: row {int(bad[0])} has norm {norms[bad[0]]}, cannot renormalize")
    return (data / norms[:, None].astype(np.float32)).astype(np.float32)


def new_matrix(data: np.ndarray, origin: str = "matrix", renormalize: bool = False) -> EmbeddingMatrix:
    """Wrap an array as a validated EmbeddingMatrix."""
    arr = np.ascontiguousarray(data, dtype=np.float32)
    if renormalize:
        if arr.ndim != 2:
            raise FormatError(f"{origin}: expected 2-D array, got shape {arr.shape}")
        arr = _renormalize(arr, origin)
    m = EmbeddingMatrix(arr)
    if not renormalize:
        _check_norms(m.data, origin)
    return m


def load_matrix(path: str | Path, renormalize: bool = False) -> EmbeddingMatrix:
    """Read one FDEM file into an immutable, norm-validated matrix."""
    path = Path(path)
    blob = path.read_bytes()
    if len(blob) < _HEADER.size:
        raise CorruptionError(f"{path}: file shorter than the {_HEADER.size}-byte header")
    magic, version, dtype, rows, dim = _HEADER.unpack_from(blob)
    if magic != FDEM_MAGIC:
        raise FormatError(f"{path}: bad magic {magic!r}, expected {FDEM_MAGIC!r}")
    if version != FDEM_VERSION:
        raise FormatError(f"{path}: unsupported version {version}, expected {FDEM_VERSION}")
    if dtype != FDEM_DTYPE_F32:
        raise FormatError(f"{path}: unsupported dtype code {dtype}, expected {FDEM_DTYPE_F32}")
    if rows < 1 or dim < 1:
        raise FormatError(f"{path}: rows and dim must be >= 1, got rows={rows} dim={dim}")
    expected = _HEADER.size + rows * dim * 4
    if len(blob) != expected:
        raise CorruptionError(f"{path}: payload is {len(blob) - _HEADER.size} bytes, header declares {rows * dim * 4}")
    data = np.frombuffer(blob, dtype="<f4", count=rows * dim, offset=_HEADER.size).reshape(rows, dim)
    return new_matrix(data, origin=str(path), renormalize=renormalize)


def write_matrix(path: str | Path, matrix: EmbeddingMatrix | np.ndarray) -> None:
    """Write a matrix in the FDEM layout (bit-exact round-trip with load_matrix)."""
    data = matrix.data if isinstance(matrix, EmbeddingMatrix) else np.ascontiguousarray(matrix, dtype=np.float32)
    header = _HEADER.pack(FDEM_MAGIC, FDEM_VERSION, FDEM_DTYPE_F32, data.shape[0], data.shape[1])
    payload = data.astype("<f4", copy=False).tobytes(order="C")
    Path(path).write_bytes(header + payload)


@dataclass
class TextMemory:
    """Vocabulary words paired with their embeddings, index == word id.

    Memories derived by removing words keep ``source_ids`` pointing at the
    original word ids so reports can still name words consistently.
    """

    words: list[str]
    embeddings: EmbeddingMatrix
    source_ids: np.ndarray | None = None

    def __post_init__(self):
        if len(self.words) != self.embeddings.rows:
            raise BundleError(f"text memory has {len(self.words)} words but {self.embeddings.rows} embedding rows")
        if len(set(self.words)) != len(self.words):
            seen, dup = set(), None
            for w in self.words:
                if w in seen:
                    dup = w
                    break
                seen.add(w)
            raise FormatError(f"duplicate vocabulary word: {dup!r}")
        if self.source_ids is None:
            self.source_ids = np.arange(len(self.words), dtype=np.int64)
        self.source_ids = np.asarray(self.source_ids, dtype=np.int64)
        self.source_ids.flags.writeable = False

    def __len__(self) -> int:
        return len(self.words)


@dataclass
class VisualMemory:
    """External image embedding set used for query expansion."""

    image_ids: list[str]
    embeddings: EmbeddingMatrix

    def __post_init__(self):
        if len(self.image_ids) != self.embeddings.rows:
            raise BundleError(f"visual memory has {len(self.image_ids)} ids but {self.embeddings.rows} rows")
        if len(set(self.image_ids)) != len(self.image_ids):
            raise FormatError("visual memory ids are not unique")


@dataclass
class ComposedTable:
    """Precomputed embeddings of every ``word + " " + domain`` string for one domain."""

    domain: str
    embeddings: EmbeddingMatrix


SPLIT_QUERY = "query"
SPLIT_DATABASE = "database"


@dataclass(frozen=True)
class ManifestItem:
    id: str
    class_id: int
    domain_id: int
    split: str


@dataclass
class DatasetManifest:
    """Per-image id/class/domain/split records; defines relevance for evaluation."""

    items: list[ManifestItem]
    class_names: list[str]
    domain_names: list[str]

    def __post_init__(self):
        # ids are unique per split; the same image may serve as query and
        # database item, in which case ranking excludes it from its own results
        for split in (SPLIT_QUERY, SPLIT_DATABASE):
            ids = [it.id for it in self.items if it.split == split]
            if len(set(ids)) != len(ids):
                raise FormatError(f"manifest {split} ids are not unique")
        for it in self.items:
            if not (0 <= it.class_id < len(self.class_names)):
                raise FormatError(f"item {it.id}: class id {it.class_id} out of bounds")
            if not (0 <= it.domain_id < len(self.domain_names)):
                raise FormatError(f"item {it.id}: domain id {it.domain_id} out of bounds")
            if it.split not in (SPLIT_QUERY, SPLIT_DATABASE):
                raise FormatError(f"item {it.id}: unknown split {it.split!r}")
        if not any(it.split == SPLIT_QUERY for it in self.items):
            raise FormatError("manifest has no query items")
        if not any(it.split == SPLIT_DATABASE for it in self.items):
            raise FormatError("manifest has no database items")

    def split_items(self, split: str) -> list[ManifestItem]:
        return [it for it in self.items if it.split == split]


def load_manifest(path: str | Path) -> DatasetManifest:
    raw = json.loads(Path(path).read_text(encoding="utf-8"))
    try:
        items = [
            ManifestItem(id=str(it["id"]), class_id=int(it["class"]), domain_id=int(it["domain"]), split=str(it["split"]))
            for it in raw["items"]
        ]
        return DatasetManifest(items=items, class_names=list(raw["class_names"]), domain_names=list(raw["domain_names"]))
    except (KeyError, TypeError) as exc:
        raise FormatError(f"{path}: manifest missing field {exc}") from exc


def load_vocab(path: str | Path) -> list[str]:
    """One word per line, LF endings; 0-based line number is the word id."""
    text = Path(path).read_text(encoding="utf-8")
    words = text.split("\n")
    if words and words[-1] == "":
        words.pop()
    if not words:
        raise FormatError(f"{path}: vocabulary file is empty")
    return words


@dataclass
class AuxMemory:
    """Out-of-vocabulary phrases (class/domain names) with bare and composed embeddings.

    Needed when oracle labels or baseline text queries are strings absent
    from the vocabulary; resolution ids start at ``len(vocab)``.
    """

    names: list[str]
    bare: EmbeddingMatrix
    tables: dict[str, EmbeddingMatrix]

    def __post_init__(self):
        if len(self.names) != self.bare.rows:
            raise BundleError(f"aux memory has {len(self.names)} names but {self.bare.rows} bare rows")
        for domain, table in self.tables.items():
            if table.rows != len(self.names):
                raise BundleError(f"aux table for {domain!r} has {table.rows} rows, expected {len(self.names)}")


@dataclass
class Bundle:
    """Everything one dataset needs to answer queries, loaded and cross-checked."""

    manifest: DatasetManifest
    database: VisualMemory
    queries: VisualMemory
    vocab: TextMemory
    composed: dict[str, ComposedTable]
    aux: AuxMemory | None = None
    file_hashes: dict[str, str] = field(default_factory=dict)

    @property
    def dim(self) -> int:
        return self.database.embeddings.dim

    def query_index(self) -> dict[str, int]:
        return {v: i for i, v in enumerate(self.queries.image_ids)}

    def database_index(self) -> dict[str, int]:
        return {v: i for i, v in enumerate(self.database.image_ids)}

    def resolve_text(self, text: str) -> int | None:
        """Map a string to a label id: vocab word id, or len(vocab)+i for aux names."""
        try:
            return self.vocab.words.index(text)
        except ValueError:
            pass
        if self.aux is not None and text in self.aux.names:
            return len(self.vocab) + self.aux.names.index(text)
        return None

    def label_text(self, label_id: int) -> str:
        if label_id < len(self.vocab):
            return self.vocab.words[label_id]
        if self.aux is not None and label_id - len(self.vocab) < len(self.aux.names):
            return self.aux.names[label_id - len(self.vocab)]
        raise BundleError(f"label id {label_id} out of range")

    def bare_text_embedding(self, text: str) -> np.ndarray:
        """Embedding of a bare string (vocab row or aux row), for unimodal baselines."""
        label = self.resolve_text(text)
        if label is None:
            raise BundleError(
                f"string {text!r} is neither a vocabulary word nor an aux name; "
                "baselines need its bare embedding in the bundle"
            )
        if label < len(self.vocab):
            return self.vocab.embeddings.row(label)
        return self.aux.bare.row(label - len(self.vocab))


def file_sha256(path: str | Path) -> str:
    h = hashlib.sha256()
    h.update(Path(path).read_bytes())
    return h.hexdigest()


def _resolve(base: Path, ref: str) -> Path:
    p = Path(ref)
    return p if p.is_absolute() else base / p


def load_bundle(
    manifest_path: str | Path,
    db_emb: str | Path,
    query_emb: str | Path,
    vocab_path: str | Path,
    vocab_emb: str | Path,
    composed_index: str | Path,
    renormalize: bool = False,
) -> Bundle:
    """Load and cross-validate all stores referenced by a composed index.

    The composed index JSON must carry ``vocab_rows`` and ``tables``
    (domain name -> FDEM path, relative to the index file). Optional keys:
    ``domain_table`` (bare domain-name embeddings, manifest domain order)
    and ``aux`` ({names, bare, tables}) for strings outside the vocabulary.
    """
    manifest = load_manifest(manifest_path)
    db = load_matrix(db_emb, renormalize=renormalize)
    qm = load_matrix(query_emb, renormalize=renormalize)
    words = load_vocab(vocab_path)
    vm = load_matrix(vocab_emb, renormalize=renormalize)

    db_items = manifest.split_items(SPLIT_DATABASE)
    q_items = manifest.split_items(SPLIT_QUERY)
    if db.rows != len(db_items):
        raise BundleError(f"database matrix has {db.rows} rows but manifest lists {len(db_items)} database items")
    if qm.rows != len(q_items):
        raise BundleError(f"query matrix has {qm.rows} rows but manifest lists {len(q_items)} query items")
    if qm.dim != db.dim:
        raise BundleError(f"query dim {qm.dim} != database dim {db.dim}")
    if vm.dim != db.dim:
        raise BundleError(f"vocabulary embedding dim {vm.dim} != database dim {db.dim}")
    if vm.rows != len(words):
        raise BundleError(f"vocabulary has {len(words)} words but embedding matrix has {vm.rows} rows")

    index_path = Path(composed_index)
    raw = json.loads(index_path.read_text(encoding="utf-8"))
    try:
        vocab_rows = int(raw["vocab_rows"])
        table_refs = dict(raw["tables"])
    except (KeyError, TypeError) as exc:
        raise FormatError(f"{index_path}: composed index missing field {exc}") from exc
    if vocab_rows != len(words):
        raise BundleError(f"composed index declares vocab_rows={vocab_rows}, vocabulary has {len(words)} words")

    base = index_path.parent
    for domain in table_refs:
        if domain not in manifest.domain_names:
            raise BundleError(f"composed index names unknown domain {domain!r}")
    composed: dict[str, ComposedTable] = {}
    hashes = {
        "manifest": file_sha256(manifest_path),
        "db_emb": file_sha256(db_emb),
        "query_emb": file_sha256(query_emb),
        "vocab": file_sha256(vocab_path),
        "vocab_emb": file_sha256(vocab_emb),
        "composed_index": file_sha256(composed_index),
    }
    for domain in manifest.domain_names:
        if domain not in table_refs:
            raise BundleError(f"no composed table for domain {domain!r}")
        tpath = _resolve(base, table_refs[domain])
        table = load_matrix(tpath, renormalize=renormalize)
        if table.rows != len(words):
            raise BundleError(f"composed table for {domain!r} has {table.rows} rows, vocabulary has {len(words)}")
        if table.dim != db.dim:
            raise BundleError(f"composed table for {domain!r} has dim {table.dim}, database has {db.dim}")
        composed[domain] = ComposedTable(domain=domain, embeddings=table)
        hashes[f"composed[{domain}]"] = file_sha256(tpath)

    aux = None
    if "aux" in raw and raw["aux"] is not None:
        try:
            names = list(raw["aux"]["names"])
            bare = load_matrix(_resolve(base, raw["aux"]["bare"]), renormalize=renormalize)
            aux_tables = {
                d: load_matrix(_resolve(base, p), renormalize=renormalize) for d, p in dict(raw["aux"]["tables"]).items()
            }
        except (KeyError, TypeError) as exc:
            raise FormatError(f"{index_path}: aux section missing field {exc}") from exc
        for d, t in aux_tables.items():
            if d not in manifest.domain_names:
                raise BundleError(f"aux table names unknown domain {d!r}")
            if t.dim != db.dim:
                raise BundleError(f"aux table for {d!r} has dim {t.dim}, database has {db.dim}")
        if bare.dim != db.dim:
            raise BundleError(f"aux bare embedding dim {bare.dim} != database dim {db.dim}")
        aux = AuxMemory(names=names, bare=bare, tables=aux_tables)

    db_ids = [it.id for it in db_items]
    q_ids = [it.id for it in q_items]
    return Bundle(
        manifest=manifest,
        database=VisualMemory(image_ids=db_ids, embeddings=db),
        queries=VisualMemory(image_ids=q_ids, embeddings=qm),
        vocab=TextMemory(words=words, embeddings=vm),
        composed=composed,
        aux=aux,
        file_hashes=hashes,
    )
