"""Binary formats, dataset manifests and the on-disk template store.

Embedding file (``EMB1``)::

    magic "EMB1" | version u16 | dim u32 | count u64 | count*dim f32

Model-template file (``MOTE``)::

    magic "MOTE" | version u16 | id_len u16 + utf-8 id | 4 x u32 layer dims
    | balancing_factor f32 | digest_len u16 + digest | 73,985 f32

All integers and floats are little-endian.
"""

from __future__ import annotations

import json
import os
import struct
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

from .errors import (
    FormatVersionError,
    IoFailure,
    MagicMismatch,
    ManifestError,
    NonFiniteValue,
    TruncatedFile,
)

EMB_MAGIC = b"EMB1"
EMB_VERSION = 1
_EMB_HEADER = struct.Struct("<4sHIQ")

MOTE_MAGIC = b"MOTE"
MOTE_VERSION = 1
LAYER_DIMS = (512, 128, 64, 1)

SPLITS = ("Auxiliary", "Enroll", "Probe")
ATTRIBUTES = ("Female", "Male")


def param_count(layer_dims: Sequence[int]) -> int:
    return sum(a * b + b for a, b in zip(layer_dims[:-1], layer_dims[1:]))


N_WEIGHTS = param_count(LAYER_DIMS)  # 73,985


# --------------------------------------------------------------------------
# embeddings


def encode_embeddings(embeddings) -> bytes:
    arr = np.ascontiguousarray(embeddings, dtype="<f4")
    if arr.ndim != 2:
        raise ValueError(f"expected a 2-d array, got shape {arr.shape}")
    if not np.all(np.isfinite(arr)):
        raise NonFiniteValue("embeddings contain non-finite values")
    count, dim = arr.shape
    return _EMB_HEADER.pack(EMB_MAGIC, EMB_VERSION, dim, count) + arr.tobytes()


def decode_embeddings(buf: bytes) -> tuple[int, np.ndarray]:
    if len(buf) < _EMB_HEADER.size:
        if buf[:4] != EMB_MAGIC[: len(buf[:4])]:
            raise MagicMismatch("bad magic at byte offset 0")
        raise TruncatedFile(f"header truncated at byte offset {len(buf)}")
    magic, version, dim, count = _EMB_HEADER.unpack_from(buf, 0)
    if magic != EMB_MAGIC:
        raise MagicMismatch(f"bad magic {magic!r} at byte offset 0")
    if version != EMB_VERSION:
        raise FormatVersionError(f"unsupported EMB version {version} at byte offset 4")
    need = _EMB_HEADER.size + 4 * dim * count
    if len(buf) < need:
        raise TruncatedFile(
            f"payload truncated at byte offset {len(buf)} (expected {need} bytes)"
        )
    arr = np.frombuffer(buf, dtype="<f4", count=dim * count, offset=_EMB_HEADER.size)
    bad = np.flatnonzero(~np.isfinite(arr))
    if bad.size:
        off = _EMB_HEADER.size + 4 * int(bad[0])
        raise NonFiniteValue(f"non-finite value at byte offset {off}")
    return dim, arr.reshape(count, dim).astype(np.float32)


def load_embedding_file(path) -> tuple[int, np.ndarray]:
    """Read an EMB1 file; returns ``(dim, array of shape (count, dim))``."""
    try:
        buf = Path(path).read_bytes()
    except OSError as e:
        raise IoFailure(str(e)) from e
    return decode_embeddings(buf)


def save_embedding_file(path, embeddings) -> int:
    data = encode_embeddings(embeddings)
    _atomic_write(Path(path), data)
    return len(data)


# --------------------------------------------------------------------------
# manifest


@dataclass(frozen=True)
class ManifestRow:
    row: int
    identity: str
    attribute: str
    split: str


@dataclass(frozen=True)
class DatasetManifest:
    dim: int
    normalized: bool
    rows: tuple[ManifestRow, ...]

    def to_json(self) -> str:
        doc = {
            "dim": self.dim,
            "normalized": self.normalized,
            "rows": [
                {"row": r.row, "identity": r.identity, "attribute": r.attribute, "split": r.split}
                for r in self.rows
            ],
        }
        return json.dumps(doc, indent=1, sort_keys=True) + "\n"

    @classmethod
    def from_json(cls, text: str) -> "DatasetManifest":
        try:
            doc = json.loads(text)
            rows = tuple(
                ManifestRow(int(r["row"]), str(r["identity"]), str(r["attribute"]), str(r["split"]))
                for r in doc["rows"]
            )
            return cls(int(doc["dim"]), bool(doc["normalized"]), rows)
        except (KeyError, TypeError, ValueError) as e:
            raise ManifestError(f"malformed manifest: {e}") from e

    def attributes(self) -> dict[str, str]:
        return {r.identity: r.attribute for r in self.rows}

    def identities(self, split: str) -> list[str]:
        seen = dict.fromkeys(r.identity for r in self.rows if r.split == split)
        return list(seen)

    def rows_in(self, split: str) -> list[ManifestRow]:
        return [r for r in self.rows if r.split == split]

    def validate(self, count: int | None = None) -> None:
        """Raise :class:`ManifestError` if any manifest invariant is broken."""
        if self.dim <= 0:
            raise ManifestError("dim must be positive")
        idx = sorted(r.row for r in self.rows)
        n = len(idx) if count is None else count
        if idx != list(range(n)):
            raise ManifestError("row indices are not a permutation of 0..count-1")
        attrs: dict[str, str] = {}
        for r in self.rows:
            if not r.identity:
                raise ManifestError(f"row {r.row}: empty identity")
            if r.split not in SPLITS:
                raise ManifestError(f"row {r.row}: unknown split {r.split!r}")
            if attrs.setdefault(r.identity, r.attribute) != r.attribute:
                raise ManifestError(f"identity {r.identity!r} has conflicting attributes")
        aux = set(self.identities("Auxiliary"))
        rest = set(self.identities("Enroll")) | set(self.identities("Probe"))
        overlap = aux & rest
        if overlap:
            raise ManifestError(
                f"auxiliary identities overlap enroll/probe identities: {sorted(overlap)[:5]}"
            )


def load_manifest(path) -> DatasetManifest:
    try:
        text = Path(path).read_text(encoding="utf-8")
    except OSError as e:
        raise IoFailure(str(e)) from e
    return DatasetManifest.from_json(text)


def save_manifest(path, manifest: DatasetManifest) -> None:
    _atomic_write(Path(path), manifest.to_json().encode("utf-8"))


@dataclass
class Corpus:
    """Embeddings plus the manifest describing them."""

    embeddings: np.ndarray
    manifest: DatasetManifest

    def __post_init__(self):
        self.manifest.validate(len(self.embeddings))
        if self.embeddings.shape[1] != self.manifest.dim:
            raise ManifestError(
                f"manifest dim {self.manifest.dim} != embedding dim {self.embeddings.shape[1]}"
            )
        if self.manifest.normalized and len(self.embeddings):
            norms = np.linalg.norm(self.embeddings.astype(np.float64), axis=1)
            if np.max(np.abs(norms - 1.0)) > 1e-4:
                raise ManifestError("manifest declares normalized=true but norms deviate from 1")

    def select(self, split: str) -> tuple[np.ndarray, list[str]]:
        rows = self.manifest.rows_in(split)
        idx = np.array([r.row for r in rows], dtype=np.int64)
        return self.embeddings[idx], [r.identity for r in rows]

    @property
    def attributes(self) -> dict[str, str]:
        return self.manifest.attributes()


def load_corpus(emb_path, manifest_path) -> Corpus:
    _, emb = load_embedding_file(emb_path)
    return Corpus(emb, load_manifest(manifest_path))


# --------------------------------------------------------------------------
# model templates


@dataclass(frozen=True, eq=False)
class ModelTemplate:
    """A serialized per-identity classifier.

    ``created_at`` is bookkeeping only; it is not part of the file format so
    that identical training runs give identical bytes.
    """

    identity: str
    weights: np.ndarray
    train_config_digest: str
    balancing_factor: float
    layer_dims: tuple[int, ...] = LAYER_DIMS
    created_at: str | None = field(default=None, compare=False)

    def __post_init__(self):
        w = np.asarray(self.weights, dtype=np.float32).ravel()
        object.__setattr__(self, "weights", w)
        object.__setattr__(self, "layer_dims", tuple(int(d) for d in self.layer_dims))
        if not self.identity:
            raise ValueError("identity must be nonempty")
        if self.layer_dims != LAYER_DIMS:
            raise FormatVersionError(f"unsupported layer dims {self.layer_dims}")
        if w.size != N_WEIGHTS:
            raise ValueError(f"expected {N_WEIGHTS} weights, got {w.size}")
        if not np.all(np.isfinite(w)):
            raise NonFiniteValue("template weights contain non-finite values")
        if not 0.0 <= self.balancing_factor <= 1.0:
            raise ValueError("balancing_factor must lie in [0, 1]")

    def __eq__(self, other):
        if not isinstance(other, ModelTemplate):
            return NotImplemented
        return (
            self.identity == other.identity
            and self.layer_dims == other.layer_dims
            and self.train_config_digest == other.train_config_digest
            and np.float32(self.balancing_factor) == np.float32(other.balancing_factor)
            and np.array_equal(self.weights, other.weights)
        )

    def header_bytes(self) -> bytes:
        ident = self.identity.encode("utf-8")
        digest = self.train_config_digest.encode("utf-8")
        return b"".join(
            [
                MOTE_MAGIC,
                struct.pack("<HH", MOTE_VERSION, len(ident)),
                ident,
                struct.pack("<4I", *self.layer_dims),
                struct.pack("<f", self.balancing_factor),
                struct.pack("<H", len(digest)),
                digest,
            ]
        )

    def to_bytes(self) -> bytes:
        return self.header_bytes() + self.weights.astype("<f4").tobytes()

    @classmethod
    def from_bytes(cls, buf: bytes) -> "ModelTemplate":
        if buf[:4] != MOTE_MAGIC:
            raise MagicMismatch(f"bad magic {bytes(buf[:4])!r} at byte offset 0")
        pos = 4

        def take(n):
            nonlocal pos
            if pos + n > len(buf):
                raise TruncatedFile(f"template truncated at byte offset {len(buf)}")
            out = buf[pos : pos + n]
            pos += n
            return out

        (version,) = struct.unpack("<H", take(2))
        if version != MOTE_VERSION:
            raise FormatVersionError(f"unsupported MOTE version {version}")
        (id_len,) = struct.unpack("<H", take(2))
        identity = take(id_len).decode("utf-8")
        dims = struct.unpack("<4I", take(16))
        if dims != LAYER_DIMS:
            raise FormatVersionError(f"unsupported layer dims {list(dims)}")
        (b,) = struct.unpack("<f", take(4))
        (dlen,) = struct.unpack("<H", take(2))
        digest = take(dlen).decode("utf-8")
        payload = take(4 * N_WEIGHTS)
        w = np.frombuffer(payload, dtype="<f4")
        bad = np.flatnonzero(~np.isfinite(w))
        if bad.size:
            raise NonFiniteValue(f"non-finite weight at byte offset {pos - len(payload) + 4 * int(bad[0])}")
        return cls(identity, w.astype(np.float32), digest, float(b), dims)


def save_model_template(t: ModelTemplate, path) -> int:
    """Write ``t`` to ``path`` and return the number of bytes written."""
    data = t.to_bytes()
    _atomic_write(Path(path), data)
    return len(data)


def load_model_template(path) -> ModelTemplate:
    try:
        buf = Path(path).read_bytes()
    except OSError as e:
        raise IoFailure(str(e)) from e
    return ModelTemplate.from_bytes(buf)


class TemplateStore:
    """Directory of ``templates/<identity>.mote`` files plus a JSON-lines log."""

    def __init__(self, root):
        self.root = Path(root)
        self.template_dir = self.root / "templates"
        self.log_path = self.root / "enroll_log.jsonl"

    def path_for(self, identity: str) -> Path:
        return self.template_dir / f"{identity}.mote"

    def __contains__(self, identity: str) -> bool:
        return self.path_for(identity).exists()

    def identities(self) -> list[str]:
        if not self.template_dir.exists():
            return []
        return sorted(p.stem for p in self.template_dir.glob("*.mote"))

    def save(self, t: ModelTemplate) -> int:
        self.template_dir.mkdir(parents=True, exist_ok=True)
        return save_model_template(t, self.path_for(t.identity))

    def load(self, identity: str) -> ModelTemplate:
        return load_model_template(self.path_for(identity))

    def load_all(self, identities: Iterable[str] | None = None) -> dict[str, ModelTemplate]:
        ids = self.identities() if identities is None else list(identities)
        return {i: self.load(i) for i in ids}

    def append_log(self, record: dict) -> None:
        self.root.mkdir(parents=True, exist_ok=True)
        with open(self.log_path, "a", encoding="utf-8") as fh:
            fh.write(json.dumps(record, sort_keys=True) + "\n")


def _atomic_write(path: Path, data: bytes) -> None:
    try:
        path.parent.mkdir(parents=True, exist_ok=True)
        tmp = path.with_name(path.name + ".tmp")
        with open(tmp, "wb") as fh:
            fh.write(data)
        os.replace(tmp, path)
    except OSError as e:
        raise IoFailure(str(e)) from e
