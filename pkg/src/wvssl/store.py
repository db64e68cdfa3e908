"""Dataset manifests, label handling, and the binary embedding store.

Manifest format: line-delimited text, tab-separated fields
``id<TAB>path<TAB>split<TAB>labels[<TAB>target]`` with labels comma-joined.
Lines starting with '#' are comments; the two directives
``# classes: a,b,c`` and ``# target: name`` declare the label vocabulary and
the regression column. Missing regression targets are an empty field.

Embedding store: magic 'WVEM', version u16, count u64, dim u32, space u8,
id table (u16 length + UTF-8 per id), row-major float32 little-endian
payload, then a provenance trailer (u32 length + JSON, possibly empty).
"""

from __future__ import annotations

import fcntl
import json
import struct
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .errors import ConfigError, DataError
from .sar import read_image_png
from .augment import unit_from_uint8

MANIFEST_HEADER = "# wvssl-manifest v1"
SPLITS = ("train", "val", "test")

EMBED_MAGIC = b"WVEM"
EMBED_VERSION = 1
_EMBED_HEADER = struct.Struct("<4sHQIB")
_SPACE_CODES = {"backbone": 0, "projected": 1}


@dataclass
class ManifestRecord:
    id: str
    path: str
    split: str
    labels: tuple
    target: float | None = None


@dataclass
class Manifest:
    records: list
    classes: tuple = ()
    target_name: str | None = None
    root: Path | None = None

    def __post_init__(self):
        if not self.classes:
            seen = []
            for rec in self.records:
                for label in rec.labels:
                    if label not in seen:
                        seen.append(label)
            self.classes = tuple(sorted(seen))

    def __len__(self):
        return len(self.records)

    def ids(self):
        return [rec.id for rec in self.records]

    def subset(self, split: str) -> "Manifest":
        if split not in SPLITS:
            raise ConfigError(f"unknown split {split!r}")
        return Manifest([r for r in self.records if r.split == split],
                        classes=self.classes, target_name=self.target_name,
                        root=self.root)

    def resolve_path(self, rec: ManifestRecord) -> Path:
        p = Path(rec.path)
        if not p.is_absolute() and self.root is not None:
            p = self.root / p
        return p

    def label_matrix(self, classes=None) -> np.ndarray:
        """N x C binary multilabel matrix in declared class order."""
        classes = tuple(classes) if classes is not None else self.classes
        index = {c: i for i, c in enumerate(classes)}
        out = np.zeros((len(self.records), len(classes)), dtype=np.int64)
        for i, rec in enumerate(self.records):
            for label in rec.labels:
                if label in index:
                    out[i, index[label]] = 1
        return out

    def targets(self) -> np.ndarray:
        """Regression targets; NaN marks records without one."""
        return np.array(
            [np.nan if rec.target is None else rec.target for rec in self.records],
            dtype=np.float64)


def parse_manifest(path) -> Manifest:
    path = Path(path)
    try:
        text = path.read_text()
    except OSError as exc:
        raise DataError(f"cannot read manifest {path}: {exc}") from exc
    return parse_manifest_text(text, root=path.parent)


def parse_manifest_text(text: str, root=None) -> Manifest:
    records = []
    declared_classes = None
    target_name = None
    seen_ids = {}
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.rstrip("\n")
        if not line.strip():
            continue
        if line.startswith("#"):
            body = line[1:].strip()
            if body.startswith("classes:"):
                declared_classes = tuple(
                    tok.strip() for tok in body[len("classes:"):].split(",")
                    if tok.strip())
            elif body.startswith("target:"):
                target_name = body[len("target:"):].strip() or None
            continue
        fields = line.split("\t")
        if len(fields) not in (4, 5):
            raise DataError(
                f"manifest line {lineno}: expected 4 or 5 tab-separated "
                f"fields, got {len(fields)}")
        rec_id, rel_path, split, labels_raw = fields[:4]
        if not rec_id:
            raise DataError(f"manifest line {lineno}: empty id")
        if rec_id in seen_ids:
            raise DataError(
                f"manifest line {lineno}: duplicate id {rec_id!r} "
                f"(first seen on line {seen_ids[rec_id]})")
        seen_ids[rec_id] = lineno
        if split not in SPLITS:
            raise DataError(
                f"manifest line {lineno}: unknown split {split!r} "
                f"(expected one of {SPLITS})")
        labels = tuple(tok.strip() for tok in labels_raw.split(",") if tok.strip())
        if declared_classes is not None:
            for label in labels:
                if label not in declared_classes:
                    raise DataError(
                        f"manifest line {lineno}: unknown label {label!r} "
                        f"(vocabulary: {', '.join(declared_classes)})")
        target = None
        if len(fields) == 5 and fields[4] != "":
            try:
                target = float(fields[4])
            except ValueError:
                raise DataError(
                    f"manifest line {lineno}: bad target value {fields[4]!r}")
            if not np.isfinite(target):
                raise DataError(
                    f"manifest line {lineno}: target must be finite")
        records.append(ManifestRecord(rec_id, rel_path, split, labels, target))
    manifest = Manifest(records, root=Path(root) if root is not None else None,
                        target_name=target_name)
    if declared_classes is not None:
        manifest.classes = declared_classes
    return manifest


def format_manifest(manifest: Manifest) -> str:
    lines = [MANIFEST_HEADER]
    if manifest.classes:
        lines.append("# classes: " + ",".join(manifest.classes))
    if manifest.target_name:
        lines.append("# target: " + manifest.target_name)
    for rec in manifest.records:
        target = "" if rec.target is None else repr(rec.target)
        lines.append("\t".join(
            [rec.id, rec.path, rec.split, ",".join(rec.labels), target]))
    return "\n".join(lines) + "\n"


def write_manifest(manifest: Manifest, path) -> None:
    Path(path).write_text(format_manifest(manifest))


def apply_label_map(manifest: Manifest, keep_classes, other_name="other") -> Manifest:
    """Group every label outside keep_classes into a catch-all class."""
    keep = tuple(keep_classes)
    records = []
    used_other = False
    for rec in manifest.records:
        labels = []
        for label in rec.labels:
            mapped = label if label in keep else other_name
            used_other = used_other or mapped == other_name
            if mapped not in labels:
                labels.append(mapped)
        records.append(ManifestRecord(rec.id, rec.path, rec.split,
                                      tuple(labels), rec.target))
    classes = keep + ((other_name,) if used_other else ())
    return Manifest(records, classes=classes, target_name=manifest.target_name,
                    root=manifest.root)


def load_unit_images(manifest: Manifest, side: int | None = None,
                     skip_missing: bool = False):
    """Load every record's image as float32 in [0, 1].

    Returns (images, ids, kept_records). Missing or unreadable files fail the
    whole batch with a per-row report unless skip_missing is set.
    """
    from .sar import center_crop_pad

    images, ids, kept = [], [], []
    failures = []
    for rec in manifest.records:
        path = manifest.resolve_path(rec)
        try:
            img = read_image_png(path)
        except (OSError, DataError) as exc:
            failures.append(f"{rec.id}: {path}: {exc}")
            continue
        px = img.pixels
        if side is not None:
            px = center_crop_pad(px, side)
        images.append(unit_from_uint8(px))
        ids.append(rec.id)
        kept.append(rec)
    if failures and not skip_missing:
        report = "; ".join(failures[:5])
        more = f" (+{len(failures) - 5} more)" if len(failures) > 5 else ""
        raise DataError(f"{len(failures)} records failed to load: {report}{more}")
    if not images:
        raise DataError("no readable images in manifest")
    return np.stack(images), ids, kept


@dataclass
class EmbeddingMatrix:
    """N x D encoder outputs with row-aligned identifiers."""

    rows: np.ndarray
    ids: list
    space: str = "backbone"

    def __post_init__(self):
        self.rows = np.asarray(self.rows, dtype=np.float32)
        if self.rows.ndim != 2:
            raise DataError(f"embedding rows must be 2-D, got {self.rows.shape}")
        if not np.all(np.isfinite(self.rows)):
            raise DataError("embedding matrix contains non-finite entries")
        if len(self.ids) != self.rows.shape[0]:
            raise DataError("id count does not match row count")
        if len(set(self.ids)) != len(self.ids):
            raise DataError("embedding ids are not unique")
        if self.space not in _SPACE_CODES:
            raise DataError(f"unknown embedding space {self.space!r}")


def write_embeddings(path, matrix: EmbeddingMatrix, config: dict | None = None) -> None:
    count, dim = matrix.rows.shape
    header = _EMBED_HEADER.pack(EMBED_MAGIC, EMBED_VERSION, count, dim,
                                _SPACE_CODES[matrix.space])
    id_parts = []
    for rec_id in matrix.ids:
        encoded = str(rec_id).encode("utf-8")
        id_parts.append(struct.pack("<H", len(encoded)))
        id_parts.append(encoded)
    payload = np.ascontiguousarray(matrix.rows, dtype="<f4").tobytes()
    trailer = json.dumps(config, sort_keys=True).encode("utf-8") if config else b""
    with open(path, "wb") as fh:
        fcntl.flock(fh.fileno(), fcntl.LOCK_EX)
        try:
            fh.write(header)
            fh.write(b"".join(id_parts))
            fh.write(payload)
            fh.write(struct.pack("<I", len(trailer)))
            fh.write(trailer)
        finally:
            fcntl.flock(fh.fileno(), fcntl.LOCK_UN)


def read_embeddings(path, with_config: bool = False):
    path = Path(path)
    raw = path.read_bytes()
    if len(raw) < _EMBED_HEADER.size:
        raise DataError(f"{path}: truncated embedding store header")
    magic, version, count, dim, space_code = _EMBED_HEADER.unpack(
        raw[:_EMBED_HEADER.size])
    if magic != EMBED_MAGIC:
        raise DataError(f"{path}: bad magic {magic!r}")
    if version != EMBED_VERSION:
        raise DataError(f"{path}: unsupported embedding store version {version}")
    spaces = {v: k for k, v in _SPACE_CODES.items()}
    if space_code not in spaces:
        raise DataError(f"{path}: unknown space tag {space_code}")
    pos = _EMBED_HEADER.size
    ids = []
    for _ in range(count):
        if pos + 2 > len(raw):
            raise DataError(f"{path}: truncated id table")
        (id_len,) = struct.unpack("<H", raw[pos:pos + 2])
        pos += 2
        if pos + id_len > len(raw):
            raise DataError(f"{path}: truncated id table")
        ids.append(raw[pos:pos + id_len].decode("utf-8"))
        pos += id_len
    payload_len = count * dim * 4
    if pos + payload_len + 4 > len(raw):
        raise DataError(
            f"{path}: payload truncated (need {payload_len} bytes)")
    rows = np.frombuffer(raw[pos:pos + payload_len], dtype="<f4").reshape(count, dim)
    pos += payload_len
    (trailer_len,) = struct.unpack("<I", raw[pos:pos + 4])
    pos += 4
    if pos + trailer_len != len(raw):
        raise DataError(f"{path}: bad trailer length")
    config = None
    if trailer_len:
        try:
            config = json.loads(raw[pos:pos + trailer_len].decode("utf-8"))
        except json.JSONDecodeError as exc:
            raise DataError(f"{path}: corrupt provenance trailer: {exc}") from exc
    matrix = EmbeddingMatrix(rows=rows.copy(), ids=ids, space=spaces[space_code])
    return (matrix, config) if with_config else matrix
