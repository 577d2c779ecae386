"""Gaussian-splat asset handling: PLY IO, triplet manifests, embedding tables.

File formats
------------
Splat asset: binary little-endian PLY whose vertex element carries at least
the 14 float properties of a degree-0 splat point, in any order, extra
properties permitted and ignored::

    x y z f_dc_0 f_dc_1 f_dc_2 opacity scale_0 scale_1 scale_2
    rot_0 rot_1 rot_2 rot_3

``opacity`` is a pre-sigmoid logit, ``scale_*`` are pre-sigmoid log-scales,
and ``rot_*`` is a (w, x, y, z) quaternion, not necessarily unit.

Embedding table (.gseb): magic ``GSEB`` + version u32 + dim u32 + count u32,
then per row: key length u16, UTF-8 key bytes, dim little-endian f32 values.

Triplet manifest: JSON ``{"dim": int, "entries": [{"asset": path,
"text_key": str, "image_keys": [str...], "label": str|null}]}`` with asset
paths relative to the manifest file.
"""

from __future__ import annotations

import json
import struct
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from . import seeding

PLY_PROPERTIES = (
    "x", "y", "z",
    "f_dc_0", "f_dc_1", "f_dc_2",
    "opacity",
    "scale_0", "scale_1", "scale_2",
    "rot_0", "rot_1", "rot_2", "rot_3",
)

_PLY_TYPE_SIZES = {
    "float": 4, "float32": 4, "double": 8, "float64": 8,
    "char": 1, "int8": 1, "uchar": 1, "uint8": 1,
    "short": 2, "int16": 2, "ushort": 2, "uint16": 2,
    "int": 4, "int32": 4, "uint": 4, "uint32": 4,
}

GSEB_MAGIC = b"GSEB"
GSEB_VERSION = 1


class PlyError(ValueError):
    """Base class for splat PLY problems."""


class PlyParseError(PlyError):
    """Malformed header or payload structure."""


class PlySchemaError(PlyError):
    """A required vertex property is missing or has the wrong type."""


class PlySizeError(PlyError):
    """Binary payload size disagrees with the header."""


class EmptyCloudError(PlyError):
    """The asset declares zero gaussian points."""


class DanglingKeyError(KeyError):
    """A manifest references an embedding key absent from the table."""


class DuplicateKeyError(ValueError):
    """An embedding table contains the same key twice."""


class DimensionMismatchError(ValueError):
    """Row length or declared dim is inconsistent."""


class TableFormatError(ValueError):
    """Structural damage in an embedding table file."""


@dataclass
class GaussianPoint:
    """One splat primitive, stored in raw (pre-activation) attribute space."""

    position: np.ndarray  # (3,)
    color: np.ndarray     # (3,) degree-0 SH coefficients
    opacity: float        # logit
    scale: np.ndarray     # (3,) log-scale
    rotation: np.ndarray  # (4,) quaternion (w, x, y, z)

    def vector(self) -> np.ndarray:
        """The 14-component flat layout used everywhere downstream."""
        return np.concatenate([
            np.asarray(self.position, dtype=np.float32),
            np.asarray(self.color, dtype=np.float32),
            np.float32([self.opacity]),
            np.asarray(self.scale, dtype=np.float32),
            np.asarray(self.rotation, dtype=np.float32),
        ])

    @classmethod
    def from_vector(cls, v: np.ndarray) -> "GaussianPoint":
        v = np.asarray(v)
        if v.shape != (14,):
            raise ValueError(f"expected a 14-vector, got shape {v.shape}")
        return cls(position=v[0:3], color=v[3:6], opacity=float(v[6]),
                   scale=v[7:10], rotation=v[10:14])


class GaussianCloud:
    """An ordered set of gaussian points as an (N, 14) float32 matrix."""

    def __init__(self, values: np.ndarray, source_id: str = ""):
        values = np.asarray(values, dtype=np.float32)
        if values.ndim != 2 or values.shape[1] != 14:
            raise ValueError(f"cloud values must be (N, 14), got {values.shape}")
        if values.shape[0] == 0:
            raise EmptyCloudError("gaussian cloud must be non-empty")
        if not np.isfinite(values).all():
            raise ValueError(f"non-finite attribute in cloud '{source_id}'")
        self.values = values
        self.source_id = source_id

    def __len__(self) -> int:
        return self.values.shape[0]

    def point(self, i: int) -> GaussianPoint:
        return GaussianPoint.from_vector(self.values[i])

    @property
    def positions(self) -> np.ndarray:
        return self.values[:, 0:3]

    @property
    def colors(self) -> np.ndarray:
        return self.values[:, 3:6]

    @property
    def opacities(self) -> np.ndarray:
        return self.values[:, 6]

    @property
    def scales(self) -> np.ndarray:
        return self.values[:, 7:10]

    @property
    def rotations(self) -> np.ndarray:
        return self.values[:, 10:14]


# ---------------------------------------------------------------------------
# PLY


def parse_ply(blob: bytes, source_id: str = "") -> GaussianCloud:
    """Parse a binary little-endian splat PLY into a cloud.

    Raises PlyParseError / PlySchemaError / PlySizeError / EmptyCloudError
    with the offending line or property named.
    """
    end = blob.find(b"end_header\n")
    if end < 0:
        raise PlyParseError("no end_header line found")
    header = blob[:end].decode("ascii", errors="replace")
    payload = blob[end + len(b"end_header\n"):]

    lines = header.splitlines()
    if not lines or lines[0].strip() != "ply":
        raise PlyParseError(f"bad magic line: {lines[0]!r}" if lines else "empty header")

    vertex_count = None
    props: list[tuple[str, str]] = []  # (type, name) in declared order
    in_vertex_element = False
    for line in lines[1:]:
        tokens = line.split()
        if not tokens or tokens[0] == "comment":
            continue
        if tokens[0] == "format":
            if tokens[1:2] != ["binary_little_endian"]:
                raise PlyParseError(f"unsupported format line: {line!r}")
        elif tokens[0] == "element":
            if len(tokens) != 3:
                raise PlyParseError(f"malformed element line: {line!r}")
            in_vertex_element = tokens[1] == "vertex"
            if in_vertex_element:
                try:
                    vertex_count = int(tokens[2])
                except ValueError:
                    raise PlyParseError(f"bad vertex count in line: {line!r}") from None
        elif tokens[0] == "property" and in_vertex_element:
            if tokens[1] == "list":
                raise PlyParseError(f"list properties unsupported: {line!r}")
            if len(tokens) != 3:
                raise PlyParseError(f"malformed property line: {line!r}")
            ptype, name = tokens[1], tokens[2]
            if ptype not in _PLY_TYPE_SIZES:
                raise PlyParseError(f"unknown property type in line: {line!r}")
            props.append((ptype, name))

    if vertex_count is None:
        raise PlyParseError("header declares no vertex element")
    if vertex_count == 0:
        raise EmptyCloudError("asset declares 0 vertices; clouds must be non-empty")

    names = [n for _, n in props]
    if len(set(names)) != len(names):
        dup = next(n for n in names if names.count(n) > 1)
        raise PlyParseError(f"duplicate property declaration: {dup!r}")
    by_name = dict(zip(names, (t for t, _ in props)))
    offsets = {}
    off = 0
    for ptype, name in props:
        offsets[name] = off
        off += _PLY_TYPE_SIZES[ptype]
    stride = off

    for required in PLY_PROPERTIES:
        if required not in by_name:
            raise PlySchemaError(f"missing required property {required!r}")
        if by_name[required] not in ("float", "float32"):
            raise PlySchemaError(f"property {required!r} must be float, "
                                 f"got {by_name[required]!r}")

    expected = vertex_count * stride
    if len(payload) != expected:
        raise PlySizeError(f"payload is {len(payload)} bytes, header implies "
                           f"{expected} ({vertex_count} vertices x {stride} bytes)")

    dtype = np.dtype({
        "names": list(PLY_PROPERTIES),
        "formats": ["<f4"] * 14,
        "offsets": [offsets[n] for n in PLY_PROPERTIES],
        "itemsize": stride,
    })
    rec = np.frombuffer(payload, dtype=dtype, count=vertex_count)
    values = np.stack([rec[n] for n in PLY_PROPERTIES], axis=1)
    return GaussianCloud(values, source_id=source_id)


def write_ply(cloud: GaussianCloud) -> bytes:
    """Serialize a cloud to the canonical binary layout (bit-exact round trip)."""
    header = ["ply", "format binary_little_endian 1.0",
              f"element vertex {len(cloud)}"]
    header += [f"property float {name}" for name in PLY_PROPERTIES]
    header.append("end_header")
    body = np.ascontiguousarray(cloud.values, dtype="<f4").tobytes()
    return ("\n".join(header) + "\n").encode("ascii") + body


def load_ply(path: str | Path) -> GaussianCloud:
    path = Path(path)
    return parse_ply(path.read_bytes(), source_id=path.stem)


def save_ply(cloud: GaussianCloud, path: str | Path) -> None:
    Path(path).write_bytes(write_ply(cloud))


def subsample_points(cloud: GaussianCloud, target: int, seed: int) -> GaussianCloud:
    """Resample a cloud to exactly ``target`` points, deterministically.

    Oversized clouds are sampled uniformly without replacement; undersized
    clouds keep every original point and pad with replacement.
    """
    if target < 1:
        raise ValueError(f"target must be >= 1, got {target}")
    rng = np.random.default_rng(np.random.SeedSequence([int(seed), seeding.SUBSAMPLE]))
    m = len(cloud)
    if m >= target:
        idx = rng.choice(m, size=target, replace=False)
    else:
        idx = np.concatenate([np.arange(m), rng.integers(0, m, size=target - m)])
    return GaussianCloud(cloud.values[idx], source_id=cloud.source_id)


# ---------------------------------------------------------------------------
# embedding tables


class EmbeddingTable:
    """Frozen teacher embeddings, addressable by string key."""

    def __init__(self, keys: list[str], rows: np.ndarray):
        rows = np.asarray(rows, dtype=np.float32)
        if rows.ndim != 2:
            raise ValueError(f"rows must be 2D, got shape {rows.shape}")
        if len(keys) != rows.shape[0]:
            raise ValueError(f"{len(keys)} keys for {rows.shape[0]} rows")
        index: dict[str, int] = {}
        for i, k in enumerate(keys):
            if k in index:
                raise DuplicateKeyError(f"duplicate embedding key {k!r}")
            index[k] = i
        self.keys = list(keys)
        self.rows = rows
        self._index = index

    @property
    def dim(self) -> int:
        return self.rows.shape[1]

    def __len__(self) -> int:
        return self.rows.shape[0]

    def __contains__(self, key: str) -> bool:
        return key in self._index

    def row(self, key: str) -> np.ndarray:
        try:
            return self.rows[self._index[key]]
        except KeyError:
            raise DanglingKeyError(f"embedding key {key!r} not in table") from None

    def gather(self, keys: list[str]) -> np.ndarray:
        return np.stack([self.row(k) for k in keys], axis=0)


def save_embeddings(table: EmbeddingTable, path: str | Path) -> None:
    parts = [GSEB_MAGIC, struct.pack("<III", GSEB_VERSION, table.dim, len(table))]
    for key, row in zip(table.keys, table.rows):
        kb = key.encode("utf-8")
        parts.append(struct.pack("<H", len(kb)))
        parts.append(kb)
        parts.append(np.ascontiguousarray(row, dtype="<f4").tobytes())
    Path(path).write_bytes(b"".join(parts))


def load_embeddings(path: str | Path) -> EmbeddingTable:
    blob = Path(path).read_bytes()
    if blob[:4] != GSEB_MAGIC:
        raise TableFormatError(f"bad magic {blob[:4]!r} in {path}")
    if len(blob) < 16:
        raise TableFormatError(f"truncated header in {path}")
    version, dim, count = struct.unpack_from("<III", blob, 4)
    if version != GSEB_VERSION:
        raise TableFormatError(f"unsupported table version {version}")
    if dim == 0:
        raise DimensionMismatchError("table declares dim 0")
    off = 16
    keys: list[str] = []
    rows = np.empty((count, dim), dtype=np.float32)
    row_bytes = 4 * dim
    for i in range(count):
        if off + 2 > len(blob):
            raise TableFormatError(f"truncated key header at row {i}")
        (klen,) = struct.unpack_from("<H", blob, off)
        off += 2
        if off + klen > len(blob):
            raise TableFormatError(f"truncated key bytes at row {i}")
        key = blob[off:off + klen].decode("utf-8")
        off += klen
        if off + row_bytes > len(blob):
            raise DimensionMismatchError(
                f"row {i} ({key!r}) holds fewer than the declared {dim} values")
        rows[i] = np.frombuffer(blob, dtype="<f4", count=dim, offset=off)
        off += row_bytes
        keys.append(key)
    if off != len(blob):
        raise TableFormatError(f"{len(blob) - off} trailing bytes after last row")
    return EmbeddingTable(keys, rows)


# ---------------------------------------------------------------------------
# triplet manifests


@dataclass
class TripletEntry:
    asset: Path           # resolved
    text_key: str
    image_keys: list[str]
    label: str | None


@dataclass
class TripletManifest:
    dim: int
    entries: list[TripletEntry]
    root: Path

    def __len__(self) -> int:
        return len(self.entries)

    def validate_keys(self, table: EmbeddingTable) -> None:
        """Check dim consistency and that every referenced key resolves."""
        if table.dim != self.dim:
            raise DimensionMismatchError(
                f"manifest dim {self.dim} != table dim {table.dim}")
        for entry in self.entries:
            for key in [entry.text_key, *entry.image_keys]:
                if key not in table:
                    raise DanglingKeyError(f"embedding key {key!r} not in table")


def load_manifest(path: str | Path) -> TripletManifest:
    path = Path(path)
    data = json.loads(path.read_text())
    if not isinstance(data.get("dim"), int) or data["dim"] <= 0:
        raise ValueError(f"manifest {path} lacks a positive integer 'dim'")
    root = path.parent
    entries = []
    for i, raw in enumerate(data.get("entries", [])):
        image_keys = list(raw.get("image_keys", []))
        if not image_keys:
            raise ValueError(f"manifest entry {i} has no image keys")
        asset = (root / raw["asset"]).resolve()
        if not asset.is_file():
            raise FileNotFoundError(f"manifest entry {i}: asset {asset} not found")
        entries.append(TripletEntry(asset=asset, text_key=raw["text_key"],
                                    image_keys=image_keys, label=raw.get("label")))
    if not entries:
        raise ValueError(f"manifest {path} has no entries")
    return TripletManifest(dim=data["dim"], entries=entries, root=root)


def save_manifest(manifest_dict: dict, path: str | Path) -> None:
    Path(path).write_text(json.dumps(manifest_dict, indent=2) + "\n")


# ---------------------------------------------------------------------------
# synthetic fixtures


@dataclass
class SyntheticFixtures:
    out_dir: Path
    manifest_path: Path
    embeddings_path: Path
    class_embeddings_path: Path
    manifest: TripletManifest
    embeddings: EmbeddingTable
    class_embeddings: EmbeddingTable


def _unit(v: np.ndarray) -> np.ndarray:
    return v / np.linalg.norm(v)


def gen_synthetic_triplets(classes: int, per_class: int, views: int, dim: int,
                           noise: float, seed: int, out_dir: str | Path,
                           points_range: tuple[int, int] = (900, 1500),
                           blobs_per_class: int = 4) -> SyntheticFixtures:
    """Generate a desk-scale triplet corpus with a learnable class signal.

    Per class: a unit prototype embedding, a blob mixture template (centers,
    anisotropic sigmas) and a base color. Per object: text/view embeddings =
    unit-normalized prototype + noise, and a cloud sampled from the class
    mixture with class-correlated colors — geometry carries the class.
    """
    if classes < 2:
        raise ValueError(f"classes must be >= 2, got {classes}")
    if per_class < 2:
        raise ValueError(f"per_class must be >= 2, got {per_class}")
    if views < 1:
        raise ValueError(f"views must be >= 1, got {views}")
    if noise < 0:
        raise ValueError(f"noise must be >= 0, got {noise}")

    out_dir = Path(out_dir)
    asset_dir = out_dir / "assets"
    asset_dir.mkdir(parents=True, exist_ok=True)

    emb_keys: list[str] = []
    emb_rows: list[np.ndarray] = []
    entries = []
    class_rows = []
    labels = [f"class_{c}" for c in range(classes)]

    obj = 0
    for c in range(classes):
        crng = seeding.substream(seed, seeding.FIXTURES, c)
        proto = _unit(crng.normal(size=dim))
        class_rows.append(proto.astype(np.float32))
        centers = crng.uniform(-1.0, 1.0, size=(blobs_per_class, 3))
        sigmas = crng.uniform(0.05, 0.35, size=(blobs_per_class, 3))
        base_color = crng.normal(0.0, 0.8, size=3)

        for _ in range(per_class):
            orng = seeding.substream(seed, seeding.FIXTURES, c, obj)
            name = f"obj_{obj:05d}"

            text = _unit(proto + noise * orng.normal(size=dim)).astype(np.float32)
            emb_keys.append(f"{name}/text")
            emb_rows.append(text)
            image_keys = []
            for k in range(views):
                view = _unit(proto + noise * orng.normal(size=dim)).astype(np.float32)
                key = f"{name}/view_{k}"
                image_keys.append(key)
                emb_keys.append(key)
                emb_rows.append(view)

            m = int(orng.integers(points_range[0], points_range[1] + 1))
            assign = orng.integers(0, blobs_per_class, size=m)
            pos = centers[assign] + orng.normal(size=(m, 3)) * sigmas[assign]
            color = base_color + 0.15 * orng.normal(size=(m, 3))
            opacity = orng.normal(0.5, 1.0, size=(m, 1))
            log_scale = np.log(sigmas[assign]) + 0.1 * orng.normal(size=(m, 3))
            quat = orng.normal(size=(m, 4))
            quat /= np.linalg.norm(quat, axis=1, keepdims=True)
            cloud = GaussianCloud(
                np.concatenate([pos, color, opacity, log_scale, quat], axis=1),
                source_id=name)
            rel = f"assets/{name}.ply"
            save_ply(cloud, out_dir / rel)
            entries.append({"asset": rel, "text_key": f"{name}/text",
                            "image_keys": image_keys, "label": labels[c]})
            obj += 1

    table = EmbeddingTable(emb_keys, np.stack(emb_rows))
    class_table = EmbeddingTable(labels, np.stack(class_rows))

    manifest_path = out_dir / "manifest.json"
    embeddings_path = out_dir / "embeddings.gseb"
    class_path = out_dir / "class_embeddings.gseb"
    save_manifest({"dim": dim, "entries": entries}, manifest_path)
    save_embeddings(table, embeddings_path)
    save_embeddings(class_table, class_path)
    (out_dir / "fixtures_meta.json").write_text(json.dumps({
        "classes": classes, "per_class": per_class, "views": views, "dim": dim,
        "noise": noise, "seed": seed, "points_range": list(points_range),
        "blobs_per_class": blobs_per_class,
    }, indent=2) + "\n")

    return SyntheticFixtures(
        out_dir=out_dir, manifest_path=manifest_path,
        embeddings_path=embeddings_path, class_embeddings_path=class_path,
        manifest=load_manifest(manifest_path), embeddings=table,
        class_embeddings=class_table)
