"""File formats: binary matrix container, chain manifest, protocol config, partitions, JSON, CSV and PGM.

Container layout (all little-endian)::

    offset 0   4 bytes  magic b"GSAM"
    offset 4   u16      format version (1)
    offset 6   u32      rows
    offset 10  u32      cols
    offset 14  rows*cols float64, row-major

The manifest is JSON::

    {"format": "chaincert-manifest/1",
     "square_embedding": false,
     "matrices": [{"file": "layer0.gsam", "label": "blocks.0.mlp",
                   "provenance": {...}}, ...]}

Matrix files are resolved relative to the manifest. Their order defines the
interface indices.
"""

from dataclasses import dataclass, field
import json
import math
import os
from pathlib import Path
import struct

import numpy as np

from .errors import ContainerError, DimensionError, InputError, ManifestError
from .matrix_core import LayerMatrix
from .pipeline import ExtractionProtocol

MAGIC = b"GSAM"
FORMAT_VERSION = 1
_HEADER = struct.Struct("<4sHII")
HEADER_SIZE = _HEADER.size
MANIFEST_FORMAT = "chaincert-manifest/1"


# ----------------------------------------------------------------------------
# container


def encode_container(A):
    """Container bytes for a 2-D float64 matrix."""
    A = np.asarray(A, dtype=np.float64)
    if A.ndim != 2:
        raise InputError(f"container holds 2-D matrices, got shape {A.shape}")
    rows, cols = A.shape
    return _HEADER.pack(MAGIC, FORMAT_VERSION, rows, cols) + np.ascontiguousarray(A).astype("<f8").tobytes()


def decode_container(data, path="<bytes>"):
    """Parse container bytes; errors name ``path`` and the byte offset of the fault."""
    if len(data) < HEADER_SIZE:
        raise ContainerError(path, len(data), f"truncated header: {len(data)} of {HEADER_SIZE} bytes")
    magic, version, rows, cols = _HEADER.unpack_from(data)
    if magic != MAGIC:
        raise ContainerError(path, 0, f"bad magic {magic!r}, expected {MAGIC!r}")
    if version != FORMAT_VERSION:
        raise ContainerError(path, 4, f"unsupported format version {version}")
    expected = rows * cols * 8
    got = len(data) - HEADER_SIZE
    if got != expected:
        raise ContainerError(path, HEADER_SIZE + min(got, expected),
                             f"payload is {got} bytes, header declares {rows}x{cols} = {expected} bytes")
    return np.frombuffer(data, dtype="<f8", offset=HEADER_SIZE).astype(np.float64).reshape(rows, cols)


def write_container(path, A):
    Path(path).write_bytes(encode_container(A))


def read_container(path):
    """Read one matrix; a missing file is reported as a container error at offset 0."""
    try:
        data = Path(path).read_bytes()
    except OSError as exc:
        raise ContainerError(path, 0, f"cannot read file: {exc.strerror}") from exc
    return decode_container(data, str(path))


# ----------------------------------------------------------------------------
# manifest


@dataclass(frozen=True)
class ManifestEntry:
    file: str
    label: str
    provenance: dict = field(default_factory=dict)


@dataclass(frozen=True)
class ChainManifest:
    """Ordered matrix list; ``root`` is the directory files are resolved against."""

    entries: tuple
    root: str = "."
    square_embedding: bool = False

    def paths(self):
        return [os.path.join(self.root, e.file) for e in self.entries]

    @property
    def labels(self):
        return tuple(e.label for e in self.entries)

    def to_dict(self):
        return {"format": MANIFEST_FORMAT, "square_embedding": self.square_embedding,
                "matrices": [{"file": e.file, "label": e.label, "provenance": dict(e.provenance)}
                             for e in self.entries]}


def _load_json(path, kind):
    try:
        with open(path, encoding="utf-8") as fh:
            return json.load(fh)
    except OSError as exc:
        raise ManifestError(f"{path}: cannot read {kind}: {exc.strerror}") from exc
    except json.JSONDecodeError as exc:
        raise ManifestError(f"{path}: offset {exc.pos}: invalid JSON in {kind}: {exc.msg}") from exc


def read_manifest(path):
    data = _load_json(path, "manifest")
    if not isinstance(data, dict) or data.get("format") != MANIFEST_FORMAT:
        raise ManifestError(f"{path}: manifest must be an object with format {MANIFEST_FORMAT!r}")
    mats = data.get("matrices")
    if not isinstance(mats, list) or not mats:
        raise ManifestError(f"{path}: manifest lists no matrices")
    entries = []
    for k, m in enumerate(mats):
        if not isinstance(m, dict) or not isinstance(m.get("file"), str):
            raise ManifestError(f"{path}: matrix entry {k} has no file name")
        prov = m.get("provenance", {})
        if not isinstance(prov, dict):
            raise ManifestError(f"{path}: provenance of entry {k} must be an object")
        entries.append(ManifestEntry(m["file"], str(m.get("label", f"layer{k}")), prov))
    labels = [e.label for e in entries]
    if len(set(labels)) != len(labels):
        raise ManifestError(f"{path}: duplicate layer labels")
    return ChainManifest(tuple(entries), str(Path(path).parent), bool(data.get("square_embedding", False)))


def write_manifest(path, manifest):
    write_json(path, manifest.to_dict())


def load_chain(manifest_path):
    """Read every matrix of a manifest and check that adjacent layers compose.

    ``W_{k+1} W_k`` needs ``cols(W_{k+1}) == rows(W_k)`` unless the manifest
    declares ``square_embedding``.
    """
    man = read_manifest(manifest_path)
    layers = []
    for e, p in zip(man.entries, man.paths()):
        A = read_container(p)
        try:
            layers.append(LayerMatrix(A, e.label))
        except InputError as exc:
            raise ContainerError(p, HEADER_SIZE, str(exc)) from exc
    if not man.square_embedding:
        for k in range(len(layers) - 1):
            if layers[k + 1].cols != layers[k].rows:
                raise DimensionError(f"{manifest_path}: layer {k + 1} ({man.entries[k + 1].file}) has "
                                     f"{layers[k + 1].cols} columns but layer {k} has {layers[k].rows} rows")
    return layers, man


def write_chain(directory, layers, labels=None, provenance=None, square_embedding=False):
    """Write each layer as a container plus ``manifest.json``; returns the manifest path."""
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    entries = []
    for k, W in enumerate(layers):
        label = labels[k] if labels else (getattr(W, "label", "") or f"layer{k}")
        name = f"layer{k:03d}.gsam"
        write_container(directory / name, W.entries if isinstance(W, LayerMatrix) else W)
        entries.append(ManifestEntry(name, label, dict((provenance or {}).get(label, {}))))
    path = directory / "manifest.json"
    write_manifest(path, ChainManifest(tuple(entries), str(directory), square_embedding))
    return path


# ----------------------------------------------------------------------------
# protocol config and partitions


def read_config(path, n_layers=None):
    """Load an :class:`ExtractionProtocol`; with ``n_layers`` also check it against the chain."""
    data = _load_json(path, "config")
    if not isinstance(data, dict):
        raise ManifestError(f"{path}: config must be a JSON object")
    try:
        proto = ExtractionProtocol.from_dict(data)
    except (InputError, TypeError) as exc:
        raise ManifestError(f"{path}: {exc}") from exc
    if n_layers is not None:
        check_config(proto, n_layers, path)
    return proto


def check_config(proto, n_layers, path="<config>"):
    labels = proto.row_labels
    if labels and isinstance(labels[0], (tuple, list)) and len(labels) != n_layers - 1:
        raise ManifestError(f"{path}: config lists {len(labels)} partitions for {n_layers - 1} interfaces")
    if proto.interval is not None and len(proto.interval) != 2:
        raise ManifestError(f"{path}: interval must have two endpoints")


def write_config(path, proto):
    write_json(path, proto.to_dict())


def read_partition(path):
    """Row labels from a text file with one ``row_index group_id`` pair per line.

    Group id 0 is the residual group. Blank lines and ``#`` comments are
    ignored. Every row index from 0 to n-1 must appear exactly once.
    """
    seen = {}
    try:
        text = Path(path).read_text(encoding="utf-8")
    except OSError as exc:
        raise ManifestError(f"{path}: cannot read partition: {exc.strerror}") from exc
    offset = 0
    for lineno, line in enumerate(text.splitlines(keepends=True), start=1):
        body = line.split("#", 1)[0].split()
        start, offset = offset, offset + len(line.encode("utf-8"))
        if not body:
            continue
        if len(body) != 2:
            raise ManifestError(f"{path}: offset {start} (line {lineno}): expected 'row_index group_id'")
        try:
            r, g = int(body[0]), int(body[1])
        except ValueError as exc:
            raise ManifestError(f"{path}: offset {start} (line {lineno}): non-integer entry") from exc
        if r < 0 or g < 0 or r in seen:
            raise ManifestError(f"{path}: offset {start} (line {lineno}): negative or repeated row {r}")
        seen[r] = g
    if not seen or sorted(seen) != list(range(len(seen))):
        raise ManifestError(f"{path}: rows must be exactly 0..n-1")
    return [seen[r] for r in range(len(seen))]


def write_partition(path, labels):
    Path(path).write_text("".join(f"{r} {int(g)}\n" for r, g in enumerate(labels)), encoding="utf-8")


# ----------------------------------------------------------------------------
# JSON, CSV, PGM


def _format_float(x):
    if math.isnan(x):
        return '"nan"'
    if math.isinf(x):
        return '"inf"' if x > 0 else '"-inf"'
    return format(x, ".17g")


def _encode(obj, out):
    if obj is None:
        out.append("null")
    elif isinstance(obj, (bool, np.bool_)):
        out.append("true" if obj else "false")
    elif isinstance(obj, (int, np.integer)):
        out.append(str(int(obj)))
    elif isinstance(obj, (float, np.floating)):
        out.append(_format_float(float(obj)))
    elif isinstance(obj, str):
        out.append(json.dumps(obj, ensure_ascii=False))
    elif isinstance(obj, dict):
        out.append("{")
        for n, key in enumerate(sorted(obj, key=str)):
            if n:
                out.append(",")
            out.append(json.dumps(str(key), ensure_ascii=False) + ":")
            _encode(obj[key], out)
        out.append("}")
    elif isinstance(obj, (list, tuple, np.ndarray, set, frozenset)):
        items = sorted(obj) if isinstance(obj, (set, frozenset)) else list(obj)
        out.append("[")
        for n, v in enumerate(items):
            if n:
                out.append(",")
            _encode(v, out)
        out.append("]")
    else:
        raise InputError(f"cannot serialise {type(obj).__name__}")


def dumps_json(obj):
    """Byte-stable JSON: sorted keys, floats at 17 significant digits, non-finite floats as strings."""
    out = []
    _encode(obj, out)
    return "".join(out) + "\n"


def write_json(path, obj):
    Path(path).write_text(dumps_json(obj), encoding="utf-8")


def write_csv(path, A):
    np.savetxt(path, np.atleast_2d(np.asarray(A, dtype=np.float64)), fmt="%.17g", delimiter=",")


def read_csv(path):
    return np.atleast_2d(np.loadtxt(path, delimiter=",", dtype=np.float64))


def pgm_bytes(A):
    """8-bit P5 image of ``A`` under linear min-max scaling, plus the scaling record."""
    A = np.atleast_2d(np.asarray(A, dtype=np.float64))
    lo, hi = float(A.min()), float(A.max())
    span = hi - lo
    pix = np.zeros(A.shape, dtype=np.uint8) if span == 0 else np.rint((A - lo) / span * 255).astype(np.uint8)
    rows, cols = A.shape
    meta = {"rows": rows, "cols": cols, "min": lo, "max": hi, "levels": 255, "scaling": "linear",
            "inverse": "value = min + pixel * (max - min) / 255"}
    return f"P5\n{cols} {rows}\n255\n".encode("ascii") + pix.tobytes(), meta


def write_pgm(path, A):
    """Write ``path`` and its scaling sidecar ``path + '.json'``."""
    data, meta = pgm_bytes(A)
    Path(path).write_bytes(data)
    write_json(str(path) + ".json", meta)
    return meta


def read_pgm(path):
    """Pixel array of a P5 file written by :func:`write_pgm`."""
    data = Path(path).read_bytes()
    parts = data.split(b"\n", 3)
    if parts[0] != b"P5" or len(parts) < 4:
        raise ContainerError(path, 0, "not a binary PGM file")
    cols, rows = (int(x) for x in parts[1].split())
    return np.frombuffer(parts[3], dtype=np.uint8).reshape(rows, cols)
