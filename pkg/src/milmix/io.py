"""Feature-file container, JSON manifests and the synthetic bag generator.

Feature file layout (all little-endian)::

    offset  size    field
    0       4       magic b"MILF"
    4       4       format version, uint32 (= 1)
    8       4       P, uint32
    12      4       D, uint32
    16      4*P*D   binary32 values, row-major

Manifest::

    {"class_names": ["FN", "PC"],
     "entries": [{"id": "slide-001", "class_index": 0, "path": "slide-001.milf"}, ...]}

``path`` is relative to the manifest's directory.
"""

from __future__ import annotations

import json
import struct
from dataclasses import asdict, dataclass
from pathlib import Path

import numpy as np

from .core import Dataset, FeatureBag, RngStream, one_hot

MAGIC = b"MILF"
VERSION = 1
_HEADER = struct.Struct("<4sIII")


class FeatureFileError(ValueError):
    pass


class BadMagicError(FeatureFileError):
    pass


class UnsupportedVersionError(FeatureFileError):
    pass


class TruncatedFileError(FeatureFileError):
    pass


class NonFiniteError(FeatureFileError):
    pass


class ManifestError(ValueError):
    pass


class DimensionMismatchError(ManifestError):
    pass


def encode_features(features: np.ndarray) -> bytes:
    x = np.asarray(features)
    if x.ndim != 2:
        raise ValueError("features must be a 2-d matrix")
    if not np.all(np.isfinite(x)):
        raise NonFiniteError("refusing to write non-finite feature values")
    P, D = x.shape
    with np.errstate(over="ignore"):
        payload = np.ascontiguousarray(x, dtype="<f4")
    if not np.all(np.isfinite(payload)):
        raise NonFiniteError("feature values overflow binary32")
    return _HEADER.pack(MAGIC, VERSION, P, D) + payload.tobytes()


def decode_features(buf: bytes, bag_id: str = "") -> FeatureBag:
    if len(buf) < _HEADER.size:
        raise TruncatedFileError(f"{bag_id}: header needs {_HEADER.size} bytes, got {len(buf)}")
    magic, version, P, D = _HEADER.unpack_from(buf)
    if magic != MAGIC:
        raise BadMagicError(f"{bag_id}: bad magic {magic!r}")
    if version != VERSION:
        raise UnsupportedVersionError(f"{bag_id}: unsupported format version {version}")
    need = _HEADER.size + 4 * P * D
    if len(buf) < need:
        raise TruncatedFileError(f"{bag_id}: payload needs {need} bytes, got {len(buf)}")
    if len(buf) > need:
        raise FeatureFileError(f"{bag_id}: {len(buf) - need} trailing bytes after payload")
    x = np.frombuffer(buf, dtype="<f4", count=P * D, offset=_HEADER.size).reshape(P, D)
    if not np.all(np.isfinite(x)):
        raise NonFiniteError(f"{bag_id}: payload contains non-finite values")
    return FeatureBag(bag_id, x.astype(np.float64))


def write_feature_file(bag: FeatureBag, path) -> None:
    data = encode_features(bag.features)
    with open(path, "wb") as f:
        f.write(data)


def read_feature_file(path, bag_id: str | None = None) -> FeatureBag:
    path = Path(path)
    return decode_features(path.read_bytes(), path.stem if bag_id is None else bag_id)


@dataclass(frozen=True)
class ManifestEntry:
    id: str
    class_index: int
    path: str


def load_dataset(manifest_path) -> Dataset:
    manifest_path = Path(manifest_path)
    try:
        doc = json.loads(manifest_path.read_text())
        class_names = [str(c) for c in doc["class_names"]]
        entries = [ManifestEntry(str(e["id"]), int(e["class_index"]), str(e["path"])) for e in doc["entries"]]
    except (KeyError, TypeError) as exc:
        raise ManifestError(f"{manifest_path}: malformed manifest ({exc})") from exc
    C = len(class_names)
    root = manifest_path.parent
    bags, labels = [], []
    D = None
    for e in entries:
        if not 0 <= e.class_index < C:
            raise ManifestError(f"entry {e.id!r}: unknown class_index {e.class_index}")
        fp = root / e.path
        if not fp.is_file():
            raise FileNotFoundError(f"entry {e.id!r}: feature file {fp} not found")
        bag = read_feature_file(fp, e.id)
        if D is None:
            D = bag.D
        elif bag.D != D:
            raise DimensionMismatchError(f"entry {e.id!r}: D={bag.D}, expected D={D}")
        bags.append(bag)
        labels.append(one_hot(e.class_index, C))
    return Dataset(tuple(bags), tuple(labels), tuple(class_names))


def save_dataset(dataset: Dataset, out_dir, manifest_name: str = "manifest.json") -> Path:
    """Write one feature file per bag plus a manifest; returns the manifest path.

    Only hard (argmax) labels are representable in a manifest.
    """
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    entries = []
    for bag, lab in zip(dataset.bags, dataset.labels):
        name = f"{bag.id}.milf"
        write_feature_file(bag, out_dir / name)
        entries.append(asdict(ManifestEntry(bag.id, lab.hard, name)))
    doc = {"class_names": list(dataset.class_names), "entries": entries}
    mp = out_dir / manifest_name
    mp.write_text(json.dumps(doc, indent=2) + "\n")
    return mp


@dataclass(frozen=True)
class SyntheticSpec:
    n_bags_per_class: int = 20
    P: int = 64
    D: int = 16
    class_separation: float = 10.0
    inter_wsi_sigma: float = 1.0
    intra_wsi_sigma: float = 1.0
    seed: int = 0
    n_classes: int = 2

    def validate(self) -> None:
        for name in ("n_bags_per_class", "P", "D"):
            if int(getattr(self, name)) < 1:
                raise ValueError(f"{name} must be >= 1, got {getattr(self, name)}")
        if self.n_classes < 2:
            raise ValueError(f"n_classes must be >= 2, got {self.n_classes}")
        for name in ("class_separation", "inter_wsi_sigma", "intra_wsi_sigma"):
            v = float(getattr(self, name))
            if not np.isfinite(v) or v < 0:
                raise ValueError(f"{name} must be finite and >= 0, got {v}")


def _class_means(spec: SyntheticSpec, rng: RngStream) -> np.ndarray:
    # two classes sit at +-s/2 along a random unit direction; more classes
    # go on a regular simplex scaled to pairwise distance s
    C, D, s = spec.n_classes, spec.D, spec.class_separation
    if C == 2:
        u = rng.normal(size=D)
        u /= np.linalg.norm(u)
        return np.stack([-0.5 * s * u, 0.5 * s * u])
    if D < C:
        raise ValueError(f"{C} equidistant class means need D >= {C}, got D={D}")
    basis, _ = np.linalg.qr(rng.normal(size=(D, C)))
    centred = np.eye(C) - 1.0 / C
    return (s / np.sqrt(2.0)) * centred @ basis.T


def generate_synthetic(spec: SyntheticSpec) -> Dataset:
    """Bags of ``class mean + per-bag offset + per-patch noise``."""
    spec.validate()
    rng = RngStream(spec.seed, 0)
    means = _class_means(spec, rng)
    bags, labels = [], []
    names = tuple(f"class{c}" for c in range(spec.n_classes))
    for c in range(spec.n_classes):
        for b in range(spec.n_bags_per_class):
            offset = rng.normal(0.0, spec.inter_wsi_sigma, size=spec.D)
            noise = rng.normal(0.0, spec.intra_wsi_sigma, size=(spec.P, spec.D))
            bags.append(FeatureBag(f"{names[c]}-{b:04d}", means[c] + offset + noise))
            labels.append(one_hot(c, spec.n_classes))
    return Dataset(tuple(bags), tuple(labels), names)


