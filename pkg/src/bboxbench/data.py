"""Dataset ingestion and synthesis: IDX files and seeded generators.

Synthetic datasets are the desk-scale stand-in for sampling real validation
images; they are deterministic per seed and carry a checksum manifest so
benchmark runs can be replayed bit-for-bit.
"""

import hashlib
import struct
from dataclasses import dataclass, field

import numpy as np

from .tensor import make_rng

IDX_IMAGES_MAGIC = 0x00000803
IDX_LABELS_MAGIC = 0x00000801


class DatasetError(ValueError):
    pass


class BadMagicError(DatasetError):
    pass


class TruncatedPayloadError(DatasetError):
    pass


class CountMismatchError(DatasetError):
    pass


@dataclass
class DatasetManifest:
    source: str  # "idx" | "synthetic:<generator>"
    shape: tuple  # (c, h, w)
    class_count: int
    size: int
    checksum: str
    params: dict = field(default_factory=dict)

    def to_dict(self):
        return {
            "source": self.source,
            "shape": list(self.shape),
            "class_count": self.class_count,
            "size": self.size,
            "checksum": self.checksum,
            "params": self.params,
        }


@dataclass
class Dataset:
    images: np.ndarray  # (n, c, h, w) float64 in [0, 1]
    labels: np.ndarray  # (n,) int64
    n_classes: int
    manifest: DatasetManifest

    def __len__(self):
        return len(self.labels)


def _checksum(images, labels):
    h = hashlib.sha256()
    h.update(np.ascontiguousarray(images, dtype="<f8").tobytes())
    h.update(np.ascontiguousarray(labels, dtype="<i8").tobytes())
    return h.hexdigest()


def _read_exact(f, n, what):
    data = f.read(n)
    if len(data) != n:
        raise TruncatedPayloadError(f"truncated {what}: wanted {n} bytes, got {len(data)}")
    return data


def ingest_idx(images_path, labels_path):
    """Parse big-endian IDX image/label files into a Dataset.

    Pixels scale from u8 to [0, 1]. Raises BadMagicError,
    TruncatedPayloadError, or CountMismatchError as appropriate.
    """
    with open(images_path, "rb") as f:
        (magic,) = struct.unpack(">I", _read_exact(f, 4, "image header"))
        if magic != IDX_IMAGES_MAGIC:
            raise BadMagicError(
                f"bad image magic 0x{magic:08x}, expected 0x{IDX_IMAGES_MAGIC:08x}"
            )
        count, rows, cols = struct.unpack(">III", _read_exact(f, 12, "image dimensions"))
        payload = _read_exact(f, count * rows * cols, "image payload")
        if f.read(1):
            raise TruncatedPayloadError("trailing bytes after image payload")
        pixels = np.frombuffer(payload, dtype=np.uint8)
        images = pixels.reshape(count, 1, rows, cols).astype(np.float64) / 255.0

    with open(labels_path, "rb") as f:
        (magic,) = struct.unpack(">I", _read_exact(f, 4, "label header"))
        if magic != IDX_LABELS_MAGIC:
            raise BadMagicError(
                f"bad label magic 0x{magic:08x}, expected 0x{IDX_LABELS_MAGIC:08x}"
            )
        (label_count,) = struct.unpack(">I", _read_exact(f, 4, "label count"))
        labels = np.frombuffer(_read_exact(f, label_count, "label payload"), dtype=np.uint8)
        if f.read(1):
            raise TruncatedPayloadError("trailing bytes after label payload")

    if label_count != count:
        raise CountMismatchError(f"{count} images but {label_count} labels")
    labels = labels.astype(np.int64)
    n_classes = int(labels.max()) + 1 if len(labels) else 0
    manifest = DatasetManifest(
        "idx", (1, rows, cols), n_classes, count, _checksum(images, labels),
        params={"images_path": str(images_path), "labels_path": str(labels_path)},
    )
    return Dataset(images, labels, n_classes, manifest)


def write_idx(dataset: Dataset, images_path, labels_path):
    """Serialize a single-channel dataset back to IDX (round-trip helper)."""
    n, c, h, w = dataset.images.shape
    if c != 1:
        raise DatasetError("IDX stores single-channel images")
    pixels = np.clip(np.round(dataset.images * 255.0), 0, 255).astype(np.uint8)
    with open(images_path, "wb") as f:
        f.write(struct.pack(">IIII", IDX_IMAGES_MAGIC, n, h, w))
        f.write(pixels.tobytes())
    with open(labels_path, "wb") as f:
        f.write(struct.pack(">II", IDX_LABELS_MAGIC, n))
        f.write(dataset.labels.astype(np.uint8).tobytes())


def _box_blur(img, passes=2):
    for _ in range(passes):
        padded = np.pad(img, ((0, 0), (1, 1), (1, 1)), mode="edge")
        img = (
            padded[:, :-2, :-2] + padded[:, :-2, 1:-1] + padded[:, :-2, 2:]
            + padded[:, 1:-1, :-2] + padded[:, 1:-1, 1:-1] + padded[:, 1:-1, 2:]
            + padded[:, 2:, :-2] + padded[:, 2:, 1:-1] + padded[:, 2:, 2:]
        ) / 9.0
    return img


def _blobs(n, shape, n_classes, separation, noise, rng):
    """Class-conditional Gaussians around smooth per-class template images.

    separation 0 makes every class identically distributed (chance-level
    Bayes accuracy); larger separations pull samples toward their class
    template.
    """
    c, h, w = shape
    templates = _box_blur(rng.gen.random((n_classes * c, h, w)))
    lo = templates.min(axis=(1, 2), keepdims=True)
    hi = templates.max(axis=(1, 2), keepdims=True)
    templates = ((templates - lo) / np.maximum(hi - lo, 1e-9)).reshape(n_classes, c, h, w)
    labels = rng.gen.integers(0, n_classes, size=n)
    base = 0.5 + separation * (templates[labels] - 0.5)
    images = np.clip(base + noise * rng.gen.standard_normal((n, c, h, w)), 0.0, 1.0)
    return images, labels.astype(np.int64)


def _shapes(n, shape, n_classes, noise, rng):
    """Procedural geometric classes: outlined/filled rectangles and discs,
    plus crosses and diagonal stripes for class counts above four."""
    c, h, w = shape
    if n_classes < 2:
        raise DatasetError("shapes generator needs at least 2 classes")
    if n_classes > 6:
        raise DatasetError("shapes generator supports at most 6 classes")
    labels = rng.gen.integers(0, n_classes, size=n).astype(np.int64)
    images = np.zeros((n, c, h, w))
    yy, xx = np.mgrid[0:h, 0:w]
    for i in range(n):
        gen = rng.gen
        cy = gen.uniform(0.35, 0.65) * h
        cx = gen.uniform(0.35, 0.65) * w
        r = gen.uniform(0.18, 0.3) * min(h, w)
        kind = labels[i]
        if kind == 0:  # filled rectangle
            canvas = ((np.abs(yy - cy) < r) & (np.abs(xx - cx) < r)).astype(float)
        elif kind == 1:  # filled disc
            canvas = ((yy - cy) ** 2 + (xx - cx) ** 2 < r * r).astype(float)
        elif kind == 2:  # rectangle outline
            outer = (np.abs(yy - cy) < r) & (np.abs(xx - cx) < r)
            inner = (np.abs(yy - cy) < r - 2) & (np.abs(xx - cx) < r - 2)
            canvas = (outer & ~inner).astype(float)
        elif kind == 3:  # disc outline (ring)
            d2 = (yy - cy) ** 2 + (xx - cx) ** 2
            canvas = ((d2 < r * r) & (d2 > (r - 2) ** 2)).astype(float)
        elif kind == 4:  # cross
            canvas = ((np.abs(yy - cy) < 1.5) | (np.abs(xx - cx) < 1.5)).astype(float)
            canvas *= ((np.abs(yy - cy) < r) & (np.abs(xx - cx) < r)).astype(float)
        else:  # diagonal stripes
            canvas = (((yy + xx) % 6) < 3).astype(float)
        img = 0.15 + 0.7 * canvas
        images[i] = img[None, :, :].repeat(c, axis=0)
        images[i] = np.clip(images[i] + noise * gen.standard_normal((c, h, w)), 0.0, 1.0)
    return images, labels


GENERATORS = ("blobs", "shapes")


def synth_dataset(generator, n, shape=(1, 16, 16), n_classes=4, seed=0, **params):
    """Deterministic synthetic dataset; `generator` is "blobs" or "shapes".

    blobs params: separation (default 1.0), noise (default 0.15).
    shapes params: noise (default 0.1).
    """
    rng = make_rng(seed, 0, f"dataset/{generator}")
    shape = tuple(int(d) for d in shape)
    if generator == "blobs":
        separation = float(params.pop("separation", 1.0))
        noise = float(params.pop("noise", 0.15))
        if params:
            raise DatasetError(f"unknown blobs params: {sorted(params)}")
        images, labels = _blobs(n, shape, n_classes, separation, noise, rng)
        used = {"separation": separation, "noise": noise}
    elif generator == "shapes":
        noise = float(params.pop("noise", 0.1))
        if params:
            raise DatasetError(f"unknown shapes params: {sorted(params)}")
        images, labels = _shapes(n, shape, n_classes, noise, rng)
        used = {"noise": noise}
    else:
        raise DatasetError(f"unknown generator {generator!r} (built-ins: {GENERATORS})")
    manifest = DatasetManifest(
        f"synthetic:{generator}", shape, n_classes, n, _checksum(images, labels),
        params={**used, "seed": seed, "n": n, "n_classes": n_classes},
    )
    return Dataset(images, labels, int(n_classes), manifest)
