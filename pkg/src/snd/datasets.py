"""Multi-background digit datasets.

Raw grayscale digits are read from IDX containers, colorized onto a palette
of background colours and split leave-one-class-out: training images use the
seen colours only, normal test images use unseen colours only, and novel test
images draw from the combined palette.
"""

from __future__ import annotations

import gzip
import hashlib
import json
import logging
import os
import struct
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

logger = logging.getLogger(__name__)

IDX_IMAGES_MAGIC = 2051
IDX_LABELS_MAGIC = 2049
IMAGE_SUFFIXES = {".png", ".jpg", ".jpeg", ".bmp", ".gif", ".tif", ".tiff", ".webp"}

BACKGROUND_MODES = ("unseen_only", "seen_only", "seen_and_unseen")


class IdxFormatError(ValueError):
    """Bad magic number or inconsistent header in an IDX file."""


class IdxLengthError(ValueError):
    """IDX payload shorter than its header announces."""


class CapacityError(ValueError):
    """A split asks for more samples than the source digits provide."""


class ClassMappingError(KeyError):
    """A class folder has no entry in the class map."""


# --------------------------------------------------------------------------
# IDX container
# --------------------------------------------------------------------------


def _read_idx(path, expected_magic: int) -> tuple[tuple[int, ...], bytes]:
    data = Path(path).read_bytes()
    if data[:2] == b"\x1f\x8b":
        data = gzip.decompress(data)
    if len(data) < 8:
        raise IdxLengthError(f"{path}: {len(data)} bytes, too short for an IDX header")
    magic = struct.unpack(">I", data[:4])[0]
    if magic != expected_magic:
        raise IdxFormatError(f"{path}: magic {magic}, expected {expected_magic}")
    ndim = magic & 0xFF
    header = 4 + 4 * ndim
    if len(data) < header:
        raise IdxLengthError(f"{path}: truncated header")
    dims = struct.unpack(">" + "I" * ndim, data[4:header])
    n_bytes = int(np.prod(dims))
    payload = data[header:]
    if len(payload) < n_bytes:
        raise IdxLengthError(f"{path}: payload has {len(payload)} bytes, header announces {n_bytes}")
    return dims, payload[:n_bytes]


def read_idx_images(path) -> np.ndarray:
    """Read an IDX image file (magic 2051) into an ``(n, H, W)`` float array in [0, 1]."""
    dims, payload = _read_idx(path, IDX_IMAGES_MAGIC)
    pixels = np.frombuffer(payload, dtype=np.uint8).reshape(dims)
    return pixels.astype(np.float32) / 255.0


def read_idx_labels(path) -> np.ndarray:
    dims, payload = _read_idx(path, IDX_LABELS_MAGIC)
    return np.frombuffer(payload, dtype=np.uint8).reshape(dims).astype(np.int64)


def write_idx(path, array: np.ndarray) -> None:
    """Write a uint8 array as IDX (1-D arrays as labels, 3-D as images)."""
    array = np.ascontiguousarray(array, dtype=np.uint8)
    magic = 0x0800 | array.ndim
    header = struct.pack(">I", magic) + struct.pack(">" + "I" * array.ndim, *array.shape)
    Path(path).write_bytes(header + array.tobytes())


def load_idx_digits(images_path, labels_path) -> tuple[np.ndarray, np.ndarray]:
    """Read a companion pair of IDX files and return ``(images, labels)``."""
    images = read_idx_images(images_path)
    labels = read_idx_labels(labels_path)
    if len(images) != len(labels):
        raise IdxFormatError(f"{len(images)} images but {len(labels)} labels")
    return images, labels


def find_idx_pair(directory) -> tuple[Path, Path]:
    """Locate a training image/label IDX pair in ``directory``, plain or gzipped."""
    directory = Path(directory)
    candidates = [
        ("train-images-idx3-ubyte", "train-labels-idx1-ubyte"),
        ("train-images.idx3-ubyte", "train-labels.idx1-ubyte"),
        ("images-idx3-ubyte", "labels-idx1-ubyte"),
    ]
    for img, lab in candidates:
        for suffix in ("", ".gz"):
            pair = directory / (img + suffix), directory / (lab + suffix)
            if pair[0].is_file() and pair[1].is_file():
                return pair
    expected = ", ".join(f"{directory / i} + {directory / l}" for i, l in candidates)
    raise FileNotFoundError(f"no IDX image/label pair found; expected one of: {expected}")


# --------------------------------------------------------------------------
# Palettes and colorization
# --------------------------------------------------------------------------


@dataclass(frozen=True)
class Palette:
    """Seen (training) and unseen (test-only) background colours.

    Background ids index the combined list ``train_colors + test_unseen_colors``.
    """

    train_colors: tuple[tuple[float, float, float], ...]
    test_unseen_colors: tuple[tuple[float, float, float], ...]
    names: tuple[str, ...] = ()

    def __post_init__(self):
        object.__setattr__(self, "train_colors", tuple(tuple(float(v) for v in c) for c in self.train_colors))
        object.__setattr__(
            self, "test_unseen_colors", tuple(tuple(float(v) for v in c) for c in self.test_unseen_colors)
        )
        object.__setattr__(self, "names", tuple(self.names))
        if len(self.train_colors) < 1:
            raise ValueError("palette needs at least one training colour")
        for key, colors in (("train_colors", self.train_colors), ("test_unseen_colors", self.test_unseen_colors)):
            for c in colors:
                if len(c) != 3 or not all(0.0 <= v <= 1.0 for v in c):
                    raise ValueError(f"{key}: colour {c} must be an RGB triple in [0, 1]")
        combined = self.colors
        if len(set(combined)) != len(combined):
            raise ValueError("palette colours must be pairwise distinct")
        if self.names and len(self.names) != len(combined):
            raise ValueError("one name per colour required")

    @property
    def K(self) -> int:
        return len(self.train_colors)

    @property
    def colors(self) -> tuple[tuple[float, float, float], ...]:
        return self.train_colors + self.test_unseen_colors

    @property
    def seen_ids(self) -> np.ndarray:
        return np.arange(self.K)

    @property
    def unseen_ids(self) -> np.ndarray:
        return np.arange(self.K, len(self.colors))

    def to_dict(self) -> dict:
        return {
            "train_colors": [list(c) for c in self.train_colors],
            "test_unseen_colors": [list(c) for c in self.test_unseen_colors],
            "names": list(self.names),
        }

    @classmethod
    def from_dict(cls, d: dict) -> "Palette":
        return cls(
            train_colors=tuple(tuple(c) for c in d["train_colors"]),
            test_unseen_colors=tuple(tuple(c) for c in d["test_unseen_colors"]),
            names=tuple(d.get("names", ())),
        )


def default_palette() -> Palette:
    return Palette(
        train_colors=((1.0, 1.0, 1.0), (1.0, 1.0, 0.0), (0.0, 0.0, 1.0)),
        test_unseen_colors=((0.0, 1.0, 0.0),),
        names=("white", "yellow", "blue", "green"),
    )


def colorize(digits: np.ndarray, bg) -> np.ndarray:
    """Paint dark strokes on a coloured field: ``out_c = (1 - v) * bg_c``.

    ``digits`` is ``(H, W)`` or ``(n, H, W)``; ``bg`` an RGB triple or an
    ``(n, 3)`` array of per-image colours. Returns channel-first images.
    """
    digits = np.asarray(digits, dtype=np.float32)
    bg = np.asarray(bg, dtype=np.float32)
    if np.any(bg < 0) or np.any(bg > 1):
        raise ValueError("background components must lie in [0, 1]")
    if digits.ndim == 2:
        return (1.0 - digits)[None, :, :] * bg[:, None, None]
    if bg.ndim == 1:
        bg = np.broadcast_to(bg, (len(digits), 3))
    return (1.0 - digits)[:, None, :, :] * bg[:, :, None, None]


# --------------------------------------------------------------------------
# Splits
# --------------------------------------------------------------------------


@dataclass(frozen=True)
class SplitSpec:
    normal_classes: tuple[int, ...]
    novel_class: int
    n_train: int = 2000
    n_test: int = 1000
    novel_fraction: float = 0.1
    seed: int = 0
    stratified: bool = True
    normal_test_background_mode: str = "unseen_only"
    novel_test_background_mode: str = "seen_and_unseen"

    def __post_init__(self):
        object.__setattr__(self, "normal_classes", tuple(sorted(int(c) for c in self.normal_classes)))
        if self.novel_class in self.normal_classes:
            raise ValueError("novel_class must not be one of the normal classes")
        if self.n_train <= 0:
            raise ValueError("n_train must be positive")
        if self.n_test < 0 or not 0.0 <= self.novel_fraction <= 1.0:
            raise ValueError("n_test must be >= 0 and novel_fraction in [0, 1]")
        for mode in (self.normal_test_background_mode, self.novel_test_background_mode):
            if mode not in BACKGROUND_MODES:
                raise ValueError(f"unknown background mode {mode!r}; expected one of {BACKGROUND_MODES}")

    @classmethod
    def leave_one_out(cls, novel_class: int, classes=range(10), **kw) -> "SplitSpec":
        return cls(normal_classes=tuple(c for c in classes if c != novel_class), novel_class=novel_class, **kw)

    def to_dict(self) -> dict:
        d = asdict(self)
        d["normal_classes"] = list(self.normal_classes)
        return d


@dataclass
class ImageSet:
    """A batch of colorized images with their labels.

    ``background_ids`` is kept for evaluation; :meth:`training_view` is what a
    learner sees. ``is_novel`` is ``None`` for training sets.
    """

    images: np.ndarray
    labels: np.ndarray
    background_ids: np.ndarray
    is_novel: np.ndarray | None = None

    def __len__(self) -> int:
        return len(self.images)

    def training_view(self) -> np.ndarray:
        return self.images

    def subset(self, idx) -> "ImageSet":
        return ImageSet(
            self.images[idx],
            self.labels[idx],
            self.background_ids[idx],
            None if self.is_novel is None else self.is_novel[idx],
        )


def _backgrounds_for(mode: str, palette: Palette) -> np.ndarray:
    if mode == "unseen_only":
        ids = palette.unseen_ids
    elif mode == "seen_only":
        ids = palette.seen_ids
    else:
        ids = np.arange(len(palette.colors))
    if len(ids) == 0:
        raise ValueError(f"background mode {mode!r} selects no colours from the palette")
    return ids


def _stratified_counts(n: int, n_classes: int) -> np.ndarray:
    counts = np.full(n_classes, n // n_classes)
    counts[: n % n_classes] += 1
    return counts


def _draw(pools: dict[int, list[int]], classes, n: int, stratified: bool, rng) -> list[int]:
    """Draw ``n`` indices without replacement from per-class pools (consumes the pools)."""
    classes = list(classes)
    if stratified:
        counts = _stratified_counts(n, len(classes))
    else:
        avail = np.array([len(pools[c]) for c in classes])
        if avail.sum() < n:
            raise CapacityError(f"requested {n} samples from classes {classes}, only {avail.sum()} available")
        merged = np.concatenate([np.full(a, i) for i, a in enumerate(avail)])
        counts = np.bincount(rng.choice(merged, size=n, replace=False), minlength=len(classes))
    chosen = []
    for c, k in zip(classes, counts):
        if k > len(pools[c]):
            raise CapacityError(f"class {c}: need {k} samples, only {len(pools[c])} available")
        chosen.extend(pools[c][:k])
        del pools[c][:k]
    return chosen


def build_split(digits: np.ndarray, labels: np.ndarray, palette: Palette, spec: SplitSpec) -> tuple[ImageSet, ImageSet]:
    """Materialize one leave-one-class-out train/test split.

    Train and test images come from disjoint source digits. Deterministic in
    ``spec.seed``.
    """
    if len(palette.test_unseen_colors) < 1:
        raise ValueError("palette needs at least one unseen colour")
    labels = np.asarray(labels)
    present = set(np.unique(labels).tolist())
    missing = (set(spec.normal_classes) | {spec.novel_class}) - present
    if missing:
        raise CapacityError(f"no source digits for classes {sorted(missing)}")

    rng = np.random.default_rng(spec.seed)
    pools = {int(c): rng.permutation(np.flatnonzero(labels == c)).tolist() for c in sorted(present)}
    colors = np.asarray(palette.colors, dtype=np.float32)

    train_idx = np.asarray(_draw(pools, spec.normal_classes, spec.n_train, spec.stratified, rng), dtype=np.int64)
    train_idx = rng.permutation(train_idx)
    train_bg = rng.choice(palette.seen_ids, size=len(train_idx))

    n_novel = int(round(spec.n_test * spec.novel_fraction))
    n_normal = spec.n_test - n_novel
    normal_idx = _draw(pools, spec.normal_classes, n_normal, spec.stratified, rng)
    novel_idx = _draw(pools, [spec.novel_class], n_novel, True, rng)
    normal_bg = rng.choice(_backgrounds_for(spec.normal_test_background_mode, palette), size=len(normal_idx))
    novel_bg = rng.choice(_backgrounds_for(spec.novel_test_background_mode, palette), size=len(novel_idx))

    test_idx = np.asarray(normal_idx + novel_idx, dtype=np.int64)
    test_bg = np.concatenate([normal_bg, novel_bg]).astype(np.int64)
    perm = rng.permutation(len(test_idx))
    test_idx, test_bg = test_idx[perm], test_bg[perm]

    train = ImageSet(
        images=colorize(digits[train_idx], colors[train_bg]),
        labels=labels[train_idx].astype(np.int64),
        background_ids=train_bg.astype(np.int64),
    )
    test_labels = labels[test_idx].astype(np.int64)
    test = ImageSet(
        images=colorize(digits[test_idx], colors[test_bg]) if len(test_idx) else np.zeros((0, 3) + digits.shape[1:], np.float32),
        labels=test_labels,
        background_ids=test_bg,
        is_novel=test_labels == spec.novel_class,
    )
    return train, test


# --------------------------------------------------------------------------
# Image folders
# --------------------------------------------------------------------------


@dataclass
class FolderIngest:
    samples: ImageSet
    n_skipped: int = 0
    skipped: list[str] = field(default_factory=list)
    domains: list[str] = field(default_factory=list)


def _load_image(path: Path, size: int) -> np.ndarray:
    from PIL import Image

    with Image.open(path) as im:
        im = im.convert("RGB").resize((size, size), Image.BILINEAR)
        arr = np.asarray(im, dtype=np.float32) / 255.0
    return arr.transpose(2, 0, 1)


def ingest_image_folder(root, class_map: dict[str, int], size: int = 28) -> FolderIngest:
    """Load ``root/<class>/<image>`` or ``root/<domain>/<class>/<image>`` trees.

    With a domain level, ``background_ids`` holds the sorted domain index;
    otherwise it is 0 everywhere. Undecodable files are skipped and counted.
    """
    root = Path(root)
    subdirs = sorted(p for p in root.iterdir() if p.is_dir())
    has_domains = bool(subdirs) and all(p.name not in class_map for p in subdirs)
    if has_domains:
        layout = [(i, d) for i, d in enumerate(subdirs)]
    else:
        layout = [(0, root)]

    images, labels, bgs, skipped = [], [], [], []
    for domain_id, base in layout:
        for class_dir in sorted(p for p in base.iterdir() if p.is_dir()):
            if class_dir.name not in class_map:
                raise ClassMappingError(f"class folder {class_dir} has no entry in the class map")
            for f in sorted(class_dir.iterdir()):
                if not f.is_file() or f.suffix.lower() not in IMAGE_SUFFIXES:
                    continue
                try:
                    images.append(_load_image(f, size))
                except (OSError, ValueError) as exc:
                    logger.warning("skipping undecodable image %s: %s", f, exc)
                    skipped.append(str(f))
                    continue
                labels.append(class_map[class_dir.name])
                bgs.append(domain_id)

    stacked = np.stack(images) if images else np.zeros((0, 3, size, size), np.float32)
    return FolderIngest(
        samples=ImageSet(stacked, np.asarray(labels, np.int64), np.asarray(bgs, np.int64)),
        n_skipped=len(skipped),
        skipped=skipped,
        domains=[d.name for d in subdirs] if has_domains else [],
    )


# --------------------------------------------------------------------------
# Persistence
# --------------------------------------------------------------------------

_ARRAYS = {
    "train": ("images", "labels", "background_ids"),
    "test": ("images", "labels", "background_ids", "is_novel"),
}
MANIFEST = "manifest.json"


def _sha256_arrays(arrays: list[np.ndarray]) -> str:
    h = hashlib.sha256()
    for a in arrays:
        a = np.ascontiguousarray(a)
        h.update(str(a.dtype).encode())
        h.update(str(a.shape).encode())
        h.update(a.tobytes())
    return h.hexdigest()


def save_dataset(directory, train: ImageSet, test: ImageSet, palette: Palette, spec: SplitSpec, extra: dict | None = None) -> dict:
    """Write split arrays as ``.npy`` files plus a JSON manifest; returns the manifest."""
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    arrays = []
    for part, ds in (("train", train), ("test", test)):
        for name in _ARRAYS[part]:
            a = getattr(ds, name)
            a = a.astype(np.float32) if name == "images" else a.astype(bool if name == "is_novel" else np.int64)
            np.save(directory / f"{part}_{name}.npy", a, allow_pickle=False)
            arrays.append(a)
    manifest = {
        "format": "snd-dataset/1",
        "palette": palette.to_dict(),
        "spec": spec.to_dict(),
        "counts": {
            "train": len(train),
            "test": len(test),
            "test_novel": int(test.is_novel.sum()),
            "test_normal": int((~test.is_novel).sum()),
        },
        "seed": spec.seed,
        "checksum": _sha256_arrays(arrays),
    }
    if extra:
        manifest.update(extra)
    (directory / MANIFEST).write_text(json.dumps(manifest, indent=2, sort_keys=True) + "\n")
    return manifest


def load_dataset(directory, verify: bool = True) -> tuple[ImageSet, ImageSet, dict]:
    directory = Path(directory)
    manifest_path = directory / MANIFEST
    if not manifest_path.is_file():
        raise FileNotFoundError(f"{manifest_path} not found; run gen-data first")
    manifest = json.loads(manifest_path.read_text())
    parts, arrays = {}, []
    for part, names in _ARRAYS.items():
        loaded = {n: np.load(directory / f"{part}_{n}.npy", allow_pickle=False) for n in names}
        arrays.extend(loaded[n] for n in names)
        parts[part] = ImageSet(**loaded)
    if verify and _sha256_arrays(arrays) != manifest["checksum"]:
        raise ValueError(f"{directory}: array checksum does not match manifest")
    return parts["train"], parts["test"], manifest


def default_mnist_dir() -> str | None:
    return os.environ.get("SND_MNIST_DIR")
