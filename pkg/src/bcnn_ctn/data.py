"""Datasets: directory ingestion, augmentation, class balancing, stratified
splits, manifest CSV and a synthetic textured-blob generator.

Images are float64 arrays [C, H, W] with values in [0, 1]; ``to_signed``
maps them to [-1, 1] just before they enter the network.
"""

from __future__ import annotations

import csv
import logging
from dataclasses import dataclass
from pathlib import Path

import numpy as np
from PIL import Image, UnidentifiedImageError
from scipy import ndimage

logger = logging.getLogger(__name__)

IMAGE_SUFFIXES = {".ppm", ".pnm", ".png", ".bmp", ".tif", ".tiff", ".jpg", ".jpeg"}
MANIFEST = "manifest.csv"


class DatasetError(ValueError):
    pass


@dataclass
class Dataset:
    images: np.ndarray  # [n, C, H, W] in [0, 1]
    labels: np.ndarray  # [n] ints in [0, k)
    class_names: list[str]
    provenance: str = "synthetic"
    paths: list[str] | None = None

    def __post_init__(self):
        self.images = np.asarray(self.images, dtype=np.float64)
        self.labels = np.asarray(self.labels, dtype=np.intp)
        if self.images.ndim != 4 or len(self.images) != len(self.labels):
            raise DatasetError(f"images {self.images.shape} and labels {self.labels.shape} do not match")
        if len(self.labels) and (self.labels.min() < 0 or self.labels.max() >= len(self.class_names)):
            raise DatasetError("labels outside [0, k)")

    @property
    def num_classes(self) -> int:
        return len(self.class_names)

    @property
    def image_shape(self) -> tuple[int, int, int]:
        return tuple(self.images.shape[1:])

    @property
    def samples(self) -> list[tuple[np.ndarray, int]]:
        return list(zip(self.images, self.labels.tolist()))

    def __len__(self):
        return len(self.labels)

    def class_counts(self) -> np.ndarray:
        return np.bincount(self.labels, minlength=self.num_classes)

    def subset(self, rows) -> "Dataset":
        rows = np.asarray(rows, dtype=np.intp)
        paths = [self.paths[i] for i in rows] if self.paths is not None else None
        return Dataset(self.images[rows], self.labels[rows], list(self.class_names), self.provenance, paths)


def to_signed(images: np.ndarray) -> np.ndarray:
    """[0, 1] -> [-1, 1]."""
    return images * 2.0 - 1.0


# --------------------------------------------------------------------------
# loading


def resize_bilinear(image: np.ndarray, size: tuple[int, int]) -> np.ndarray:
    """Bilinear resize of [C, H, W] with corner pixels mapped onto corner pixels."""
    c, h, w = image.shape
    oh, ow = size
    if (h, w) == (oh, ow):
        return image.copy()
    ys = np.linspace(0, h - 1, oh) if oh > 1 else np.zeros(1)
    xs = np.linspace(0, w - 1, ow) if ow > 1 else np.zeros(1)
    y0 = np.floor(ys).astype(int)
    x0 = np.floor(xs).astype(int)
    y1, x1 = np.minimum(y0 + 1, h - 1), np.minimum(x0 + 1, w - 1)
    wy = (ys - y0)[None, :, None]
    wx = (xs - x0)[None, None, :]
    top = image[:, y0][:, :, x0] * (1 - wx) + image[:, y0][:, :, x1] * wx
    bot = image[:, y1][:, :, x0] * (1 - wx) + image[:, y1][:, :, x1] * wx
    return top * (1 - wy) + bot * wy


def read_image(path, image_size: tuple[int, int] | None = None) -> np.ndarray:
    try:
        with Image.open(path) as im:
            arr = np.asarray(im.convert("RGB"), dtype=np.float64) / 255.0
    except (OSError, UnidentifiedImageError) as e:
        raise DatasetError(f"cannot read image {path}: {e}") from e
    arr = arr.transpose(2, 0, 1)
    return resize_bilinear(arr, image_size) if image_size else arr


def write_ppm(path, image: np.ndarray):
    """Write a [C, H, W] image in [0, 1] as binary PPM (P6)."""
    arr = np.clip(np.rint(np.asarray(image) * 255.0), 0, 255).astype(np.uint8).transpose(1, 2, 0)
    if arr.shape[2] == 1:
        arr = np.repeat(arr, 3, axis=2)
    h, w, _ = arr.shape
    with open(path, "wb") as f:
        f.write(f"P6\n{w} {h}\n255\n".encode())
        f.write(arr.tobytes())


def load_directory(root, image_size: tuple[int, int]) -> Dataset:
    """Read ``root/<class_name>/<image>``; class ids follow sorted directory names."""
    root = Path(root)
    if not root.is_dir():
        raise DatasetError(f"{root} is not a directory")
    classes = sorted(p.name for p in root.iterdir() if p.is_dir())
    if len(classes) < 1:
        raise DatasetError(f"{root} has no class subdirectories")
    images, labels, paths = [], [], []
    for cid, name in enumerate(classes):
        files = sorted(p for p in (root / name).iterdir() if p.suffix.lower() in IMAGE_SUFFIXES)
        if not files:
            raise DatasetError(f"class directory {root / name} contains no images")
        for f in files:
            images.append(read_image(f, image_size))
            labels.append(cid)
            paths.append(f.relative_to(root).as_posix())
    return Dataset(np.stack(images), np.array(labels), classes, "loaded", paths)


def write_directory(ds: Dataset, root, splits: dict[str, np.ndarray] | None = None) -> Path:
    """Write ``ds`` as PPM files under ``root/<class>/`` plus ``manifest.csv``."""
    root = Path(root)
    root.mkdir(parents=True, exist_ok=True)
    per_class = np.zeros(ds.num_classes, dtype=int)
    paths = []
    for img, lab in zip(ds.images, ds.labels):
        d = root / ds.class_names[lab]
        d.mkdir(exist_ok=True)
        rel = f"{ds.class_names[lab]}/{per_class[lab]:05d}.ppm"
        per_class[lab] += 1
        write_ppm(root / rel, img)
        paths.append(rel)
    ds.paths = paths
    write_manifest(root / MANIFEST, ds, splits)
    return root


def split_column(n: int, splits: dict[str, np.ndarray] | None) -> list[str]:
    col = [""] * n
    for name, rows in (splits or {}).items():
        for r in rows:
            col[r] = name
    return col


def write_manifest(path, ds: Dataset, splits: dict[str, np.ndarray] | None = None):
    if ds.paths is None:
        raise DatasetError("dataset has no file paths to list")
    col = split_column(len(ds), splits)
    with open(path, "w", newline="") as f:
        w = csv.writer(f, lineterminator="\n")
        w.writerow(["path", "class_id", "split"])
        for p, lab, s in zip(ds.paths, ds.labels, col):
            w.writerow([p, int(lab), s])


def read_manifest(path) -> list[dict]:
    with open(path, newline="") as f:
        rows = list(csv.DictReader(f))
    for r in rows:
        r["class_id"] = int(r["class_id"])
    return rows


def manifest_splits(ds: Dataset, manifest_rows: list[dict]) -> dict[str, np.ndarray] | None:
    """Split row indices recorded in a manifest, or None if it assigns none."""
    where = {p: i for i, p in enumerate(ds.paths or [])}
    out: dict[str, list[int]] = {}
    for r in manifest_rows:
        if r["split"] and r["path"] in where:
            out.setdefault(r["split"], []).append(where[r["path"]])
    if not out:
        return None
    return {k: np.array(sorted(v), dtype=np.intp) for k, v in out.items()}


# --------------------------------------------------------------------------
# augmentation


@dataclass(frozen=True)
class AugmentConfig:
    rotation_range: float = 0.3  # fraction of pi radians
    zoom_range: float = 0.3
    horizontal_flip: bool = True
    rescale_to_unit: bool = True
    normalize_range: tuple[float, float] = (-1.0, 1.0)

    def __post_init__(self):
        if self.rotation_range < 0 or self.zoom_range < 0:
            raise ValueError("augmentation ranges must be non-negative")
        if not self.zoom_range < 1:
            raise ValueError("zoom_range must be < 1")

    @classmethod
    def disabled(cls) -> "AugmentConfig":
        return cls(rotation_range=0.0, zoom_range=0.0, horizontal_flip=False)


def affine(image: np.ndarray, angle: float, zoom: float, flip: bool) -> np.ndarray:
    """Rotate by ``angle`` radians and zoom by ``zoom`` about the centre; edges replicated."""
    if flip:
        image = image[:, :, ::-1]
    if angle == 0.0 and zoom == 1.0:
        return np.ascontiguousarray(image)
    _, h, w = image.shape
    centre = np.array([(h - 1) / 2.0, (w - 1) / 2.0])
    cos, sin = np.cos(angle), np.sin(angle)
    # output pixel o samples input at centre + M (o - centre)
    m = np.array([[cos, sin], [-sin, cos]]) / zoom
    offset = centre - m @ centre
    out = np.empty_like(image)
    for c in range(image.shape[0]):
        out[c] = ndimage.affine_transform(image[c], m, offset=offset, order=1, mode="nearest")
    return out


def augment(image: np.ndarray, config: AugmentConfig, rng: np.random.Generator,
            force_flip: bool | None = None) -> np.ndarray:
    angle = rng.uniform(-config.rotation_range, config.rotation_range) * np.pi if config.rotation_range else 0.0
    zoom = rng.uniform(1 - config.zoom_range, 1 + config.zoom_range) if config.zoom_range else 1.0
    if force_flip is not None:
        flip = force_flip
    else:
        flip = bool(config.horizontal_flip and rng.random() < 0.5)
    return affine(image, angle, zoom, flip)


def augment_batch(images: np.ndarray, config: AugmentConfig, rng: np.random.Generator) -> np.ndarray:
    return np.stack([augment(im, config, rng) for im in images])


def balance_classes(ds: Dataset, target_per_class: int, rng: np.random.Generator,
                    config: AugmentConfig | None = None) -> Dataset:
    """Exactly ``target_per_class`` samples per class.

    Surplus classes are uniformly subsampled; deficits are filled with
    augmented copies of randomly chosen originals (originals are kept).
    """
    if target_per_class < 1:
        raise ValueError("target_per_class must be >= 1")
    config = config or AugmentConfig()
    images, labels, paths = [], [], []
    for c in range(ds.num_classes):
        rows = np.flatnonzero(ds.labels == c)
        if len(rows) == 0:
            raise DatasetError(f"class {ds.class_names[c]!r} is empty")
        if len(rows) >= target_per_class:
            keep = np.sort(rng.choice(rows, size=target_per_class, replace=False))
            images.extend(ds.images[keep])
            labels.extend([c] * target_per_class)
            paths.extend(ds.paths[i] if ds.paths else None for i in keep)
            continue
        images.extend(ds.images[rows])
        labels.extend([c] * len(rows))
        paths.extend(ds.paths[i] if ds.paths else None for i in rows)
        for src in rng.choice(rows, size=target_per_class - len(rows)):
            images.append(augment(ds.images[src], config, rng))
            labels.append(c)
            paths.append(None)
    has_paths = ds.paths is not None
    return Dataset(np.stack(images), np.array(labels), list(ds.class_names), ds.provenance,
                   paths if has_paths else None)


# --------------------------------------------------------------------------
# splits


@dataclass(frozen=True)
class SplitSpec:
    train_fraction: float = 0.8
    test_fraction: float = 0.2
    validation_fraction_of_train: float = 0.1
    seed: int = 0

    def __post_init__(self):
        if abs(self.train_fraction + self.test_fraction - 1.0) > 1e-9:
            raise ValueError("train_fraction + test_fraction must equal 1")
        if not (0 < self.train_fraction < 1 and 0 <= self.validation_fraction_of_train < 1):
            raise ValueError("fractions out of range")

    @classmethod
    def sevenths(cls, seed: int = 0) -> "SplitSpec":
        """Five parts train, one validation, one test."""
        return cls(train_fraction=6 / 7, test_fraction=1 / 7, validation_fraction_of_train=1 / 6, seed=seed)


def split_indices(labels, spec: SplitSpec) -> dict[str, np.ndarray]:
    """Stratified, disjoint, exhaustive row indices for train / validation / test."""
    labels = np.asarray(labels)
    rng = np.random.default_rng(spec.seed)
    parts = {"train": [], "validation": [], "test": []}
    for c in np.unique(labels):
        rows = np.flatnonzero(labels == c)
        if len(rows) < 3:
            raise DatasetError(f"class {c} has {len(rows)} samples; at least 3 are needed to stratify")
        rows = rng.permutation(rows)
        n_test = int(round(len(rows) * spec.test_fraction))
        n_test = min(max(n_test, 1), len(rows) - 2)
        n_trainval = len(rows) - n_test
        n_val = int(round(n_trainval * spec.validation_fraction_of_train))
        n_val = min(max(n_val, 1 if spec.validation_fraction_of_train > 0 else 0), n_trainval - 1)
        parts["test"].append(rows[:n_test])
        parts["validation"].append(rows[n_test:n_test + n_val])
        parts["train"].append(rows[n_test + n_val:])
    return {k: np.sort(np.concatenate(v)) for k, v in parts.items()}


def split(ds: Dataset, spec: SplitSpec) -> tuple[Dataset, Dataset, Dataset]:
    idx = split_indices(ds.labels, spec)
    return ds.subset(idx["train"]), ds.subset(idx["validation"]), ds.subset(idx["test"])


# --------------------------------------------------------------------------
# synthetic data


@dataclass(frozen=True)
class BlobFamily:
    colour: np.ndarray
    blob_count: tuple[int, int]
    radius: tuple[float, float]  # fraction of image side


def blob_families(k: int) -> list[BlobFamily]:
    fams = []
    for c in range(k):
        hue = c / k
        colour = 0.5 + 0.4 * np.cos(2 * np.pi * (hue + np.array([0.0, 1 / 3, 2 / 3])))
        n_lo = 1 + (c % 4) * 2
        r_lo = 0.06 + 0.05 * ((c // 4) % 3) + 0.02 * (c % 2)
        fams.append(BlobFamily(colour, (n_lo, n_lo + 2), (r_lo, r_lo + 0.05)))
    return fams


def render_blobs(family: BlobFamily, size: tuple[int, int], rng: np.random.Generator,
                 noise: float, background: float = 0.5) -> np.ndarray:
    h, w = size
    yy, xx = np.mgrid[0:h, 0:w]
    base = 0.7 * background + 0.3 * family.colour  # class-tinted background
    img = np.broadcast_to((base + rng.normal(scale=0.02, size=3))[:, None, None], (3, h, w)).copy()
    side = min(h, w)
    for _ in range(int(rng.integers(family.blob_count[0], family.blob_count[1] + 1))):
        r = rng.uniform(*family.radius) * side
        cy, cx = rng.uniform(0, h), rng.uniform(0, w)
        # soft-edged disk; texture from a random stripe phase
        d = np.sqrt((yy - cy) ** 2 + (xx - cx) ** 2)
        mask = np.clip(r + 0.5 - d, 0.0, 1.0)
        shade = 0.85 + 0.15 * np.cos((yy + xx) * 0.8 + rng.uniform(0, 2 * np.pi))
        colour = family.colour[:, None, None] * shade[None]
        img = img * (1 - mask[None]) + colour * mask[None]
    if noise:
        img += rng.normal(scale=noise, size=img.shape)
    return np.clip(img, 0.0, 1.0)


def make_synthetic(k: int, per_class: int, image_size: tuple[int, int] = (32, 32), seed: int = 0,
                   noise: float = 0.05) -> Dataset:
    """Class c is a family of textured blobs with its own colour, count and radius range."""
    if k < 2:
        raise ValueError("k must be >= 2")
    if per_class < 1:
        raise ValueError("per_class must be >= 1")
    fams = blob_families(k)
    images, labels = [], []
    for c in range(k):
        # one stream per class so adding classes does not change earlier ones
        rng = np.random.default_rng([seed, c])
        for _ in range(per_class):
            images.append(render_blobs(fams[c], image_size, rng, noise))
            labels.append(c)
    names = [f"class_{c:02d}" for c in range(k)]
    return Dataset(np.stack(images), np.array(labels), names, "synthetic")
