"""Dataset plumbing: decoding, input normalization, layout scanning, and a
synthetic nine-class generator for desk-scale verification.

Images are eight-bit RGB throughout; the network input is float32, resized
bilinearly with no aspect-ratio preservation, scaled to [0, 1], then
normalized per channel with the ImageNet statistics.
"""

from __future__ import annotations

import colorsys
import csv
import logging
import os
from dataclasses import dataclass, replace

import numpy as np
from PIL import Image, UnidentifiedImageError

from .errors import ConfigError, DataError

log = logging.getLogger(__name__)

CLASS_ABBREVIATIONS = ("AOM", "CME", "CSOM", "EACB", "IC", "NE", "OE", "SOM", "TMC")

NORM_MEAN = np.array([0.485, 0.456, 0.406], dtype=np.float32)
NORM_STD = np.array([0.229, 0.224, 0.225], dtype=np.float32)

_IMAGE_EXTENSIONS = {".png", ".jpg", ".jpeg"}


@dataclass(frozen=True)
class ClassCatalog:
    """Ordered class names with a stable name-to-id mapping."""

    names: tuple[str, ...]

    def __post_init__(self):
        if not self.names:
            raise ConfigError("class catalog cannot be empty")
        if len(set(self.names)) != len(self.names):
            raise ConfigError(f"duplicate class names: {self.names}")

    def __len__(self) -> int:
        return len(self.names)

    def id_for(self, name: str) -> int:
        try:
            return self.names.index(name)
        except ValueError:
            raise DataError(f"unknown class name {name!r}; catalog has {self.names}")

    def name_for(self, class_id: int) -> str:
        if not 0 <= class_id < len(self.names):
            raise DataError(f"class id {class_id} outside 0..{len(self.names) - 1}")
        return self.names[class_id]


def default_catalog() -> ClassCatalog:
    """The nine ear-condition abbreviations in lexicographic order."""
    return ClassCatalog(CLASS_ABBREVIATIONS)


@dataclass(frozen=True)
class LabeledImage:
    path: str
    class_id: int
    class_name: str
    pixels: np.ndarray | None = None
    sharpness: float | None = None


def load_rgb(path) -> np.ndarray:
    """Decode an image file to uint8 RGB; non-RGB or corrupt files are errors."""
    try:
        with Image.open(path) as im:
            if im.mode != "RGB":
                raise DataError(f"{path}: expected RGB image, got mode {im.mode!r}")
            return np.asarray(im, dtype=np.uint8)
    except (UnidentifiedImageError, OSError) as exc:
        raise DataError(f"{path}: cannot decode image ({exc})") from exc


def load_labeled(entry: LabeledImage) -> LabeledImage:
    """Return a copy with pixels decoded and the sharpness score filled in."""
    pixels = load_rgb(entry.path)
    return replace(entry, pixels=pixels, sharpness=sharpness(pixels))


def preprocess(pixels: np.ndarray, size: int = 224) -> np.ndarray:
    """uint8 RGB (H, W, 3) to normalized float32 (3, size, size).

    Resampling is skipped when the input is already at the target size, so
    a saved re-export round-trips to the same tensor up to quantization.
    """
    pixels = np.asarray(pixels)
    if pixels.ndim != 3 or pixels.shape[2] != 3:
        raise DataError(f"expected (H, W, 3) RGB pixels, got shape {pixels.shape}")
    if pixels.dtype != np.uint8:
        raise DataError(f"expected uint8 pixels, got {pixels.dtype}")
    if pixels.shape[:2] != (size, size):
        pixels = np.asarray(
            Image.fromarray(pixels).resize((size, size), Image.BILINEAR)
        )
    scaled = pixels.astype(np.float32) / 255.0
    normalized = (scaled - NORM_MEAN) / NORM_STD
    return np.ascontiguousarray(normalized.transpose(2, 0, 1))


def denormalize(tensor: np.ndarray) -> np.ndarray:
    """Invert preprocess back to uint8 RGB (H, W, 3)."""
    tensor = np.asarray(tensor)
    if tensor.ndim != 3 or tensor.shape[0] != 3:
        raise DataError(f"expected (3, H, W) tensor, got shape {tensor.shape}")
    scaled = tensor.transpose(1, 2, 0) * NORM_STD + NORM_MEAN
    return np.clip(np.rint(scaled * 255.0), 0, 255).astype(np.uint8)


def scan_dataset(root, catalog: ClassCatalog | None = None):
    """List labeled images under root; returns (entries, catalog).

    Layout: root/<class_name>/*.png|jpg|jpeg.  A root-level manifest.csv
    with `path,class` rows overrides directory labels.  Ordering is
    deterministic: class name, then file name.
    """
    root = os.fspath(root)
    manifest = os.path.join(root, "manifest.csv")
    if os.path.isfile(manifest):
        return _scan_manifest(root, manifest, catalog)

    class_dirs = sorted(
        d for d in os.listdir(root) if os.path.isdir(os.path.join(root, d))
    ) if os.path.isdir(root) else []
    if not class_dirs:
        log.warning("no class directories under %s; empty dataset", root)
        return [], catalog if catalog is not None else default_catalog()
    if catalog is None:
        catalog = ClassCatalog(tuple(class_dirs))

    entries: list[LabeledImage] = []
    counts: dict[str, int] = {}
    for name in class_dirs:
        class_id = catalog.id_for(name)
        files = sorted(os.listdir(os.path.join(root, name)))
        kept = 0
        for fname in files:
            ext = os.path.splitext(fname)[1].lower()
            if ext not in _IMAGE_EXTENSIONS:
                log.info("skipping %s/%s: unrecognized extension", name, fname)
                continue
            entries.append(
                LabeledImage(os.path.join(root, name, fname), class_id, name)
            )
            kept += 1
        counts[name] = kept
        if kept == 0:
            log.warning("class directory %s is empty", os.path.join(root, name))
    log.info("scanned %s: %s", root, counts)
    return entries, catalog


def _scan_manifest(root, manifest, catalog):
    rows = []
    with open(manifest, newline="") as f:
        reader = csv.reader(f)
        header = next(reader, None)
        if header is None or [h.strip() for h in header[:2]] != ["path", "class"]:
            raise DataError(f"{manifest}: expected header 'path,class', got {header!r}")
        for lineno, row in enumerate(reader, start=2):
            if not row:
                continue
            if len(row) < 2:
                raise DataError(f"{manifest}:{lineno}: expected 'path,class' row")
            rows.append((row[0].strip(), row[1].strip()))
    if catalog is None:
        catalog = ClassCatalog(tuple(sorted({cls for _, cls in rows})))
    entries = [
        LabeledImage(os.path.join(root, path), catalog.id_for(cls), cls)
        for path, cls in sorted(rows, key=lambda r: (r[1], r[0]))
    ]
    log.info("scanned manifest %s: %d entries", manifest, len(entries))
    return entries, catalog


def dataset_tensors(entries, size: int = 224, workers: int = 0):
    """Decode and preprocess a list of entries into (N, 3, size, size) + labels.

    Decoding is pure per-image, so worker threads may run it in parallel;
    output order always matches the input order.
    """
    def one(entry):
        return preprocess(load_rgb(entry.path), size=size)

    if workers and len(entries) > 1:
        from concurrent.futures import ThreadPoolExecutor

        with ThreadPoolExecutor(max_workers=workers) as pool:
            tensors = list(pool.map(one, entries))
    else:
        tensors = [one(e) for e in entries]
    images = np.stack(tensors) if tensors else np.zeros((0, 3, size, size), np.float32)
    labels = np.array([e.class_id for e in entries], dtype=np.int64)
    return images, labels


# --- synthetic nine-class generator ---------------------------------------
#
# Each class renders a distinct parametric pattern inside a circular canal
# vignette: a class-specific hue (40 degree steps), a blob count, an optional
# ring, and an oriented streak texture.  Per-image jitter and noise keep the
# task nontrivial while staying separable for a small network.


def _class_style(class_id: int):
    hue = (class_id * 40.0) % 360.0
    return {
        "hue": hue,
        "blobs": 1 + class_id % 3,
        "ring": class_id % 2 == 0,
        "streak_angle": np.deg2rad(class_id * 20.0),
        "streak_freq": 6.0 + 2.0 * (class_id % 4),
    }


def synth_image(class_id: int, rng: np.random.Generator, size: int = 224) -> np.ndarray:
    """Render one synthetic sample as uint8 RGB (size, size, 3)."""
    style = _class_style(class_id)
    half = np.linspace(-1.0, 1.0, size, dtype=np.float32)
    yy, xx = np.meshgrid(half, half, indexing="ij")

    cx, cy = rng.uniform(-0.08, 0.08, size=2)
    radius = 0.82 + rng.uniform(-0.05, 0.05)
    r = np.hypot(xx - cx, yy - cy)
    canal = np.clip((radius - r) / 0.12, 0.0, 1.0)

    hue = (style["hue"] + rng.uniform(-8.0, 8.0)) % 360.0
    base = np.array(colorsys.hsv_to_rgb(hue / 360.0, 0.55, 0.80), dtype=np.float32)

    brightness = np.full((size, size), 0.9, dtype=np.float32)
    for _ in range(style["blobs"]):
        bx, by = rng.uniform(-0.45, 0.45, size=2)
        bw = rng.uniform(0.10, 0.22)
        brightness += 0.35 * np.exp(-(((xx - bx) ** 2 + (yy - by) ** 2) / bw**2))
    if style["ring"]:
        ring_r = rng.uniform(0.35, 0.55)
        brightness += 0.30 * np.exp(-(((r - ring_r) / 0.05) ** 2))
    angle = style["streak_angle"] + rng.uniform(-0.15, 0.15)
    phase = rng.uniform(0, 2 * np.pi)
    along = xx * np.cos(angle) + yy * np.sin(angle)
    brightness += 0.12 * np.sin(style["streak_freq"] * np.pi * along + phase)

    img = 0.06 + canal[..., None] * brightness[..., None] * base
    img += rng.normal(0.0, 0.015, size=img.shape).astype(np.float32)
    return (np.clip(img, 0.0, 1.0) * 255.0).round().astype(np.uint8)


def synth_dataset(n_per_class: int, num_classes: int = 9, seed: int = 0, size: int = 224):
    """In-memory synthetic set: (uint8 images N,H,W,3, int labels N)."""
    if n_per_class < 1:
        raise ConfigError(f"n_per_class must be >= 1, got {n_per_class}")
    if not 2 <= num_classes <= len(CLASS_ABBREVIATIONS):
        raise ConfigError(
            f"num_classes must be in 2..{len(CLASS_ABBREVIATIONS)}, got {num_classes}"
        )
    images = np.empty((num_classes * n_per_class, size, size, 3), dtype=np.uint8)
    labels = np.repeat(np.arange(num_classes), n_per_class)
    for i, cls in enumerate(labels):
        rng = np.random.default_rng(seed * 1_000_003 + i)
        images[i] = synth_image(int(cls), rng, size=size)
    return images, labels


def synth_generate(
    out_dir, n_per_class: int = 20, num_classes: int = 9, seed: int = 0, size: int = 224
) -> int:
    """Write the synthetic set as PNGs in the scan_dataset layout; returns count."""
    images, labels = synth_dataset(n_per_class, num_classes, seed, size)
    catalog = default_catalog()
    try:
        os.makedirs(out_dir, exist_ok=True)
    except OSError as exc:
        raise DataError(f"cannot create output directory {out_dir}: {exc}") from exc
    per_class_index: dict[int, int] = {}
    for img, cls in zip(images, labels):
        name = catalog.name_for(int(cls))
        k = per_class_index.get(int(cls), 0)
        per_class_index[int(cls)] = k + 1
        class_dir = os.path.join(out_dir, name)
        os.makedirs(class_dir, exist_ok=True)
        Image.fromarray(img).save(os.path.join(class_dir, f"{name}_{k:04d}.png"))
    return len(labels)


def sharpness(pixels: np.ndarray) -> float:
    """Variance of the 3x3 Laplacian over the grayscale image (higher = sharper)."""
    pixels = np.asarray(pixels)
    if pixels.ndim == 3:
        gray = (
            0.299 * pixels[..., 0].astype(np.float64)
            + 0.587 * pixels[..., 1].astype(np.float64)
            + 0.114 * pixels[..., 2].astype(np.float64)
        )
    elif pixels.ndim == 2:
        gray = pixels.astype(np.float64)
    else:
        raise DataError(f"expected (H, W) or (H, W, 3) pixels, got {pixels.shape}")
    if gray.shape[0] < 3 or gray.shape[1] < 3:
        return 0.0
    lap = (
        gray[:-2, 1:-1]
        + gray[2:, 1:-1]
        + gray[1:-1, :-2]
        + gray[1:-1, 2:]
        - 4.0 * gray[1:-1, 1:-1]
    )
    return float(lap.var())


def calibrate_sharpness_gate(images, percentile: float = 10.0) -> float:
    """Gate threshold: a low percentile of a reference set's sharpness scores."""
    scores = [sharpness(img) for img in images]
    if not scores:
        raise DataError("cannot calibrate a sharpness gate on an empty set")
    return float(np.percentile(scores, percentile))
