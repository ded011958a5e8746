"""Deterministic synthetic scenes with box annotations, and the dataset format.

Scenes contain flat-colored geometric objects (one shape kind per class)
over a noisy background.  Images are quantized to 8-bit at generation
time so that writing and re-reading a dataset is bit-exact.

On-disk layout: ``images/*.ppm`` (binary P6), ``annotations.jsonl`` with
one ``{"image", "class", "bbox"}`` object per line, and ``manifest.json``
listing classes, image count and image size.  UTF-8, LF line endings.
"""

from __future__ import annotations

import colorsys
import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

SHAPE_KINDS = ("disk", "square", "triangle", "cross", "ring", "bar")

_BACKGROUND = (0.12, 0.12, 0.12)


class DatasetFormatError(ValueError):
    """Malformed dataset files on disk."""


class PlacementError(RuntimeError):
    """Rejection sampling could not place the requested objects."""


def default_class_shapes(num_classes: int) -> dict[int, str]:
    """Cycle the shape palette over class ids 0..num_classes-1."""
    return {c: SHAPE_KINDS[c % len(SHAPE_KINDS)] for c in range(num_classes)}


def class_color(class_id: int, num_classes: int) -> tuple[float, float, float]:
    """Evenly spaced hues, so classes stay separable under pixel noise."""
    hue = (class_id % num_classes) / num_classes
    return colorsys.hsv_to_rgb(hue, 0.85, 0.9)


@dataclass(frozen=True)
class SceneConfig:
    """Generation parameters for one synthetic dataset."""

    image_size: int = 64
    class_shapes: dict[int, str] = field(default_factory=lambda: default_class_shapes(5))
    objects_per_image: tuple[int, int] = (1, 2)
    size_range: tuple[float, float] = (12.0, 26.0)
    noise_std: float = 0.02
    seed: int = 0

    def __post_init__(self):
        if self.image_size < 32:
            raise ValueError(f"image_size must be >= 32, got {self.image_size}")
        if len(self.class_shapes) < 2:
            raise ValueError("need at least 2 classes")
        unknown = {s for s in self.class_shapes.values() if s not in SHAPE_KINDS}
        if unknown:
            raise ValueError(f"unknown shape kinds: {sorted(unknown)}")
        lo, hi = self.size_range
        if not 0 < lo <= hi <= self.image_size / 2:
            raise ValueError(
                f"size_range must be positive and <= image_size/2, got {self.size_range}"
            )
        olo, ohi = self.objects_per_image
        if not 0 <= olo <= ohi:
            raise ValueError(f"bad objects_per_image range {self.objects_per_image}")

    @property
    def class_ids(self) -> tuple[int, ...]:
        return tuple(sorted(self.class_shapes))


@dataclass(frozen=True)
class AnnotatedInstance:
    """One labeled object: class id plus (x_min, y_min, x_max, y_max) in pixels."""

    class_id: int
    bbox: tuple[int, int, int, int]

    def __post_init__(self):
        x0, y0, x1, y1 = self.bbox
        if not (x0 < x1 and y0 < y1):
            raise ValueError(f"degenerate bbox {self.bbox}")

    @property
    def area(self) -> int:
        x0, y0, x1, y1 = self.bbox
        return (x1 - x0) * (y1 - y0)


@dataclass
class Scene:
    name: str
    image: np.ndarray  # [3, S, S] float64 in [0, 1], 8-bit quantized
    instances: list[AnnotatedInstance]


@dataclass
class Dataset:
    image_size: int
    class_ids: tuple[int, ...]
    scenes: list[Scene]

    def __len__(self) -> int:
        return len(self.scenes)


def _box_iou_int(a, b) -> float:
    ix0, iy0 = max(a[0], b[0]), max(a[1], b[1])
    ix1, iy1 = min(a[2], b[2]), min(a[3], b[3])
    inter = max(0, ix1 - ix0) * max(0, iy1 - iy0)
    if inter == 0:
        return 0.0
    area_a = (a[2] - a[0]) * (a[3] - a[1])
    area_b = (b[2] - b[0]) * (b[3] - b[1])
    return inter / (area_a + area_b - inter)


def _shape_mask(kind: str, size: int) -> np.ndarray:
    """Boolean silhouette of a shape inside its size x size bounding box."""
    ys, xs = np.mgrid[0:size, 0:size] + 0.5
    c = size / 2.0
    r = size / 2.0
    if kind == "disk":
        return (xs - c) ** 2 + (ys - c) ** 2 <= r * r
    if kind == "square":
        return np.ones((size, size), dtype=bool)
    if kind == "triangle":
        # apex at top center, base along the bottom edge
        return np.abs(xs - c) <= (ys / size) * c
    if kind == "cross":
        t = size / 3.0
        horiz = np.abs(ys - c) <= t / 2.0
        vert = np.abs(xs - c) <= t / 2.0
        return horiz | vert
    if kind == "ring":
        d2 = (xs - c) ** 2 + (ys - c) ** 2
        return (d2 <= r * r) & (d2 >= (0.55 * r) ** 2)
    if kind == "bar":
        return np.abs(ys - c) <= size / 6.0
    raise ValueError(f"unknown shape kind {kind!r}")


def generate_scene(config: SceneConfig, index: int):
    """Deterministically render scene ``index``: (image [3,S,S], instances).

    Placement rejects candidate boxes whose IoU with an existing box is
    0.1 or more; after 1000 failed attempts for an object it raises
    ``PlacementError``.
    """
    if index < 0:
        raise ValueError(f"scene index must be >= 0, got {index}")
    rng = np.random.default_rng(np.random.SeedSequence(config.seed, spawn_key=(index,)))
    size = config.image_size
    class_ids = config.class_ids

    n_objects = int(rng.integers(config.objects_per_image[0], config.objects_per_image[1] + 1))
    instances: list[AnnotatedInstance] = []
    for _ in range(n_objects):
        class_id = int(class_ids[rng.integers(0, len(class_ids))])
        side = int(round(rng.uniform(*config.size_range)))
        side = max(4, min(side, size))
        placed = False
        for _attempt in range(1000):
            x0 = int(rng.integers(0, size - side + 1))
            y0 = int(rng.integers(0, size - side + 1))
            box = (x0, y0, x0 + side, y0 + side)
            if all(_box_iou_int(box, inst.bbox) < 0.1 for inst in instances):
                instances.append(AnnotatedInstance(class_id, box))
                placed = True
                break
        if not placed:
            raise PlacementError(
                f"could not place object {len(instances)} of {n_objects} in scene "
                f"{index}; configure fewer or smaller objects"
            )

    image = np.empty((3, size, size))
    for ch, bg in enumerate(_BACKGROUND):
        image[ch].fill(bg)
    num_classes = len(class_ids)
    for inst in instances:
        x0, y0, x1, y1 = inst.bbox
        silhouette = _shape_mask(config.class_shapes[inst.class_id], x1 - x0)
        color = class_color(inst.class_id, num_classes)
        for ch in range(3):
            patch = image[ch, y0:y1, x0:x1]
            patch[silhouette] = color[ch]

    # noise is drawn after placement, from the same stream, so the painted
    # region is a pure function of the instance list
    image += rng.normal(0.0, config.noise_std, size=image.shape)
    np.clip(image, 0.0, 1.0, out=image)
    image = np.round(image * 255.0) / 255.0  # 8-bit quantization, lossless on disk
    return image, instances


def generate_dataset(config: SceneConfig, count: int, start_index: int = 0) -> Dataset:
    """Render ``count`` scenes named 000000.ppm, 000001.ppm, ..."""
    scenes = []
    for i in range(count):
        image, instances = generate_scene(config, start_index + i)
        scenes.append(Scene(f"{start_index + i:06d}.ppm", image, instances))
    return Dataset(config.image_size, config.class_ids, scenes)


def render_mask(image_size: int, instance: AnnotatedInstance) -> np.ndarray:
    """Binary [S, S] mask: 1 inside the instance's box, 0 elsewhere."""
    x0, y0, x1, y1 = instance.bbox
    if not (0 <= x0 < x1 <= image_size and 0 <= y0 < y1 <= image_size):
        raise ValueError(f"bbox {instance.bbox} outside image of size {image_size}")
    mask = np.zeros((image_size, image_size))
    mask[y0:y1, x0:x1] = 1.0
    return mask


# ---------------------------------------------------------------------------
# on-disk format


def write_ppm(path: Path, image: np.ndarray) -> None:
    """Write a [3, h, w] float image in [0, 1] as binary 8-bit P6."""
    _, h, w = image.shape
    raw = np.round(image * 255.0).astype(np.uint8).transpose(1, 2, 0)
    with open(path, "wb") as fh:
        fh.write(f"P6\n{w} {h}\n255\n".encode("ascii"))
        fh.write(raw.tobytes())


def read_ppm(path: Path) -> np.ndarray:
    """Read a binary P6 image back to [3, h, w] float64 in [0, 1]."""
    data = Path(path).read_bytes()
    fields = []
    pos = 0
    while len(fields) < 4:
        while pos < len(data) and data[pos : pos + 1].isspace():
            pos += 1
        start = pos
        while pos < len(data) and not data[pos : pos + 1].isspace():
            pos += 1
        fields.append(data[start:pos])
    pos += 1  # single whitespace after maxval
    if fields[0] != b"P6":
        raise DatasetFormatError(f"{path}: not a binary PPM (magic {fields[0]!r})")
    w, h, maxval = int(fields[1]), int(fields[2]), int(fields[3])
    if maxval != 255:
        raise DatasetFormatError(f"{path}: unsupported maxval {maxval}")
    raw = np.frombuffer(data[pos : pos + 3 * w * h], dtype=np.uint8)
    if raw.size != 3 * w * h:
        raise DatasetFormatError(f"{path}: truncated pixel data")
    return raw.reshape(h, w, 3).transpose(2, 0, 1).astype(np.float64) / 255.0


def write_dataset(directory, dataset: Dataset) -> None:
    """Write images, annotations and manifest; deterministic bytes throughout."""
    directory = Path(directory)
    (directory / "images").mkdir(parents=True, exist_ok=True)
    lines = []
    for scene in dataset.scenes:
        write_ppm(directory / "images" / scene.name, scene.image)
        for inst in scene.instances:
            lines.append(
                json.dumps(
                    {"image": scene.name, "class": inst.class_id, "bbox": list(inst.bbox)},
                    sort_keys=True,
                )
            )
    (directory / "annotations.jsonl").write_text(
        "".join(line + "\n" for line in lines), encoding="utf-8"
    )
    manifest = {
        "classes": list(dataset.class_ids),
        "image_count": len(dataset.scenes),
        "image_size": dataset.image_size,
        "images": [scene.name for scene in dataset.scenes],
    }
    (directory / "manifest.json").write_text(
        json.dumps(manifest, sort_keys=True, indent=1) + "\n", encoding="utf-8"
    )


def read_dataset(directory) -> Dataset:
    """Read a dataset directory; raises ``DatasetFormatError`` on any defect."""
    directory = Path(directory)
    try:
        manifest = json.loads((directory / "manifest.json").read_text(encoding="utf-8"))
    except FileNotFoundError:
        raise DatasetFormatError(f"{directory}: missing manifest.json") from None
    except json.JSONDecodeError as err:
        raise DatasetFormatError(f"{directory}/manifest.json: {err}") from None

    names = manifest["images"]
    if len(names) != manifest["image_count"]:
        raise DatasetFormatError(
            f"manifest image_count {manifest['image_count']} != "
            f"{len(names)} listed images"
        )
    by_name: dict[str, list[AnnotatedInstance]] = {name: [] for name in names}
    ann_path = directory / "annotations.jsonl"
    text = ann_path.read_text(encoding="utf-8") if ann_path.exists() else ""
    for lineno, line in enumerate(text.splitlines(), start=1):
        if not line.strip():
            continue
        try:
            rec = json.loads(line)
            inst = AnnotatedInstance(int(rec["class"]), tuple(int(v) for v in rec["bbox"]))
            name = rec["image"]
        except (json.JSONDecodeError, KeyError, TypeError, ValueError) as err:
            raise DatasetFormatError(f"annotations.jsonl line {lineno}: {err}") from None
        if name not in by_name:
            raise DatasetFormatError(
                f"annotations.jsonl line {lineno}: unknown image {name!r}"
            )
        by_name[name].append(inst)

    scenes = []
    for name in names:
        path = directory / "images" / name
        if not path.exists():
            raise DatasetFormatError(f"missing image file {path}")
        scenes.append(Scene(name, read_ppm(path), by_name[name]))
    return Dataset(int(manifest["image_size"]), tuple(manifest["classes"]), scenes)
