"""Dataset ingestion, the synthetic labeled-shapes generator, preprocessing,
batching and PPM image emission.

Images live in [-1, 1] throughout (matching the tanh decoder head); labels
are multi-label {0,1} vectors. The shapes generator renders one filled
square, circle or cross per canvas with exact labels: three kind bits, a
left/right position bit and a bright/dark intensity bit, all determined by
the sampled geometry rather than by post-hoc measurement.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .gaussians import make_rng

KINDS = ("square", "circle", "cross")
LABEL_NAMES = ("square", "circle", "cross", "left", "bright")
_SPLIT_STREAMS = {"train": 10, "valid": 11, "test": 12}


@dataclass
class LabeledImageSet:
    images: np.ndarray  # [N, C, H, W] in [-1, 1]
    labels: np.ndarray  # [N, K] of {0, 1}
    split: str = "train"

    def __post_init__(self):
        if self.images.ndim != 4 or self.labels.ndim != 2:
            raise ValueError("images must be [N,C,H,W] and labels [N,K]")
        if self.images.shape[0] != self.labels.shape[0]:
            raise ValueError("images and labels disagree on N")

    def __len__(self) -> int:
        return self.images.shape[0]

    def subset(self, idx: np.ndarray) -> "LabeledImageSet":
        return LabeledImageSet(self.images[idx], self.labels[idx], self.split)


@dataclass
class ShapeSpec:
    canvas: int = 32
    channels: int = 1
    counts: dict[str, int] = field(default_factory=lambda: {"train": 2000, "valid": 400, "test": 400})
    seed: int = 0
    min_size: int = 8
    max_size: int = 13

    def __post_init__(self):
        if self.canvas < 16:
            raise ValueError("canvas must be >= 16")
        if self.channels not in (1, 3):
            raise ValueError("channels must be 1 or 3")
        if not 4 <= self.min_size <= self.max_size:
            raise ValueError("need 4 <= min_size <= max_size")
        # A shape must fit strictly inside one horizontal half with margin,
        # so the position bit is unambiguous for any sampled placement.
        if self.max_size // 2 > self.canvas // 4 - 2:
            raise ValueError(f"max_size {self.max_size} too large for canvas {self.canvas}")


def generate_shapes(spec: ShapeSpec, split: str = "train") -> LabeledImageSet:
    """Deterministic labeled shapes for one split (seed-derived stream)."""
    if split not in _SPLIT_STREAMS:
        raise ValueError(f"unknown split {split!r}")
    rng = make_rng(spec.seed, _SPLIT_STREAMS[split])
    n = spec.counts[split]
    size_px = spec.canvas
    images = np.full((n, spec.channels, size_px, size_px), -1.0, dtype=np.float32)
    labels = np.zeros((n, len(LABEL_NAMES)), dtype=np.float32)

    for i in range(n):
        kind = int(rng.integers(0, 3))
        left = bool(rng.integers(0, 2))
        bright = bool(rng.integers(0, 2))
        side = int(rng.integers(spec.min_size, spec.max_size + 1))
        half = side // 2
        # Keep the whole shape strictly inside one horizontal half so the
        # centroid column determines the position bit with margin.
        if left:
            cx = int(rng.integers(half + 1, size_px // 2 - half - 1))
        else:
            cx = int(rng.integers(size_px // 2 + half + 1, size_px - half - 1))
        cy = int(rng.integers(half + 1, size_px - half - 1))
        value = float(rng.uniform(0.5, 1.0) if bright else rng.uniform(-0.5, 0.0))

        yy, xx = np.mgrid[0:size_px, 0:size_px]
        if kind == 0:  # square
            mask = (np.abs(xx - cx) <= half) & (np.abs(yy - cy) <= half)
        elif kind == 1:  # circle
            mask = (xx - cx) ** 2 + (yy - cy) ** 2 <= half ** 2
        else:  # cross: two overlapping bars one quarter as wide as the span
            arm = max(1, side // 4)
            bar_h = (np.abs(yy - cy) <= arm // 2) & (np.abs(xx - cx) <= half)
            bar_v = (np.abs(xx - cx) <= arm // 2) & (np.abs(yy - cy) <= half)
            mask = bar_h | bar_v
        images[i, :, mask] = value
        labels[i, kind] = 1.0
        labels[i, 3] = 1.0 if left else 0.0
        labels[i, 4] = 1.0 if bright else 0.0

    return LabeledImageSet(images, labels, split)


def load_binary_records(path: str | Path, channels: int, height: int, width: int,
                        label_bytes: int = 1, num_classes: int | None = None) -> LabeledImageSet:
    """Read fixed-size binary records: label byte(s), then C*H*W pixel bytes.

    Pixels map to 2*(b/255) - 1; the last label byte is one-hot expanded.
    """
    raw = np.frombuffer(Path(path).read_bytes(), dtype=np.uint8)
    if raw.size == 0:
        raise ValueError(f"{path}: empty file")
    record = label_bytes + channels * height * width
    if raw.size % record != 0:
        raise ValueError(f"{path}: size {raw.size} not divisible by record size {record}")
    n = raw.size // record
    rows = raw.reshape(n, record)
    label_idx = rows[:, label_bytes - 1].astype(np.int64)
    k = num_classes if num_classes is not None else int(label_idx.max()) + 1
    if label_idx.max() >= k:
        raise ValueError(f"{path}: label {label_idx.max()} out of range for {k} classes")
    labels = np.zeros((n, k), dtype=np.float32)
    labels[np.arange(n), label_idx] = 1.0
    pixels = rows[:, label_bytes:].reshape(n, channels, height, width).astype(np.float32)
    images = 2.0 * (pixels / 255.0) - 1.0
    return LabeledImageSet(images, labels)


def write_binary_records(path: str | Path, images: np.ndarray, label_idx: np.ndarray,
                         label_bytes: int = 1) -> None:
    """Inverse of load_binary_records up to pixel quantization."""
    n = images.shape[0]
    bytes_img = np.clip(np.floor((images + 1.0) / 2.0 * 255.0 + 0.5), 0, 255).astype(np.uint8)
    out = bytearray()
    for i in range(n):
        out += bytes([0] * (label_bytes - 1)) + bytes([int(label_idx[i])])
        out += bytes_img[i].tobytes()
    Path(path).write_bytes(bytes(out))


def scale_and_crop(images: np.ndarray, target_scale: tuple[int, int],
                   crop: tuple[int, int]) -> np.ndarray:
    """Bilinear rescale to target_scale then center crop."""
    th, tw = target_scale
    ch, cw = crop
    if ch > th or cw > tw:
        raise ValueError(f"crop {crop} larger than scaled size {target_scale}")
    scaled = _bilinear_resize(images, th, tw)
    oy = (th - ch) // 2
    ox = (tw - cw) // 2
    return scaled[:, :, oy : oy + ch, ox : ox + cw]


def _bilinear_resize(images: np.ndarray, th: int, tw: int) -> np.ndarray:
    n, c, h, w = images.shape
    if (th, tw) == (h, w):
        return images.copy()
    ys = (np.arange(th) + 0.5) * (h / th) - 0.5
    xs = (np.arange(tw) + 0.5) * (w / tw) - 0.5
    y0 = np.clip(np.floor(ys).astype(np.int64), 0, h - 1)
    x0 = np.clip(np.floor(xs).astype(np.int64), 0, w - 1)
    y1 = np.clip(y0 + 1, 0, h - 1)
    x1 = np.clip(x0 + 1, 0, w - 1)
    wy = np.clip(ys - y0, 0.0, 1.0).astype(images.dtype)
    wx = np.clip(xs - x0, 0.0, 1.0).astype(images.dtype)
    top = images[:, :, y0][:, :, :, x0] * (1 - wx) + images[:, :, y0][:, :, :, x1] * wx
    bot = images[:, :, y1][:, :, :, x0] * (1 - wx) + images[:, :, y1][:, :, :, x1] * wx
    return top * (1 - wy)[None, None, :, None] + bot * wy[None, None, :, None]


def minibatches(dataset, batch_size: int, rng: np.random.Generator) -> list[np.ndarray]:
    """Seeded shuffled index batches; a trailing short batch is dropped."""
    n = dataset if isinstance(dataset, int) else len(dataset)
    if batch_size < 2:
        raise ValueError("batch_size must be >= 2")
    if batch_size > n:
        raise ValueError(f"batch_size {batch_size} exceeds dataset size {n}")
    perm = rng.permutation(n)
    n_batches = n // batch_size
    return [perm[i * batch_size : (i + 1) * batch_size] for i in range(n_batches)]


def to_bytes_image(images: np.ndarray) -> np.ndarray:
    """Map [-1, 1] to [0, 255] with round-half-up and clamping."""
    return np.clip(np.floor((images + 1.0) / 2.0 * 255.0 + 0.5), 0, 255).astype(np.uint8)


def write_image_grid(images: np.ndarray, rows: int, cols: int, path: str | Path) -> None:
    """Tile images row-major into a binary PPM (P6) file."""
    n, c, h, w = images.shape
    if rows * cols > n:
        raise ValueError(f"grid {rows}x{cols} needs {rows * cols} images, got {n}")
    if c == 1:
        rgb = np.repeat(images[: rows * cols], 3, axis=1)
    elif c == 3:
        rgb = images[: rows * cols]
    else:
        raise ValueError(f"cannot render {c}-channel images")
    data = to_bytes_image(rgb)
    canvas = np.zeros((rows * h, cols * w, 3), dtype=np.uint8)
    for i in range(rows * cols):
        r, col = divmod(i, cols)
        canvas[r * h : (r + 1) * h, col * w : (col + 1) * w] = data[i].transpose(1, 2, 0)
    header = f"P6\n{cols * w} {rows * h}\n255\n".encode("ascii")
    Path(path).write_bytes(header + canvas.tobytes())
