"""Seed-deterministic synthetic domain pairs and the UDS1 dataset file format.

Two generators are provided:

* 2-D Gaussian blob classification, where the target domain shifts every
  class center and inflates the covariance, and
* procedural shape segmentation (axis-aligned rectangles and discs painted
  over a background class), where class identities of shapes are sampled
  from configurable frequency weights and the target domain applies a
  brightness/gain/noise appearance shift.

Target datasets expose ABSTAIN training labels; the true labels ride along
in a separate field and are written to a separate file, so nothing on the
adaptation path can touch them.

UDS1 layout (little endian): magic "UDS1", version u32=1, kind u32
(0 classification, 1 segmentation), num_samples u32, C_in u32, H u32, W u32,
num_classes u32, then per sample features f32[C_in*H*W] and labels i32[H*W]
with -1 meaning ABSTAIN/held-out.  Classification files use H = W = 1 and
C_in = feature dimension.
"""

from __future__ import annotations

import colorsys
import struct
from dataclasses import dataclass, field, replace

import numpy as np

from .errors import FormatError, GenerationError, ShapeError
from .losses import ABSTAIN

UDS_MAGIC = b"UDS1"
UDS_VERSION = 1
KIND_CLASSIFICATION = "classification"
KIND_SEGMENTATION = "segmentation"
_KIND_CODES = {KIND_CLASSIFICATION: 0, KIND_SEGMENTATION: 1}
_KIND_NAMES = {v: k for k, v in _KIND_CODES.items()}

_SOURCE_TAG = 0
_TARGET_TAG = 1


@dataclass(frozen=True)
class ClassificationDomainSpec:
    """Per-class 2-D Gaussians; the target shifts all means and adds spread."""

    num_classes: int
    samples_per_class: int
    means: tuple  # per-class (x, y) centers
    cov_scale: float
    target_shift: tuple = (0.0, 0.0)
    target_noise: float = 0.0
    seed: int = 0

    def __post_init__(self):
        object.__setattr__(self, "means", tuple(tuple(float(v) for v in m) for m in self.means))
        object.__setattr__(self, "target_shift", tuple(float(v) for v in self.target_shift))
        if self.num_classes < 2 or len(self.means) != self.num_classes:
            raise ShapeError("need one 2-D mean per class and at least 2 classes")
        if any(len(m) != 2 for m in self.means):
            raise ShapeError("class means must be 2-D points")
        if self.samples_per_class < 1:
            raise ShapeError("samples_per_class must be >= 1")
        if self.cov_scale <= 0 or self.target_noise < 0:
            raise ShapeError("cov_scale must be positive and target_noise nonnegative")


@dataclass(frozen=True)
class AppearanceShift:
    """Multiplicative per-channel gain (1 + g), additive brightness, pixel noise."""

    brightness_delta: float = 0.0
    channel_gain: tuple = (0.0, 0.0, 0.0)
    noise_sigma: float = 0.0

    def __post_init__(self):
        object.__setattr__(self, "channel_gain", tuple(float(g) for g in self.channel_gain))
        if len(self.channel_gain) != 3:
            raise ShapeError("channel_gain needs one entry per color channel")
        if self.noise_sigma < 0:
            raise ShapeError("noise_sigma must be nonnegative")

    @property
    def is_identity(self) -> bool:
        return (
            self.brightness_delta == 0.0
            and all(g == 0.0 for g in self.channel_gain)
            and self.noise_sigma == 0.0
        )


@dataclass(frozen=True)
class SegmentationDomainSpec:
    """Shapes-on-background scenes with configurable class imbalance."""

    image_size: tuple  # (H, W), each <= 64
    num_classes: int
    class_frequency_weights: tuple
    shapes_per_image: int
    num_images: int
    appearance_shift: AppearanceShift = field(default_factory=AppearanceShift)
    seed: int = 0

    def __post_init__(self):
        object.__setattr__(self, "image_size", tuple(int(v) for v in self.image_size))
        object.__setattr__(
            self,
            "class_frequency_weights",
            tuple(float(w) for w in self.class_frequency_weights),
        )
        h, w = self.image_size
        if not (3 <= h <= 64 and 3 <= w <= 64):
            raise ShapeError(f"image_size must be within [3, 64]^2, got {self.image_size}")
        if self.num_classes < 2 or len(self.class_frequency_weights) != self.num_classes:
            raise ShapeError("need one frequency weight per class and >= 2 classes")
        if min(self.class_frequency_weights) <= 0:
            raise ShapeError("frequency weights must be positive")
        if self.num_images < 1:
            raise ShapeError("num_images must be >= 1")
        if self.shapes_per_image < 1:
            raise ShapeError("shapes_per_image must be >= 1")
        if h * w < self.shapes_per_image:
            raise GenerationError(
                f"shapes_per_image={self.shapes_per_image} exceeds the "
                f"{h}x{w} area budget"
            )


@dataclass
class Dataset:
    """Features plus training-visible labels; held-out truth rides separately.

    ``labels`` is what training may see (all ABSTAIN for a target domain);
    ``eval_labels`` is the ground truth kept for evaluation only and is never
    serialized into the same file.
    """

    kind: str
    features: np.ndarray
    labels: np.ndarray
    num_classes: int
    eval_labels: np.ndarray | None = None

    def __post_init__(self):
        if self.kind not in _KIND_CODES:
            raise ShapeError(f"unknown dataset kind {self.kind!r}")
        if len(self.features) != len(self.labels):
            raise ShapeError("feature/label counts disagree")
        if self.eval_labels is not None and len(self.eval_labels) != len(self.labels):
            raise ShapeError("eval label count disagrees with features")

    def __len__(self):
        return len(self.features)


def eval_dataset(d: Dataset) -> Dataset:
    """View of a dataset with the held-out truth promoted to its labels."""
    if d.eval_labels is None:
        raise ShapeError("dataset has no held-out evaluation labels")
    return Dataset(d.kind, d.features, d.eval_labels, d.num_classes)


def _f32(arr) -> np.ndarray:
    # Features are quantized through f32 at generation time so that writing
    # and re-reading a UDS1 file is an exact roundtrip.
    return np.asarray(arr, dtype=np.float32).astype(np.float64)


def gen_classification_pair(spec: ClassificationDomainSpec):
    """Source/target blob datasets; target truth is held out for evaluation."""
    means = np.asarray(spec.means)
    shift = np.asarray(spec.target_shift)

    def domain(tag):
        scale_ = spec.cov_scale + (spec.target_noise if tag == _TARGET_TAG else 0.0)
        offset = shift if tag == _TARGET_TAG else np.zeros(2)
        feats, labels = [], []
        for k in range(spec.num_classes):
            for i in range(spec.samples_per_class):
                rng = np.random.default_rng((spec.seed, tag, k, i))
                feats.append(means[k] + offset + scale_ * rng.standard_normal(2))
                labels.append(k)
        return _f32(np.stack(feats)), np.asarray(labels, dtype=np.int64)

    src_x, src_y = domain(_SOURCE_TAG)
    tgt_x, tgt_y = domain(_TARGET_TAG)
    source = Dataset(KIND_CLASSIFICATION, src_x, src_y, spec.num_classes, src_y.copy())
    target = Dataset(
        KIND_CLASSIFICATION,
        tgt_x,
        np.full_like(tgt_y, ABSTAIN),
        spec.num_classes,
        tgt_y,
    )
    return source, target


def class_color(k: int, num_classes: int) -> np.ndarray:
    """Deterministic, well-separated base color for class k (RGB in [0, 1])."""
    hue = (k / num_classes + 0.05) % 1.0
    return np.asarray(colorsys.hsv_to_rgb(hue, 0.65, 0.85))


def _paint_scene(spec: SegmentationDomainSpec, rng) -> tuple:
    h, w = spec.image_size
    weights = np.asarray(spec.class_frequency_weights)
    probs = weights / weights.sum()
    labels = np.zeros((h, w), dtype=np.int64)
    img = np.empty((3, h, w))
    img[:] = class_color(0, spec.num_classes)[:, None, None]
    yy, xx = np.mgrid[0:h, 0:w]
    for _ in range(spec.shapes_per_image):
        k = int(rng.choice(spec.num_classes, p=probs))
        color = class_color(k, spec.num_classes)
        if rng.integers(2) == 0:  # rectangle
            sh = int(rng.integers(2, max(3, h // 3) + 1))
            sw = int(rng.integers(2, max(3, w // 3) + 1))
            top = int(rng.integers(0, h - sh + 1))
            left = int(rng.integers(0, w - sw + 1))
            mask = np.zeros((h, w), dtype=bool)
            mask[top : top + sh, left : left + sw] = True
        else:  # disc
            r = int(rng.integers(1, max(2, min(h, w) // 5) + 1))
            cy = int(rng.integers(0, h))
            cx = int(rng.integers(0, w))
            mask = (yy - cy) ** 2 + (xx - cx) ** 2 <= r * r
        labels[mask] = k
        img[:, mask] = color[:, None]
    return img, labels


def gen_segmentation_pair(spec: SegmentationDomainSpec):
    """Source/target procedural scenes; the target gets the appearance shift."""
    shift = spec.appearance_shift

    def image(tag, idx):
        rng = np.random.default_rng((spec.seed, tag, idx))
        img, labels = _paint_scene(spec, rng)
        if tag == _TARGET_TAG:
            gain = 1.0 + np.asarray(shift.channel_gain)
            img = img * gain[:, None, None] + shift.brightness_delta
            if shift.noise_sigma > 0.0:
                img = img + shift.noise_sigma * rng.standard_normal(img.shape)
        return img, labels

    def domain(tag):
        imgs, labs = zip(*(image(tag, i) for i in range(spec.num_images)))
        return _f32(np.stack(imgs)), np.stack(labs)

    src_x, src_y = domain(_SOURCE_TAG)
    tgt_x, tgt_y = domain(_TARGET_TAG)
    source = Dataset(KIND_SEGMENTATION, src_x, src_y, spec.num_classes, src_y.copy())
    target = Dataset(
        KIND_SEGMENTATION,
        tgt_x,
        np.full_like(tgt_y, ABSTAIN),
        spec.num_classes,
        tgt_y,
    )
    return source, target


# ---------------------------------------------------------------------------
# UDS1 file I/O
# ---------------------------------------------------------------------------


def _dims(d: Dataset):
    if d.kind == KIND_CLASSIFICATION:
        n, c_in = d.features.shape
        return n, c_in, 1, 1
    n, c_in, h, w = d.features.shape
    return n, c_in, h, w


def write_dataset(d: Dataset, path) -> None:
    """Write features and training-visible labels as a UDS1 file."""
    n, c_in, h, w = _dims(d)
    header = UDS_MAGIC + struct.pack(
        "<IIIIIII", UDS_VERSION, _KIND_CODES[d.kind], n, c_in, h, w, d.num_classes
    )
    if d.labels.size != n * h * w:
        raise ShapeError(f"labels must cover {h * w} cells per sample")
    feats = np.ascontiguousarray(d.features, dtype="<f4").reshape(n, c_in * h * w)
    labels = np.ascontiguousarray(d.labels, dtype="<i4").reshape(n, h * w)
    with open(path, "wb") as fh:
        fh.write(header)
        for i in range(n):
            fh.write(feats[i].tobytes())
            fh.write(labels[i].tobytes())


def read_dataset(path) -> Dataset:
    """Parse and validate a UDS1 file; failures carry the byte offset."""
    with open(path, "rb") as fh:
        data = fh.read()
    if data[:4] != UDS_MAGIC:
        raise FormatError("bad UDS1 magic", 0)
    if len(data) < 32:
        raise FormatError("truncated UDS1 header", len(data))
    version, kind_code, n, c_in, h, w, num_classes = struct.unpack(
        "<IIIIIII", data[4:32]
    )
    if version != UDS_VERSION:
        raise FormatError(f"unsupported UDS1 version {version}", 4)
    if kind_code not in _KIND_NAMES:
        raise FormatError(f"unknown dataset kind code {kind_code}", 8)
    kind = _KIND_NAMES[kind_code]
    if kind == KIND_CLASSIFICATION and (h, w) != (1, 1):
        raise FormatError("classification datasets require H = W = 1", 20)
    feat_bytes = 4 * c_in * h * w
    label_bytes = 4 * h * w
    pos = 32
    feats, labels = [], []
    for i in range(n):
        if pos + feat_bytes + label_bytes > len(data):
            raise FormatError(f"truncated UDS1 file in sample {i}", pos)
        feats.append(np.frombuffer(data, dtype="<f4", count=c_in * h * w, offset=pos))
        pos += feat_bytes
        labels.append(np.frombuffer(data, dtype="<i4", count=h * w, offset=pos))
        pos += label_bytes
    if pos != len(data):
        raise FormatError("trailing bytes after final sample", pos)
    if kind == KIND_CLASSIFICATION:
        features = np.stack(feats).astype(np.float64) if n else np.zeros((0, c_in))
        lab = np.stack(labels).reshape(n).astype(np.int64) if n else np.zeros(0, np.int64)
    else:
        features = (
            np.stack(feats).reshape(n, c_in, h, w).astype(np.float64)
            if n
            else np.zeros((0, c_in, h, w))
        )
        lab = (
            np.stack(labels).reshape(n, h, w).astype(np.int64)
            if n
            else np.zeros((0, h, w), np.int64)
        )
    if lab.size and (lab.min() < ABSTAIN or lab.max() >= num_classes):
        raise FormatError("label outside [ABSTAIN, num_classes)", 32)
    return Dataset(kind, features, lab, int(num_classes))


def dataset_equal(a: Dataset, b: Dataset) -> bool:
    return (
        a.kind == b.kind
        and a.num_classes == b.num_classes
        and a.features.shape == b.features.shape
        and np.array_equal(a.features, b.features)
        and np.array_equal(a.labels, b.labels)
    )


def with_seed(spec, seed: int):
    """Copy a domain spec with a different corpus seed."""
    return replace(spec, seed=int(seed))
