"""Small differentiable models: an MLP classifier and a tiny two-head FCN.

The segmentation net keeps full resolution throughout (3x3 convs, zero
padding, stride 1), so both heads emit one probability row per input pixel.
Parameters live in a name -> Tensor dict and can be serialized to a compact
binary checkpoint (see :func:`save_params`).
"""

from __future__ import annotations

import struct
from dataclasses import dataclass

import numpy as np

from . import autodiff as ad
from .errors import FormatError, ShapeError
from .guidance import MultiLevelOutput

CHECKPOINT_MAGIC = b"MSQP"
CHECKPOINT_VERSION = 1


@dataclass(frozen=True)
class MlpSpec:
    """Fully connected classifier: input -> relu hidden layers -> softmax."""

    input_dim: int
    hidden_dims: tuple
    num_classes: int
    init_seed: int = 0

    def __post_init__(self):
        object.__setattr__(self, "hidden_dims", tuple(int(d) for d in self.hidden_dims))
        if len(self.hidden_dims) < 1:
            raise ShapeError("MlpSpec needs at least one hidden layer")
        dims = (self.input_dim, *self.hidden_dims, self.num_classes)
        if any(d <= 0 for d in dims):
            raise ShapeError(f"all MlpSpec dimensions must be positive, got {dims}")
        if self.num_classes < 2:
            raise ShapeError("MlpSpec needs at least 2 classes")


@dataclass(frozen=True)
class SegNetSpec:
    """Full-resolution conv trunk with a low-level tap and two classifier heads.

    ``tap_depth`` is the 1-based trunk block whose activation feeds the
    low-level head; the final head reads the last trunk activation.
    """

    in_channels: int
    trunk_channels: int
    trunk_depth: int
    num_classes: int
    tap_depth: int
    init_seed: int = 0

    def __post_init__(self):
        if min(self.in_channels, self.trunk_channels, self.num_classes) <= 0:
            raise ShapeError("SegNetSpec channel counts must be positive")
        if self.num_classes < 2:
            raise ShapeError("SegNetSpec needs at least 2 classes")
        if not (1 <= self.tap_depth < self.trunk_depth):
            raise ShapeError(
                f"tap_depth must satisfy 1 <= tap < trunk_depth, got "
                f"tap={self.tap_depth} depth={self.trunk_depth}"
            )


def init_params(spec, seed=None) -> dict:
    """Seed-deterministic fan-in uniform weights, zero biases."""
    rng = np.random.default_rng(spec.init_seed if seed is None else seed)
    params = {}
    if isinstance(spec, MlpSpec):
        dims = (spec.input_dim, *spec.hidden_dims, spec.num_classes)
        for i, (din, dout) in enumerate(zip(dims[:-1], dims[1:])):
            bound = np.sqrt(1.0 / din)
            params[f"w{i}"] = ad.parameter(rng.uniform(-bound, bound, (din, dout)))
            params[f"b{i}"] = ad.parameter(np.zeros(dout))
        return params
    if isinstance(spec, SegNetSpec):
        in_ch = spec.in_channels
        for i in range(spec.trunk_depth):
            bound = np.sqrt(1.0 / (in_ch * 9))
            params[f"conv{i}_w"] = ad.parameter(
                rng.uniform(-bound, bound, (spec.trunk_channels, in_ch, 3, 3))
            )
            params[f"conv{i}_b"] = ad.parameter(np.zeros(spec.trunk_channels))
            in_ch = spec.trunk_channels
        bound = np.sqrt(1.0 / (spec.trunk_channels * 9))
        for head in ("low", "final"):
            params[f"{head}_w"] = ad.parameter(
                rng.uniform(
                    -bound, bound, (spec.num_classes, spec.trunk_channels, 3, 3)
                )
            )
            params[f"{head}_b"] = ad.parameter(np.zeros(spec.num_classes))
        return params
    raise TypeError(f"unsupported spec type {type(spec).__name__}")


def _as_input(x) -> ad.Tensor:
    return x if isinstance(x, ad.Tensor) else ad.constant(np.asarray(x, np.float64))


def mlp_forward(spec: MlpSpec, params: dict, x) -> ad.Tensor:
    """Class probabilities (B x C) for a batch of feature rows."""
    t = _as_input(x)
    if t.ndim != 2 or t.shape[1] != spec.input_dim:
        raise ShapeError(
            f"mlp input must be (B, {spec.input_dim}), got shape {t.shape}"
        )
    h = t
    for i in range(len(spec.hidden_dims)):
        h = ad.relu(ad.add_row_bias(ad.matmul(h, params[f"w{i}"]), params[f"b{i}"]))
    k = len(spec.hidden_dims)
    logits = ad.add_row_bias(ad.matmul(h, params[f"w{k}"]), params[f"b{k}"])
    return ad.row_softmax(logits)


def _pixel_softmax(logits: ad.Tensor) -> ad.Tensor:
    # (B, C, H, W) -> (B*H*W, C), row-stochastic; row order is (b, h, w).
    b, c, h, w = logits.shape
    rows = ad.reshape(ad.permute(logits, (0, 2, 3, 1)), (b * h * w, c))
    return ad.row_softmax(rows)


def seg_forward(spec: SegNetSpec, params: dict, x) -> MultiLevelOutput:
    """Two per-pixel probability maps at full input resolution."""
    t = _as_input(x)
    if t.ndim != 4 or t.shape[1] != spec.in_channels:
        raise ShapeError(
            f"segmentation input must be (B, {spec.in_channels}, H, W), "
            f"got shape {t.shape}"
        )
    if t.shape[2] < 3 or t.shape[3] < 3:
        raise ShapeError(f"spatial dims must be >= 3, got {t.shape[2:]}")
    h = t
    tap = None
    for i in range(spec.trunk_depth):
        h = ad.relu(
            ad.add_channel_bias(ad.conv3x3(h, params[f"conv{i}_w"]), params[f"conv{i}_b"])
        )
        if i + 1 == spec.tap_depth:
            tap = h
    low = ad.add_channel_bias(ad.conv3x3(tap, params["low_w"]), params["low_b"])
    final = ad.add_channel_bias(ad.conv3x3(h, params["final_w"]), params["final_b"])
    return MultiLevelOutput(final=_pixel_softmax(final), low=_pixel_softmax(low))


# ---------------------------------------------------------------------------
# Checkpoint format: magic "MSQP", version u32, count u32, then per tensor
# name length u16 + UTF-8 name, rank u8, dims u32[], data f64[]; little endian.
# ---------------------------------------------------------------------------


def save_params(params: dict, path) -> None:
    chunks = [CHECKPOINT_MAGIC, struct.pack("<II", CHECKPOINT_VERSION, len(params))]
    for name, tensor in params.items():
        encoded = name.encode("utf-8")
        arr = np.ascontiguousarray(tensor.array, dtype="<f8")
        chunks.append(struct.pack("<H", len(encoded)))
        chunks.append(encoded)
        chunks.append(struct.pack("<B", arr.ndim))
        chunks.append(struct.pack(f"<{arr.ndim}I", *arr.shape))
        chunks.append(arr.tobytes())
    with open(path, "wb") as fh:
        fh.write(b"".join(chunks))


class _Cursor:
    def __init__(self, data: bytes):
        self.data = data
        self.pos = 0

    def take(self, n: int, what: str) -> bytes:
        if self.pos + n > len(self.data):
            raise FormatError(f"truncated checkpoint while reading {what}", self.pos)
        out = self.data[self.pos : self.pos + n]
        self.pos += n
        return out


def load_params(path) -> dict:
    with open(path, "rb") as fh:
        cur = _Cursor(fh.read())
    if cur.take(4, "magic") != CHECKPOINT_MAGIC:
        raise FormatError("bad checkpoint magic", 0)
    version, count = struct.unpack("<II", cur.take(8, "header"))
    if version != CHECKPOINT_VERSION:
        raise FormatError(f"unsupported checkpoint version {version}", 4)
    params = {}
    for _ in range(count):
        (name_len,) = struct.unpack("<H", cur.take(2, "name length"))
        name = cur.take(name_len, "name").decode("utf-8")
        (rank,) = struct.unpack("<B", cur.take(1, "rank"))
        dims = struct.unpack(f"<{rank}I", cur.take(4 * rank, "dims"))
        n = int(np.prod(dims, dtype=np.int64)) if rank else 1
        raw = cur.take(8 * n, f"data of {name!r}")
        arr = np.frombuffer(raw, dtype="<f8").reshape(dims)
        params[name] = ad.parameter(arr)
    return params


def infer_spec(params: dict):
    """Reconstruct a model spec from checkpoint parameter shapes.

    ``tap_depth`` is not stored in a checkpoint; it only affects which trunk
    activation feeds the low-level head, so evaluation of the final head is
    insensitive to it and 1 is assumed.
    """
    if "w0" in params:
        widths = []
        i = 0
        while f"w{i}" in params:
            widths.append(params[f"w{i}"].shape)
            i += 1
        return MlpSpec(
            input_dim=widths[0][0],
            hidden_dims=tuple(w[1] for w in widths[:-1]),
            num_classes=widths[-1][1],
        )
    if "conv0_w" in params:
        depth = 0
        while f"conv{depth}_w" in params:
            depth += 1
        first = params["conv0_w"].shape
        return SegNetSpec(
            in_channels=first[1],
            trunk_channels=first[0],
            trunk_depth=depth,
            num_classes=params["final_w"].shape[0],
            tap_depth=1,
        )
    raise FormatError("checkpoint does not contain a recognizable model")
