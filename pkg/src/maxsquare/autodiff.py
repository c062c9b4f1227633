"""Reverse-mode automatic differentiation over dense float64 arrays.

A ``Tensor`` wraps an immutable numpy array together with the recipe that
produced it.  Calling an op function builds the graph on the fly; ``backward``
walks it exactly once in reverse construction order and returns the gradient
of a scalar output with respect to every parameter leaf it can reach.
``finite_diff_check`` is the central-difference oracle used throughout the
test suite to validate every analytic rule independently of the tape.

The op set is intentionally small: matmul, conv3x3 (zero padded, stride 1),
relu, elementwise add/mul, scalar scale, row softmax, clamped log, full
sum/mean, plus the shape plumbing (reshape, permute, bias adds) needed to
express a small MLP and a fully convolutional net.
"""

from __future__ import annotations

import numpy as np

from .errors import DomainError, GraphError, ShapeError

# log() operates on probabilities; inputs are clamped into this interval so a
# saturated softmax cannot produce -inf.
LOG_CLAMP_MIN = 1e-7
LOG_CLAMP_MAX = 1.0


class Tensor:
    """Immutable float64 array plus the operation that produced it.

    Leaves are constants or parameters (``requires_grad=True``); non-leaves
    keep references to their parents and a vector-Jacobian closure.
    """

    __slots__ = ("array", "parents", "requires_grad", "_vjp")

    def __init__(self, array, parents=(), vjp=None, requires_grad=False):
        arr = np.asarray(array, dtype=np.float64)
        if not arr.flags["C_CONTIGUOUS"]:  # ascontiguousarray would promote 0-d to 1-d
            arr = np.ascontiguousarray(arr)
        arr.setflags(write=False)
        self.array = arr
        self.parents = tuple(parents)
        self._vjp = vjp
        self.requires_grad = bool(requires_grad) or any(
            p.requires_grad for p in self.parents
        )

    @property
    def shape(self):
        return self.array.shape

    @property
    def ndim(self):
        return self.array.ndim

    def item(self) -> float:
        if self.array.size != 1:
            raise ShapeError(f"item() on tensor of shape {self.shape}")
        return float(self.array)

    def __repr__(self):
        kind = "param" if (self.requires_grad and not self.parents) else (
            "node" if self.parents else "const"
        )
        return f"Tensor({kind}, shape={self.shape})"


def constant(array) -> Tensor:
    """Leaf tensor that never receives a gradient."""
    return Tensor(array)


def parameter(array) -> Tensor:
    """Leaf tensor that participates in backward()."""
    return Tensor(array, requires_grad=True)


def _require(t, name="input"):
    if not isinstance(t, Tensor):
        raise TypeError(f"{name} must be a Tensor, got {type(t).__name__}")
    return t


# ---------------------------------------------------------------------------
# Op catalog
# ---------------------------------------------------------------------------


def add(a: Tensor, b: Tensor) -> Tensor:
    _require(a), _require(b)
    if a.shape != b.shape:
        raise ShapeError(f"add: shapes {a.shape} and {b.shape} differ")
    return Tensor(a.array + b.array, (a, b), lambda g: (g, g))


def mul(a: Tensor, b: Tensor) -> Tensor:
    """Elementwise (Hadamard) product of same-shape tensors."""
    _require(a), _require(b)
    if a.shape != b.shape:
        raise ShapeError(f"mul: shapes {a.shape} and {b.shape} differ")
    return Tensor(a.array * b.array, (a, b), lambda g: (g * b.array, g * a.array))


def scale(x: Tensor, c: float) -> Tensor:
    """Multiply by a python scalar constant."""
    _require(x)
    c = float(c)
    return Tensor(x.array * c, (x,), lambda g: (g * c,))


def matmul(a: Tensor, b: Tensor) -> Tensor:
    _require(a), _require(b)
    if a.ndim != 2 or b.ndim != 2 or a.shape[1] != b.shape[0]:
        raise ShapeError(f"matmul: incompatible shapes {a.shape} @ {b.shape}")
    return Tensor(
        a.array @ b.array,
        (a, b),
        lambda g: (g @ b.array.T, a.array.T @ g),
    )


def relu(x: Tensor) -> Tensor:
    """max(x, 0); the subgradient at exactly 0 is taken as 0."""
    _require(x)
    mask = x.array > 0.0
    return Tensor(np.where(mask, x.array, 0.0), (x,), lambda g: (g * mask,))


def log(x: Tensor) -> Tensor:
    """Natural log of inputs clamped into [LOG_CLAMP_MIN, LOG_CLAMP_MAX].

    The clamp is part of the function, so the gradient is zero wherever the
    input falls outside the interval.
    """
    _require(x)
    clamped = np.clip(x.array, LOG_CLAMP_MIN, LOG_CLAMP_MAX)
    inside = (x.array >= LOG_CLAMP_MIN) & (x.array <= LOG_CLAMP_MAX)
    return Tensor(np.log(clamped), (x,), lambda g: (g * (inside / clamped),))


def row_softmax(x: Tensor) -> Tensor:
    """Softmax over the last axis of a 2-D tensor, max-shifted per row."""
    _require(x)
    if x.ndim != 2:
        raise ShapeError(f"row_softmax: expected 2-D logits, got shape {x.shape}")
    if x.shape[1] < 2:
        raise ShapeError(f"row_softmax: need at least 2 classes, got {x.shape[1]}")
    e = np.exp(x.array - x.array.max(axis=1, keepdims=True, initial=-np.inf))
    p = e / e.sum(axis=1, keepdims=True)

    def vjp(g):
        dot = (g * p).sum(axis=1, keepdims=True)
        return (p * (g - dot),)

    return Tensor(p, (x,), vjp)


def sum_all(x: Tensor) -> Tensor:
    """Sum of all elements, as a scalar."""
    _require(x)
    return Tensor(x.array.sum(), (x,), lambda g: (np.full(x.shape, float(g)),))


def mean_all(x: Tensor) -> Tensor:
    """Mean of all elements, as a scalar."""
    _require(x)
    if x.array.size == 0:
        raise ShapeError("mean_all: mean of an empty tensor")
    n = x.array.size
    return Tensor(x.array.mean(), (x,), lambda g: (np.full(x.shape, float(g) / n),))


def reshape(x: Tensor, shape) -> Tensor:
    _require(x)
    shape = tuple(int(s) for s in shape)
    if int(np.prod(shape, dtype=np.int64)) != x.array.size:
        raise ShapeError(f"reshape: cannot view {x.shape} as {shape}")
    return Tensor(x.array.reshape(shape), (x,), lambda g: (g.reshape(x.shape),))


def permute(x: Tensor, axes) -> Tensor:
    _require(x)
    axes = tuple(int(a) for a in axes)
    if sorted(axes) != list(range(x.ndim)):
        raise ShapeError(f"permute: {axes} is not a permutation of {x.ndim} axes")
    inv = tuple(int(a) for a in np.argsort(axes))
    return Tensor(
        np.ascontiguousarray(x.array.transpose(axes)),
        (x,),
        lambda g: (np.ascontiguousarray(g.transpose(inv)),),
    )


def add_row_bias(x: Tensor, b: Tensor) -> Tensor:
    """(N, C) + (C,) bias; the bias gradient sums over rows."""
    _require(x), _require(b)
    if x.ndim != 2 or b.shape != (x.shape[1],):
        raise ShapeError(f"add_row_bias: shapes {x.shape} and {b.shape} incompatible")
    return Tensor(x.array + b.array, (x, b), lambda g: (g, g.sum(axis=0)))


def add_channel_bias(x: Tensor, b: Tensor) -> Tensor:
    """(B, C, H, W) + (C,) bias."""
    _require(x), _require(b)
    if x.ndim != 4 or b.shape != (x.shape[1],):
        raise ShapeError(
            f"add_channel_bias: shapes {x.shape} and {b.shape} incompatible"
        )
    return Tensor(
        x.array + b.array[None, :, None, None],
        (x, b),
        lambda g: (g, g.sum(axis=(0, 2, 3))),
    )


def _patches(arr, pad):
    padded = np.pad(arr, ((0, 0), (0, 0), (pad, pad), (pad, pad)))
    return np.lib.stride_tricks.sliding_window_view(padded, (3, 3), axis=(2, 3))


def conv3x3(x: Tensor, k: Tensor) -> Tensor:
    """3x3 correlation, zero padded, stride 1: (B,C,H,W) x (O,C,3,3) -> (B,O,H,W)."""
    _require(x), _require(k)
    if x.ndim != 4 or k.ndim != 4 or k.shape[1:] != (x.shape[1], 3, 3):
        raise ShapeError(f"conv3x3: shapes {x.shape} and {k.shape} incompatible")
    cols = _patches(x.array, 1)  # (B,C,H,W,3,3)
    out = np.einsum("bchwuv,ocuv->bohw", cols, k.array)

    def vjp(g):
        dk = np.einsum("bchwuv,bohw->ocuv", cols, g)
        kflip = np.ascontiguousarray(k.array[:, :, ::-1, ::-1])
        dx = np.einsum("bohwuv,ocuv->bchw", _patches(g, 1), kflip)
        return dx, dk

    return Tensor(out, (x, k), vjp)


# ---------------------------------------------------------------------------
# Backward pass and the numerical oracle
# ---------------------------------------------------------------------------


def _topo_order(root: Tensor):
    """Post-order over the requires_grad subgraph; deterministic for a graph."""
    order = []
    seen = {id(root)}
    stack = [(root, 0)]
    while stack:
        node, i = stack.pop()
        if i < len(node.parents):
            stack.append((node, i + 1))
            p = node.parents[i]
            if p.requires_grad and id(p) not in seen:
                seen.add(id(p))
                stack.append((p, 0))
        else:
            order.append(node)
    return order


def backward(output: Tensor) -> dict:
    """Gradient of a scalar output w.r.t. every reachable parameter leaf.

    Nodes are visited in exact reverse construction order, so repeated calls
    on the same graph produce bit-identical gradients.
    """
    _require(output, "output")
    if output.shape != ():
        raise GraphError(f"backward requires a scalar output, got shape {output.shape}")
    order = _topo_order(output)
    grads = {output: np.array(1.0)}
    for node in reversed(order):
        g = grads.get(node)
        if g is None or node._vjp is None:
            continue
        for parent, pg in zip(node.parents, node._vjp(g)):
            if pg is None or not parent.requires_grad:
                continue
            acc = grads.get(parent)
            grads[parent] = pg if acc is None else acc + pg
    return {
        t: grads[t]
        for t in order
        if t._vjp is None and t.requires_grad and t in grads
    }


def gradients(output: Tensor, params: dict) -> dict:
    """Named gradients for a parameter dict; zeros where a leaf is unreached."""
    leaf_grads = backward(output)
    return {
        name: leaf_grads.get(t, np.zeros(t.shape))
        for name, t in params.items()
    }


def finite_diff_check(fn, params: dict, epsilon: float = 1e-5) -> float:
    """Compare analytic gradients of ``fn(params)`` against central differences.

    ``fn`` must rebuild its graph from the given parameter dict on every call;
    the oracle re-evaluates it at perturbed leaves and never consults the tape.
    Returns the max over parameters of
    ``max|analytic - numeric| / max(max|numeric|, 1e-8)``.
    """
    if not (0.0 < epsilon <= 1e-3):
        raise DomainError(f"epsilon must be in (0, 1e-3], got {epsilon}")
    analytic = gradients(fn(params), params)
    worst = 0.0
    for name, leaf in params.items():
        numeric = np.zeros(leaf.shape)
        for idx in np.ndindex(*leaf.shape):
            plus = leaf.array.copy()
            plus[idx] += epsilon
            minus = leaf.array.copy()
            minus[idx] -= epsilon
            fp = fn({**params, name: parameter(plus)}).item()
            fm = fn({**params, name: parameter(minus)}).item()
            numeric[idx] = (fp - fm) / (2.0 * epsilon)
        if numeric.size == 0:
            continue
        diff = np.abs(analytic[name] - numeric).max()
        denom = max(np.abs(numeric).max(), 1e-8)
        worst = max(worst, diff / denom)
    return worst
