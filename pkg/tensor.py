"""Dense rank-4 tensors with reverse-mode differentiation.

Every tensor is (batch, channels, height, width). Per-channel vectors such as
biases or LayerNorm scales are stored as (1, C, 1, 1) so they broadcast
without special cases. Tensors are immutable: ops always return new tensors
and the underlying numpy buffers are marked read-only.
"""
from __future__ import annotations

import logging
from contextlib import contextmanager
from dataclasses import dataclass
from typing import Callable, Iterator, Sequence

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from errors import ConfigError, DimensionError, NumericError, UsageError

log = logging.getLogger(__name__)

DTYPES = {"single": np.float32, "double": np.float64}

BackwardFn = Callable[[np.ndarray], Sequence["np.ndarray | None"]]

# argmax indices of every max_pool run while a watcher is active
_argmax_log: list[np.ndarray] | None = None


def resolve_dtype(dtype) -> np.dtype:
    if isinstance(dtype, str) and dtype in DTYPES:
        return np.dtype(DTYPES[dtype])
    dt = np.dtype(dtype)
    if dt not in (np.float32, np.float64):
        raise ConfigError(f"unsupported dtype {dtype!r}; use single or double")
    return dt


@dataclass(frozen=True, eq=False)
class Node:
    kind: str
    inputs: tuple["Tensor", ...]
    backward: BackwardFn


class Tensor:
    __slots__ = ("data", "requires_grad", "grad", "node")

    def __init__(self, data, requires_grad: bool = False, dtype=None):
        if dtype is None:
            dtype = data.dtype if isinstance(data, np.ndarray) and data.dtype in (np.float32, np.float64) else np.float64
        arr = np.array(data, dtype=resolve_dtype(dtype))
        if arr.ndim != 4 or min(arr.shape) < 1:
            raise DimensionError(f"tensor must be rank 4 with positive dims, got shape {arr.shape}")
        arr.setflags(write=False)
        self.data = arr
        self.requires_grad = bool(requires_grad)
        self.grad: np.ndarray | None = None
        self.node: Node | None = None

    @classmethod
    def _wrap(cls, arr: np.ndarray, requires_grad: bool) -> "Tensor":
        t = object.__new__(cls)
        arr.setflags(write=False)
        t.data = arr
        t.requires_grad = requires_grad
        t.grad = None
        t.node = None
        return t

    @property
    def shape(self) -> tuple[int, int, int, int]:
        return self.data.shape

    @property
    def dtype(self) -> np.dtype:
        return self.data.dtype

    @property
    def size(self) -> int:
        return self.data.size

    def item(self) -> float:
        if self.size != 1:
            raise UsageError(f"item() needs a single-element tensor, got shape {self.shape}")
        return float(self.data.reshape(-1)[0])

    def detach(self) -> "Tensor":
        return Tensor._wrap(self.data, False)

    def backward(self, seed_grad=None) -> dict["Tensor", np.ndarray]:
        return backward(self, seed_grad)

    def __add__(self, other: "Tensor") -> "Tensor":
        return add(self, other)

    def __sub__(self, other: "Tensor") -> "Tensor":
        return sub(self, other)

    def __mul__(self, other: "Tensor") -> "Tensor":
        return mul(self, other)

    def __repr__(self) -> str:
        flag = ", requires_grad=True" if self.requires_grad else ""
        return f"Tensor(shape={self.shape}, dtype={self.dtype.name}{flag})"


def record(kind: str, data: np.ndarray, inputs: Sequence[Tensor], backward_fn: BackwardFn) -> Tensor:
    """Wrap an op result, attaching a graph node when any input needs gradients."""
    if not np.all(np.isfinite(data)):
        raise NumericError(f"{kind} produced non-finite values")
    needs = any(t.requires_grad for t in inputs)
    out = Tensor._wrap(np.ascontiguousarray(data), needs)
    if needs:
        out.node = Node(kind, tuple(inputs), backward_fn)
    return out


@dataclass
class Graph:
    """Recorded computation, topologically ordered: inputs precede consumers."""

    nodes: list[Tensor]
    output: Tensor

    @classmethod
    def trace(cls, output: Tensor) -> "Graph":
        order: list[Tensor] = []
        seen: set[int] = set()
        stack: list[tuple[Tensor, bool]] = [(output, False)]
        while stack:
            t, expanded = stack.pop()
            if expanded:
                order.append(t)
                continue
            if id(t) in seen:
                continue
            seen.add(id(t))
            stack.append((t, True))
            if t.node is not None:
                for parent in reversed(t.node.inputs):
                    if id(parent) not in seen:
                        stack.append((parent, False))
        return cls(order, output)

    def records(self) -> list[tuple[str, tuple[int, ...]]]:
        """(op kind, input positions) per entry; leaves have kind "leaf"."""
        index = {id(t): i for i, t in enumerate(self.nodes)}
        out = []
        for t in self.nodes:
            if t.node is None:
                out.append(("leaf", ()))
            else:
                out.append((t.node.kind, tuple(index[id(p)] for p in t.node.inputs)))
        return out

    def leaves(self) -> list[Tensor]:
        return [t for t in self.nodes if t.node is None and t.requires_grad]


def backward(target: Graph | Tensor, seed_grad=None) -> dict[Tensor, np.ndarray]:
    """Reverse-mode sweep. Sets `.grad` on every leaf that requires it and returns them."""
    graph = target if isinstance(target, Graph) else Graph.trace(target)
    out = graph.output
    if seed_grad is None:
        if out.size != 1:
            raise UsageError(f"backward on non-scalar output {out.shape} needs an explicit seed")
        seed = np.ones_like(out.data)
    else:
        seed = np.asarray(seed_grad.data if isinstance(seed_grad, Tensor) else seed_grad, dtype=out.dtype)
        if seed.shape != out.shape:
            raise DimensionError(f"seed shape {seed.shape} does not match output {out.shape}")

    pending: dict[int, np.ndarray] = {id(out): seed}
    leaves: dict[Tensor, np.ndarray] = {}
    for t in reversed(graph.nodes):
        g = pending.pop(id(t), None)
        if g is None:
            continue
        if t.node is None:
            if t.requires_grad:
                t.grad = np.asarray(g, dtype=t.dtype)
                leaves[t] = t.grad
            continue
        for parent, pg in zip(t.node.inputs, t.node.backward(g)):
            if pg is None or not parent.requires_grad:
                continue
            key = id(parent)
            pending[key] = pending[key] + pg if key in pending else pg
    return leaves


# ---------------------------------------------------------------------------
# primitives
# ---------------------------------------------------------------------------


def conv2d(x: Tensor, w: Tensor, b: Tensor | None = None, stride: int = 1, pad: int | None = None, groups: int = 1) -> Tensor:
    """Cross-correlation with zero padding. `pad` defaults to k // 2 (same size)."""
    n, cin, h, wd = x.shape
    cout, cin_g, k, k2 = w.shape
    if k != k2 or k % 2 == 0:
        raise DimensionError(f"kernel must be square and odd, got {k}x{k2}")
    if groups < 1 or cin % groups or cout % groups:
        raise ConfigError(f"channels {cin}->{cout} not divisible by groups={groups}")
    if cin_g != cin // groups:
        raise DimensionError(f"weight expects {cin_g * groups} input channels, input has {cin}")
    if b is not None and b.shape != (1, cout, 1, 1):
        raise DimensionError(f"bias shape {b.shape} does not match {cout} output channels")
    if stride < 1:
        raise ConfigError("stride must be >= 1")
    p = k // 2 if pad is None else pad
    ho = (h + 2 * p - k) // stride + 1
    wo = (wd + 2 * p - k) // stride + 1
    if ho < 1 or wo < 1:
        raise DimensionError(f"input {h}x{wd} too small for kernel {k} with pad {p}")

    xp = np.pad(x.data, ((0, 0), (0, 0), (p, p), (p, p)))
    win = sliding_window_view(xp, (k, k), axis=(2, 3))[:, :, ::stride, ::stride][:, :, :ho, :wo]
    og = cout // groups
    if groups == 1:
        out = np.tensordot(win, w.data, axes=([1, 4, 5], [1, 2, 3])).transpose(0, 3, 1, 2)
    else:
        win_g = win.reshape(n, groups, cin_g, ho, wo, k, k)
        w_g = w.data.reshape(groups, og, cin_g, k, k)
        out = np.einsum("ngchwij,gocij->ngohw", win_g, w_g).reshape(n, cout, ho, wo)
    if b is not None:
        out = out + b.data

    def _backward(g: np.ndarray):
        if groups == 1:
            dw = np.tensordot(g, win, axes=([0, 2, 3], [0, 2, 3]))
        else:
            g_g = g.reshape(n, groups, og, ho, wo)
            dw = np.einsum("ngohw,ngchwij->gocij", g_g, win_g).reshape(w.shape)
        db = g.sum(axis=(0, 2, 3)).reshape(1, cout, 1, 1) if b is not None else None
        if not x.requires_grad:
            return None, dw, db
        if groups == 1:
            dwin = np.tensordot(g, w.data, axes=([1], [0])).transpose(0, 3, 1, 2, 4, 5)
        else:
            dwin = np.einsum("ngohw,gocij->ngchwij", g_g, w_g).reshape(n, cin, ho, wo, k, k)
        dxp = np.zeros(xp.shape, dtype=g.dtype)
        for i in range(k):
            for j in range(k):
                dxp[:, :, i:i + stride * ho:stride, j:j + stride * wo:stride] += dwin[..., i, j]
        return dxp[:, :, p:p + h, p:p + wd], dw, db

    inputs = [x, w] if b is None else [x, w, b]
    return record("conv2d", out, inputs, _backward)


def layer_norm(x: Tensor, gamma: Tensor, beta: Tensor, eps: float = 1e-6) -> Tensor:
    """Normalize the channel vector at every (n, h, w), then per-channel affine."""
    c = x.shape[1]
    if gamma.shape != (1, c, 1, 1) or beta.shape != (1, c, 1, 1):
        raise DimensionError(f"layer_norm affine shapes {gamma.shape}/{beta.shape} do not match C={c}")
    if eps <= 0:
        raise ConfigError("eps must be positive")
    mu = x.data.mean(axis=1, keepdims=True)
    xc = x.data - mu
    var = (xc * xc).mean(axis=1, keepdims=True)
    inv = 1.0 / np.sqrt(var + eps)
    xhat = xc * inv
    out = gamma.data * xhat + beta.data

    def _backward(g: np.ndarray):
        dgamma = (g * xhat).sum(axis=(0, 2, 3), keepdims=True)
        dbeta = g.sum(axis=(0, 2, 3), keepdims=True)
        dxhat = g * gamma.data
        dx = inv * (dxhat - dxhat.mean(axis=1, keepdims=True) - xhat * (dxhat * xhat).mean(axis=1, keepdims=True))
        return dx, dgamma, dbeta

    return record("layer_norm", out, [x, gamma, beta], _backward)


def global_avg_pool(x: Tensor) -> Tensor:
    n, c, h, w = x.shape
    out = x.data.mean(axis=(2, 3), keepdims=True)

    def _backward(g: np.ndarray):
        return (np.broadcast_to(g / (h * w), x.shape),)

    return record("global_avg_pool", out, [x], _backward)


def max_pool(x: Tensor, k: int) -> Tensor:
    """Non-overlapping k x k max. Ties route the gradient to the first max in scan order."""
    n, c, h, w = x.shape
    if k < 1 or h % k or w % k:
        raise DimensionError(f"spatial dims {h}x{w} not divisible by pool size {k}")
    ho, wo = h // k, w // k
    cells = x.data.reshape(n, c, ho, k, wo, k).transpose(0, 1, 2, 4, 3, 5).reshape(n, c, ho, wo, k * k)
    idx = cells.argmax(axis=-1)[..., None]
    if _argmax_log is not None:
        _argmax_log.append(idx)
    out = np.take_along_axis(cells, idx, axis=-1)[..., 0]

    def _backward(g: np.ndarray):
        gc = np.zeros(cells.shape, dtype=g.dtype)
        np.put_along_axis(gc, idx, g[..., None], axis=-1)
        return (gc.reshape(n, c, ho, wo, k, k).transpose(0, 1, 2, 4, 3, 5).reshape(n, c, h, w),)

    return record("max_pool", out, [x], _backward)


def nearest_upsample(x: Tensor, r: int) -> Tensor:
    if r < 1:
        raise ConfigError(f"upsample factor must be >= 1, got {r}")
    n, c, h, w = x.shape
    out = x.data.repeat(r, axis=2).repeat(r, axis=3)

    def _backward(g: np.ndarray):
        return (g.reshape(n, c, h, r, w, r).sum(axis=(3, 5)),)

    return record("nearest_upsample", out, [x], _backward)


def _shuffle(a: np.ndarray, r: int) -> np.ndarray:
    n, c, h, w = a.shape
    return a.reshape(n, c // (r * r), r, r, h, w).transpose(0, 1, 4, 2, 5, 3).reshape(n, c // (r * r), h * r, w * r)


def _unshuffle(a: np.ndarray, r: int) -> np.ndarray:
    n, c, h, w = a.shape
    return a.reshape(n, c, h // r, r, w // r, r).transpose(0, 1, 3, 5, 2, 4).reshape(n, c * r * r, h // r, w // r)


def pixel_shuffle(x: Tensor, r: int) -> Tensor:
    """(N, C, H, W) -> (N, C/r^2, H*r, W*r); out[c, h*r+dy, w*r+dx] = in[c*r^2 + dy*r + dx, h, w]."""
    if r < 1 or x.shape[1] % (r * r):
        raise DimensionError(f"channels {x.shape[1]} not divisible by r^2 = {r * r}")
    return record("pixel_shuffle", _shuffle(x.data, r), [x], lambda g: (_unshuffle(g, r),))


def pixel_unshuffle(x: Tensor, r: int) -> Tensor:
    if r < 1 or x.shape[2] % r or x.shape[3] % r:
        raise DimensionError(f"spatial dims {x.shape[2]}x{x.shape[3]} not divisible by {r}")
    return record("pixel_unshuffle", _unshuffle(x.data, r), [x], lambda g: (_shuffle(g, r),))


def _to_depth(a: np.ndarray, r: int) -> np.ndarray:
    n, c, h, w = a.shape
    return a.reshape(n, c, h // r, r, w // r, r).transpose(0, 3, 5, 1, 2, 4).reshape(n, r * r * c, h // r, w // r)


def _from_depth(a: np.ndarray, r: int) -> np.ndarray:
    n, c, h, w = a.shape
    c0 = c // (r * r)
    return a.reshape(n, r, r, c0, h, w).transpose(0, 3, 4, 1, 5, 2).reshape(n, c0, h * r, w * r)


def space_to_depth(x: Tensor, r: int) -> Tensor:
    """Split into r*r phase sub-maps and stack them: out[k*C + c] = x[c, dy::r, dx::r], k = dy*r + dx."""
    if r < 1 or x.shape[2] % r or x.shape[3] % r:
        raise DimensionError(f"spatial dims {x.shape[2]}x{x.shape[3]} not divisible by {r}")
    return record("space_to_depth", _to_depth(x.data, r), [x], lambda g: (_from_depth(g, r),))


def depth_to_space(x: Tensor, r: int) -> Tensor:
    if r < 1 or x.shape[1] % (r * r):
        raise DimensionError(f"channels {x.shape[1]} not divisible by r^2 = {r * r}")
    return record("depth_to_space", _from_depth(x.data, r), [x], lambda g: (_to_depth(g, r),))


def channel_slice(x: Tensor, start: int, stop: int) -> Tensor:
    c = x.shape[1]
    if not 0 <= start < stop <= c:
        raise DimensionError(f"channel range [{start}, {stop}) outside 0..{c}")

    def _backward(g: np.ndarray):
        full = np.zeros(x.shape, dtype=g.dtype)
        full[:, start:stop] = g
        return (full,)

    return record("channel_slice", x.data[:, start:stop], [x], _backward)


def channel_split(x: Tensor, parts: int) -> list[Tensor]:
    c = x.shape[1]
    if parts < 1 or c % parts:
        raise DimensionError(f"channels {c} not divisible into {parts} parts")
    step = c // parts
    return [channel_slice(x, i * step, (i + 1) * step) for i in range(parts)]


def concat(xs: Sequence[Tensor]) -> Tensor:
    """Concatenate along the channel axis."""
    if not xs:
        raise DimensionError("concat needs at least one tensor")
    n, _, h, w = xs[0].shape
    for t in xs:
        if (t.shape[0], t.shape[2], t.shape[3]) != (n, h, w):
            raise DimensionError(f"concat shape mismatch: {t.shape} vs {xs[0].shape}")
    bounds = np.cumsum([0] + [t.shape[1] for t in xs])
    out = np.concatenate([t.data for t in xs], axis=1)

    def _backward(g: np.ndarray):
        return [g[:, bounds[i]:bounds[i + 1]] for i in range(len(xs))]

    return record("concat", out, list(xs), _backward)


def _check_same(kind: str, a: Tensor, b: Tensor) -> None:
    if a.shape != b.shape:
        raise DimensionError(f"{kind}: shape mismatch {a.shape} vs {b.shape}")


def mul(a: Tensor, b: Tensor) -> Tensor:
    """Elementwise product; `b` may be (N, C, 1, 1) and is then broadcast over space."""
    broadcast = b.shape != a.shape
    if broadcast and b.shape != (a.shape[0], a.shape[1], 1, 1):
        raise DimensionError(f"mul: cannot broadcast {b.shape} onto {a.shape}")
    out = a.data * b.data

    def _backward(g: np.ndarray):
        db = g * a.data
        if broadcast:
            db = db.sum(axis=(2, 3), keepdims=True)
        return g * b.data, db

    return record("mul", out, [a, b], _backward)


def add(a: Tensor, b: Tensor) -> Tensor:
    _check_same("add", a, b)
    return record("add", a.data + b.data, [a, b], lambda g: (g, g))


def sub(a: Tensor, b: Tensor) -> Tensor:
    _check_same("sub", a, b)
    return record("sub", a.data - b.data, [a, b], lambda g: (g, -g))


def scale(a: Tensor, s: float) -> Tensor:
    return record("scale", a.data * s, [a], lambda g: (g * s,))


def sum_all(x: Tensor) -> Tensor:
    out = x.data.sum().reshape(1, 1, 1, 1)
    return record("sum", out, [x], lambda g: (np.broadcast_to(g.reshape(()), x.shape),))


def mean_all(x: Tensor) -> Tensor:
    return scale(sum_all(x), 1.0 / x.size)


def reflect_pad(x: Tensor, ph: int, pw: int) -> Tensor:
    """Mirror-pad the bottom and right edges (edge sample not repeated)."""
    if ph < 0 or pw < 0:
        raise DimensionError("padding must be non-negative")
    if ph == 0 and pw == 0:
        return x
    n, c, h, w = x.shape
    ih = np.pad(np.arange(h), (0, ph), mode="reflect")
    iw = np.pad(np.arange(w), (0, pw), mode="reflect")
    out = x.data[:, :, ih][:, :, :, iw]

    def _backward(g: np.ndarray):
        rows = np.zeros((n, c, h, w + pw), dtype=g.dtype)
        np.add.at(rows, (slice(None), slice(None), ih), g)
        dx = np.zeros(x.shape, dtype=g.dtype)
        np.add.at(dx, (slice(None), slice(None), slice(None), iw), rows)
        return (dx,)

    return record("reflect_pad", out, [x], _backward)


def crop(x: Tensor, h: int, w: int) -> Tensor:
    """Keep the top-left h x w window."""
    if not (0 < h <= x.shape[2] and 0 < w <= x.shape[3]):
        raise DimensionError(f"crop {h}x{w} outside {x.shape[2]}x{x.shape[3]}")
    if (h, w) == x.shape[2:]:
        return x

    def _backward(g: np.ndarray):
        full = np.zeros(x.shape, dtype=g.dtype)
        full[:, :, :h, :w] = g
        return (full,)

    return record("crop", x.data[:, :, :h, :w], [x], _backward)


# ---------------------------------------------------------------------------
# finite differences
# ---------------------------------------------------------------------------


@contextmanager
def watch_argmax() -> Iterator[list[np.ndarray]]:
    """Collect the argmax indices chosen by every max_pool inside the block."""
    global _argmax_log
    outer, _argmax_log = _argmax_log, []
    try:
        yield _argmax_log
    finally:
        _argmax_log = outer


def _same_argmax(a: list[np.ndarray], b: list[np.ndarray]) -> bool:
    return len(a) == len(b) and all(np.array_equal(x, y) for x, y in zip(a, b))


@dataclass(frozen=True)
class GradCheck:
    max_rel_error: float
    checked: int
    skipped: int = 0


def check_gradients(
    f: Callable[..., Tensor],
    leaves: Sequence[Tensor],
    eps: float = 1e-5,
    samples: int | None = None,
    seed: int = 0,
    kink_guard: float | None = None,
) -> GradCheck:
    """Compare reverse-mode gradients with central differences.

    `f(*leaves)` must return a single-element tensor. With `samples` set, that
    many coordinates are drawn uniformly over all leaves; otherwise every
    coordinate is checked. The step for a coordinate is eps * max(1, |value|).
    With `kink_guard` set, a coordinate is skipped when moving it by
    kink_guard times its step changes the argmax of any max_pool, i.e. when
    some pooling window's margin is within that distance.
    """
    leaves = [t if t.requires_grad else Tensor(t.data, requires_grad=True) for t in leaves]
    out = f(*leaves)
    if not np.isfinite(out.data).all():
        raise NumericError("loss is not finite")
    grads = backward(out)
    analytic = [grads.get(t, np.zeros(t.shape, dtype=t.dtype)).reshape(-1) for t in leaves]

    coords = [(i, j) for i, t in enumerate(leaves) for j in range(t.size)]
    if samples is not None and samples < len(coords):
        rng = np.random.default_rng(seed)
        picks = rng.choice(len(coords), size=samples, replace=False)
        coords = [coords[p] for p in sorted(picks)]

    frozen = [Tensor._wrap(t.data, False) for t in leaves]

    def evaluate(i: int, j: int, delta: float) -> tuple[float, list[np.ndarray]]:
        moved = frozen[i].data.copy().reshape(-1)
        moved[j] += delta
        args = list(frozen)
        args[i] = Tensor(moved.reshape(frozen[i].shape))
        with watch_argmax() as chosen:
            value = f(*args).item()
        if not np.isfinite(value):
            raise NumericError("loss is not finite under perturbation")
        return value, chosen

    base = evaluate(0, 0, 0.0)[1] if kink_guard is not None and coords else []
    worst = 0.0
    skipped = 0
    for i, j in coords:
        h = eps * max(1.0, abs(float(frozen[i].data.reshape(-1)[j])))
        if kink_guard is not None and any(
            not _same_argmax(base, evaluate(i, j, sign * kink_guard * h)[1]) for sign in (1.0, -1.0)
        ):
            skipped += 1
            continue
        numeric = (evaluate(i, j, h)[0] - evaluate(i, j, -h)[0]) / (2 * h)
        a = float(analytic[i][j])
        err = abs(a - numeric) / max(abs(a), abs(numeric), 1e-8)
        worst = max(worst, err)
    log.debug("grad_check: %d coordinates, %d skipped near pooling ties, max rel error %.3e",
              len(coords) - skipped, skipped, worst)
    return GradCheck(worst, len(coords) - skipped, skipped)


def grad_check(
    f: Callable[..., Tensor],
    leaves: Sequence[Tensor],
    eps: float = 1e-5,
    samples: int | None = None,
    seed: int = 0,
    kink_guard: float | None = None,
) -> float:
    """Max relative error between reverse-mode and central-difference gradients."""
    return check_gradients(f, leaves, eps, samples, seed, kink_guard).max_rel_error
