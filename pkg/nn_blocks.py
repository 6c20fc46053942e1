"""Global-local super-resolution network.

head conv 3x3 -> N x Block(SCAM, CFC) -> global-local extraction -> tail conv 3x3 -> PixelShuffle.

Parameters live in a flat WeightStore keyed by dotted paths. `layer_specs`
is the single enumeration of layers; initialization, checkpoint validation
and complexity accounting all derive from it.
"""
from __future__ import annotations

import math
from collections.abc import Iterable, Iterator, Mapping
from dataclasses import dataclass, replace

import numpy as np

from errors import ConfigError, DimensionError, StructureError
from tensor import (
    DTYPES,
    Tensor,
    add,
    channel_split,
    concat,
    conv2d,
    crop,
    global_avg_pool,
    layer_norm,
    max_pool,
    mul,
    nearest_upsample,
    pixel_shuffle,
    reflect_pad,
    space_to_depth,
)

SCALES = (2, 3, 4)
# Branch 0 keeps full resolution, the others are pooled by these rates.
POOL_RATES = (1, 2, 4, 8)
PAD_MULTIPLE = 8
LN_EPS = 1e-6


@dataclass(frozen=True)
class ModelConfig:
    channels: int = 16
    num_blocks: int = 2
    scale: int = 2
    enable_scam: bool = True
    enable_cfc: bool = True
    enable_glie: bool = True
    dtype: str = "single"

    def __post_init__(self) -> None:
        if self.channels <= 0 or self.channels % 4:
            raise ConfigError(f"channels must be a positive multiple of 4, got {self.channels}")
        if self.num_blocks <= 0:
            raise ConfigError(f"num_blocks must be positive, got {self.num_blocks}")
        if self.scale not in SCALES:
            raise ConfigError(f"scale must be one of {SCALES}, got {self.scale}")
        if self.dtype not in DTYPES:
            raise ConfigError(f"dtype must be one of {sorted(DTYPES)}, got {self.dtype!r}")

    def ablated(self, *, scam: bool | None = None, cfc: bool | None = None, glie: bool | None = None) -> "ModelConfig":
        return replace(
            self,
            enable_scam=self.enable_scam if scam is None else scam,
            enable_cfc=self.enable_cfc if cfc is None else cfc,
            enable_glie=self.enable_glie if glie is None else glie,
        )

    @property
    def variant(self) -> str:
        off = [name for name, on in (("SCAM", self.enable_scam), ("CFC", self.enable_cfc), ("GLIE", self.enable_glie)) if not on]
        return "full" if not off else "-w/o " + "/".join(off)


@dataclass(frozen=True)
class LayerSpec:
    path: str
    kind: str  # "conv" or "norm"
    cin: int
    cout: int
    k: int = 1
    groups: int = 1

    def param_shapes(self) -> list[tuple[str, tuple[int, ...]]]:
        if self.kind == "norm":
            return [(f"{self.path}.gamma", (1, self.cout, 1, 1)), (f"{self.path}.beta", (1, self.cout, 1, 1))]
        return [
            (f"{self.path}.w", (self.cout, self.cin // self.groups, self.k, self.k)),
            (f"{self.path}.b", (1, self.cout, 1, 1)),
        ]

    @property
    def num_params(self) -> int:
        if self.kind == "norm":
            return 2 * self.cout
        return self.cout * (self.cin // self.groups) * self.k * self.k + self.cout


def _conv(path: str, cin: int, cout: int, k: int, groups: int = 1) -> LayerSpec:
    return LayerSpec(path, "conv", cin, cout, k, groups)


def _norm(path: str, c: int) -> LayerSpec:
    return LayerSpec(path, "norm", c, c)


def layer_specs(config: ModelConfig) -> list[LayerSpec]:
    c = config.channels
    cg = c // 4
    specs = [_conv("head", 3, c, 3)]
    for i in range(config.num_blocks):
        prefix = f"block.{i}"
        if config.enable_scam:
            specs.append(_norm(f"{prefix}.scam.norm", c))
            specs.append(_conv(f"{prefix}.scam.channel", c, c, 1))
            specs.extend(_conv(f"{prefix}.scam.dwconv.{g}", cg, cg, 3, groups=cg) for g in range(4))
            specs.append(_conv(f"{prefix}.scam.fuse", c, c, 1))
        if config.enable_cfc:
            specs.append(_norm(f"{prefix}.cfc.norm", c))
            specs.append(_conv(f"{prefix}.cfc.expand", c, 2 * c, 3))
            specs.append(_conv(f"{prefix}.cfc.fuse", c, c, 1))
    if config.enable_glie:
        specs.append(_conv("glie.fuse", 4 * c, 4 * c, 1))
    tail_in = 2 * c if config.enable_glie else c
    specs.append(_conv("tail", tail_in, 3 * config.scale * config.scale, 3))
    return specs


def expected_shapes(config: ModelConfig) -> dict[str, tuple[int, ...]]:
    return {path: shape for spec in layer_specs(config) for path, shape in spec.param_shapes()}


def _scoped(params: Mapping[str, Tensor], prefix: str) -> dict[str, Tensor]:
    head = prefix + "."
    return {k[len(head):]: v for k, v in params.items() if k.startswith(head)}


def _param(params: Mapping[str, Tensor], name: str) -> Tensor:
    try:
        return params[name]
    except KeyError:
        raise StructureError(f"missing parameter {name!r}") from None


class WeightStore(Mapping[str, Tensor]):
    """Ordered map from parameter path to Tensor."""

    def __init__(self, items: Iterable[tuple[str, Tensor]] = ()):
        self._items: dict[str, Tensor] = {}
        for path, tensor in items:
            if path in self._items:
                raise StructureError(f"duplicate parameter path {path!r}")
            self._items[path] = tensor

    def __getitem__(self, path: str) -> Tensor:
        return self._items[path]

    def __iter__(self) -> Iterator[str]:
        return iter(self._items)

    def __len__(self) -> int:
        return len(self._items)

    def __repr__(self) -> str:
        return f"WeightStore({len(self)} tensors, {self.num_scalars()} scalars)"

    def scope(self, prefix: str) -> dict[str, Tensor]:
        return _scoped(self._items, prefix)

    def num_scalars(self) -> int:
        return sum(t.size for t in self._items.values())

    def trainable(self) -> "WeightStore":
        """Fresh leaves that record gradients."""
        return WeightStore((p, Tensor(t.data, requires_grad=True)) for p, t in self._items.items())

    def frozen(self) -> "WeightStore":
        return WeightStore((p, t.detach()) for p, t in self._items.items())

    def validate(self, config: ModelConfig) -> None:
        """Raise StructureError naming the first missing, extra or mis-shaped path."""
        expected = expected_shapes(config)
        for path, shape in expected.items():
            if path not in self._items:
                raise StructureError(f"missing parameter {path!r}")
            if self._items[path].shape != shape:
                raise StructureError(f"parameter {path!r} has shape {self._items[path].shape}, expected {shape}")
        for path in self._items:
            if path not in expected:
                raise StructureError(f"unexpected parameter {path!r}")


def init_weights(config: ModelConfig, seed: int = 0) -> WeightStore:
    """Glorot-uniform conv weights, zero biases, LayerNorm gamma=1 beta=0."""
    rng = np.random.default_rng(seed)
    items: list[tuple[str, Tensor]] = []
    for spec in layer_specs(config):
        if spec.kind == "norm":
            (g_path, shape), (b_path, _) = spec.param_shapes()
            items.append((g_path, Tensor(np.ones(shape), dtype=config.dtype)))
            items.append((b_path, Tensor(np.zeros(shape), dtype=config.dtype)))
            continue
        (w_path, w_shape), (b_path, b_shape) = spec.param_shapes()
        fan_in = w_shape[1] * spec.k * spec.k
        fan_out = w_shape[0] * spec.k * spec.k
        a = math.sqrt(6.0 / (fan_in + fan_out))
        items.append((w_path, Tensor(rng.uniform(-a, a, size=w_shape), dtype=config.dtype)))
        items.append((b_path, Tensor(np.zeros(b_shape), dtype=config.dtype)))
    return WeightStore(items)


def scam_forward(x: Tensor, params: Mapping[str, Tensor]) -> Tensor:
    """Spatial channel adaptive modulation.

    Channel gate from pooled LayerNorm statistics, then a multi-scale spatial
    gate built from four channel groups seen at 1x, 1/2, 1/4 and 1/8 resolution.
    """
    n, c, h, w = x.shape
    if c % 4:
        raise DimensionError(f"SCAM needs channels divisible by 4, got {c}")
    if h % POOL_RATES[-1] or w % POOL_RATES[-1]:
        raise DimensionError(f"SCAM needs spatial dims divisible by {POOL_RATES[-1]}, got {h}x{w}")
    cg = c // 4

    normed = layer_norm(x, _param(params, "norm.gamma"), _param(params, "norm.beta"), LN_EPS)
    gate = conv2d(global_avg_pool(normed), _param(params, "channel.w"), _param(params, "channel.b"))
    x1 = mul(x, gate)

    branches = []
    for g, (part, rate) in enumerate(zip(channel_split(x1, 4), POOL_RATES)):
        wt, bias = _param(params, f"dwconv.{g}.w"), _param(params, f"dwconv.{g}.b")
        if rate == 1:
            branches.append(conv2d(part, wt, bias, groups=cg))
        else:
            coarse = conv2d(max_pool(part, rate), wt, bias, groups=cg)
            branches.append(nearest_upsample(coarse, rate))
    spatial = conv2d(concat(branches), _param(params, "fuse.w"), _param(params, "fuse.b"))
    return mul(spatial, x1)


def cfc_forward(y: Tensor, params: Mapping[str, Tensor]) -> Tensor:
    """Channel fusion: LN, 3x3 expand to 2C, multiply the halves, 1x1 fuse back to C."""
    normed = layer_norm(y, _param(params, "norm.gamma"), _param(params, "norm.beta"), LN_EPS)
    expanded = conv2d(normed, _param(params, "expand.w"), _param(params, "expand.b"))
    y1, y2 = channel_split(expanded, 2)
    return conv2d(mul(y1, y2), _param(params, "fuse.w"), _param(params, "fuse.b"))


def block_forward(x: Tensor, params: Mapping[str, Tensor], config: ModelConfig) -> Tensor:
    if config.enable_scam:
        x = add(x, scam_forward(x, _scoped(params, "scam")))
    if config.enable_cfc:
        x = add(x, cfc_forward(x, _scoped(params, "cfc")))
    return x


def glie_forward(z: Tensor, params: Mapping[str, Tensor]) -> Tensor:
    """Global-local extraction: (N, C, H, W) -> (N, 2C, H, W)."""
    if z.shape[2] % 2 or z.shape[3] % 2:
        raise DimensionError(f"extraction module needs even spatial dims, got {z.shape[2]}x{z.shape[3]}")
    stacked = space_to_depth(z, 2)
    fused = conv2d(stacked, _param(params, "fuse.w"), _param(params, "fuse.b"))
    return concat([pixel_shuffle(fused, 2), z])


def model_forward(lr: Tensor, weights: Mapping[str, Tensor], config: ModelConfig) -> Tensor:
    """Unclamped SR prediction, (N, 3, h, w) -> (N, 3, h*s, w*s).

    Inputs are reflect-padded up to a multiple of 8 and the output is cropped
    back, so any h, w >= 1 is accepted.
    """
    if isinstance(weights, WeightStore):
        weights.validate(config)
    n, c, h, w = lr.shape
    if c != 3:
        raise DimensionError(f"model expects 3 input channels, got {c}")
    x = reflect_pad(lr, (-h) % PAD_MULTIPLE, (-w) % PAD_MULTIPLE)

    feat = conv2d(x, _param(weights, "head.w"), _param(weights, "head.b"))
    for i in range(config.num_blocks):
        feat = block_forward(feat, _scoped(weights, f"block.{i}"), config)
    if config.enable_glie:
        feat = glie_forward(feat, _scoped(weights, "glie"))
    out = pixel_shuffle(conv2d(feat, _param(weights, "tail.w"), _param(weights, "tail.b")), config.scale)
    return crop(out, h * config.scale, w * config.scale)


def upscale(lr: np.ndarray, weights: WeightStore, config: ModelConfig) -> np.ndarray:
    """Inference at the image boundary: (N, 3, h, w) floats in [0, 1] -> clamped SR."""
    x = Tensor(np.asarray(lr), dtype=config.dtype)
    return np.clip(model_forward(x, weights.frozen(), config).data, 0.0, 1.0)
