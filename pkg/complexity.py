"""Parameter and multiply-accumulate accounting.

MACs are counted on the LR trunk, H/s x W/s, which must already be a multiple
of 8; every pooled branch then divides it evenly.
padded_hr_size rounds any other target up to the size the model actually runs.
A convolution costs out_h * out_w * Cout * Cin/groups * k^2;
LayerNorm, pooling, elementwise products and residual adds cost one MAC per
element they read. Shuffles, splits, concats and nearest upsampling are free.
"""
from __future__ import annotations

import csv
import io
import math
from dataclasses import dataclass, replace

from errors import ConfigError
from nn_blocks import PAD_MULTIPLE, POOL_RATES, LayerSpec, ModelConfig, layer_specs

BENCHMARK_HR_SIZE = (720, 1280)  # (H, W)


@dataclass(frozen=True)
class LayerCost:
    path: str
    params: int
    macs: int
    per_image: bool = False  # cost does not depend on the image size


@dataclass(frozen=True)
class CostReport:
    params: int
    macs: int
    breakdown: tuple[LayerCost, ...]
    flops_per_mac: int = 2

    def __post_init__(self) -> None:
        if self.flops_per_mac not in (1, 2):
            raise ConfigError("flops_per_mac must be 1 or 2")
        if self.params != sum(c.params for c in self.breakdown) or self.macs != sum(c.macs for c in self.breakdown):
            raise ConfigError("cost totals do not match the breakdown")

    @property
    def spatial_macs(self) -> int:
        """MACs that scale with H*W; the rest is a fixed cost per image."""
        return sum(c.macs for c in self.breakdown if not c.per_image)

    @property
    def flops(self) -> int:
        return self.macs * self.flops_per_mac

    def to_text(self) -> str:
        width = max([len(c.path) for c in self.breakdown] + [5])
        lines = [f"{'layer':<{width}}  {'params':>10}  {'MACs':>16}"]
        for c in self.breakdown:
            lines.append(f"{c.path:<{width}}  {c.params:>10,d}  {c.macs:>16,d}")
        lines.append(f"{'total':<{width}}  {self.params:>10,d}  {self.macs:>16,d}")
        lines.append(f"#Params [M] {self.params / 1e6:.4f}   #FLOPs [G] {self.flops / 1e9:.4f} (1 MAC = {self.flops_per_mac} FLOP)")
        lines.append(f"params={self.params} macs={self.macs} flops={self.flops}")
        return "\n".join(lines)

    def to_csv(self) -> str:
        buf = io.StringIO()
        writer = csv.writer(buf, lineterminator="\n")
        writer.writerow(["path", "params", "macs"])
        for c in self.breakdown:
            writer.writerow([c.path, c.params, c.macs])
        writer.writerow(["total", self.params, self.macs])
        return buf.getvalue()


def count_params(config: ModelConfig) -> int:
    return sum(spec.num_params for spec in layer_specs(config))


def padded_hr_size(config: ModelConfig, hr_size: tuple[int, int]) -> tuple[int, int]:
    """HR size the model produces for a target: ceil(HR / s) padded to a multiple of 8, times s."""
    h, w = hr_size
    if h < 1 or w < 1:
        raise ConfigError(f"invalid HR size {h}x{w}")
    lh, lw = math.ceil(h / config.scale), math.ceil(w / config.scale)
    return (lh + (-lh) % PAD_MULTIPLE) * config.scale, (lw + (-lw) % PAD_MULTIPLE) * config.scale


def trunk_size(config: ModelConfig, hr_size: tuple[int, int]) -> tuple[int, int]:
    """LR feature size H/s x W/s; both must be positive multiples of 8."""
    h, w = hr_size
    step = config.scale * PAD_MULTIPLE
    if h < 1 or w < 1 or h % step or w % step:
        raise ConfigError(
            f"HR size {h}x{w} must be a positive multiple of {step} in both dimensions at x{config.scale}"
        )
    return h // config.scale, w // config.scale


def _conv_cost(spec: LayerSpec, pixels: int) -> LayerCost:
    return LayerCost(spec.path, spec.num_params, pixels * spec.cout * (spec.cin // spec.groups) * spec.k * spec.k)


def count_flops(config: ModelConfig, hr_size: tuple[int, int] | None = None, flops_per_mac: int = 2) -> CostReport:
    """Cost of one forward pass producing an HR image of size (H, W).

    Without hr_size the benchmark 1280x720 target is used, padded as the model pads it.
    """
    if hr_size is None:
        hr_size = padded_hr_size(config, BENCHMARK_HR_SIZE)
    th, tw = trunk_size(config, hr_size)
    pixels = th * tw
    c = config.channels
    cg = c // 4
    specs = {spec.path: spec for spec in layer_specs(config)}
    costs: list[LayerCost] = []

    def conv(path: str, at: int = pixels) -> None:
        costs.append(_conv_cost(specs[path], at))

    def gate_conv(path: str) -> None:
        # runs on the pooled C-vector
        costs.append(replace(_conv_cost(specs[path], 1), per_image=True))

    def elementwise(path: str, count: int, params: int = 0) -> None:
        costs.append(LayerCost(path, params, count))

    conv("head")
    for i in range(config.num_blocks):
        p = f"block.{i}"
        if config.enable_scam:
            elementwise(f"{p}.scam.norm", c * pixels, specs[f"{p}.scam.norm"].num_params)
            elementwise(f"{p}.scam.pool", c * pixels)
            gate_conv(f"{p}.scam.channel")
            elementwise(f"{p}.scam.channel_gate", c * pixels)
            for g, rate in enumerate(POOL_RATES):
                if rate > 1:
                    elementwise(f"{p}.scam.maxpool.{g}", cg * pixels)
                conv(f"{p}.scam.dwconv.{g}", at=pixels // (rate * rate))
            conv(f"{p}.scam.fuse")
            elementwise(f"{p}.scam.spatial_gate", c * pixels)
            elementwise(f"{p}.scam.residual", c * pixels)
        if config.enable_cfc:
            elementwise(f"{p}.cfc.norm", c * pixels, specs[f"{p}.cfc.norm"].num_params)
            conv(f"{p}.cfc.expand")
            elementwise(f"{p}.cfc.product", c * pixels)
            conv(f"{p}.cfc.fuse")
            elementwise(f"{p}.cfc.residual", c * pixels)
    if config.enable_glie:
        conv("glie.fuse", at=pixels // 4)
    conv("tail")

    return CostReport(
        params=sum(x.params for x in costs),
        macs=sum(x.macs for x in costs),
        breakdown=tuple(costs),
        flops_per_mac=flops_per_mac,
    )
