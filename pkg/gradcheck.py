"""Finite-difference gradient checks for the primitives, the blocks, the model and the loss.

Every check runs in double precision and reduces its output against a fixed
random weighting so no gradient is trivially zero.
"""
from __future__ import annotations

import logging
import time
from dataclasses import dataclass
from typing import Callable, Mapping

import numpy as np

from errors import ConfigError
from nn_blocks import ModelConfig, block_forward, cfc_forward, glie_forward, init_weights, model_forward, scam_forward
from spectral import LossConfig, sr_loss
from tensor import Tensor, check_gradients, conv2d, layer_norm, mul, sum_all

log = logging.getLogger(__name__)

SMOOTH_TOLERANCE = 1e-5
# max pooling and the L1 terms have kinks
KINKED_TOLERANCE = 1e-4
# pooled paths skip coordinates within this many steps of an argmax change
KINK_GUARD = 10.0
CHECKS = ("conv", "layernorm", "mul", "scam", "cfc", "block", "glie", "model", "loss", "model_loss")
TINY_MODEL = ModelConfig(channels=8, num_blocks=1, scale=2, dtype="double")


@dataclass(frozen=True)
class GradCheckResult:
    name: str
    max_rel_error: float
    tolerance: float
    coordinates: int
    seconds: float
    skipped: int = 0

    @property
    def passed(self) -> bool:
        return self.coordinates > 0 and self.max_rel_error < self.tolerance


@dataclass(frozen=True)
class _Case:
    f: Callable[..., Tensor]
    leaves: list[Tensor]
    tolerance: float
    samples: int | None = None
    kink_guard: float | None = None


def _module_case(forward: Callable[[Tensor, Mapping[str, Tensor]], Tensor], params: Mapping[str, Tensor],
                 x: np.ndarray, rng: np.random.Generator, tolerance: float, samples: int | None,
                 kink_guard: float | None = None) -> _Case:
    names = list(params)
    weight = Tensor(rng.standard_normal(forward(Tensor(x), params).shape))

    def f(inp: Tensor, *ps: Tensor) -> Tensor:
        return sum_all(mul(forward(inp, dict(zip(names, ps))), weight))

    return _Case(f, [Tensor(x)] + [Tensor(params[n].data) for n in names], tolerance, samples, kink_guard)


def _randomized(params: Mapping[str, Tensor], rng: np.random.Generator) -> dict[str, Tensor]:
    # move off the all-zero biases and unit scales of a fresh init
    return {p: Tensor(t.data + 0.1 * rng.standard_normal(t.shape)) for p, t in params.items()}


def _scoped_init(prefix: str, rng: np.random.Generator) -> dict[str, Tensor]:
    weights = init_weights(TINY_MODEL, seed=int(rng.integers(1 << 31)))
    return _randomized(weights.scope(prefix), rng)


def _model_loss_case(seed: int, rng: np.random.Generator) -> _Case:
    weights = _randomized(init_weights(TINY_MODEL, seed=seed), rng)
    names = list(weights)
    lr = rng.uniform(0, 1, size=(1, 3, 16, 16))
    hr = Tensor(rng.uniform(0, 1, size=(1, 3, 32, 32)))
    cfg = LossConfig(gamma=0.05)

    def f(inp: Tensor, *ps: Tensor) -> Tensor:
        return sr_loss(model_forward(inp, dict(zip(names, ps)), TINY_MODEL), hr, cfg)

    leaves = [Tensor(lr)] + [Tensor(weights[n].data) for n in names]
    return _Case(f, leaves, KINKED_TOLERANCE, samples=300, kink_guard=KINK_GUARD)


def build_case(name: str, seed: int = 0) -> _Case:
    rng = np.random.default_rng(seed)
    c = TINY_MODEL.channels
    if name == "conv":
        x, w, b = rng.standard_normal((2, 3, 6, 5)), rng.standard_normal((4, 3, 3, 3)), rng.standard_normal((1, 4, 1, 1))
        weight = Tensor(rng.standard_normal((2, 4, 6, 5)))
        return _Case(lambda x, w, b: sum_all(mul(conv2d(x, w, b), weight)), [Tensor(x), Tensor(w), Tensor(b)], SMOOTH_TOLERANCE)
    if name == "layernorm":
        x = rng.standard_normal((2, 6, 4, 4))
        gamma, beta = 1 + 0.1 * rng.standard_normal((1, 6, 1, 1)), rng.standard_normal((1, 6, 1, 1))
        weight = Tensor(rng.standard_normal(x.shape))
        return _Case(lambda x, g, b: sum_all(mul(layer_norm(x, g, b), weight)), [Tensor(x), Tensor(gamma), Tensor(beta)],
                     SMOOTH_TOLERANCE)
    if name == "mul":
        a, b = rng.standard_normal((2, 4, 3, 3)), rng.standard_normal((2, 4, 1, 1))
        weight = Tensor(rng.standard_normal(a.shape))
        return _Case(lambda a, b: sum_all(mul(mul(a, b), weight)), [Tensor(a), Tensor(b)], SMOOTH_TOLERANCE)
    if name == "scam":
        return _module_case(scam_forward, _scoped_init("block.0.scam", rng), rng.standard_normal((1, c, 8, 8)),
                            rng, KINKED_TOLERANCE, samples=300, kink_guard=KINK_GUARD)
    if name == "cfc":
        return _module_case(cfc_forward, _scoped_init("block.0.cfc", rng), rng.standard_normal((1, c, 6, 6)),
                            rng, SMOOTH_TOLERANCE, samples=300)
    if name == "block":
        return _module_case(lambda x, p: block_forward(x, p, TINY_MODEL), _scoped_init("block.0", rng),
                            rng.standard_normal((1, c, 8, 8)), rng, KINKED_TOLERANCE, samples=300, kink_guard=KINK_GUARD)
    if name == "glie":
        return _module_case(glie_forward, _scoped_init("glie", rng), rng.standard_normal((1, c, 4, 4)),
                            rng, SMOOTH_TOLERANCE, samples=300)
    if name == "model":
        weights = _randomized(init_weights(TINY_MODEL, seed=seed), rng)
        lr = rng.uniform(0, 1, size=(1, 3, 16, 16))
        return _module_case(lambda x, p: model_forward(x, p, TINY_MODEL), weights, lr, rng, KINKED_TOLERANCE,
                            samples=300, kink_guard=KINK_GUARD)
    if name == "loss":
        sr, hr = rng.uniform(0, 1, size=(2, 3, 8, 8)), rng.uniform(0, 1, size=(2, 3, 8, 8))
        cfg = LossConfig(gamma=0.05)
        return _Case(lambda a, b: sr_loss(a, b, cfg), [Tensor(sr), Tensor(hr)], KINKED_TOLERANCE)
    if name == "model_loss":
        return _model_loss_case(seed, rng)
    raise ConfigError(f"unknown gradient check {name!r}; choose from {', '.join(CHECKS)}")


def run_gradcheck(name: str, seed: int = 0) -> GradCheckResult:
    case = build_case(name, seed)
    started = time.perf_counter()
    stats = check_gradients(case.f, case.leaves, samples=case.samples, seed=seed, kink_guard=case.kink_guard)
    result = GradCheckResult(
        name=name,
        max_rel_error=stats.max_rel_error,
        tolerance=case.tolerance,
        coordinates=stats.checked,
        seconds=time.perf_counter() - started,
        skipped=stats.skipped,
    )
    log.info("gradcheck %s: max rel error %.3e over %d coordinates (%d skipped near pooling ties)",
             name, result.max_rel_error, result.coordinates, result.skipped)
    return result
