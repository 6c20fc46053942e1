"""Training protocol: Adam, learning-rate schedule, bicubic degradation, patches, loop."""
from __future__ import annotations

import csv
import logging
import math
import time
from dataclasses import dataclass, field
from pathlib import Path
from typing import Mapping, Sequence

import numpy as np
from scipy.ndimage import gaussian_filter
from tqdm import tqdm

from checkpoint import save_weights
from errors import ConfigError, DimensionError, NumericError
from image_io import ImageU8
from metrics import psnr, quantize, ssim, y_from_float
from nn_blocks import PAD_MULTIPLE, ModelConfig, WeightStore, init_weights, model_forward, upscale
from spectral import LossConfig, sr_loss
from tensor import Tensor, backward

log = logging.getLogger(__name__)

SCHEDULES = ("cosine", "step")
CUBIC_A = -0.5


@dataclass(frozen=True)
class TrainConfig:
    beta1: float = 0.9
    beta2: float = 0.99
    eps_adam: float = 1e-8
    lr_start: float = 1e-3
    lr_end: float = 1e-5
    schedule: str = "cosine"
    total_steps: int = 1500
    batch: int = 8
    lr_patch: int = 32  # HR patch is lr_patch * scale
    gamma: float = 0.05
    seed: int = 0
    eval_interval: int = 250
    log_interval: int = 100

    def __post_init__(self) -> None:
        if not self.lr_start >= self.lr_end > 0:
            raise ConfigError(f"need lr_start >= lr_end > 0, got {self.lr_start} / {self.lr_end}")
        if self.schedule not in SCHEDULES:
            raise ConfigError(f"schedule must be one of {SCHEDULES}, got {self.schedule!r}")
        if self.total_steps < 1 or self.batch < 1:
            raise ConfigError("total_steps and batch must be positive")
        if self.lr_patch < 1 or self.lr_patch % PAD_MULTIPLE:
            raise ConfigError(f"lr_patch must be a positive multiple of {PAD_MULTIPLE}, got {self.lr_patch}")
        if not (0 <= self.beta1 < 1 and 0 <= self.beta2 < 1) or self.eps_adam <= 0:
            raise ConfigError("Adam betas must lie in [0, 1) and eps must be positive")
        if self.gamma < 0:
            raise ConfigError(f"gamma must be >= 0, got {self.gamma}")
        if self.eval_interval < 1 or self.log_interval < 1:
            raise ConfigError("eval_interval and log_interval must be positive")

    def patch_hr(self, scale: int) -> int:
        return self.lr_patch * scale


@dataclass
class AdamState:
    m: dict[str, np.ndarray]
    v: dict[str, np.ndarray]
    t: int = 0

    @classmethod
    def fresh(cls, weights: Mapping[str, Tensor]) -> "AdamState":
        return cls(
            {p: np.zeros(w.shape, dtype=w.dtype) for p, w in weights.items()},
            {p: np.zeros(w.shape, dtype=w.dtype) for p, w in weights.items()},
        )


def adam_step(
    weights: WeightStore,
    grads: Mapping[str, np.ndarray],
    state: AdamState,
    lr: float,
    cfg: TrainConfig = TrainConfig(),
) -> tuple[WeightStore, AdamState]:
    """One bias-corrected Adam update. Returns new weights and state; inputs are untouched."""
    if not lr > 0:
        raise ConfigError(f"learning rate must be positive, got {lr}")
    for path, g in grads.items():
        if not np.isfinite(g).all():
            raise NumericError(f"non-finite gradient for {path!r}")

    t = state.t + 1
    c1 = 1.0 - cfg.beta1 ** t
    c2 = 1.0 - cfg.beta2 ** t
    new_w, new_m, new_v = [], {}, {}
    for path, w in weights.items():
        g = grads.get(path)
        if g is None:
            g = np.zeros(w.shape, dtype=w.dtype)
        m = cfg.beta1 * state.m[path] + (1 - cfg.beta1) * g
        v = cfg.beta2 * state.v[path] + (1 - cfg.beta2) * g * g
        step = lr * (m / c1) / (np.sqrt(v / c2) + cfg.eps_adam)
        new_w.append((path, Tensor((w.data - step).astype(w.dtype))))
        new_m[path] = m.astype(w.dtype)
        new_v[path] = v.astype(w.dtype)
    return WeightStore(new_w), AdamState(new_m, new_v, t)


def lr_at(step: int, cfg: TrainConfig) -> float:
    """Cosine annealing (default) or four-stage geometric decay from lr_start to lr_end."""
    total = cfg.total_steps
    if not 0 <= step <= total:
        raise ConfigError(f"step {step} outside 0..{total}")
    if cfg.schedule == "step":
        if step == total:
            return cfg.lr_end
        stage = math.floor(4 * step / total) / 4
        return cfg.lr_start * (cfg.lr_end / cfg.lr_start) ** stage
    w = 0.5 * (1.0 + math.cos(math.pi * step / total))
    return cfg.lr_start * w + cfg.lr_end * (1.0 - w)


# ---------------------------------------------------------------------------
# bicubic resampling
# ---------------------------------------------------------------------------


def cubic(x: np.ndarray, a: float = CUBIC_A) -> np.ndarray:
    x = np.abs(np.asarray(x, dtype=np.float64))
    x2, x3 = x * x, x * x * x
    near = (a + 2) * x3 - (a + 3) * x2 + 1
    far = a * x3 - 5 * a * x2 + 8 * a * x - 4 * a
    return np.where(x <= 1, near, np.where(x < 2, far, 0.0))


def cubic_weights(phase: float) -> np.ndarray:
    """Interpolation taps at offsets -1, 0, 1, 2 for a sample `phase` past tap 0."""
    return cubic(np.array([phase + 1, phase, 1 - phase, 2 - phase]))


def resize_matrix(in_len: int, out_len: int) -> np.ndarray:
    """(out_len, in_len) bicubic resampling matrix with pixel-center alignment.

    Downscaling stretches the kernel by the scale factor (antialiasing);
    borders are mirrored with the edge sample repeated. Rows sum to one.
    """
    scale = out_len / in_len
    width = 4.0 / scale if scale < 1 else 4.0
    centers = np.arange(1, out_len + 1) / scale + 0.5 * (1 - 1 / scale)
    left = np.floor(centers - width / 2)
    taps = int(math.ceil(width)) + 2
    idx = left[:, None] + np.arange(taps)[None, :]
    dist = centers[:, None] - idx
    weights = scale * cubic(dist * scale) if scale < 1 else cubic(dist)
    weights = weights / weights.sum(axis=1, keepdims=True)
    mirror = np.concatenate([np.arange(in_len), np.arange(in_len)[::-1]])
    cols = mirror[(idx.astype(np.int64) - 1) % (2 * in_len)]
    mat = np.zeros((out_len, in_len))
    np.add.at(mat, (np.repeat(np.arange(out_len), taps), cols.reshape(-1)), weights.reshape(-1))
    return mat


def _resize(img: np.ndarray, out_h: int, out_w: int) -> np.ndarray:
    img = np.asarray(img, dtype=np.float64)
    rows = resize_matrix(img.shape[-2], out_h)
    cols = resize_matrix(img.shape[-1], out_w)
    return np.einsum("ih,...hw,jw->...ij", rows, img, cols)


def bicubic_downsample(img: np.ndarray, s: int) -> np.ndarray:
    """Resample (..., H, W) down by the integer factor s."""
    h, w = img.shape[-2:]
    if s < 1 or h % s or w % s:
        raise DimensionError(f"image {h}x{w} not divisible by scale {s}")
    return _resize(img, h // s, w // s)


def bicubic_upsample(img: np.ndarray, s: int) -> np.ndarray:
    h, w = img.shape[-2:]
    return _resize(img, h * s, w * s)


def nearest_upsample_image(img: np.ndarray, s: int) -> np.ndarray:
    return np.asarray(img).repeat(s, axis=-2).repeat(s, axis=-1)


# ---------------------------------------------------------------------------
# data
# ---------------------------------------------------------------------------


def synth_dataset(seed: int, count: int, size: int) -> list[ImageU8]:
    """Procedural RGB images: oriented gradients, a phase-shifted checkerboard and smooth noise."""
    if size < 2 or count < 0:
        raise ConfigError(f"need size >= 2 and count >= 0, got size={size} count={count}")
    rng = np.random.default_rng(seed)
    yy, xx = np.mgrid[0:size, 0:size] / (size - 1)
    images = []
    for _ in range(count):
        freq = rng.integers(2, 9)
        px, py = rng.uniform(0, 1, size=2)
        checker = (np.floor(xx * freq + px) + np.floor(yy * freq + py)) % 2
        planes = []
        for _c in range(3):
            theta = rng.uniform(0, 2 * np.pi)
            ramp = xx * np.cos(theta) + yy * np.sin(theta)
            ramp = (ramp - ramp.min()) / np.ptp(ramp)
            noise = gaussian_filter(rng.standard_normal((size, size)), sigma=rng.uniform(1.0, 3.0), mode="wrap")
            noise = (noise - noise.min()) / max(np.ptp(noise), 1e-12)
            planes.append(0.55 * ramp + 0.25 * checker + 0.2 * noise)
        images.append(ImageU8.from_float(np.stack(planes)))
    return images


def _as_float(img: ImageU8 | np.ndarray) -> np.ndarray:
    return img.to_float() if isinstance(img, ImageU8) else np.asarray(img, dtype=np.float64)


def sample_patches(
    images: Sequence[ImageU8 | np.ndarray],
    patch_hr: int,
    batch: int,
    rng: np.random.Generator,
    scale: int,
    augment: bool = True,
) -> tuple[np.ndarray, np.ndarray]:
    """Random scale-aligned HR crops with flips / 90-degree rotations and their bicubic LR."""
    if patch_hr % scale:
        raise DimensionError(f"HR patch {patch_hr} not divisible by scale {scale}")
    pool = [_as_float(im) for im in images]
    eligible = [im for im in pool if im.shape[1] >= patch_hr and im.shape[2] >= patch_hr]
    if len(eligible) < len(pool):
        log.warning("skipping %d image(s) smaller than the %dpx patch", len(pool) - len(eligible), patch_hr)
    if not eligible:
        raise DimensionError(f"no image is at least {patch_hr}x{patch_hr}")

    crops = []
    for _ in range(batch):
        img = eligible[int(rng.integers(len(eligible)))]
        top = int(rng.integers((img.shape[1] - patch_hr) // scale + 1)) * scale
        left = int(rng.integers((img.shape[2] - patch_hr) // scale + 1)) * scale
        patch = img[:, top:top + patch_hr, left:left + patch_hr]
        if augment:
            if rng.random() < 0.5:
                patch = patch[:, :, ::-1]
            if rng.random() < 0.5:
                patch = patch[:, ::-1, :]
            patch = np.rot90(patch, k=int(rng.integers(4)), axes=(1, 2))
        crops.append(np.ascontiguousarray(patch))
    hr = np.stack(crops)
    return bicubic_downsample(hr, scale), hr


# ---------------------------------------------------------------------------
# evaluation and training loop
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class ImageScore:
    name: str
    psnr: float
    ssim: float


@dataclass(frozen=True)
class EvalResult:
    scores: tuple[ImageScore, ...]
    nearest_psnr: float
    bicubic_psnr: float

    @property
    def psnr(self) -> float:
        return float(np.mean([s.psnr for s in self.scores]))

    @property
    def ssim(self) -> float:
        return float(np.mean([s.ssim for s in self.scores]))


def evaluate(
    weights: WeightStore,
    config: ModelConfig,
    hr_images: Sequence[ImageU8],
    names: Sequence[str] | None = None,
    crop: int | None = None,
    quantize_sr: bool = False,
) -> EvalResult:
    """Y-channel PSNR/SSIM of the model on bicubic-degraded HR images, plus interpolation baselines."""
    s = config.scale
    border = s if crop is None else crop
    names = list(names) if names is not None else [f"image_{i:03d}" for i in range(len(hr_images))]
    scores, nearest, bicubic = [], [], []
    for name, img in zip(names, hr_images):
        hr = img.crop(img.height - img.height % s, img.width - img.width % s).to_float()
        lr = bicubic_downsample(hr, s)
        sr = upscale(lr[None], weights, config)[0]
        if quantize_sr:
            sr = quantize(sr)
        y_hr = y_from_float(hr)
        y_sr = y_from_float(sr)
        scores.append(ImageScore(name, psnr(y_sr, y_hr, border), ssim(y_sr, y_hr, border)))
        nearest.append(psnr(y_from_float(nearest_upsample_image(lr, s)), y_hr, border))
        bicubic.append(psnr(y_from_float(np.clip(bicubic_upsample(lr, s), 0, 1)), y_hr, border))
    return EvalResult(tuple(scores), float(np.mean(nearest)), float(np.mean(bicubic)))


@dataclass(frozen=True)
class EvalRecord:
    step: int
    psnr: float
    ssim: float


@dataclass
class TrainReport:
    losses: list[float] = field(default_factory=list)
    lrs: list[float] = field(default_factory=list)
    evals: list[EvalRecord] = field(default_factory=list)
    weights: WeightStore | None = None
    last_eval: EvalResult | None = None
    wall_time_s: float = 0.0

    def smoothed_loss(self, window: int = 100, tail: bool = True) -> float:
        values = self.losses[-window:] if tail else self.losses[:window]
        return float(np.mean(values))

    def write_csv(self, path: str | Path) -> None:
        by_step = {e.step: e for e in self.evals}
        with open(path, "w", newline="") as fh:
            writer = csv.writer(fh, lineterminator="\n")
            writer.writerow(["step", "lr", "loss", "psnr", "ssim"])
            for i, (lr, loss) in enumerate(zip(self.lrs, self.losses)):
                e = by_step.get(i + 1)
                writer.writerow([
                    i + 1,
                    f"{lr:.9g}",
                    f"{loss:.9g}",
                    format_metric(e.psnr) if e else "",
                    format_metric(e.ssim) if e else "",
                ])


def format_metric(value: float) -> str:
    return "inf" if math.isinf(value) else f"{value:.6f}"


def train(
    model_cfg: ModelConfig,
    train_cfg: TrainConfig,
    dataset: Sequence[ImageU8],
    eval_set: Sequence[ImageU8] = (),
    checkpoint_path: str | Path | None = None,
    progress: bool = True,
    weights: WeightStore | None = None,
) -> TrainReport:
    """sample -> forward -> loss -> backward -> Adam, for total_steps steps.

    On a numeric failure the last good weights are written to
    `checkpoint_path` (when given) before the error propagates.
    """
    rng = np.random.default_rng(train_cfg.seed)
    weights = weights if weights is not None else init_weights(model_cfg, train_cfg.seed)
    weights.validate(model_cfg)
    state = AdamState.fresh(weights)
    loss_cfg = LossConfig(train_cfg.gamma)
    pool = [im.to_float() for im in dataset]
    patch_hr = train_cfg.patch_hr(model_cfg.scale)
    report = TrainReport()
    started = time.perf_counter()

    log.info("training %s (%d params) for %d steps", model_cfg.variant, weights.num_scalars(), train_cfg.total_steps)
    for step in tqdm(range(train_cfg.total_steps), disable=not progress, desc="train", unit="step"):
        lr_batch, hr_batch = sample_patches(pool, patch_hr, train_cfg.batch, rng, model_cfg.scale)
        lr = lr_at(step, train_cfg)
        try:
            params = weights.trainable()
            sr = model_forward(Tensor(lr_batch, dtype=model_cfg.dtype), params, model_cfg)
            loss = sr_loss(sr, Tensor(hr_batch, dtype=model_cfg.dtype), loss_cfg)
            backward(loss)
            grads = {p: t.grad for p, t in params.items() if t.grad is not None}
            weights, state = adam_step(weights, grads, state, lr, train_cfg)
        except NumericError:
            log.error("numeric failure at step %d", step + 1)
            if checkpoint_path is not None:
                save_weights(checkpoint_path, model_cfg, weights)
                log.error("last good weights saved to %s", checkpoint_path)
            raise
        report.losses.append(loss.item())
        report.lrs.append(lr)

        done = step + 1
        if done % train_cfg.log_interval == 0:
            log.info("step %d loss %.5f lr %.3g", done, report.losses[-1], lr)
        if eval_set and (done % train_cfg.eval_interval == 0 or done == train_cfg.total_steps):
            result = evaluate(weights, model_cfg, eval_set)
            report.evals.append(EvalRecord(done, result.psnr, result.ssim))
            report.last_eval = result
            log.info("step %d eval psnr %.3f ssim %.4f (nearest %.3f)", done, result.psnr, result.ssim, result.nearest_psnr)

    report.weights = weights
    report.wall_time_s = time.perf_counter() - started
    return report
