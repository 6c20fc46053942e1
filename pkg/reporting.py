from __future__ import annotations

import html
import math
from typing import Any, Sequence

import numpy as np

from complexity import CostReport
from nn_blocks import ModelConfig
from trainer import TrainConfig, TrainReport

CURVE_WIDTH = 560
CURVE_HEIGHT = 180
CURVE_POINTS = 400


def _esc(s: Any) -> str:
    if s is None:
        return ""
    return html.escape(str(s))


def _fmt_db(x: float | None) -> str:
    if x is None:
        return "N/A"
    if math.isinf(x):
        return "inf"
    return f"{x:.2f} dB"


def _fmt_ssim(x: float | None) -> str:
    if x is None:
        return "N/A"
    return f"{x:.4f}"


def loss_curve_svg(losses: Sequence[float], width: int = CURVE_WIDTH, height: int = CURVE_HEIGHT) -> str:
    """Inline SVG polyline of the loss on a log scale; at most CURVE_POINTS vertices."""
    if not losses:
        return "<div class='muted'>No loss values recorded.</div>"
    values = np.log10(np.maximum(np.asarray(losses, dtype=np.float64), 1e-12))
    if len(values) > CURVE_POINTS:
        # bucket means keep the curve shape without one vertex per step
        values = np.array([chunk.mean() for chunk in np.array_split(values, CURVE_POINTS)])
    lo, hi = float(values.min()), float(values.max())
    span = hi - lo or 1.0
    xs = np.linspace(4, width - 4, len(values)) if len(values) > 1 else np.array([width / 2])
    ys = height - 4 - (values - lo) / span * (height - 8)
    points = " ".join(f"{x:.1f},{y:.1f}" for x, y in zip(xs, ys))
    return (
        f'<svg class="curve" width="{width}" height="{height}" viewBox="0 0 {width} {height}" role="img" '
        f'aria-label="training loss">'
        f'<rect x="0" y="0" width="{width}" height="{height}" fill="none" stroke="rgba(20,40,90,0.15)"/>'
        f'<polyline fill="none" stroke="#1f4fa3" stroke-width="1.5" points="{points}"/>'
        f"</svg>"
    )


def build_run_report_html(
    report: TrainReport,
    model_cfg: ModelConfig,
    train_cfg: TrainConfig,
    cost: CostReport | None = None,
    title: str | None = None,
    rendered_at: str | None = None,
) -> str:
    """Standalone HTML page for one run. Same inputs give the same bytes; pass rendered_at to stamp it."""
    title = title or f"Super-resolution run: {model_cfg.variant} x{model_cfg.scale}"

    def li(items: Sequence[tuple[str, Any]]) -> str:
        if not items:
            return "<li>None</li>"
        return "".join(f"<li><b>{_esc(k)}:</b> {_esc(v)}</li>" for k, v in items)

    model_items = [
        ("Variant", model_cfg.variant),
        ("Channels", model_cfg.channels),
        ("Blocks", model_cfg.num_blocks),
        ("Scale", f"x{model_cfg.scale}"),
        ("Precision", model_cfg.dtype),
    ]
    if cost is not None:
        model_items += [
            ("Parameters", f"{cost.params:,d}"),
            ("FLOPs", f"{cost.flops / 1e9:.3f} G ({cost.flops_per_mac} per MAC)"),
        ]
    train_items = [
        ("Steps", train_cfg.total_steps),
        ("Batch", train_cfg.batch),
        ("HR patch", train_cfg.patch_hr(model_cfg.scale)),
        ("Learning rate", f"{train_cfg.lr_start:g} to {train_cfg.lr_end:g} ({train_cfg.schedule})"),
        ("Frequency weight", train_cfg.gamma),
        ("Seed", train_cfg.seed),
    ]

    final_loss = report.smoothed_loss(window=min(100, len(report.losses))) if report.losses else None
    eval_rows = ""
    for e in report.evals:
        eval_rows += (
            "<tr>"
            f"<td>{_esc(e.step)}</td>"
            f"<td style='text-align:right'>{_esc(_fmt_db(e.psnr))}</td>"
            f"<td style='text-align:right'>{_esc(_fmt_ssim(e.ssim))}</td>"
            "</tr>"
        )
    if not eval_rows:
        eval_rows = "<tr><td colspan='3'>No evaluation set was configured.</td></tr>"

    baseline_block = ""
    last = report.last_eval
    if last is not None:
        image_rows = "".join(
            "<tr>"
            f"<td>{_esc(s.name)}</td>"
            f"<td style='text-align:right'>{_esc(_fmt_db(s.psnr))}</td>"
            f"<td style='text-align:right'>{_esc(_fmt_ssim(s.ssim))}</td>"
            "</tr>"
            for s in last.scores
        )
        baseline_block = f"""
          <div class="card">
            <div class="card-title">Final evaluation (Y channel)</div>
            <div class="pillbar">
              <div class="pill">Model: {_esc(_fmt_db(last.psnr))} / {_esc(_fmt_ssim(last.ssim))}</div>
              <div class="pill">Bicubic: {_esc(_fmt_db(last.bicubic_psnr))}</div>
              <div class="pill">Nearest: {_esc(_fmt_db(last.nearest_psnr))}</div>
            </div>
            <table class="tbl">
              <thead><tr><th>Image</th><th style="text-align:right">PSNR</th><th style="text-align:right">SSIM</th></tr></thead>
              <tbody>{image_rows}</tbody>
            </table>
          </div>
        """

    final_loss_text = f"{final_loss:.5f}" if final_loss is not None else "N/A"
    rendered_pill = f"<div class='pill'>Rendered: {_esc(rendered_at)}</div>" if rendered_at else ""
    return f"""<!DOCTYPE html>
<html lang="en">
<head>
<meta charset="utf-8">
<title>{_esc(title)}</title>
<style>
  .run-report {{ font-family: ui-sans-serif, system-ui, -apple-system, Segoe UI, Roboto, Arial; color: #14285a; max-width: 960px; margin: 0 auto; }}
  .run-title {{ font-size: 1.15rem; font-weight: 800; }}
  .muted {{ color: rgba(20,40,90,0.72); font-size: 0.92rem; }}
  .grid2 {{ display:grid; grid-template-columns: 1fr 1fr; gap: 12px; }}
  .card {{ background: rgba(255,255,255,0.92); border: 1px solid rgba(20,40,90,0.15); border-radius: 12px; padding: 12px; margin-top: 12px; }}
  .card-title {{ font-weight: 800; margin-bottom: 8px; }}
  .tbl {{ width: 100%; border-collapse: collapse; font-size: 0.92rem; }}
  .tbl th, .tbl td {{ border-bottom: 1px solid rgba(20,40,90,0.10); padding: 6px 4px; vertical-align: top; }}
  .pillbar {{ display:flex; flex-wrap:wrap; gap:8px; margin: 8px 0; }}
  .pill {{ background: rgba(31,79,163,0.10); border: 1px solid rgba(20,40,90,0.15); border-radius: 999px; padding: 6px 10px; font-weight: 700; font-size: 0.90rem; }}
  ul {{ margin: 6px 0 0 18px; }}
  @media (max-width: 900px) {{ .grid2 {{ grid-template-columns: 1fr; }} }}
</style>
</head>
<body>
<div class="run-report">
  <div class="run-title">{_esc(title)}</div>
  <div class="pillbar">
    <div class="pill">Steps: {_esc(len(report.losses))}</div>
    <div class="pill">Final loss: {_esc(final_loss_text)}</div>
    {rendered_pill}
  </div>

  <div class="grid2">
    <div class="card">
      <div class="card-title">Model</div>
      <ul>{li(model_items)}</ul>
    </div>
    <div class="card">
      <div class="card-title">Training</div>
      <ul>{li(train_items)}</ul>
    </div>
  </div>

  <div class="card">
    <div class="card-title">Loss (log scale)</div>
    {loss_curve_svg(report.losses)}
  </div>

  <div class="card">
    <div class="card-title">Validation during training</div>
    <table class="tbl">
      <thead><tr><th>Step</th><th style="text-align:right">PSNR</th><th style="text-align:right">SSIM</th></tr></thead>
      <tbody>{eval_rows}</tbody>
    </table>
  </div>
  {baseline_block}
</div>
</body>
</html>
"""
