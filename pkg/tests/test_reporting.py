import math

from complexity import count_flops
from nn_blocks import ModelConfig
from reporting import build_run_report_html, loss_curve_svg
from trainer import EvalRecord, EvalResult, ImageScore, TrainConfig, TrainReport

TINY = ModelConfig(channels=8, num_blocks=1, scale=2)


def _report(with_eval: bool) -> TrainReport:
    report = TrainReport(losses=[0.5, 0.2, 0.1, 0.05], lrs=[1e-3] * 4, wall_time_s=2.0)
    if with_eval:
        report.evals = [EvalRecord(2, 24.5, 0.71), EvalRecord(4, math.inf, 1.0)]
        report.last_eval = EvalResult(
            scores=(ImageScore("img_0.ppm", 26.0, 0.8), ImageScore("<b>odd</b>.ppm", 27.0, 0.82)),
            nearest_psnr=22.0,
            bicubic_psnr=24.0,
        )
    return report


def test_build_run_report_html_includes_core_fields():
    html = build_run_report_html(_report(True), TINY, TrainConfig(total_steps=4), count_flops(TINY))
    assert html.startswith("<!DOCTYPE html>")
    assert "Super-resolution run: full x2" in html
    assert "Loss (log scale)" in html
    assert "<svg" in html
    assert "Final evaluation (Y channel)" in html
    assert "Bicubic: 24.00 dB" in html
    assert "24.50 dB" in html
    assert "inf" in html
    assert "4,516" in html
    assert "&lt;b&gt;odd&lt;/b&gt;.ppm" in html


def test_build_run_report_html_without_eval_set():
    html = build_run_report_html(_report(False), TINY.ablated(glie=False), TrainConfig(total_steps=4))
    assert "No evaluation set was configured." in html
    assert "Final evaluation" not in html
    assert "-w/o GLIE" in html


def test_build_run_report_html_escapes_title():
    html = build_run_report_html(_report(False), TINY, TrainConfig(total_steps=4), title="<script>alert(1)</script>")
    assert "<script>" not in html
    assert "&lt;script&gt;" in html


def test_loss_curve_downsamples_long_runs():
    svg = loss_curve_svg([1.0 / (i + 1) for i in range(5000)])
    points = svg.split('points="')[1].split('"')[0].split()
    assert len(points) == 400
    assert "No loss values recorded." in loss_curve_svg([])
    assert len(loss_curve_svg([0.3]).split('points="')[1].split('"')[0].split()) == 1


def test_same_report_renders_identically():
    report = _report(True)
    first = build_run_report_html(report, TINY, TrainConfig(total_steps=4), count_flops(TINY))
    report.wall_time_s = 99.0
    second = build_run_report_html(report, TINY, TrainConfig(total_steps=4), count_flops(TINY))
    assert first == second
    assert "Rendered:" not in first


def test_rendered_stamp_is_opt_in():
    html = build_run_report_html(_report(False), TINY, TrainConfig(total_steps=4), rendered_at="2026-01-02 03:04:05")
    assert "Rendered: 2026-01-02 03:04:05" in html
