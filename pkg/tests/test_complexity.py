import pytest

from complexity import BENCHMARK_HR_SIZE, CostReport, LayerCost, count_flops, count_params, padded_hr_size, trunk_size
from errors import ConfigError
from nn_blocks import ModelConfig, init_weights

TINY = ModelConfig(channels=8, num_blocks=1, scale=2)

# hand-enumerated: head 3x3 3->8, SCAM (LN, 1x1, four 3x3 depthwise on 2 channels, 1x1),
# CFC (LN, 3x3 8->16, 1x1), GLIE 1x1 32->32, tail 3x3 16->12
TINY_LAYERS = {
    "head": 3 * 8 * 9 + 8,
    "scam": 16 + (64 + 8) + 4 * (2 * 9 + 2) + (64 + 8),
    "cfc": 16 + (8 * 16 * 9 + 16) + (64 + 8),
    "glie": 32 * 32 + 32,
    "tail": 16 * 12 * 9 + 12,
}


def test_tiny_params_match_hand_enumeration_and_init():
    assert sum(TINY_LAYERS.values()) == 4516
    assert count_params(TINY) == 4516
    assert init_weights(TINY, seed=0).num_scalars() == 4516


def test_single_conv_counts():
    report = count_flops(ModelConfig(channels=16, num_blocks=1, scale=2), hr_size=(16, 16))
    head = next(c for c in report.breakdown if c.path == "head")
    assert head.params == 448
    assert head.macs == 8 * 8 * 16 * 3 * 9 == 27648
    channel = next(c for c in report.breakdown if c.path == "block.0.scam.channel")
    assert channel.params == 272
    assert channel.macs == 16 * 16


def test_flops_double_when_height_doubles():
    a = count_flops(TINY, hr_size=(64, 64))
    b = count_flops(TINY, hr_size=(128, 64))
    assert b.spatial_macs == 2 * a.spatial_macs
    assert b.macs - b.spatial_macs == a.macs - a.spatial_macs == 8 * 8
    assert a.params == b.params == count_params(TINY)


def test_flops_per_mac_convention():
    two = count_flops(TINY, hr_size=(32, 32))
    one = count_flops(TINY, hr_size=(32, 32), flops_per_mac=1)
    assert two.flops == 2 * one.flops
    with pytest.raises(ConfigError):
        count_flops(TINY, flops_per_mac=3)


@pytest.mark.parametrize("flag", ["scam", "cfc", "glie"])
def test_ablations_reduce_cost(flag):
    full = count_flops(TINY)
    ablated = count_flops(TINY.ablated(**{flag: False}))
    assert ablated.params < full.params
    assert ablated.macs < full.macs


def test_padded_hr_size_matches_model_padding():
    assert padded_hr_size(ModelConfig(scale=3), (720, 1280)) == (720, 1296)
    assert padded_hr_size(ModelConfig(scale=4), (720, 1280)) == (736, 1280)
    assert padded_hr_size(ModelConfig(scale=2), (720, 1280)) == (720, 1280)
    assert padded_hr_size(TINY, (20, 64)) == (32, 64)
    assert trunk_size(ModelConfig(scale=3), (720, 1296)) == (240, 432)
    assert trunk_size(ModelConfig(scale=4), (736, 1280)) == (184, 320)
    with pytest.raises(ConfigError):
        padded_hr_size(TINY, (0, 10))


@pytest.mark.parametrize("hr", [(20, 64), (40, 64), (720, 1280), (0, 16)])
def test_unaligned_hr_sizes_are_rejected(hr):
    config = ModelConfig(scale=3)
    with pytest.raises(ConfigError, match="multiple of 24"):
        count_flops(config, hr_size=hr)


def test_default_size_is_padded_benchmark():
    for scale in (2, 3, 4):
        config = ModelConfig(channels=8, num_blocks=1, scale=scale)
        assert count_flops(config).macs == count_flops(config, padded_hr_size(config, BENCHMARK_HR_SIZE)).macs


@pytest.mark.parametrize("scale", [2, 3, 4])
def test_macs_linear_in_pixel_count(scale):
    config = ModelConfig(channels=8, num_blocks=2, scale=scale)
    step = 8 * scale
    base = count_flops(config, hr_size=(step, step))
    fixed = base.macs - base.spatial_macs
    assert fixed == config.num_blocks * 8 * 8
    for k_h, k_w in [(2, 1), (3, 5), (7, 2)]:
        report = count_flops(config, hr_size=(k_h * step, k_w * step))
        assert report.spatial_macs == k_h * k_w * base.spatial_macs
        assert report.macs - report.spatial_macs == fixed
        for small, big in zip(base.breakdown, report.breakdown):
            assert big.macs == (small.macs if small.per_image else k_h * k_w * small.macs)




def test_report_text_and_csv():
    report = count_flops(TINY, hr_size=(16, 16))
    text = report.to_text()
    assert "params=4516" in text
    assert "#Params [M]" in text
    rows = report.to_csv().splitlines()
    assert rows[0] == "path,params,macs"
    assert rows[-1] == f"total,4516,{report.macs}"


def test_report_totals_must_match_breakdown():
    with pytest.raises(ConfigError):
        CostReport(params=1, macs=0, breakdown=(LayerCost("x", 2, 0),))
