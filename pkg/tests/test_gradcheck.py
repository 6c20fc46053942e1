import pytest

from errors import ConfigError
from gradcheck import CHECKS, KINKED_TOLERANCE, SMOOTH_TOLERANCE, build_case, run_gradcheck


@pytest.mark.parametrize("name, tolerance", [("conv", SMOOTH_TOLERANCE), ("layernorm", SMOOTH_TOLERANCE),
                                             ("mul", SMOOTH_TOLERANCE), ("loss", KINKED_TOLERANCE)])
def test_primitive_checks_pass(name, tolerance):
    result = run_gradcheck(name, seed=1)
    assert result.tolerance == tolerance
    assert result.passed, result
    assert result.skipped == 0
    assert result.coordinates == sum(t.size for t in build_case(name, seed=1).leaves)


def test_sampled_checks_cap_coordinates():
    result = run_gradcheck("glie")
    assert result.coordinates == 300
    assert result.passed


@pytest.mark.parametrize("name", ["block", "model_loss"])
def test_pooled_paths_pass_with_tie_guard(name):
    result = run_gradcheck(name)
    assert result.tolerance == KINKED_TOLERANCE
    assert result.coordinates + result.skipped == 300
    assert result.coordinates > 250
    assert result.passed, result


def test_model_loss_reduces_through_sr_loss():
    case = build_case("model_loss")
    lr = case.leaves[0]
    assert lr.shape == (1, 3, 16, 16)
    assert case.kink_guard is not None
    assert case.f(*case.leaves).shape == (1, 1, 1, 1)


def test_every_named_check_builds():
    assert {"block", "model_loss"} <= set(CHECKS)
    for name in CHECKS:
        assert build_case(name).leaves


def test_unknown_check_is_config_error():
    with pytest.raises(ConfigError, match="unknown gradient check 'bogus'"):
        build_case("bogus")
