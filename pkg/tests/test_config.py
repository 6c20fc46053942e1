import pytest

from config import DataConfig, RunConfig, format_config, load_config, parse_config
from errors import ConfigError
from nn_blocks import ModelConfig
from trainer import TrainConfig


def test_defaults_when_empty():
    run = parse_config("# nothing here\n\n")
    assert run == RunConfig()
    assert run.model == ModelConfig()
    assert run.train == TrainConfig()


def test_values_comments_and_aliases(tmp_path):
    path = tmp_path / "run.cfg"
    path.write_text(
        "channels = 8   # narrow\n"
        "blocks=1\n"
        "scale = 3\n"
        "enable_cfc = false\n"
        "lr_start = 2e-3\n"
        "schedule = step\n"
        "train_images = 4\n"
    )
    run = load_config(path)
    assert run.model == ModelConfig(channels=8, num_blocks=1, scale=3, enable_cfc=False)
    assert run.train.lr_start == 2e-3
    assert run.train.schedule == "step"
    assert run.data == DataConfig(train_images=4)


def test_unknown_key_names_key_and_line():
    with pytest.raises(ConfigError, match=r"line 2: unknown key 'width'"):
        parse_config("channels = 8\nwidth = 3\n")


@pytest.mark.parametrize(
    "text, message",
    [
        ("channels 8", "expected key=value"),
        ("channels = eight", "bad value for 'channels'"),
        ("enable_glie = maybe", "bad value for 'enable_glie'"),
        ("seed = 1\nseed = 2", "duplicate key 'seed'"),
        ("channels = 6", "multiple of 4"),
    ],
)
def test_invalid_lines(text, message):
    with pytest.raises(ConfigError, match=message):
        parse_config(text)


def test_format_round_trip():
    run = RunConfig(
        ModelConfig(channels=12, num_blocks=3, scale=4, enable_scam=False),
        TrainConfig(total_steps=10, gamma=0.1),
        DataConfig(eval_images=0),
    )
    text = format_config(run)
    assert "blocks = 3" in text
    assert "enable_scam = false" in text
    assert parse_config(text) == run
