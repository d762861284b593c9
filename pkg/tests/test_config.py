import glob
import os

import pytest

from bbh.config import SCHEMA, load_config, parse_config
from bbh.errors import ConfigError
from conftest import CONFIG_DIR


def test_method_alone_gives_defaults():
    cfg = parse_config("train.method = bbh\n")
    assert cfg.method == "bbh"
    for key, (_, default) in SCHEMA.items():
        if key != "train.method":
            assert cfg[key] == default
    tc = cfg.train_config()
    assert tc.lr == 1e-4 and tc.anneal_fraction == 0.5
    hc = cfg.hypernet_config()
    assert (hc.architecture, hc.hidden, hc.noise_dim, hc.noise_mode) == ("layer_wise", (64, 256, 512), 1, "independent")


@pytest.mark.parametrize(
    "text,field",
    [
        ("train.lr = -1", "train.lr"),
        ("train.steps = 0", "train.steps"),
        ("train.method = sgld", "train.method"),
        ("train.batch_size = 0", "train.batch_size"),
        ("hypernet.noise_mode = both", "hypernet.noise_mode"),
        ("net.type = resnet", "net.type"),
        ("eval.epsilons = 0.2, 0.1", "eval.epsilons"),
        ("data.dataset = cifar", "data.dataset"),
    ],
)
def test_invalid_values_name_the_field(text, field):
    with pytest.raises(ConfigError, match=field.replace(".", r"\.")):
        parse_config(text + "\n")


def test_malformed_value_is_line_numbered():
    with pytest.raises(ConfigError, match="line 2"):
        parse_config("train.method = map\ntrain.steps = many\n")


def test_syntax_error_is_line_numbered():
    with pytest.raises(ConfigError, match="line 3"):
        parse_config("# comment\n\nthis is not an assignment\n")


def test_duplicate_key_names_both_lines():
    with pytest.raises(ConfigError, match=r"line 3.*line 1"):
        parse_config("train.steps = 5\ntrain.lr = 0.1\ntrain.steps = 6\n")


def test_unknown_key():
    with pytest.raises(ConfigError, match="train.momentum"):
        parse_config("train.momentum = 0.9\n")


def test_hypernet_keys_only_for_bbh():
    with pytest.raises(ConfigError, match="hypernet"):
        parse_config("train.method = bbb\nhypernet.noise_dim = 4\n")


def test_to_text_roundtrip():
    cfg = parse_config("train.method = bbh\ntrain.lr = 0.0003\nhypernet.hidden = 8,16\neval.epsilons = 0,0.1,0.3\n")
    again = parse_config(cfg.to_text())
    assert again.values == cfg.values


def test_paths_relative_to_config(tmp_path):
    sub = tmp_path / "cfgs"
    sub.mkdir()
    path = sub / "x.cfg"
    path.write_text("data.train_images = ../d/train.gz\n")
    cfg = load_config(str(path))
    assert cfg["data.train_images"] == str(tmp_path / "d" / "train.gz")
    assert cfg["output.dir"] == os.path.join("runs", "x")


def test_every_shipped_config_parses():
    paths = glob.glob(os.path.join(CONFIG_DIR, "*", "*.cfg"))
    assert len(paths) >= 20
    for p in paths:
        cfg = load_config(p)
        if not cfg.is_toy:
            assert os.path.exists(cfg["data.train_images"]), p
