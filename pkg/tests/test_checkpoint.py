import numpy as np
import pytest

from bbh import checkpoint as ck
from bbh.errors import FormatError
from bbh.nets import build_mlp
from bbh.posterior import (
    DropoutPosterior,
    EnsemblePosterior,
    FactorizedGaussianPosterior,
    HypernetConfig,
    HypernetPosterior,
    PointPosterior,
)
from bbh.training import TrainConfig, train
from bbh.data import toy_regression

SPEC = build_mlp([3, 4, 2])


def families():
    rng = np.random.default_rng(0)
    return [
        HypernetPosterior(SPEC, HypernetConfig("sliced_layer_wise", (5,), 2), rng),
        FactorizedGaussianPosterior(SPEC, rng),
        PointPosterior(SPEC, rng),
        DropoutPosterior(SPEC, rng),
        EnsemblePosterior(SPEC, [PointPosterior(SPEC, rng) for _ in range(2)]),
    ]


@pytest.mark.parametrize("post", families(), ids=lambda p: p.family)
def test_roundtrip_bitwise(post):
    clone, text = ck.checkpoint_roundtrip(post, "train.method = map\n")
    assert text == "train.method = map\n"
    for k, v in post.state().items():
        assert v.tobytes() == clone.state()[k].tobytes()


def test_roundtrip_trained_posterior(tmp_path):
    res = train(TrainConfig("bbb", steps=20, batch_size=10), build_mlp([1, 6, 1]), toy_regression())
    path = tmp_path / "c.bbh"
    ck.save_checkpoint(path, res.posterior, "cfg")
    state, text, family = ck.load_checkpoint(path)
    assert family == "gaussian" and text == "cfg"
    for k, v in res.posterior.state().items():
        assert v.tobytes() == state[k].tobytes()


def blob():
    return ck.encode_checkpoint(PointPosterior(SPEC).state(), "x", "point")


def test_flipped_magic():
    raw = bytearray(blob())
    raw[0] ^= 0xFF
    with pytest.raises(FormatError, match="magic"):
        ck.decode_checkpoint(bytes(raw))


def test_bad_version():
    raw = bytearray(blob())
    raw[4] = 7
    with pytest.raises(FormatError, match="version"):
        ck.decode_checkpoint(bytes(raw))


def test_truncated_payload_names_tensor():
    raw = blob()
    with pytest.raises(FormatError, match="dense1.bias"):
        ck.decode_checkpoint(raw[:-3])


def test_corrupt_manifest():
    raw = bytearray(blob())
    raw[12] = ord("!")
    with pytest.raises(FormatError, match="metadata"):
        ck.decode_checkpoint(bytes(raw))


def test_trailing_bytes():
    with pytest.raises(FormatError, match="trailing"):
        ck.decode_checkpoint(blob() + b"\0")


def test_layout_header():
    raw = blob()
    assert raw[:4] == b"BBH1"
    assert int.from_bytes(raw[4:8], "little") == 1
