import struct

import numpy as np
import pytest

from sharedenc.checkpoint import MAGIC, load_checkpoint, read_checkpoint, save_checkpoint
from sharedenc.config import TrainConfig
from sharedenc.encoder import EncoderModel, ModelConfig
from sharedenc.errors import CheckpointError


@pytest.fixture
def model():
    return EncoderModel(ModelConfig(d=16, n_heads=2, identifier="token", layers_early=1,
                                    layers_shared=1, seed=3))


def test_round_trip_is_bit_exact(model, tmp_path):
    cfg = TrainConfig(model=model.config, steps=5)
    path = save_checkpoint(model, tmp_path / "m.ckpt", cfg)
    loaded, train_cfg = load_checkpoint(path)
    assert train_cfg == cfg
    assert loaded.config == model.config
    assert list(loaded.params) == list(model.params)
    for name, p in model.params.items():
        assert loaded.params[name].data.tobytes() == p.data.tobytes()
        assert loaded.params[name].shape == p.shape


def test_layout_header(model, tmp_path):
    buf = save_checkpoint(model, tmp_path / "m.ckpt").read_bytes()
    assert buf.startswith(MAGIC)
    version, cfg_len = struct.unpack("<II", buf[8:16])
    assert version == 1
    assert buf[16:16 + cfg_len].startswith(b'{"model":')


def test_scalar_parameter_keeps_rank_zero(model, tmp_path):
    _, state = read_checkpoint(save_checkpoint(model, tmp_path / "m.ckpt"))
    assert state["log_tau"].shape == ()


@pytest.mark.parametrize("cut", [3, 20, 200, -1])
def test_truncated_file(model, tmp_path, cut):
    path = save_checkpoint(model, tmp_path / "m.ckpt")
    data = path.read_bytes()
    path.write_bytes(data[:cut])
    with pytest.raises(CheckpointError):
        load_checkpoint(path)


def test_flipped_payload_byte(model, tmp_path):
    path = save_checkpoint(model, tmp_path / "m.ckpt")
    data = bytearray(path.read_bytes())
    data[len(data) // 2] ^= 0xFF
    path.write_bytes(bytes(data))
    with pytest.raises(CheckpointError):
        load_checkpoint(path)


def test_trailing_garbage(model, tmp_path):
    path = save_checkpoint(model, tmp_path / "m.ckpt")
    path.write_bytes(path.read_bytes() + b"xx")
    with pytest.raises(CheckpointError):
        load_checkpoint(path)


def test_missing_file(tmp_path):
    with pytest.raises(CheckpointError):
        load_checkpoint(tmp_path / "nope.ckpt")


def test_state_dict_round_trip(model):
    other = EncoderModel(model.config)
    state = {k: v + 1 for k, v in model.state_dict().items()}
    other.load_state_dict(state)
    for k in state:
        np.testing.assert_array_equal(other.params[k].data, state[k])
