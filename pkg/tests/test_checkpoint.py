import numpy as np
import pytest

from sanqa.attention import ModelConfig, build_model
from sanqa.checkpoint import load_checkpoint, save_checkpoint
from sanqa.errors import FormatError


@pytest.mark.parametrize("encoder", ["lstm", "cnn"])
def test_checkpoint_round_trip_bitwise(tmp_path, encoder):
    cfg = ModelConfig(encoder=encoder, vocab_size=11, answer_size=5, embed_dim=4,
                      hidden_dim=6, attn_hidden=3, layers=2, d_raw=4,
                      cnn_filters=(2, 2, 2))
    model = build_model(cfg, seed=42)
    path = tmp_path / "m.sanc"
    save_checkpoint(path, model)
    loaded = load_checkpoint(path)
    assert loaded.config == model.config
    for name, p in model.named_parameters().items():
        q = loaded.named_parameters()[name]
        assert p.values.tobytes() == q.values.tobytes(), name


def test_checkpoint_file_stable_across_saves(tmp_path):
    cfg = ModelConfig(encoder="lstm", vocab_size=7, answer_size=4, embed_dim=3,
                      hidden_dim=4, layers=1, d_raw=3)
    model = build_model(cfg, seed=1)
    a, b = tmp_path / "a.sanc", tmp_path / "b.sanc"
    save_checkpoint(a, model)
    save_checkpoint(b, load_checkpoint(a))
    assert a.read_bytes() == b.read_bytes()


def test_checkpoint_rejects_bad_magic(tmp_path):
    path = tmp_path / "bad.sanc"
    path.write_bytes(b"NOPE" + b"\x00" * 16)
    with pytest.raises(FormatError):
        load_checkpoint(path)


def test_checkpoint_rejects_truncation(tmp_path):
    cfg = ModelConfig(encoder="lstm", vocab_size=7, answer_size=4, embed_dim=3,
                      hidden_dim=4, layers=1, d_raw=3)
    model = build_model(cfg, seed=1)
    path = tmp_path / "t.sanc"
    save_checkpoint(path, model)
    data = path.read_bytes()
    path.write_bytes(data[:-5])
    with pytest.raises(FormatError, match="truncated"):
        load_checkpoint(path)
