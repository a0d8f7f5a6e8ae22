import numpy as np
import pytest

from tavst.checkpoint import CheckpointError, load_checkpoint, save_checkpoint
from tavst.params import ModelDims, init_params
from tavst.tensor import Precision, Tensor


class Params(dict):
    def items(self):
        return sorted(super().items())


def test_round_trip_is_bit_exact(tmp_path):
    rng = np.random.default_rng(7)
    p = Params()
    p["b.vec"] = Tensor(rng.normal(size=5).astype(np.float32))
    p["a.mat"] = Tensor(rng.normal(size=(3, 4)).astype(np.float32))
    p["c.scalar"] = Tensor(np.float32(2.5))
    path = tmp_path / "model.ckpt"
    save_checkpoint(p, path)
    first = path.read_bytes()

    arrays = load_checkpoint(path)
    assert set(arrays) == {"a.mat", "b.vec", "c.scalar"}
    assert arrays["a.mat"].shape == (3, 4)
    assert arrays["c.scalar"].shape == ()
    p2 = Params()
    for name, arr in arrays.items():
        p2[name] = Tensor(arr)
    path2 = tmp_path / "again.ckpt"
    save_checkpoint(p2, path2)
    assert path2.read_bytes() == first


def test_records_sorted_by_name(tmp_path):
    p = Params()
    p["zz"] = Tensor(np.zeros(1, dtype=np.float32))
    p["aa"] = Tensor(np.zeros(1, dtype=np.float32))
    path = tmp_path / "sorted.ckpt"
    save_checkpoint(p, path)
    raw = path.read_bytes()
    assert raw.startswith(b"TAVST-CKPT v1\n")
    assert raw.index(b"aa\t") < raw.index(b"zz\t")


def test_header_is_validated(tmp_path):
    path = tmp_path / "bad.ckpt"
    path.write_bytes(b"NOT-A-CKPT\n")
    with pytest.raises(CheckpointError, match="header"):
        load_checkpoint(path)


def test_truncated_payload_is_rejected(tmp_path):
    path = tmp_path / "trunc.ckpt"
    path.write_bytes(b"TAVST-CKPT v1\nw\t1\t4\n\x00\x00")
    with pytest.raises(CheckpointError, match="truncated"):
        load_checkpoint(path)


def test_model_params_round_trip_through_float64(tmp_path):
    # verify-precision training stores float64; files hold float32. Values
    # that came from a file must survive another save bit-exactly.
    dims = ModelDims(hidden=4, feature_dim=3, images_per_album=2,
                     topic_vocab=8, story_vocab=9)
    params = init_params(dims, np.random.default_rng(0), Precision.VERIFY)
    path = tmp_path / "m.ckpt"
    save_checkpoint(params, path)
    blob = path.read_bytes()
    arrays = load_checkpoint(path)
    params.load_arrays(arrays, dtype=np.float64)
    save_checkpoint(params, path)
    assert path.read_bytes() == blob


def test_decoder_weights_exist_exactly_once():
    # the topic and story decoders are shared across modes/passes: one copy
    # of each in the checkpoint namespace, and exactly two topic bridges
    dims = ModelDims(hidden=4, feature_dim=3, images_per_album=2,
                     topic_vocab=8, story_vocab=9)
    params = init_params(dims, np.random.default_rng(0), Precision.STANDARD)
    names = params.names()
    story_gru = [n for n in names if n.startswith("story.gru.")]
    topic_gru = [n for n in names if n.startswith("topic.gru.")]
    bridges = [n for n in names if n.startswith("topic.bridge_")]
    assert len(story_gru) == 6 and len(topic_gru) == 6
    assert sorted(bridges) == [
        "topic.bridge_init.b", "topic.bridge_init.w",
        "topic.bridge_iter.b", "topic.bridge_iter.w",
    ]
    prefixes = {n.split(".")[0] for n in names}
    assert prefixes == {"venc", "topic", "coatt", "story", "baseline"}
