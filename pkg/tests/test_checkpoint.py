import numpy as np
import pytest

from shufflepose import checkpoint
from shufflepose.errors import CheckpointError
from shufflepose.network import ModelConfig, forward, init_model
from shufflepose.optim import AdamState
from shufflepose.tensor import Tensor

SMALL = ModelConfig(base_channels=4, input_h=128, input_w=96)


def outputs(model, image):
    out = forward(model, image)
    return [out.refined.data.copy()] + [h.data.copy() for h in out.global_heatmaps.values()]


def test_fnv1a64_reference_values():
    assert checkpoint.fnv1a64(b"") == 0xCBF29CE484222325
    assert checkpoint.fnv1a64(b"a") == 0xAF63DC4C8601EC8C


def test_entries_roundtrip_bytes():
    entries = {"a": np.arange(6.0).reshape(2, 3), "scalar": np.array(1.5), "név": np.array([np.pi, -0.0])}
    blob = checkpoint.encode_entries(entries)
    back = checkpoint.decode_entries(blob)
    assert list(back) == list(entries)
    for k in entries:
        assert back[k].shape == entries[k].shape and back[k].tobytes() == entries[k].tobytes()
    assert checkpoint.encode_entries(back) == blob
    assert blob[:4] == b"PPCK"


def test_model_roundtrip_is_bit_exact(tmp_path):
    rng = np.random.default_rng(0)
    model = init_model(SMALL, 0)
    image = Tensor(rng.standard_normal((1, 3, 128, 96)))
    before = outputs(model, image)
    state = AdamState(step=3, m={"x": np.ones(2)}, v={"x": np.full(2, 0.5)})
    gen = np.random.default_rng(42)
    gen.standard_normal(5)
    path = tmp_path / "m.ckpt"
    checkpoint.save(path, checkpoint.pack(model, state, gen))
    other = init_model(SMALL, 1)
    state2, gen2 = checkpoint.unpack(checkpoint.load(path), other)
    after = outputs(other, image)
    assert all(a.tobytes() == b.tobytes() for a, b in zip(before, after))
    assert state2.step == 3 and np.array_equal(state2.v["x"], state.v["x"])
    assert gen2.standard_normal(4).tobytes() == gen.standard_normal(4).tobytes()
    checkpoint.save(tmp_path / "again.ckpt", checkpoint.pack(other, state2))
    checkpoint.save(tmp_path / "orig.ckpt", checkpoint.pack(model, state2))
    assert (tmp_path / "again.ckpt").read_bytes() == (tmp_path / "orig.ckpt").read_bytes()


@pytest.mark.parametrize("offset, field", [(0, "magic"), (4, "version"), (-1, "checksum")])
def test_corruption_names_the_field(tmp_path, offset, field):
    path = tmp_path / "m.ckpt"
    checkpoint.save(path, {"w": np.ones(3)})
    blob = bytearray(path.read_bytes())
    blob[offset] ^= 0x01
    path.write_bytes(bytes(blob))
    with pytest.raises(CheckpointError, match=field):
        checkpoint.load(path)


def test_payload_flip_fails_checksum(tmp_path):
    path = tmp_path / "m.ckpt"
    checkpoint.save(path, {"w": np.ones(3)})
    blob = bytearray(path.read_bytes())
    blob[-12] ^= 0x40
    path.write_bytes(bytes(blob))
    with pytest.raises(CheckpointError, match="checksum"):
        checkpoint.load(path)


def test_truncated_and_missing(tmp_path):
    path = tmp_path / "m.ckpt"
    checkpoint.save(path, {"w": np.ones(3)})
    path.write_bytes(path.read_bytes()[:10])
    with pytest.raises(CheckpointError):
        checkpoint.load(path)
    with pytest.raises(CheckpointError):
        checkpoint.load(tmp_path / "absent.ckpt")


def test_unpack_rejects_mismatched_model():
    entries = checkpoint.pack(init_model(SMALL, 0))
    bigger = init_model(ModelConfig(base_channels=8, input_h=128, input_w=96), 0)
    with pytest.raises(CheckpointError, match="param/"):
        checkpoint.unpack(entries, bigger)
    del entries[next(iter(entries))]
    with pytest.raises(CheckpointError, match="lacks field"):
        checkpoint.unpack(entries, init_model(SMALL, 0))
