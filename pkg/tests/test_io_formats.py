import struct

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from formcast import engine as eg
from formcast.io_formats import (
    MAGIC,
    FormatError,
    decode_fqt,
    encode_fqt,
    load_checkpoint,
    read_fqm,
    read_fqt,
    save_checkpoint,
    write_fqm,
    write_fqt,
)
from formcast.network import NetConfig, ResSEUNet


def test_fqt_header_layout():
    arr = np.arange(6, dtype=np.float32).reshape(2, 3)
    blob = encode_fqt({"ab": arr})
    assert blob[:4] == MAGIC
    code, reserved, namelen = struct.unpack("<BBH", blob[4:8])
    assert (code, reserved, namelen) == (0, 0, 2)
    assert blob[8:10] == b"ab"
    ndim, d0, d1 = struct.unpack("<III", blob[10:22])
    assert (ndim, d0, d1) == (2, 2, 3)
    assert blob[22:] == arr.tobytes()
    assert len(blob) == 22 + 24


def test_fqt_roundtrip_multiple_tensors():
    tensors = {
        "thinning": np.random.default_rng(0).standard_normal(
            (1, 64, 64)).astype(np.float32),
        "displacement": np.random.default_rng(1).standard_normal(
            (3, 64, 64)).astype(np.float32),
        "scalar": np.float32(4.25).reshape(()),
    }
    back, meta = decode_fqt(encode_fqt(tensors))
    assert meta is None
    assert set(back) == set(tensors)
    for name in tensors:
        assert back[name].dtype == np.float32
        assert np.array_equal(back[name], tensors[name])


def test_fqt_encoding_is_byte_stable():
    t = {"x": np.ones((4, 4), dtype=np.float32)}
    assert encode_fqt(t) == encode_fqt(t)


def test_fqt_trailing_json():
    t = {"x": np.zeros(3, dtype=np.float32)}
    meta = {"grid": 64, "note": "café"}
    back, got = decode_fqt(encode_fqt(t, meta))
    assert got == meta
    assert np.array_equal(back["x"], t["x"])


def test_fqt_bad_magic():
    with pytest.raises(ValueError):
        decode_fqt(b"NOPE" + b"\x00" * 20)


def test_fqt_unknown_dtype_code():
    arr = np.zeros(1, dtype=np.float32)
    blob = bytearray(encode_fqt({"x": arr}))
    blob[4] = 7  # dtype code
    with pytest.raises(FormatError):
        decode_fqt(bytes(blob))


def test_fqt_truncated_payload():
    blob = encode_fqt({"x": np.zeros(10, dtype=np.float32)})
    with pytest.raises(FormatError):
        decode_fqt(blob[:-8])


@settings(max_examples=25, deadline=None)
@given(st.lists(st.integers(min_value=1, max_value=5),
                min_size=0, max_size=4),
       st.text(min_size=1, max_size=30), st.integers())
def test_fqt_roundtrip_property(shape, name, seed):
    rng = np.random.default_rng(abs(seed) % 2**32)
    arr = rng.standard_normal(shape).astype(np.float32)
    back, meta = decode_fqt(encode_fqt({name: arr}))
    assert meta is None
    assert np.array_equal(back[name], arr)
    assert back[name].shape == tuple(shape)


def test_fqt_file_roundtrip(tmp_path):
    path = tmp_path / "fields.fqt"
    tensors = {"a": np.full((2, 2), 0.5, dtype=np.float32)}
    write_fqt(path, tensors, {"k": 1})
    back, meta = read_fqt(path)
    assert np.array_equal(back["a"], tensors["a"])
    assert meta == {"k": 1}


def test_fqm_roundtrip(tmp_path):
    nodes = np.array([[0.0, 0.0, 0.0],
                      [10.5, -2.25, 0.125],
                      [3.0, 4.0, 5.0],
                      [1.0, 1.0, 1.0]])
    elements = np.array([[0, 1, 2, 3]], dtype=np.int64)
    path = tmp_path / "mesh.fqm"
    write_fqm(path, nodes, elements)
    n2, e2 = read_fqm(path)
    assert np.allclose(n2, nodes, atol=1e-9)
    assert np.array_equal(e2, elements)
    lines = path.read_text().splitlines()
    assert lines[0].startswith("n 0 ")
    assert lines[-1] == "e 0 0 1 2 3"


def test_fqm_unknown_line(tmp_path):
    path = tmp_path / "bad.fqm"
    path.write_text("n 0 0 0 0\nq 1 2 3\n")
    with pytest.raises(FormatError):
        read_fqm(path)


# ---------------------------------------------------------------------------
# checkpoints


def _small_net(seed=0):
    return ResSEUNet(NetConfig(resolution=8, out_channels=1), seed=seed)


def test_checkpoint_roundtrip_weights_and_buffers(tmp_path):
    net = _small_net(seed=1)
    # perturb buffers away from their defaults so the roundtrip is meaningful
    for buf in net.named_buffers().values():
        buf += np.random.default_rng(2).standard_normal(buf.shape).astype(
            np.float32) * 0.01
    path = tmp_path / "net.fqt"
    save_checkpoint(path, net, extra={"epoch": 3})
    net2, opt2, extra = load_checkpoint(path)
    assert opt2 is None
    assert extra == {"epoch": 3}
    assert net2.config == net.config
    for name, p in net.named_params().items():
        assert np.array_equal(net2.named_params()[name].data, p.data)
    for name, b in net.named_buffers().items():
        assert np.array_equal(net2.named_buffers()[name], b)
    x = np.random.default_rng(3).uniform(size=(1, 4, 8, 8)).astype(np.float32)
    assert np.array_equal(net.predict(x), net2.predict(x))


def test_checkpoint_roundtrip_optimizer(tmp_path):
    net = _small_net(seed=4)
    opt = eg.Adam(net.params(), lr=5e-4)
    x = eg.Tensor(np.random.default_rng(5).uniform(
        size=(2, 4, 8, 8)).astype(np.float32))
    target = eg.Tensor(np.zeros((2, 1, 8, 8), dtype=np.float32))
    for _ in range(3):
        opt.zero_grad()
        loss = eg.mse_loss(net.forward(x, training=True), target)
        loss.backward()
        opt.step()
    path = tmp_path / "ckpt.fqt"
    save_checkpoint(path, net, opt)
    net2, opt2, _ = load_checkpoint(path)
    assert opt2.state.t == opt.state.t
    assert opt2.state.lr == opt.state.lr
    for m1, m2 in zip(opt.state.m, opt2.state.m):
        assert np.array_equal(m1, m2)
    for v1, v2 in zip(opt.state.v, opt2.state.v):
        assert np.array_equal(v1, v2)


def test_checkpoint_resume_matches_uninterrupted(tmp_path):
    """One more optimizer step after reload is bit-identical to never saving."""
    x = np.random.default_rng(6).uniform(size=(2, 4, 8, 8)).astype(np.float32)
    t = np.random.default_rng(7).uniform(size=(2, 1, 8, 8)).astype(np.float32)

    def step(net, opt):
        opt.zero_grad()
        loss = eg.mse_loss(net.forward(eg.Tensor(x), training=True),
                           eg.Tensor(t))
        loss.backward()
        opt.step()
        return float(loss.data)

    net_a = _small_net(seed=8)
    opt_a = eg.Adam(net_a.params())
    step(net_a, opt_a)
    path = tmp_path / "mid.fqt"
    save_checkpoint(path, net_a, opt_a)
    loss_a = step(net_a, opt_a)

    net_b, opt_b, _ = load_checkpoint(path)
    loss_b = step(net_b, opt_b)
    assert loss_b == pytest.approx(loss_a, abs=1e-6)
    for name, p in net_a.named_params().items():
        assert np.allclose(net_b.named_params()[name].data, p.data, atol=1e-7)


def test_checkpoint_missing_config_rejected(tmp_path):
    path = tmp_path / "raw.fqt"
    write_fqt(path, {"param/x": np.zeros(1, dtype=np.float32)})
    with pytest.raises(FormatError):
        load_checkpoint(path)


def test_checkpoint_unknown_param_rejected(tmp_path):
    net = _small_net()
    tensors = {"param/not_a_param": np.zeros(1, dtype=np.float32)}
    path = tmp_path / "bad.fqt"
    write_fqt(path, tensors, {"net_config": net.config.as_dict()})
    with pytest.raises(FormatError):
        load_checkpoint(path)
