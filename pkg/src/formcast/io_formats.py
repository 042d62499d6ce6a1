"""Bit-exact file formats: FQT named-tensor containers and FQM meshes.

FQT record layout (little endian): magic ``FQT1``, u8 dtype code
(0 = float32 LE), u8 reserved, u16 name length, UTF-8 name, u32 ndim,
ndim x u32 dims, raw data. Records are stored back-to-back; a container
may end with a trailing JSON block (anything after the last record that
does not start with the magic), used by checkpoints for the network
config and optimizer state references.
"""
from __future__ import annotations

import io
import json
import struct

import numpy as np

MAGIC = b"FQT1"
DTYPE_CODES = {0: np.dtype("<f4")}
CODE_FOR_DTYPE = {np.dtype("<f4"): 0}


class FormatError(ValueError):
    pass


def _encode_tensor(name: str, arr: np.ndarray) -> bytes:
    arr = np.asarray(arr, dtype="<f4")  # tobytes() emits C order regardless
    nb = name.encode("utf-8")
    head = MAGIC + struct.pack("<BBH", 0, 0, len(nb)) + nb
    head += struct.pack("<I", arr.ndim)
    head += struct.pack(f"<{arr.ndim}I", *arr.shape)
    return head + arr.tobytes()


def encode_fqt(tensors: dict[str, np.ndarray],
               trailing_json: dict | None = None) -> bytes:
    out = b"".join(_encode_tensor(n, a) for n, a in tensors.items())
    if trailing_json is not None:
        out += json.dumps(trailing_json, sort_keys=True).encode("utf-8")
    return out


def decode_fqt(blob: bytes) -> tuple[dict[str, np.ndarray], dict | None]:
    tensors: dict[str, np.ndarray] = {}
    buf = io.BytesIO(blob)
    while True:
        pos = buf.tell()
        magic = buf.read(4)
        if len(magic) == 0:
            return tensors, None
        if magic != MAGIC:
            buf.seek(pos)
            tail = buf.read().decode("utf-8")
            return tensors, json.loads(tail)
        code, _res, nlen = struct.unpack("<BBH", buf.read(4))
        if code not in DTYPE_CODES:
            raise FormatError(f"unknown dtype code {code}")
        name = buf.read(nlen).decode("utf-8")
        (ndim,) = struct.unpack("<I", buf.read(4))
        dims = struct.unpack(f"<{ndim}I", buf.read(4 * ndim))
        count = int(np.prod(dims)) if ndim else 1
        raw = buf.read(4 * count)
        if len(raw) != 4 * count:
            raise FormatError(f"truncated tensor {name!r}")
        tensors[name] = np.frombuffer(raw, dtype="<f4").reshape(dims).copy()


def write_fqt(path, tensors: dict[str, np.ndarray],
              trailing_json: dict | None = None) -> None:
    with open(path, "wb") as f:
        f.write(encode_fqt(tensors, trailing_json))


def read_fqt(path) -> tuple[dict[str, np.ndarray], dict | None]:
    with open(path, "rb") as f:
        return decode_fqt(f.read())


# ---------------------------------------------------------------------------
# FQM plain-text mesh format


def write_fqm(path, nodes: np.ndarray, elements: np.ndarray) -> None:
    """Lines: ``n <id> <x> <y> <z>`` then ``e <id> <n1> <n2> <n3> <n4>``."""
    with open(path, "w") as f:
        for i, (x, y, z) in enumerate(nodes):
            f.write(f"n {i} {x:.9g} {y:.9g} {z:.9g}\n")
        for i, el in enumerate(elements):
            f.write("e " + str(i) + " " + " ".join(str(int(v)) for v in el) + "\n")


def read_fqm(path) -> tuple[np.ndarray, np.ndarray]:
    nodes, elems = [], []
    with open(path) as f:
        for line in f:
            parts = line.split()
            if not parts:
                continue
            if parts[0] == "n":
                nodes.append([float(v) for v in parts[2:5]])
            elif parts[0] == "e":
                elems.append([int(v) for v in parts[2:6]])
            else:
                raise FormatError(f"unknown FQM line: {line!r}")
    return np.array(nodes), np.array(elems, dtype=np.int64)


# ---------------------------------------------------------------------------
# checkpoints


def save_checkpoint(path, net, optimizer=None, extra: dict | None = None) -> None:
    """Network weights, BN buffers and optional Adam state in one container."""
    tensors = {f"param/{k}": v.data for k, v in net.named_params().items()}
    tensors.update({f"buffer/{k}": v for k, v in net.named_buffers().items()})
    meta: dict = {"net_config": net.config.as_dict()}
    if extra:
        meta["extra"] = extra
    if optimizer is not None:
        st = optimizer.state
        order = [p.name for p in optimizer.params]
        meta["adam"] = {"lr": st.lr, "beta1": st.beta1, "beta2": st.beta2,
                        "eps": st.eps, "t": st.t, "param_order": order}
        for name, m, v in zip(order, st.m, st.v):
            tensors[f"adam_m/{name}"] = m
            tensors[f"adam_v/{name}"] = v
    write_fqt(path, tensors, meta)


def load_checkpoint(path, optimizer_cls=None):
    """Rebuild the network (and optionally its Adam optimizer) from disk."""
    from .engine import Adam
    from .network import NetConfig, ResSEUNet

    tensors, meta = read_fqt(path)
    if meta is None or "net_config" not in meta:
        raise FormatError("not a checkpoint: missing net config JSON block")
    net = ResSEUNet(NetConfig.from_dict(meta["net_config"]))
    named = net.named_params()
    for key, arr in tensors.items():
        kind, _, name = key.partition("/")
        if kind == "param":
            if name not in named:
                raise FormatError(f"unknown parameter {name!r} in checkpoint")
            named[name].data = arr.astype(np.float32)
    buffers = net.named_buffers()
    for key, arr in tensors.items():
        kind, _, name = key.partition("/")
        if kind == "buffer":
            if name not in buffers:
                raise FormatError(f"unknown buffer {name!r} in checkpoint")
            buffers[name][...] = arr

    optimizer = None
    if "adam" in meta:
        a = meta["adam"]
        params = [named[n] for n in a["param_order"]]
        optimizer = Adam(params, lr=a["lr"], beta1=a["beta1"],
                         beta2=a["beta2"], eps=a["eps"])
        optimizer.state.t = a["t"]
        optimizer.state.m = [tensors[f"adam_m/{n}"].astype(np.float32)
                             for n in a["param_order"]]
        optimizer.state.v = [tensors[f"adam_v/{n}"].astype(np.float32)
                             for n in a["param_order"]]
    extra = meta.get("extra")
    return net, optimizer, extra
