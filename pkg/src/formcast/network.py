"""Res-SE-U-Net: 4-stage conv encoder, 6 residual squeeze-excitation
layers at the bottleneck, and a mirrored transposed-conv decoder with
concatenative skips. The final layer has no batch norm and no activation.
"""
from __future__ import annotations

from dataclasses import dataclass, asdict

import numpy as np

from . import engine as eg
from .engine import Tensor

ENCODER_CHANNELS = (16, 32, 64, 128)
ENCODER_KERNELS = (9, 8, 6, 4)
ENCODER_STRIDES = (1, 2, 2, 2)
ENCODER_PADS = (4, 3, 2, 1)

# decoder rows: (kind, in_c, out_c, k, stride, pad, bn, act)
DECODER_ROWS = (
    ("convT", 256, 64, 4, 2, 1, True, "relu"),
    ("convT", 128, 32, 6, 2, 2, True, "relu"),
    ("convT", 64, 16, 8, 2, 3, True, "relu"),
    ("conv", 32, 8, 5, 1, 2, True, "relu"),
    ("conv", 8, None, 5, 1, 2, False, None),  # out_c set by config
)

LAYER_IDS = tuple(f"E{i}" for i in range(1, 5)) + \
    tuple(f"B{i}" for i in range(1, 7)) + \
    tuple(f"D{i}" for i in range(1, 6))


@dataclass(frozen=True)
class NetConfig:
    resolution: int = 256
    in_channels: int = 4
    out_channels: int = 1            # 1 = thinning, 3 = displacement
    bottleneck_layers: int = 6
    bottleneck_channels: int = 128
    se_reduction: int = 16

    def __post_init__(self):
        if self.resolution % 8 != 0:
            raise ValueError("resolution must be divisible by 8")
        if self.out_channels not in (1, 3):
            raise ValueError("output channels must be 1 or 3")
        if self.bottleneck_channels % self.se_reduction != 0:
            raise ValueError("bottleneck channels must divide by the SE reduction")

    def as_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "NetConfig":
        return cls(**d)


class ArchitectureError(ValueError):
    pass


def _uniform_init(rng, shape, fan_in):
    bound = np.sqrt(6.0 / fan_in)
    return rng.uniform(-bound, bound, size=shape).astype(np.float32)


class ConvBlock:
    """Conv or transposed conv, optional BN, optional ReLU."""

    def __init__(self, rng, kind, in_c, out_c, k, stride, pad, bn, act, name):
        self.kind, self.stride, self.pad = kind, stride, pad
        self.act = act
        self.in_channels, self.out_channels = in_c, out_c
        kshape = (in_c, out_c, k, k) if kind == "convT" else (out_c, in_c, k, k)
        self.weight = eg.parameter(_uniform_init(rng, kshape, in_c * k * k),
                                   name=f"{name}.weight")
        self.bias = eg.parameter(np.zeros(out_c, dtype=np.float32),
                                 name=f"{name}.bias")
        self.bn = bn
        if bn:
            self.gamma = eg.parameter(np.ones(out_c, dtype=np.float32),
                                      name=f"{name}.gamma")
            self.beta = eg.parameter(np.zeros(out_c, dtype=np.float32),
                                     name=f"{name}.beta")
            self.running_mean = np.zeros(out_c, dtype=np.float32)
            self.running_var = np.ones(out_c, dtype=np.float32)

    def __call__(self, x: Tensor, training: bool) -> Tensor:
        if self.kind == "convT":
            y = eg.conv_transpose2d(x, self.weight, self.bias,
                                    self.stride, self.pad)
        else:
            y = eg.conv2d(x, self.weight, self.bias, self.stride, self.pad)
        if self.bn:
            y = eg.batchnorm2d(y, self.gamma, self.beta,
                               self.running_mean, self.running_var, training)
        if self.act == "relu":
            y = eg.relu(y)
        return y

    def params(self):
        out = [self.weight, self.bias]
        if self.bn:
            out += [self.gamma, self.beta]
        return out

    def buffers(self):
        return {"running_mean": self.running_mean,
                "running_var": self.running_var} if self.bn else {}


class SEBlock:
    """Squeeze-excitation with a doubled-width second FC: its output is
    split into a sigmoid channel scale and an additive channel bias."""

    def __init__(self, rng, channels, reduction, name):
        if channels % reduction:
            raise ArchitectureError("SE channels must divide by the reduction")
        self.channels = channels
        hidden = channels // reduction
        self.fc1_w = eg.parameter(_uniform_init(rng, (hidden, channels), channels),
                                  name=f"{name}.fc1_w")
        self.fc1_b = eg.parameter(np.zeros(hidden, dtype=np.float32),
                                  name=f"{name}.fc1_b")
        self.fc2_w = eg.parameter(_uniform_init(rng, (2 * channels, hidden), hidden),
                                  name=f"{name}.fc2_w")
        self.fc2_b = eg.parameter(np.zeros(2 * channels, dtype=np.float32),
                                  name=f"{name}.fc2_b")

    def __call__(self, u: Tensor) -> Tensor:
        b, c = u.shape[0], u.shape[1]
        w = eg.reshape(eg.global_avg_pool(u), (b, c))
        p = eg.relu(eg.linear(w, self.fc1_w, self.fc1_b))
        q = eg.linear(p, self.fc2_w, self.fc2_b)
        # split q into scale logits e and offset bias
        e = eg.reshape(_slice_cols(q, 0, c), (b, c, 1, 1))
        bias_t = eg.reshape(_slice_cols(q, c, 2 * c), (b, c, 1, 1))
        return eg.add(eg.mul(eg.sigmoid(e), u), bias_t)

    def params(self):
        return [self.fc1_w, self.fc1_b, self.fc2_w, self.fc2_b]


def _slice_cols(x: Tensor, start: int, stop: int) -> Tensor:
    return eg.slice_channels(x, start, stop)


class ResSELayer:
    """conv3x3-BN-ReLU-conv3x3-BN -> SE -> additive skip -> ReLU."""

    def __init__(self, rng, channels, reduction, name):
        self.conv1 = ConvBlock(rng, "conv", channels, channels, 3, 1, 1,
                               True, "relu", f"{name}.conv1")
        self.conv2 = ConvBlock(rng, "conv", channels, channels, 3, 1, 1,
                               True, None, f"{name}.conv2")
        self.se = SEBlock(rng, channels, reduction, f"{name}.se")

    def __call__(self, x: Tensor, training: bool) -> Tensor:
        y = self.conv1(x, training)
        y = self.conv2(y, training)
        y = self.se(y)
        return eg.relu(eg.add(x, y))

    def params(self):
        return self.conv1.params() + self.conv2.params() + self.se.params()


class ResSEUNet:
    def __init__(self, config: NetConfig, seed: int = 0):
        self.config = config
        rng = np.random.default_rng(seed)
        self.encoder = []
        in_c = config.in_channels
        for i, (out_c, k, s, p) in enumerate(zip(ENCODER_CHANNELS,
                                                 ENCODER_KERNELS,
                                                 ENCODER_STRIDES,
                                                 ENCODER_PADS)):
            self.encoder.append(ConvBlock(rng, "conv", in_c, out_c, k, s, p,
                                          True, "relu", f"E{i + 1}"))
            in_c = out_c
        self.bottleneck = [ResSELayer(rng, config.bottleneck_channels,
                                      config.se_reduction, f"B{i + 1}")
                           for i in range(config.bottleneck_layers)]
        self.decoder = []
        for i, row in enumerate(DECODER_ROWS):
            kind, d_in, d_out, k, s, p, bn, act = row
            if d_out is None:
                d_out = config.out_channels
            self.decoder.append(ConvBlock(rng, kind, d_in, d_out, k, s, p,
                                          bn, act, f"D{i + 1}"))
        self._check_channel_arithmetic()

    def _check_channel_arithmetic(self):
        skips = ENCODER_CHANNELS  # (16, 32, 64, 128)
        bott = self.config.bottleneck_channels
        expected = (skips[3] + bott,
                    self.decoder[0].out_channels + skips[2],
                    self.decoder[1].out_channels + skips[1],
                    self.decoder[2].out_channels + skips[0])
        actual = tuple(self.decoder[i].in_channels for i in range(4))
        if actual != expected:
            raise ArchitectureError(
                f"decoder input channels {actual} != skip sums {expected}")
        if self.decoder[4].bn or self.decoder[4].act is not None:
            raise ArchitectureError("final layer must have no BN and no activation")

    # -- execution ---------------------------------------------------------

    def forward(self, x: Tensor, training: bool = False,
                _capture: dict | None = None) -> Tensor:
        if x.shape[1] != self.config.in_channels:
            raise eg.ShapeError("unexpected input channel count")
        if x.shape[2] != self.config.resolution or x.shape[3] != self.config.resolution:
            raise eg.ShapeError(
                f"expected resolution {self.config.resolution}, got {x.shape[2:]}")
        skips = []
        y = x
        for i, block in enumerate(self.encoder):
            y = block(y, training)
            skips.append(y)
            if _capture is not None:
                _capture[f"E{i + 1}"] = y
        for i, layer in enumerate(self.bottleneck):
            y = layer(y, training)
            if _capture is not None:
                _capture[f"B{i + 1}"] = y
        # skip pairing: E4->D1, E3->D2, E2->D3, E1->D4
        y = eg.concat_channels([skips[3], y])
        for i, block in enumerate(self.decoder):
            y = block(y, training)
            if _capture is not None:
                _capture[f"D{i + 1}"] = y
            if i < 3:
                y = eg.concat_channels([skips[2 - i], y])
        return y

    def __call__(self, x: Tensor, training: bool = False) -> Tensor:
        return self.forward(x, training)

    def predict(self, batch: np.ndarray) -> np.ndarray:
        """Eval-mode forward on a raw array batch."""
        return self.forward(Tensor(batch), training=False).data

    def dump_feature_maps(self, layer_id: str, x: Tensor) -> np.ndarray:
        """Post-activation maps of the named layer (eval mode)."""
        if layer_id not in LAYER_IDS:
            raise KeyError(f"unknown layer id {layer_id!r}")
        maps: dict = {}
        self.forward(x, training=False, _capture=maps)
        return maps[layer_id].data

    # -- parameters --------------------------------------------------------

    def blocks(self):
        return self.encoder + self.bottleneck + self.decoder

    def params(self) -> list[Tensor]:
        out = []
        for b in self.blocks():
            out.extend(b.params())
        return out

    def named_params(self) -> dict[str, Tensor]:
        return {p.name: p for p in self.params()}

    def named_buffers(self) -> dict[str, np.ndarray]:
        out = {}
        for b in self.blocks():
            if isinstance(b, ResSELayer):
                subs = [b.conv1, b.conv2]
            else:
                subs = [b]
            for sub in subs:
                for k, v in sub.buffers().items():
                    out[f"{sub.weight.name.rsplit('.', 1)[0]}.{k}"] = v
        return out


def count_params(config: NetConfig) -> int:
    """Total learnable parameter count, a pure function of the config."""
    net = ResSEUNet(config, seed=0)
    return sum(p.data.size for p in net.params())
