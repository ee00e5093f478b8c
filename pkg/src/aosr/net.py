"""Integrated-variable estimation network and its checkpoint format.

Layout at default width ``c = 16``::

    conv(3->c, s1) -> conv(c->2c, s2) -> conv(2c->4c, s2) -> conv(4c->4c, s1)   each + PReLU
    residual group: 3 x [x + conv(PReLU(conv(x)))] at 4c channels
    deconv(4c->2c, s2) -> deconv(2c->c, s2)                                     each + PReLU
    mixup(conv-1 feature, last deconv feature)
    conv(c->3) head, no activation  ->  phi
    j = phi * (input - alpha) + beta_ctrl

Deconvolutions use 4x4 kernels with padding 1 so that two stride-2 stages
exactly undo the two stride-2 convolutions.
"""

from __future__ import annotations

import json
from collections import OrderedDict
from dataclasses import asdict, dataclass, fields
from pathlib import Path
from typing import Dict, NamedTuple, Optional

import numpy as np

from .errors import ConfigError, DimensionError, FormatError
from .imaging import ControlCoeffs
from .stf import read_checkpoint, write_checkpoint
from .tensor import Tensor, conv2d, deconv2d, prelu, sigmoid

MIXUP_PLACEMENTS = ("conv1_deconv2", "conv2_deconv1", "none")


@dataclass
class NetConfig:
    base_channels: int = 16
    kernel_size: int = 3
    deconv_kernel: int = 4
    residual_blocks: int = 3
    mixup_placement: str = "conv1_deconv2"
    alpha: float = 1.6
    beta_ctrl: float = 1.0
    dtype: str = "float32"

    def validate(self):
        if self.base_channels < 1:
            raise ConfigError(f"base_channels must be positive, got {self.base_channels}")
        if self.kernel_size < 1 or self.kernel_size % 2 == 0:
            raise ConfigError(f"kernel_size must be odd so 'same' padding keeps H x W, got {self.kernel_size}")
        # (H/2 - 1) * 2 - 2p + K == H  requires K - 2p == 2
        if self.deconv_kernel < 2 or self.deconv_kernel % 2 != 0:
            raise ConfigError(f"deconv_kernel must be even and >= 2 to restore H x W, got {self.deconv_kernel}")
        if self.residual_blocks < 0:
            raise ConfigError(f"residual_blocks must be >= 0, got {self.residual_blocks}")
        if self.mixup_placement not in MIXUP_PLACEMENTS:
            raise ConfigError(f"mixup_placement must be one of {MIXUP_PLACEMENTS}, got {self.mixup_placement!r}")
        if self.dtype not in ("float32", "float64"):
            raise ConfigError(f"dtype must be float32 or float64, got {self.dtype!r}")
        ControlCoeffs(self.alpha, self.beta_ctrl)
        return self

    @property
    def coeffs(self):
        return ControlCoeffs(self.alpha, self.beta_ctrl)

    @classmethod
    def from_dict(cls, d):
        known = {f.name for f in fields(cls)}
        unknown = set(d) - known
        if unknown:
            raise ConfigError(f"unknown model config key(s): {sorted(unknown)}")
        return cls(**d).validate()


class NetOutput(NamedTuple):
    phi: Tensor
    j: Tensor


def mixup(f1: Tensor, f2: Tensor, xi: Tensor) -> Tensor:
    """Gated convex combination ``sigmoid(xi) * f1 + (1 - sigmoid(xi)) * f2``."""
    if f1.shape != f2.shape:
        raise DimensionError(f"mixup inputs differ in shape: {f1.shape} vs {f2.shape}")
    # same value as the two-term form, but exact when f1 == f2
    return f2 + sigmoid(xi) * (f1 - f2)


def residual_block(x: Tensor, w1, b1, slope, w2, b2, padding: int) -> Tensor:
    if w1.shape[1] != x.shape[1] or w2.shape[0] != x.shape[1]:
        raise DimensionError(f"residual block expects {x.shape[1]} channels in and out, "
                             f"weights are {w1.shape} and {w2.shape}")
    h = prelu(conv2d(x, w1, b1, stride=1, padding=padding), slope)
    return x + conv2d(h, w2, b2, stride=1, padding=padding)


class AOSRNet:
    """Holds named parameters and runs the forward pass."""

    def __init__(self, config: NetConfig, params: "OrderedDict[str, Tensor]"):
        self.config = config
        self.params = params

    # -- construction -------------------------------------------------------
    @classmethod
    def build(cls, config: Optional[NetConfig] = None, seed: int = 0) -> "AOSRNet":
        config = (config or NetConfig()).validate()
        dtype = np.dtype(config.dtype)
        rng = np.random.default_rng(seed)
        c, k, kd = config.base_channels, config.kernel_size, config.deconv_kernel
        p = OrderedDict()

        def conv(name, cin, cout, ksize):
            std = np.sqrt(2.0 / (cin * ksize * ksize))
            p[f"{name}.weight"] = rng.normal(0.0, std, (cout, cin, ksize, ksize))
            p[f"{name}.bias"] = np.zeros(cout)

        def deconv(name, cin, cout, ksize, stride):
            # each output pixel sees about cin * (ksize / stride)^2 inputs
            std = np.sqrt(2.0 * stride * stride / (cin * ksize * ksize))
            p[f"{name}.weight"] = rng.normal(0.0, std, (cin, cout, ksize, ksize))
            p[f"{name}.bias"] = np.zeros(cout)

        def slope(name):
            p[f"{name}.slope"] = np.full(1, 0.25)

        widths = [3, c, 2 * c, 4 * c, 4 * c]
        for n in range(4):
            conv(f"enc{n + 1}", widths[n], widths[n + 1], k)
            slope(f"enc{n + 1}")
        for r in range(config.residual_blocks):
            conv(f"res{r + 1}.conv1", 4 * c, 4 * c, k)
            slope(f"res{r + 1}")
            conv(f"res{r + 1}.conv2", 4 * c, 4 * c, k)
        deconv("dec1", 4 * c, 2 * c, kd, 2)
        slope("dec1")
        deconv("dec2", 2 * c, c, kd, 2)
        slope("dec2")
        if config.mixup_placement != "none":
            p["mixup.xi"] = np.zeros(1)
        conv("head", c, 3, k)
        params = OrderedDict((name, Tensor(v.astype(dtype), requires_grad=True, name=name))
                             for name, v in p.items())
        return cls(config, params)

    def parameter_count(self) -> int:
        return int(sum(t.size for t in self.params.values()))

    def parameters(self):
        return list(self.params.values())

    def zero_grad(self):
        for t in self.params.values():
            t.zero_grad()

    # -- forward --------------------------------------------------------------
    def forward(self, x) -> NetOutput:
        """Run a batch ``(N, 3, H, W)`` with H and W divisible by 4."""
        cfg = self.config
        p = self.params
        dtype = np.dtype(cfg.dtype)
        if not isinstance(x, Tensor):
            x = Tensor(np.asarray(x, dtype=dtype))
        if x.data.ndim != 4 or x.shape[1] != 3:
            raise DimensionError(f"network input must be N x 3 x H x W, got {x.shape}")
        if x.shape[2] % 4 or x.shape[3] % 4:
            raise DimensionError(f"input height and width must be divisible by 4, got {x.shape[2]}x{x.shape[3]}")
        pad = cfg.kernel_size // 2
        dpad = (cfg.deconv_kernel - 2) // 2

        feats = []
        h = x
        for n, stride in zip(range(1, 5), (1, 2, 2, 1)):
            h = prelu(conv2d(h, p[f"enc{n}.weight"], p[f"enc{n}.bias"], stride=stride, padding=pad),
                      p[f"enc{n}.slope"])
            feats.append(h)
        for r in range(1, cfg.residual_blocks + 1):
            h = residual_block(h, p[f"res{r}.conv1.weight"], p[f"res{r}.conv1.bias"], p[f"res{r}.slope"],
                               p[f"res{r}.conv2.weight"], p[f"res{r}.conv2.bias"], pad)
        d1 = prelu(deconv2d(h, p["dec1.weight"], p["dec1.bias"], stride=2, padding=dpad), p["dec1.slope"])
        if cfg.mixup_placement == "conv2_deconv1":
            d1 = mixup(feats[1], d1, p["mixup.xi"])
        d2 = prelu(deconv2d(d1, p["dec2.weight"], p["dec2.bias"], stride=2, padding=dpad), p["dec2.slope"])
        if cfg.mixup_placement == "conv1_deconv2":
            d2 = mixup(feats[0], d2, p["mixup.xi"])
        phi = conv2d(d2, p["head.weight"], p["head.bias"], stride=1, padding=pad)
        j = phi * (x - cfg.alpha) + cfg.beta_ctrl
        return NetOutput(phi, j)

    __call__ = forward

    def predict(self, image: np.ndarray):
        """Restore one ``H x W x 3`` image; returns (phi, j) as HWC arrays."""
        out = self.forward(np.asarray(image)[None].transpose(0, 3, 1, 2))
        return out.phi.data[0].transpose(1, 2, 0), out.j.data[0].transpose(1, 2, 0)

    # -- state ----------------------------------------------------------------
    def state_dict(self) -> Dict[str, np.ndarray]:
        return OrderedDict((k, v.data.copy()) for k, v in self.params.items())

    def load_state_dict(self, state: Dict[str, np.ndarray]):
        missing = [k for k in self.params if k not in state]
        unexpected = [k for k in state if k not in self.params]
        if missing or unexpected:
            raise FormatError(f"state mismatch: missing {missing}, unexpected {unexpected}")
        for k, t in self.params.items():
            if state[k].shape != t.shape:
                raise FormatError(f"parameter {k}: shape {state[k].shape} != {t.shape}")
            t.data[...] = state[k]

    def astype(self, dtype: str) -> "AOSRNet":
        cfg = NetConfig(**{**asdict(self.config), "dtype": dtype})
        params = OrderedDict((k, Tensor(v.data.astype(dtype), requires_grad=True, name=k))
                             for k, v in self.params.items())
        return AOSRNet(cfg, params)


# -- checkpoints ----------------------------------------------------------------

def sidecar_path(path) -> Path:
    path = Path(path)
    return path.with_name(path.name + ".json")


def save_checkpoint(path, net: AOSRNet, optimizer_state: Optional[Dict[str, np.ndarray]] = None,
                    epoch: int = 0, master_seed: int = 0, extra: Optional[dict] = None):
    """Write the tensor container plus a JSON sidecar next to it."""
    tensors = OrderedDict(net.state_dict())
    if optimizer_state:
        for k, v in optimizer_state.items():
            tensors[f"optim/{k}"] = v
    write_checkpoint(path, tensors)
    side = {"net_config": asdict(net.config), "optimizer_state": bool(optimizer_state),
            "epoch": int(epoch), "master_seed": int(master_seed)}
    if extra:
        side.update(extra)
    sidecar_path(path).write_text(json.dumps(side, indent=2, sort_keys=True) + "\n")


def load_checkpoint(path):
    """Return ``(net, sidecar, optimizer_state)``."""
    try:
        side = json.loads(sidecar_path(path).read_text())
    except json.JSONDecodeError as exc:
        raise FormatError(f"{sidecar_path(path)}: not valid JSON") from exc
    if "net_config" not in side:
        raise FormatError(f"{sidecar_path(path)}: missing 'net_config'")
    tensors = read_checkpoint(path)
    cfg = NetConfig.from_dict(side["net_config"])
    net = AOSRNet.build(cfg, seed=0)
    net.load_state_dict({k: v for k, v in tensors.items() if not k.startswith("optim/")})
    optim = {k[len("optim/"):]: v for k, v in tensors.items() if k.startswith("optim/")}
    return net, side, optim
