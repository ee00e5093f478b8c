"""Training objective: pixel L1 on both outputs plus a contrastive feature ratio.

The feature ratio compares the restoration with the clear image (pulled
closer) and with the degraded input (pushed away) inside a frozen feature
extractor::

    L_c = sum_j w_j * D(G_j(J), G_j(J')) / (D(G_j(I), G_j(J')) + eps)

``D`` is the mean absolute difference.  The extractor is a stack of
stride-2 convolutions with fixed random weights; anything exposing
``features(x) -> list[Tensor]`` can stand in for it.
"""

from __future__ import annotations

from dataclasses import dataclass, fields
from typing import List, Optional, Sequence

import numpy as np

from .errors import ConfigError, DimensionError
from .tensor import Tensor, abs_, conv2d, mean, prelu


@dataclass
class LossConfig:
    lambda1: float = 0.25
    lambda2: float = 0.5
    fe_stages: int = 3
    fe_channels: Sequence[int] = (8, 16, 32)
    fe_seed: int = 1234
    layer_weights: Optional[Sequence[float]] = None
    eps: float = 1e-8

    def validate(self):
        if self.lambda1 < 0 or self.lambda2 < 0:
            raise ConfigError(f"loss weights must be non-negative, got {self.lambda1}, {self.lambda2}")
        if not self.eps > 0:
            raise ConfigError(f"eps must be positive, got {self.eps}")
        if self.fe_stages < 1:
            raise ConfigError("fe_stages must be at least 1")
        if len(self.fe_channels) != self.fe_stages:
            raise ConfigError(f"fe_channels needs {self.fe_stages} entries, got {list(self.fe_channels)}")
        w = self.weights
        if len(w) != self.fe_stages or min(w) < 0 or max(w) <= 0:
            raise ConfigError(f"layer_weights must be {self.fe_stages} non-negative values, not all zero")
        return self

    @property
    def weights(self) -> List[float]:
        if self.layer_weights is None:
            return [1.0 / self.fe_stages] * self.fe_stages
        return [float(v) for v in self.layer_weights]

    @classmethod
    def from_dict(cls, d):
        known = {f.name for f in fields(cls)}
        unknown = set(d) - known
        if unknown:
            raise ConfigError(f"unknown loss config key(s): {sorted(unknown)}")
        return cls(**d).validate()


class FeatureExtractor:
    """Frozen stack of ``conv(stride 2) + PReLU(0.2)`` stages."""

    def __init__(self, channels: Sequence[int] = (8, 16, 32), seed: int = 1234, dtype="float32",
                 kernel_size: int = 3):
        rng = np.random.default_rng(seed)
        self.dtype = np.dtype(dtype)
        self.kernel_size = kernel_size
        self.stages = []
        cin = 3
        for cout in channels:
            std = np.sqrt(2.0 / (cin * kernel_size * kernel_size))
            w = rng.normal(0.0, std, (cout, cin, kernel_size, kernel_size)).astype(self.dtype)
            b = (0.1 * rng.normal(size=cout)).astype(self.dtype)
            w.setflags(write=False)
            b.setflags(write=False)
            self.stages.append((Tensor(w), Tensor(b)))
            cin = cout
        self.slope = Tensor(np.full(1, 0.2, dtype=self.dtype))

    @classmethod
    def from_config(cls, cfg: LossConfig, dtype="float32"):
        return cls(cfg.fe_channels, cfg.fe_seed, dtype)

    @property
    def depth(self):
        return len(self.stages)

    def features(self, x) -> List[Tensor]:
        if not isinstance(x, Tensor):
            x = Tensor(np.asarray(x, dtype=self.dtype))
        need = 2 ** self.depth
        if x.shape[2] < need or x.shape[3] < need:
            raise DimensionError(f"feature extractor with {self.depth} stages needs at least "
                                 f"{need}x{need} input, got {x.shape[2]}x{x.shape[3]}")
        out = []
        h = x
        for w, b in self.stages:
            h = prelu(conv2d(h, w, b, stride=2, padding=self.kernel_size // 2), self.slope)
            out.append(h)
        return out


def _pair(a, b, what):
    if a.shape != b.shape:
        raise DimensionError(f"{what}: shapes {a.shape} and {b.shape} differ")


def _t(x, like: Tensor):
    return x if isinstance(x, Tensor) else Tensor(np.asarray(x, dtype=like.dtype))


def l1_loss(phi_pred: Tensor, phi_gt, j_pred: Tensor, j_gt) -> Tensor:
    """``mean|phi' - phi| + mean|J' - J|`` over the batch."""
    phi_gt = _t(phi_gt, phi_pred)
    j_gt = _t(j_gt, j_pred)
    _pair(phi_pred, phi_gt, "phi pair")
    _pair(j_pred, j_gt, "image pair")
    return mean(abs_(phi_pred - phi_gt)) + mean(abs_(j_pred - j_gt))


def contrastive_loss(j_gt, j_pred: Tensor, i_s, fe: FeatureExtractor, weights: Optional[Sequence[float]] = None,
                     eps: float = 1e-8) -> Tensor:
    j_gt = _t(j_gt, j_pred)
    i_s = _t(i_s, j_pred)
    _pair(j_pred, j_gt, "restored vs clear")
    _pair(j_pred, i_s, "restored vs degraded")
    weights = list(weights) if weights is not None else [1.0 / fe.depth] * fe.depth
    if len(weights) != fe.depth:
        raise DimensionError(f"{len(weights)} layer weights for {fe.depth} feature stages")
    g_pred = fe.features(j_pred)
    g_pos = fe.features(j_gt)
    g_neg = fe.features(i_s)
    total = None
    for w, gp, gpos, gneg in zip(weights, g_pred, g_pos, g_neg):
        if w == 0:
            continue
        ratio = mean(abs_(gpos - gp)) / (mean(abs_(gneg - gp)) + eps)
        term = ratio * w
        total = term if total is None else total + term
    return total


def total_loss(l1: Tensor, lc: Tensor, cfg: LossConfig) -> Tensor:
    return l1 * cfg.lambda1 + lc * cfg.lambda2


def objective(net_out, phi_gt, j_gt, i_s, cfg: LossConfig, fe: FeatureExtractor):
    """Return ``(total, l1, lc)`` for one batch of network outputs."""
    l1 = l1_loss(net_out.phi, phi_gt, net_out.j, j_gt)
    lc = contrastive_loss(j_gt, net_out.j, i_s, fe, cfg.weights, cfg.eps)
    return total_loss(l1, lc, cfg), l1, lc
