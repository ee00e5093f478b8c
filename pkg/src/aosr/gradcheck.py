"""Central-difference verification of autodiff gradients."""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, List, Optional, Sequence

import numpy as np

from .errors import ContractError, DTypeError
from .tensor import Tensor


@dataclass
class ParamCheck:
    name: str
    n_checked: int
    max_rel_error: float
    max_abs_error: float
    passed: bool


@dataclass
class GradCheckReport:
    rtol: float
    h: float
    floor: float = 0.0
    checks: List[ParamCheck] = field(default_factory=list)

    @property
    def passed(self) -> bool:
        return all(c.passed for c in self.checks)

    @property
    def failures(self) -> List[str]:
        return [c.name for c in self.checks if not c.passed]

    def lines(self) -> List[str]:
        out = []
        for c in self.checks:
            status = "PASS" if c.passed else "FAIL"
            out.append(f"{status} {c.name:<24s} n={c.n_checked:<4d} "
                       f"max_rel={c.max_rel_error:.3e} max_abs={c.max_abs_error:.3e}")
        return out


def _scalar(loss) -> float:
    if loss.size != 1:
        raise ContractError(f"grad_check target must return a scalar, got shape {loss.shape}")
    return float(loss.data.reshape(()))


def _evaluate(f) -> float:
    return _scalar(f())


def grad_check(f: Callable[[], Tensor], params: Sequence[Tensor], h: float = 1e-6, rtol: float = 1e-4,
               names: Optional[Sequence[str]] = None, max_entries: Optional[int] = None,
               floor: float = 1e-6, seed: int = 0, noise_factor: float = 16.0) -> GradCheckReport:
    """Compare autodiff gradients against ``(f(p+h) - f(p-h)) / 2h``.

    ``f`` rebuilds the graph from the current parameter values each call.
    The relative error of one entry is ``|a - n| / max(|a|, |n|, floor')``
    where ``floor' = max(floor, noise_factor * eps * max(|f|, 1) / (h * rtol))``:
    the difference quotient carries round-off of order ``eps * |f| / h``, so
    entries smaller than that over ``rtol`` cannot be judged relatively.
    With ``max_entries`` set, at most that many randomly chosen entries of
    each parameter are probed.
    """
    if any(p.dtype != np.float64 for p in params):
        raise DTypeError("grad_check requires float64 parameters")
    names = list(names) if names is not None else [p.name or f"param{i}" for i, p in enumerate(params)]
    rng = np.random.default_rng(seed)

    for p in params:
        p.zero_grad()
    loss = f()
    base = _scalar(loss)
    loss.backward()
    analytic = [p.grad.copy() for p in params]
    noise = noise_factor * np.finfo(np.float64).eps * max(abs(base), 1.0) / h
    floor = max(floor, noise / rtol)
    for _ in range(2):
        again = _evaluate(f)
        if again != base:
            raise ContractError(f"function is not deterministic: {base!r} then {again!r}")

    report = GradCheckReport(rtol=rtol, h=h, floor=floor)
    for name, p, ga in zip(names, params, analytic):
        flat = p.data.reshape(-1)
        if max_entries is not None and flat.size > max_entries:
            idx = np.sort(rng.choice(flat.size, size=max_entries, replace=False))
        else:
            idx = np.arange(flat.size)
        max_rel = 0.0
        max_abs = 0.0
        for j in idx:
            orig = flat[j]
            flat[j] = orig + h
            fp = _evaluate(f)
            flat[j] = orig - h
            fm = _evaluate(f)
            flat[j] = orig
            num = (fp - fm) / (2 * h)
            ana = float(ga.reshape(-1)[j])
            err = abs(ana - num)
            rel = err / max(abs(ana), abs(num), floor)
            max_rel = max(max_rel, rel)
            max_abs = max(max_abs, err)
        report.checks.append(ParamCheck(name, len(idx), max_rel, max_abs, max_rel <= rtol))
    return report


def network_grad_check(net_config=None, loss_config=None, seed: int = 0, size: int = 8, h: float = 1e-6,
                       rtol: float = 1e-4, max_entries: Optional[int] = 6, batch: int = 1) -> GradCheckReport:
    """Grad-check every parameter tensor of the network under the total loss.

    Runs in float64 on a synthetic ``size x size`` sample built from ``seed``.
    """
    from dataclasses import asdict

    from .losses import FeatureExtractor, LossConfig, objective
    from .net import AOSRNet, NetConfig
    from .synth import generate_scene, sample_params, sample_rng, synthesize_triple

    cfg = NetConfig(**{**asdict(net_config or NetConfig()), "dtype": "float64"})
    loss_cfg = (loss_config or LossConfig()).validate()
    net = AOSRNet.build(cfg, seed=seed)
    fe = FeatureExtractor.from_config(loss_cfg, "float64")
    triples = []
    for b in range(batch):
        p = sample_params(sample_rng(seed, b))
        j = generate_scene(seed + b, size, size)
        triples.append(synthesize_triple(j, p, cfg.coeffs))
    i_s = np.stack([t.i_s for t in triples]).transpose(0, 3, 1, 2).copy()
    phi = np.stack([t.phi for t in triples]).transpose(0, 3, 1, 2).copy()
    j_s = np.stack([t.j_s for t in triples]).transpose(0, 3, 1, 2).copy()

    def f():
        out = net.forward(i_s)
        return objective(out, phi, j_s, i_s, loss_cfg, fe)[0]

    names = list(net.params)
    return grad_check(f, [net.params[k] for k in names], h=h, rtol=rtol, names=names,
                      max_entries=max_entries, seed=seed)
