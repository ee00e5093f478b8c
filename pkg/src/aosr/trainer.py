"""Adam training loop, checkpoint/resume, and dataset evaluation."""

from __future__ import annotations

import csv
import json
import math
import time
from dataclasses import asdict, dataclass, fields
from pathlib import Path
from typing import Dict, List, Optional, Sequence

import numpy as np

from . import metrics
from .errors import ConfigError, DimensionError, IntegrityError, NonFiniteError
from .losses import FeatureExtractor, LossConfig, objective
from .net import AOSRNet, load_checkpoint, save_checkpoint
from .synth import ROUNDTRIP_TOL_F32, SampleTriple
from .tensor import Tensor

LOG_FIELDS = ("epoch", "step", "l1", "lc", "total", "seconds")


@dataclass
class TrainConfig:
    epochs: int = 100
    lr: float = 1e-3
    batch_size: int = 4
    adam_beta1: float = 0.9
    adam_beta2: float = 0.999
    adam_eps: float = 1e-8
    seed: int = 0
    checkpoint_interval: int = 0
    lr_schedule: str = "constant"
    grad_clip: float = 0.0
    max_steps: int = 0

    def validate(self):
        if self.epochs < 1:
            raise ConfigError(f"epochs must be >= 1, got {self.epochs}")
        if not self.lr > 0:
            raise ConfigError(f"lr must be positive, got {self.lr}")
        if self.batch_size < 1:
            raise ConfigError(f"batch_size must be >= 1, got {self.batch_size}")
        if not (0 <= self.adam_beta1 < 1 and 0 <= self.adam_beta2 < 1):
            raise ConfigError("adam betas must lie in [0, 1)")
        if self.lr_schedule not in ("constant", "cosine"):
            raise ConfigError(f"lr_schedule must be 'constant' or 'cosine', got {self.lr_schedule!r}")
        if self.grad_clip < 0 or self.max_steps < 0 or self.checkpoint_interval < 0:
            raise ConfigError("grad_clip, max_steps and checkpoint_interval must be >= 0")
        return self

    @classmethod
    def from_dict(cls, d):
        known = {f.name for f in fields(cls)}
        unknown = set(d) - known
        if unknown:
            raise ConfigError(f"unknown train config key(s): {sorted(unknown)}")
        return cls(**d).validate()


# -- optimiser ------------------------------------------------------------------

class AdamState:
    def __init__(self, params: Dict[str, Tensor]):
        self.step = 0
        self.m = {k: np.zeros_like(p.data) for k, p in params.items()}
        self.v = {k: np.zeros_like(p.data) for k, p in params.items()}

    def to_arrays(self) -> Dict[str, np.ndarray]:
        out = {"step": np.array([self.step], dtype=np.float64)}
        for k in self.m:
            out[f"m/{k}"] = self.m[k]
            out[f"v/{k}"] = self.v[k]
        return out

    def load_arrays(self, arrays: Dict[str, np.ndarray]):
        self.step = int(arrays["step"][0])
        for k in self.m:
            self.m[k] = arrays[f"m/{k}"].copy()
            self.v[k] = arrays[f"v/{k}"].copy()


def adam_step(params: Dict[str, Tensor], grads: Dict[str, np.ndarray], state: AdamState, lr: float,
              beta1: float = 0.9, beta2: float = 0.999, eps: float = 1e-8):
    """One bias-corrected Adam update, applied in place.

    Checks every gradient before touching any parameter, so a non-finite
    gradient leaves the model unchanged.
    """
    for name, g in grads.items():
        if not np.isfinite(g).all():
            raise NonFiniteError(f"non-finite gradient for parameter '{name}'")
    state.step += 1
    t = state.step
    c1 = 1.0 - beta1 ** t
    c2 = 1.0 - beta2 ** t
    for name, p in params.items():
        g = grads[name]
        m = state.m[name]
        v = state.v[name]
        m *= beta1
        m += (1.0 - beta1) * g
        v *= beta2
        v += (1.0 - beta2) * g * g
        m_hat = m / c1
        v_hat = v / c2
        p.data -= (lr * m_hat / (np.sqrt(v_hat) + eps)).astype(p.dtype, copy=False)


# -- data ---------------------------------------------------------------------------

def _nchw(arrs, dtype):
    return np.ascontiguousarray(np.stack(arrs).transpose(0, 3, 1, 2), dtype=dtype)


def make_batch(triples: Sequence[SampleTriple], dtype):
    return (_nchw([t.i_s for t in triples], dtype), _nchw([t.phi for t in triples], dtype),
            _nchw([t.j_s for t in triples], dtype))


def check_dataset(triples: Sequence[SampleTriple]):
    if not triples:
        raise IntegrityError("dataset is empty")
    shape = triples[0].i_s.shape
    for t in triples:
        if t.i_s.shape != shape or t.phi.shape != shape or t.j_s.shape != shape:
            raise IntegrityError(f"sample {t.meta.get('id', '?')}: inconsistent raster shapes")
        err = t.roundtrip_error()
        if not err <= ROUNDTRIP_TOL_F32:
            raise IntegrityError(f"sample {t.meta.get('id', '?')}: round trip error {err:.3e}")
    if shape[0] % 4 or shape[1] % 4:
        raise DimensionError(f"patch size {shape[:2]} is not divisible by 4")


def epoch_order(seed: int, epoch: int, n: int) -> np.ndarray:
    return np.random.default_rng([int(seed), int(epoch)]).permutation(n)


# -- log -----------------------------------------------------------------------------

class TrainLog:
    def __init__(self):
        self.rows: List[Dict] = []

    def append(self, epoch, step, l1, lc, total, seconds):
        for name, v in (("l1", l1), ("lc", lc), ("total", total)):
            if not math.isfinite(v):
                raise NonFiniteError(f"non-finite {name} loss at epoch {epoch}, step {step}")
        self.rows.append({"epoch": int(epoch), "step": int(step), "l1": float(l1), "lc": float(lc),
                          "total": float(total), "seconds": float(seconds)})

    def epoch_means(self) -> Dict[int, float]:
        out: Dict[int, List[float]] = {}
        for r in self.rows:
            out.setdefault(r["epoch"], []).append(r["total"])
        return {e: float(np.mean(v)) for e, v in out.items()}

    def write_csv(self, path):
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(LOG_FIELDS)
            for r in self.rows:
                w.writerow([r["epoch"], r["step"], repr(r["l1"]), repr(r["lc"]), repr(r["total"]),
                            repr(r["seconds"])])

    def write_jsonl(self, path):
        with open(path, "w") as fh:
            for r in self.rows:
                fh.write(json.dumps(r) + "\n")

    @classmethod
    def read_csv(cls, path):
        log = cls()
        with open(path, newline="") as fh:
            for r in csv.DictReader(fh):
                log.rows.append({"epoch": int(r["epoch"]), "step": int(r["step"]), "l1": float(r["l1"]),
                                 "lc": float(r["lc"]), "total": float(r["total"]),
                                 "seconds": float(r["seconds"])})
        return log


@dataclass
class TrainResult:
    net: AOSRNet
    log: TrainLog
    state: AdamState
    epochs_done: int
    checkpoint: Optional[Path] = None


def _lr_at(cfg: TrainConfig, epoch: int) -> float:
    if cfg.lr_schedule == "cosine":
        return cfg.lr * 0.5 * (1.0 + math.cos(math.pi * epoch / cfg.epochs))
    return cfg.lr


def train(triples: Sequence[SampleTriple], net: AOSRNet, loss_cfg: Optional[LossConfig] = None,
          cfg: Optional[TrainConfig] = None, out_dir=None, resume=None, deterministic: bool = False,
          progress=None) -> TrainResult:
    """Optimise ``net`` on ``triples`` with Adam.

    Each epoch visits the samples in an order seeded by ``(seed, epoch)``, so
    a run resumed from an epoch checkpoint continues exactly as the
    uninterrupted run would.  With ``deterministic`` the elapsed-time column
    of the log is written as 0 to keep log files byte-stable.
    """
    loss_cfg = (loss_cfg or LossConfig()).validate()
    cfg = (cfg or TrainConfig()).validate()
    check_dataset(triples)
    dtype = np.dtype(net.config.dtype)
    fe = FeatureExtractor.from_config(loss_cfg, dtype)
    state = AdamState(net.params)
    log = TrainLog()
    start_epoch = 0
    if resume is not None:
        loaded, side, optim = load_checkpoint(resume)
        if asdict(loaded.config) != asdict(net.config):
            raise ConfigError("checkpoint network config differs from the requested one")
        net.load_state_dict(loaded.state_dict())
        if optim:
            state.load_arrays(optim)
        start_epoch = int(side.get("epoch", 0))
        prev = Path(str(resume) + ".log.csv")
        if prev.exists():
            log = TrainLog.read_csv(prev)
    out_dir = Path(out_dir) if out_dir is not None else None
    if out_dir is not None:
        out_dir.mkdir(parents=True, exist_ok=True)

    n = len(triples)
    t0 = time.perf_counter()
    step = state.step
    last_ckpt = None
    epochs_done = start_epoch
    for epoch in range(start_epoch, cfg.epochs):
        lr = _lr_at(cfg, epoch)
        order = epoch_order(cfg.seed, epoch, n)
        for b in range(0, n, cfg.batch_size):
            if cfg.max_steps and step >= cfg.max_steps:
                break
            batch = [triples[k] for k in order[b:b + cfg.batch_size]]
            i_s, phi, j_s = make_batch(batch, dtype)
            net.zero_grad()
            out = net.forward(i_s)
            total, l1, lc = objective(out, phi, j_s, i_s, loss_cfg, fe)
            if not np.isfinite(total.data).all():
                raise NonFiniteError(f"non-finite loss at epoch {epoch}, step {step}")
            total.backward()
            grads = {k: p.grad for k, p in net.params.items()}
            if cfg.grad_clip > 0:
                norm = math.sqrt(sum(float((g.astype(np.float64) ** 2).sum()) for g in grads.values()))
                if norm > cfg.grad_clip:
                    grads = {k: g * (cfg.grad_clip / norm) for k, g in grads.items()}
            adam_step(net.params, grads, state, lr, cfg.adam_beta1, cfg.adam_beta2, cfg.adam_eps)
            step += 1
            elapsed = 0.0 if deterministic else time.perf_counter() - t0
            log.append(epoch, step, l1.item(), lc.item(), total.item(), elapsed)
            if progress is not None:
                progress(log.rows[-1])
        epochs_done = epoch + 1
        if out_dir is not None and cfg.checkpoint_interval and epochs_done % cfg.checkpoint_interval == 0:
            last_ckpt = _save(out_dir / f"epoch{epochs_done:04d}.ckpt", net, state, epochs_done, cfg, loss_cfg, log)
        if cfg.max_steps and step >= cfg.max_steps:
            break
    if out_dir is not None:
        last_ckpt = _save(out_dir / "model.ckpt", net, state, epochs_done, cfg, loss_cfg, log)
        log.write_csv(out_dir / "train_log.csv")
        log.write_jsonl(out_dir / "train_log.jsonl")
    return TrainResult(net, log, state, epochs_done, last_ckpt)


def _save(path, net, state, epoch, cfg, loss_cfg, log):
    extra = {"train_config": asdict(cfg), "loss_config": {**asdict(loss_cfg),
                                                          "fe_channels": list(loss_cfg.fe_channels)}}
    save_checkpoint(path, net, state.to_arrays(), epoch=epoch, master_seed=cfg.seed, extra=extra)
    log.write_csv(str(path) + ".log.csv")
    return path


# -- evaluation ------------------------------------------------------------------------

EVAL_FIELDS = ("id", "psnr_restored", "ssim_restored", "ciede2000_restored",
               "psnr_degraded", "ssim_degraded", "ciede2000_degraded", "delta_psnr")


@dataclass
class EvalReport:
    rows: List[Dict]

    @property
    def mean(self) -> Dict[str, float]:
        keys = [k for k in EVAL_FIELDS if k != "id" and all(k in r for r in self.rows)]
        return {k: float(np.mean([r[k] for r in self.rows])) for k in keys}

    def to_json(self):
        return {"samples": self.rows, "mean": self.mean, "count": len(self.rows)}

    def write(self, json_path, csv_path=None):
        Path(json_path).write_text(json.dumps(self.to_json(), indent=2) + "\n")
        if csv_path is not None:
            with open(csv_path, "w", newline="") as fh:
                present = [k for k in EVAL_FIELDS if any(k in r for r in self.rows)]
                w = csv.DictWriter(fh, fieldnames=present, extrasaction="ignore")
                w.writeheader()
                for r in self.rows:
                    w.writerow(r)


def evaluate(net: AOSRNet, triples: Sequence[SampleTriple], batch_size: int = 8) -> EvalReport:
    """Score restored and degraded images against the clear ones.

    Images are clamped to [0, 1] before scoring, as they would be on export.
    """
    if not triples:
        raise IntegrityError("nothing to evaluate")
    dtype = np.dtype(net.config.dtype)
    rows = []
    for b in range(0, len(triples), batch_size):
        chunk = triples[b:b + batch_size]
        i_s, _, _ = make_batch(chunk, dtype)
        out = net.forward(i_s)
        restored = out.j.data.transpose(0, 2, 3, 1)
        for t, rec in zip(chunk, restored):
            gt = np.clip(t.j_s.astype(np.float64), 0, 1)
            r = metrics.compare(np.clip(rec.astype(np.float64), 0, 1), gt)
            d = metrics.compare(np.clip(t.i_s.astype(np.float64), 0, 1), gt)
            rows.append({"id": t.meta.get("id", str(len(rows))),
                         "psnr_restored": r.psnr_db, "ssim_restored": r.ssim, "ciede2000_restored": r.ciede2000,
                         "psnr_degraded": d.psnr_db, "ssim_degraded": d.ssim, "ciede2000_degraded": d.ciede2000,
                         "delta_psnr": r.psnr_db - d.psnr_db})
    return EvalReport(rows)
