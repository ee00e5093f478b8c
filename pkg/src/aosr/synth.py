"""Training-triple synthesis, patch cropping and on-disk datasets.

A triple is (degraded image, integrated-variable field, clear image).  Each
sample draws an attenuation coefficient, a sand-tone airlight and a depth
field, degrades the clear patch with the scattering model and computes the
field that restores it exactly.

Scene depth comes from procedural fields or from user-supplied rasters.
Airlight is drawn uniformly from a per-channel box; the default box keeps
every channel at or below 0.75, which bounds ``|phi|`` by ``1 / t <= 1.83``
for clear images in [0, 1] (brighter airlight can drive ``I`` onto
``alpha`` and make the field singular).
"""

from __future__ import annotations

import json
import time
from dataclasses import dataclass, field
from pathlib import Path
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np
from PIL import Image as PILImage

from . import imaging
from .errors import DimensionError, DomainError, FormatError, IntegrityError
from .imaging import Airlight, ControlCoeffs
from .stf import read_stf, write_stf

DEPTH_KINDS = ("ramp_h", "ramp_v", "radial", "fractal_noise")
DEFAULT_SAND_BOX = ((0.60, 0.75), (0.45, 0.65), (0.20, 0.45))
BETA_RANGE = (0.3, 0.6)
MANIFEST_VERSION = 1
ROUNDTRIP_TOL_F32 = 1e-5


# -- parameter sampling --------------------------------------------------------

def _normalize(field_):
    lo, hi = field_.min(), field_.max()
    if hi - lo <= 0:
        return np.zeros_like(field_)
    return (field_ - lo) / (hi - lo)


def _value_noise(rng, h, w, octaves=5):
    out = np.zeros((h, w))
    ys = np.linspace(0.0, 1.0, h)
    xs = np.linspace(0.0, 1.0, w)
    for o in range(octaves):
        cells = 2 ** (o + 1) + 1
        grid = rng.random((cells, cells))
        gy = ys * (cells - 1)
        gx = xs * (cells - 1)
        y0 = np.minimum(gy.astype(int), cells - 2)
        x0 = np.minimum(gx.astype(int), cells - 2)
        fy = (gy - y0)[:, None]
        fx = (gx - x0)[None, :]
        # smoothstep fade between lattice values
        fy = fy * fy * (3 - 2 * fy)
        fx = fx * fx * (3 - 2 * fx)
        v00 = grid[y0][:, x0]
        v01 = grid[y0][:, x0 + 1]
        v10 = grid[y0 + 1][:, x0]
        v11 = grid[y0 + 1][:, x0 + 1]
        top = v00 * (1 - fx) + v01 * fx
        bot = v10 * (1 - fx) + v11 * fx
        out += (top * (1 - fy) + bot * fy) * 0.5 ** o
    return out


def generate_depth(kind: str, seed: int, h: int, w: int) -> np.ndarray:
    """Deterministic depth field in [0, 1] of shape ``(h, w)``."""
    if h < 1 or w < 1:
        raise DimensionError(f"degenerate depth size {h}x{w}")
    if kind == "ramp_h":
        d = np.broadcast_to(np.arange(w, dtype=np.float64)[None, :], (h, w))
    elif kind == "ramp_v":
        d = np.broadcast_to(np.arange(h, dtype=np.float64)[:, None], (h, w))
    elif kind == "radial":
        yy, xx = np.mgrid[0:h, 0:w].astype(np.float64)
        d = np.hypot(yy - (h - 1) / 2, xx - (w - 1) / 2)
    elif kind == "fractal_noise":
        d = _value_noise(np.random.default_rng(seed), h, w)
    else:
        raise DomainError(f"unknown depth kind '{kind}', expected one of {DEPTH_KINDS}")
    return _normalize(np.array(d, dtype=np.float64))


def validate_box(box):
    box = tuple(tuple(float(v) for v in ch) for ch in box)
    if len(box) != 3 or any(len(ch) != 2 for ch in box):
        raise DomainError(f"airlight box needs three (lo, hi) pairs, got {box}")
    for lo, hi in box:
        if not (0.0 <= lo <= hi <= 1.0):
            raise DomainError(f"invalid airlight box channel ({lo}, {hi})")
    return box


def sample_airlight(rng: np.random.Generator, box=DEFAULT_SAND_BOX) -> Tuple[float, float, float]:
    box = validate_box(box)
    lo = np.array([ch[0] for ch in box])
    hi = np.array([ch[1] for ch in box])
    return tuple(float(v) for v in lo + (hi - lo) * rng.random(3))


def sample_rng(master_seed: int, index: int) -> np.random.Generator:
    """Independent stream for one sample, derived from (master seed, index)."""
    return np.random.default_rng([int(master_seed), int(index)])


@dataclass
class SynthParams:
    beta_atten: float
    a_s: Tuple[float, float, float]
    depth_kind: str = "fractal_noise"
    depth_seed: int = 0
    depth_path: Optional[str] = None

    def __post_init__(self):
        self.a_s = tuple(float(v) for v in self.a_s)
        if not self.beta_atten > 0:
            raise DomainError(f"beta_atten must be positive, got {self.beta_atten}")


def sample_params(rng: np.random.Generator, beta_range=BETA_RANGE, box=DEFAULT_SAND_BOX,
                  depth_kind: str = "random") -> SynthParams:
    lo, hi = beta_range
    if not 0 < lo <= hi:
        raise DomainError(f"invalid beta range ({lo}, {hi})")
    beta = float(lo + (hi - lo) * rng.random())
    a_s = sample_airlight(rng, box)
    if depth_kind == "random":
        depth_kind = DEPTH_KINDS[int(rng.integers(len(DEPTH_KINDS)))]
    seed = int(rng.integers(0, 2 ** 63 - 1))
    return SynthParams(beta_atten=beta, a_s=a_s, depth_kind=depth_kind, depth_seed=seed)


# -- triples -------------------------------------------------------------------

@dataclass
class SampleTriple:
    i_s: np.ndarray
    phi: np.ndarray
    j_s: np.ndarray
    meta: Dict = field(default_factory=dict)
    created: float = field(default_factory=time.time)

    def roundtrip_error(self, c: Optional[ControlCoeffs] = None) -> float:
        c = c or ControlCoeffs(self.meta.get("alpha", 1.6), self.meta.get("beta_ctrl", 1.0))
        return float(np.max(np.abs(imaging.restore(self.i_s, self.phi, c) - self.j_s)))


def synthesize_triple(j, p: SynthParams, c: ControlCoeffs = ControlCoeffs(), depth=None,
                      sample_id: str = "") -> SampleTriple:
    """Degrade ``j`` with parameters ``p`` and derive its ground-truth field.

    Arithmetic runs in the dtype of ``j``.  ``depth`` overrides the
    procedural field (supplied depth rasters).
    """
    j = np.asarray(j)
    if j.ndim != 3 or j.shape[2] != 3:
        raise DimensionError(f"clear image must be H x W x 3, got {j.shape}")
    if j.min() < 0 or j.max() > 1:
        raise DomainError("clear image values must lie in [0, 1]")
    h, w = j.shape[:2]
    if depth is None:
        depth = generate_depth(p.depth_kind, p.depth_seed, h, w)
    elif depth.shape != (h, w):
        raise DimensionError(f"depth shape {depth.shape} does not match image {(h, w)}")
    t = imaging.transmission(depth, p.beta_atten).astype(j.dtype)
    air = Airlight(p.a_s)
    i_s = imaging.synthesize(j, air, t)
    phi = imaging.compute_phi(i_s, air, t, c)
    meta = {
        "id": sample_id,
        "beta_atten": float(p.beta_atten),
        "airlight": list(p.a_s),
        "depth_kind": p.depth_kind if p.depth_path is None else "supplied",
        "seed": int(p.depth_seed),
        "alpha": float(c.alpha),
        "beta_ctrl": float(c.beta_ctrl),
        "height": int(h),
        "width": int(w),
    }
    if p.depth_path is not None:
        meta["depth_path"] = str(p.depth_path)
    return SampleTriple(i_s=i_s, phi=phi, j_s=j, meta=meta)


def crop_patches(img, size: int, stride: Optional[int] = None) -> List[np.ndarray]:
    """Top-left aligned grid of ``size x size`` patches; the remainder is dropped."""
    img = np.asarray(img)
    stride = size if stride is None else stride
    h, w = img.shape[:2]
    if size < 1 or stride < 1:
        raise DimensionError(f"patch size and stride must be positive, got {size}, {stride}")
    if size > min(h, w):
        raise DimensionError(f"patch size {size} exceeds image size {h}x{w}")
    return [img[y:y + size, x:x + size].copy()
            for y in range(0, h - size + 1, stride)
            for x in range(0, w - size + 1, stride)]


def generate_scene(seed: int, h: int, w: int) -> np.ndarray:
    """Procedural clear image: sky gradient, ground band and random shapes.

    Handy when no photographs are at hand; values are in [0, 1].
    """
    rng = np.random.default_rng(seed)
    yy, xx = np.mgrid[0:h, 0:w].astype(np.float64)
    yn, xn = yy / max(h - 1, 1), xx / max(w - 1, 1)
    top, bottom = rng.random(3), rng.random(3)
    img = top[None, None, :] * (1 - yn[..., None]) + bottom[None, None, :] * yn[..., None]
    horizon = rng.uniform(0.4, 0.8)
    ground = rng.random(3) * 0.8
    img = np.where((yn > horizon + 0.05 * np.sin(6 * xn + rng.random() * 6))[..., None], ground, img)
    for _ in range(int(rng.integers(3, 8))):
        color = rng.random(3)
        cy, cx = rng.random(2)
        ry, rx = rng.uniform(0.05, 0.3, 2)
        if rng.random() < 0.5:
            mask = ((yn - cy) / ry) ** 2 + ((xn - cx) / rx) ** 2 <= 1
        else:
            mask = (np.abs(yn - cy) <= ry) & (np.abs(xn - cx) <= rx)
        img[mask] = color
    texture = _value_noise(rng, h, w, octaves=4)
    img = img * (0.85 + 0.3 * (_normalize(texture)[..., None] - 0.5))
    return np.clip(img, 0.0, 1.0)


# -- image I/O -----------------------------------------------------------------

def to_bytes(img) -> np.ndarray:
    return np.round(np.clip(np.asarray(img, dtype=np.float64), 0.0, 1.0) * 255.0).astype(np.uint8)


def save_png(path, img):
    arr = np.asarray(img)
    if arr.ndim == 2:
        PILImage.fromarray(to_bytes(arr), mode="L").save(path)
    else:
        PILImage.fromarray(to_bytes(arr), mode="RGB").save(path)


def load_png(path, dtype=np.float32) -> np.ndarray:
    with PILImage.open(path) as im:
        arr = np.asarray(im.convert("RGB"), dtype=np.uint8)
    return (arr.astype(np.float64) / 255.0).astype(dtype)


def load_gray_png(path) -> np.ndarray:
    with PILImage.open(path) as im:
        arr = np.asarray(im.convert("L"), dtype=np.uint8)
    return arr.astype(np.float64) / 255.0


def phi_preview(phi) -> np.ndarray:
    """Map a field to [0, 1] for viewing (min-max over the whole raster)."""
    return _normalize(np.asarray(phi, dtype=np.float64))


# -- persistence -----------------------------------------------------------------

META_KEYS = ("id", "beta_atten", "airlight", "depth_kind", "seed", "alpha", "beta_ctrl", "height", "width")


def sample_files(sample_id: str) -> Dict[str, str]:
    return {
        "i_s": f"{sample_id}_I.stf",
        "phi": f"{sample_id}_phi.stf",
        "j_s": f"{sample_id}_J.stf",
        "meta": f"{sample_id}.json",
    }


def write_sample(directory, sample_id: str, triple: SampleTriple) -> Dict[str, str]:
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    files = sample_files(sample_id)
    write_stf(directory / files["i_s"], np.asarray(triple.i_s, dtype=np.float32))
    write_stf(directory / files["phi"], np.asarray(triple.phi, dtype=np.float32))
    write_stf(directory / files["j_s"], np.asarray(triple.j_s, dtype=np.float32))
    meta = dict(triple.meta)
    meta["id"] = sample_id
    (directory / files["meta"]).write_text(json.dumps(meta, indent=2, sort_keys=True) + "\n")
    return files


def read_sample(directory, sample_id: str, verify: bool = False) -> SampleTriple:
    directory = Path(directory)
    files = sample_files(sample_id)
    try:
        meta = json.loads((directory / files["meta"]).read_text())
    except json.JSONDecodeError as exc:
        raise FormatError(f"sample {sample_id}: metadata is not valid JSON") from exc
    missing = [k for k in META_KEYS if k not in meta]
    if missing:
        raise FormatError(f"sample {sample_id}: metadata lacks keys {missing}")
    i_s = read_stf(directory / files["i_s"])
    phi = read_stf(directory / files["phi"])
    j_s = read_stf(directory / files["j_s"])
    shape = (meta["height"], meta["width"], 3)
    for name, arr in (("I", i_s), ("phi", phi), ("J", j_s)):
        if arr.shape != shape:
            raise FormatError(f"sample {sample_id}: {name} has shape {arr.shape}, metadata says {shape}")
    triple = SampleTriple(i_s=i_s, phi=phi, j_s=j_s, meta=meta)
    if verify:
        err = triple.roundtrip_error()
        if not err <= ROUNDTRIP_TOL_F32:
            raise IntegrityError(f"sample {sample_id}: restore round trip error {err:.3e} exceeds "
                                 f"{ROUNDTRIP_TOL_F32}")
    return triple


@dataclass
class DatasetManifest:
    version: int
    patch_size: int
    samples: List[Dict]

    @property
    def count(self):
        return len(self.samples)

    def to_json(self):
        return {"version": self.version, "count": self.count, "patch_size": self.patch_size,
                "samples": self.samples}

    def write(self, directory):
        path = Path(directory) / "manifest.json"
        path.write_text(json.dumps(self.to_json(), indent=2, sort_keys=True) + "\n")
        return path

    @classmethod
    def read(cls, directory):
        path = Path(directory) / "manifest.json"
        try:
            raw = json.loads(path.read_text())
        except json.JSONDecodeError as exc:
            raise FormatError(f"{path}: not valid JSON") from exc
        for key in ("version", "count", "patch_size", "samples"):
            if key not in raw:
                raise FormatError(f"{path}: missing key '{key}'")
        if raw["version"] != MANIFEST_VERSION:
            raise FormatError(f"{path}: unsupported version {raw['version']}")
        if raw["count"] != len(raw["samples"]):
            raise IntegrityError(f"{path}: count {raw['count']} but {len(raw['samples'])} samples listed")
        return cls(raw["version"], raw["patch_size"], raw["samples"])


def list_pngs(directory) -> List[Path]:
    return sorted(p for p in Path(directory).iterdir() if p.suffix.lower() == ".png" and p.is_file())


def build_dataset(clear_images: Sequence[np.ndarray], out_dir, count: int, seed: int, patch_size: int = 64,
                  beta_range=BETA_RANGE, box=DEFAULT_SAND_BOX, depth_kind: str = "random",
                  depth_maps: Optional[Sequence[np.ndarray]] = None,
                  depth_paths: Optional[Sequence[str]] = None,
                  c: ControlCoeffs = ControlCoeffs(), verify: bool = False,
                  previews: bool = True) -> DatasetManifest:
    """Synthesise ``count`` triples from patches of ``clear_images``.

    Sample ``k`` uses patch ``k mod P`` of the concatenated patch list and a
    random stream seeded by ``(seed, k)``, so output is bit-reproducible.
    """
    if count < 1:
        raise DomainError(f"count must be positive, got {count}")
    lo, hi = beta_range
    if not 0 < lo <= hi:
        raise DomainError(f"invalid beta range ({lo}, {hi})")
    validate_box(box)
    patches, dpatches, dsources = [], [], []
    for n, img in enumerate(clear_images):
        img = np.asarray(img, dtype=np.float32)
        if min(img.shape[:2]) < patch_size:
            continue
        ps = crop_patches(img, patch_size)
        patches.extend((n, k, p) for k, p in enumerate(ps))
        if depth_maps is not None:
            dpatches.extend(_normalize(d) for d in crop_patches(depth_maps[n], patch_size))
            dsources.extend([depth_paths[n] if depth_paths else f"image{n}"] * len(ps))
    if not patches:
        raise DimensionError(f"no input image is at least {patch_size}x{patch_size}")

    out_dir = Path(out_dir)
    sample_dir = out_dir / "samples"
    preview_dir = out_dir / "preview"
    sample_dir.mkdir(parents=True, exist_ok=True)
    if previews:
        preview_dir.mkdir(parents=True, exist_ok=True)
    entries = []
    for k in range(count):
        rng = sample_rng(seed, k)
        p = sample_params(rng, beta_range, box, depth_kind)
        src, patch_idx, j = patches[k % len(patches)]
        depth = None
        if depth_maps is not None:
            depth = dpatches[k % len(patches)]
            p.depth_path = dsources[k % len(patches)]
        sid = f"s{k:05d}"
        triple = synthesize_triple(j, p, c, depth=depth, sample_id=sid)
        triple.meta["source"] = {"image": int(src), "patch": int(patch_idx)}
        if depth is not None:
            # keep the exact depth patch so the sample can be restored analytically
            triple.meta["depth_file"] = f"{sid}_depth.stf"
            write_stf(sample_dir / triple.meta["depth_file"], np.asarray(depth, dtype=np.float64))
        files = write_sample(sample_dir, sid, triple)
        if verify:
            read_sample(sample_dir, sid, verify=True)
        if previews:
            save_png(preview_dir / f"{sid}_I.png", triple.i_s)
            save_png(preview_dir / f"{sid}_J.png", triple.j_s)
            save_png(preview_dir / f"{sid}_phi.png", phi_preview(triple.phi))
        entries.append({"id": sid, "files": {k_: f"samples/{v}" for k_, v in files.items()},
                        "beta_atten": triple.meta["beta_atten"], "airlight": triple.meta["airlight"],
                        "depth_kind": triple.meta["depth_kind"]})
    manifest = DatasetManifest(MANIFEST_VERSION, patch_size, entries)
    manifest.write(out_dir)
    return manifest


def load_dataset(directory, verify: bool = False) -> List[SampleTriple]:
    directory = Path(directory)
    manifest = DatasetManifest.read(directory)
    out = []
    for entry in manifest.samples:
        meta_path = directory / entry["files"]["meta"]
        out.append(read_sample(meta_path.parent, entry["id"], verify=verify))
    return out
