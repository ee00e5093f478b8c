"""Sand-dust scattering model and its re-parameterised inverse.

Images are ``H x W x 3`` float arrays treated as linear values in [0, 1];
nothing here clamps, so synthesis followed by restoration is exact up to
rounding.  Two different coefficients share the Greek letter beta in the
literature, so the attenuation coefficient is ``beta_atten`` and the
restoration offset is ``beta_ctrl`` throughout.

The forward model is::

    I = A + (J - (1 - A)) * t,        t = exp(-beta_atten * d)

and the restoration folds ``A`` and ``t`` into one per-pixel field::

    J = phi * (I - alpha) + beta_ctrl
    phi = (I - A + t * ((1 - A) - beta_ctrl)) / (t * (I - alpha))
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import DimensionError, DomainError, SingularityError

PHI_DENOM_EPS = 1e-6
TRANSMISSION_EPS = 1e-6


@dataclass(frozen=True)
class ControlCoeffs:
    alpha: float = 1.6
    beta_ctrl: float = 1.0

    def __post_init__(self):
        if not self.alpha > 1.0:
            raise DomainError(f"alpha must exceed 1, got {self.alpha}")


@dataclass(frozen=True)
class Airlight:
    """Global colour deviation ``a_s`` and its complement ``1 - a_s``."""

    a_s: tuple

    def __post_init__(self):
        object.__setattr__(self, "a_s", tuple(float(v) for v in self.a_s))
        complementary(self.a_s)

    @property
    def a_s_comp(self):
        return complementary(self.a_s)

    def as_array(self, dtype=np.float64):
        return np.asarray(self.a_s, dtype=dtype)


def complementary(a_s) -> tuple:
    a = np.asarray(a_s, dtype=np.float64)
    if a.shape != (3,):
        raise DimensionError(f"airlight needs shape (3,), got {a.shape}")
    if np.any(a < 0) or np.any(a > 1) or not np.isfinite(a).all():
        raise DomainError(f"airlight components must lie in [0, 1], got {a.tolist()}")
    return tuple(float(v) for v in 1.0 - a)


def _as_image(x, name):
    arr = np.asarray(x)
    if arr.ndim != 3 or arr.shape[2] != 3:
        raise DimensionError(f"{name} must be H x W x 3, got shape {arr.shape}")
    return arr


def _as_field(t, shape, name="transmission"):
    arr = np.asarray(t)
    if arr.ndim == 3 and arr.shape[2] == 1:
        arr = arr[..., 0]
    if arr.ndim == 0:
        return arr
    if arr.shape != shape[:2]:
        raise DimensionError(f"{name} shape {arr.shape} does not match image {shape[:2]}")
    return arr[..., None]


def _air(air, dtype):
    a_s = air.a_s if isinstance(air, Airlight) else air
    comp = complementary(a_s)
    return np.asarray(a_s, dtype=dtype), np.asarray(comp, dtype=dtype)


def transmission(depth, beta_atten: float):
    """``exp(-beta_atten * depth)`` pointwise."""
    if not beta_atten > 0:
        raise DomainError(f"beta_atten must be positive, got {beta_atten}")
    d = np.asarray(depth)
    if not np.isfinite(d).all():
        raise DomainError("depth contains non-finite values")
    if d.size and (d.min() < 0 or d.max() > 1):
        raise DomainError(f"depth must be normalised to [0, 1], got range [{d.min()}, {d.max()}]")
    return np.exp(-beta_atten * d)


def synthesize(j, air, t):
    """Degrade a clear image: ``A + (J - A') * t`` per channel, unclamped."""
    j = _as_image(j, "clear image")
    a, a_comp = _air(air, j.dtype)
    tt = _as_field(t, j.shape).astype(j.dtype, copy=False)
    return a + (j - a_comp) * tt


def compute_phi(i, air, t, c: ControlCoeffs = ControlCoeffs()):
    """Integrated variable that maps ``i`` back to its clear image.

    Raises :class:`SingularityError` naming the first pixel where the
    denominator ``t * (i - alpha)`` is smaller than 1e-6 in magnitude.
    """
    i = _as_image(i, "degraded image")
    a, a_comp = _air(air, i.dtype)
    tt = _as_field(t, i.shape).astype(i.dtype, copy=False)
    den = tt * (i - c.alpha)
    small = np.abs(den) < PHI_DENOM_EPS
    if small.any():
        y, x, ch = (int(v) for v in np.argwhere(small)[0])
        raise SingularityError(f"phi denominator vanishes at pixel (row={y}, col={x}, channel={ch})",
                               index=(y, x, ch))
    num = i - a + tt * (a_comp - c.beta_ctrl)
    return num / den


def restore(i, phi, c: ControlCoeffs = ControlCoeffs()):
    """``phi * (i - alpha) + beta_ctrl``; the network's post-restoring step."""
    i = _as_image(i, "degraded image")
    phi = np.asarray(phi)
    if phi.shape != i.shape:
        raise DimensionError(f"phi shape {phi.shape} does not match image {i.shape}")
    return phi * (i - c.alpha) + c.beta_ctrl


def restore_classic(i, air, t):
    """Direct inversion ``(i - A) / t + A'``; cross-check for :func:`restore`."""
    i = _as_image(i, "degraded image")
    a, a_comp = _air(air, i.dtype)
    tt = _as_field(t, i.shape).astype(i.dtype, copy=False)
    small = np.broadcast_to(tt < TRANSMISSION_EPS, i.shape)
    if small.any():
        y, x, ch = (int(v) for v in np.argwhere(small)[0])
        raise SingularityError(f"transmission below {TRANSMISSION_EPS} at pixel (row={y}, col={x})",
                               index=(y, x))
    return (i - a) / tt + a_comp
