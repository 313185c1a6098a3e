"""Pointwise proximal maps for the edge penalties.

Both maps act on a vector field pixel by pixel and only through the Euclidean
magnitude ``t = |w_ij|``, returning ``scale(t) * w_ij``.

* ``shrink_vec`` is the prox of ``thresh * |.|``: magnitudes at most
  ``thresh`` collapse to zero, larger ones shorten by ``thresh``.
* ``mtv_prox`` is the prox of the log-tempered penalty

      pot_a(t) = t^2 / (2a)                    for t <= a,
               = a ln t + a/2 - a ln a         for t >  a,

  which is C^1 at ``t = a`` and grows only logarithmically, so large
  gradients are penalized far less than under plain TV.  For ``r > 1/a`` the
  prox of ``pot_a + (r/2)(. - w)^2`` is single valued and continuous:

      scale = ra / (ra + 1)                                    |w| <= a + 1/r,
      scale = (1 + sqrt(1 - 4a / (r |w|^2))) / 2               |w| >  a + 1/r.

  The switch point is where both branches meet at magnitude ``a``; the outer
  branch takes the larger root of ``r s^2 - r |w| s + a = 0`` (the smaller
  root is a local maximum of the pointwise objective).
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .grid import VectorField

__all__ = ["MtvParams", "shrink_vec", "mtv_potential", "mtv_prox"]


@dataclass(frozen=True)
class MtvParams:
    """Threshold ``a`` and coupling weight ``r`` for the log-tempered prox."""

    a: float
    r: float

    def __post_init__(self) -> None:
        if not (self.a > 0.0 and math.isfinite(self.a)):
            raise ValueError(f"a must be positive and finite, got {self.a}")
        if not (self.r > 0.0 and math.isfinite(self.r)):
            raise ValueError(f"r must be positive and finite, got {self.r}")
        if self.r * self.a <= 1.0:
            raise ValueError(
                f"need r > 1/a for a single-valued prox, got r={self.r}, a={self.a}"
            )


def _shrink_pair(
    wx: np.ndarray, wy: np.ndarray, thresh: float
) -> tuple[np.ndarray, np.ndarray]:
    mag = np.hypot(wx, wy)
    scale = np.maximum(mag - thresh, 0.0) / np.where(mag > 0.0, mag, 1.0)
    return scale * wx, scale * wy


def _mtv_scale(mag: np.ndarray, a: float, r: float) -> np.ndarray:
    inner = r * a / (r * a + 1.0)
    safe = np.where(mag > 0.0, mag, 1.0)
    disc = np.maximum(1.0 - 4.0 * a / (r * safe * safe), 0.0)
    outer = 0.5 * (1.0 + np.sqrt(disc))
    return np.where(mag <= a + 1.0 / r, inner, outer)


def _mtv_prox_pair(
    wx: np.ndarray, wy: np.ndarray, a: float, r: float
) -> tuple[np.ndarray, np.ndarray]:
    scale = _mtv_scale(np.hypot(wx, wy), a, r)
    return scale * wx, scale * wy


def shrink_vec(m: VectorField, thresh: float) -> VectorField:
    """Pixelwise Euclidean soft shrinkage by ``thresh >= 0``."""
    if thresh < 0.0 or not math.isfinite(thresh):
        raise ValueError(f"thresh must be nonnegative and finite, got {thresh}")
    px, py = _shrink_pair(m.x, m.y, thresh)
    return VectorField(px, py, m.h)


def mtv_potential(t, a: float):
    """The log-tempered edge penalty evaluated at magnitude ``|t|``."""
    if a <= 0.0 or not math.isfinite(a):
        raise ValueError(f"a must be positive and finite, got {a}")
    t = np.abs(np.asarray(t, dtype=np.float64))
    safe = np.where(t > a, t, a)
    out = np.where(
        t <= a,
        t * t / (2.0 * a),
        a * np.log(safe) + 0.5 * a - a * math.log(a),
    )
    return out if out.ndim else float(out)


def mtv_prox(w: VectorField, params: MtvParams) -> VectorField:
    """Pixelwise prox of ``pot_a + (r/2) | . - w |^2``."""
    px, py = _mtv_prox_pair(w.x, w.y, params.a, params.r)
    return VectorField(px, py, w.h)
