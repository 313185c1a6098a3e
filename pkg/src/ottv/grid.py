"""Square-grid fields, finite-difference stencils, and circular convolution.

Conventions, fixed here and relied on by every solver:

* Images are square ``n x n`` float64 arrays indexed ``(i, j)``; axis 0 is the
  x direction, and both axes share the uniform spacing ``h``.
* The transport side works with flux fields ``m = (x, y)`` whose divergence
  uses backward differences with zero boundary flux.  Row ``n-1`` of the x
  component and column ``n-1`` of the y component never enter that stencil,
  so optimal fluxes keep them at zero.  ``grad_adjoint_dirichlet`` is the
  exact negative transpose of the divergence, which makes the discrete
  integration-by-parts identity ``<div m, phi> = -<m, grad phi>`` hold to
  rounding error rather than to discretization error.
* The cartoon side uses forward differences with periodic wraparound, so the
  composed Laplacian and any blur kernel diagonalize under the DFT.
* Convolution kernels are center-aligned tap grids on the full image grid.
  ``convolve`` is circular; ``convolve_adjoint`` applies the conjugate
  spectrum.  The identity kernel short-circuits to an exact identity map.

Plain-array variants of the stencils (prefixed with an underscore) are used
inside solver loops; the field-typed wrappers validate that operands share an
identical grid.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

__all__ = [
    "ScalarField",
    "VectorField",
    "Kernel",
    "identity_kernel",
    "gaussian_kernel",
    "div_dirichlet",
    "grad_adjoint_dirichlet",
    "grad_periodic",
    "div_periodic",
    "convolve",
    "convolve_adjoint",
    "inner",
    "norm_l2",
    "norm_12",
]


def _validated_grid(data: np.ndarray, what: str) -> np.ndarray:
    arr = np.array(data, dtype=np.float64, copy=True)
    if arr.ndim != 2 or arr.shape[0] != arr.shape[1]:
        raise ValueError(f"{what} must be a square 2-d array, got shape {arr.shape}")
    if arr.shape[0] < 2:
        raise ValueError(f"{what} needs n >= 2, got n = {arr.shape[0]}")
    if not np.all(np.isfinite(arr)):
        raise ValueError(f"{what} contains non-finite values")
    arr.setflags(write=False)
    return arr


def _validated_h(h: float) -> float:
    h = float(h)
    if not math.isfinite(h) or h <= 0.0:
        raise ValueError(f"grid spacing must be positive and finite, got {h}")
    return h


@dataclass(frozen=True, eq=False)
class ScalarField:
    """An immutable n-by-n image with uniform grid spacing ``h``."""

    data: np.ndarray
    h: float = 1.0

    def __post_init__(self) -> None:
        object.__setattr__(self, "data", _validated_grid(self.data, "ScalarField"))
        object.__setattr__(self, "h", _validated_h(self.h))

    @property
    def n(self) -> int:
        return self.data.shape[0]

    def with_data(self, data: np.ndarray) -> "ScalarField":
        """A new field on the same grid holding ``data``."""
        return ScalarField(data, self.h)


@dataclass(frozen=True, eq=False)
class VectorField:
    """An immutable pair of n-by-n component grids (x along axis 0)."""

    x: np.ndarray
    y: np.ndarray
    h: float = 1.0

    def __post_init__(self) -> None:
        x = _validated_grid(self.x, "VectorField.x")
        y = _validated_grid(self.y, "VectorField.y")
        if x.shape != y.shape:
            raise ValueError(f"component shapes differ: {x.shape} vs {y.shape}")
        object.__setattr__(self, "x", x)
        object.__setattr__(self, "y", y)
        object.__setattr__(self, "h", _validated_h(self.h))

    @property
    def n(self) -> int:
        return self.x.shape[0]


def _require_same_grid(a, b) -> None:
    if a.n != b.n or a.h != b.h:
        raise ValueError(
            f"operands live on different grids: (n={a.n}, h={a.h}) vs (n={b.n}, h={b.h})"
        )


# ---------------------------------------------------------------------------
# stencils on plain arrays (solver loops call these directly)

def _div_dirichlet(mx: np.ndarray, my: np.ndarray, h: float) -> np.ndarray:
    out = np.empty_like(mx)
    out[0, :] = mx[0, :]
    out[1:-1, :] = mx[1:-1, :] - mx[:-2, :]
    out[-1, :] = -mx[-2, :]
    out[:, 0] += my[:, 0]
    out[:, 1:-1] += my[:, 1:-1] - my[:, :-2]
    out[:, -1] -= my[:, -2]
    out /= h
    return out


def _grad_adjoint_dirichlet(phi: np.ndarray, h: float) -> tuple[np.ndarray, np.ndarray]:
    gx = np.zeros_like(phi)
    gy = np.zeros_like(phi)
    gx[:-1, :] = (phi[1:, :] - phi[:-1, :]) / h
    gy[:, :-1] = (phi[:, 1:] - phi[:, :-1]) / h
    return gx, gy


def _grad_periodic(u: np.ndarray, h: float) -> tuple[np.ndarray, np.ndarray]:
    gx = (np.roll(u, -1, axis=0) - u) / h
    gy = (np.roll(u, -1, axis=1) - u) / h
    return gx, gy


def _div_periodic(px: np.ndarray, py: np.ndarray, h: float) -> np.ndarray:
    return (px - np.roll(px, 1, axis=0) + py - np.roll(py, 1, axis=1)) / h


def _laplacian_symbol_periodic(n: int, h: float) -> np.ndarray:
    """DFT symbol of div_periodic(grad_periodic(.)), a nonpositive real grid."""
    s = np.sin(np.pi * np.arange(n) / n) ** 2
    return -4.0 * (s[:, None] + s[None, :]) / (h * h)


# ---------------------------------------------------------------------------
# field-typed wrappers

def div_dirichlet(m: VectorField) -> ScalarField:
    """Backward-difference divergence with zero boundary flux.

    The output sums to zero exactly (the stencil telescopes along each axis),
    so only mean-free fields are reachable as divergences.
    """
    return ScalarField(_div_dirichlet(m.x, m.y, m.h), m.h)


def grad_adjoint_dirichlet(phi: ScalarField) -> VectorField:
    """Forward-difference gradient, zero at the far boundary.

    This is the negative transpose of :func:`div_dirichlet`, so
    ``inner(div_dirichlet(m), phi) == -(m . grad_adjoint_dirichlet(phi))``
    holds to rounding error.
    """
    gx, gy = _grad_adjoint_dirichlet(phi.data, phi.h)
    return VectorField(gx, gy, phi.h)


def grad_periodic(u: ScalarField) -> VectorField:
    """Forward-difference gradient with periodic wraparound."""
    gx, gy = _grad_periodic(u.data, u.h)
    return VectorField(gx, gy, u.h)


def div_periodic(p: VectorField) -> ScalarField:
    """Backward-difference divergence with periodic wraparound.

    Negative adjoint of :func:`grad_periodic`; the pair diagonalizes under
    the DFT, which the cartoon solver exploits.
    """
    return ScalarField(_div_periodic(p.x, p.y, p.h), p.h)


# ---------------------------------------------------------------------------
# circular convolution

class Kernel:
    """Center-aligned circular convolution kernel with a cached spectrum.

    Taps live on the full n-by-n grid with the kernel origin at index
    ``(n // 2, n // 2)``; the spectrum is the DFT of the origin-aligned taps.
    """

    __slots__ = ("taps", "spectrum", "is_identity")

    def __init__(self, taps: np.ndarray):
        arr = _validated_grid(taps, "Kernel taps")
        self.taps = arr
        spectrum = np.fft.fft2(np.fft.ifftshift(arr))
        spectrum.setflags(write=False)
        self.spectrum = spectrum
        c = arr.shape[0] // 2
        delta = np.zeros_like(arr)
        delta[c, c] = 1.0
        self.is_identity = bool(np.array_equal(arr, delta))

    @property
    def n(self) -> int:
        return self.taps.shape[0]


def identity_kernel(n: int) -> Kernel:
    """The delta kernel: convolving with it returns the input unchanged."""
    taps = np.zeros((n, n))
    taps[n // 2, n // 2] = 1.0
    return Kernel(taps)


def gaussian_kernel(n: int, sigma: float, radius: int | None = None) -> Kernel:
    """Unit-sum Gaussian blur taps with standard deviation ``sigma`` pixels.

    ``radius`` truncates the support to a square window of that half-width
    around the center; by default the taps cover the whole grid.  The unit
    sum keeps the zero-frequency response at one, so blurring preserves the
    image mean and the deblurring normal equations stay invertible.
    """
    if sigma <= 0.0 or not math.isfinite(sigma):
        raise ValueError(f"sigma must be positive and finite, got {sigma}")
    c = n // 2
    d = np.arange(n) - c
    g = np.exp(-(d[:, None] ** 2 + d[None, :] ** 2) / (2.0 * sigma * sigma))
    if radius is not None:
        if radius < 0:
            raise ValueError("radius must be nonnegative")
        keep = (np.abs(d[:, None]) <= radius) & (np.abs(d[None, :]) <= radius)
        g = np.where(keep, g, 0.0)
    total = g.sum()
    if total <= 0.0:
        raise ValueError("kernel truncated to nothing")
    return Kernel(g / total)


def _convolve(k: Kernel, u: np.ndarray) -> np.ndarray:
    if k.is_identity:
        return u
    return np.fft.ifft2(k.spectrum * np.fft.fft2(u)).real


def _convolve_adjoint(k: Kernel, u: np.ndarray) -> np.ndarray:
    if k.is_identity:
        return u
    return np.fft.ifft2(np.conj(k.spectrum) * np.fft.fft2(u)).real


def convolve(k: Kernel, u: ScalarField) -> ScalarField:
    """Circular convolution of ``u`` with the kernel taps."""
    if k.n != u.n:
        raise ValueError(f"kernel grid {k.n} does not match image grid {u.n}")
    if k.is_identity:
        return u
    return u.with_data(_convolve(k, u.data))


def convolve_adjoint(k: Kernel, u: ScalarField) -> ScalarField:
    """Adjoint of :func:`convolve` (conjugate spectrum)."""
    if k.n != u.n:
        raise ValueError(f"kernel grid {k.n} does not match image grid {u.n}")
    if k.is_identity:
        return u
    return u.with_data(_convolve_adjoint(k, u.data))


# ---------------------------------------------------------------------------
# inner products and norms (plain sums, no grid-measure weight)

def inner(a: ScalarField, b: ScalarField) -> float:
    _require_same_grid(a, b)
    return float(np.vdot(a.data, b.data))


def norm_l2(a: ScalarField) -> float:
    return float(np.linalg.norm(a.data))


def norm_12(m: VectorField) -> float:
    """Sum over pixels of the Euclidean magnitude of the flux vector."""
    return float(np.hypot(m.x, m.y).sum())
