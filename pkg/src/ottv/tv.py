"""Augmented-Lagrangian solver for the cartoon subproblem.

Solves

    min_u  reg(grad u) + (alpha/2) ||K * u - f2||^2

with ``reg`` either the isotropic TV magnitude or the log-tempered penalty,
by splitting ``p = grad u`` and alternating exact minimizations of

    L(u, p; eta) = reg(p) + (alpha/2) ||K * u - f2||^2
                   + <p - grad u, eta> + (r/2) ||p - grad u||^2.

All operators here are periodic, so the u step is a single Fourier solve of
its optimality condition

    (-r lap + alpha K^T K) u = alpha K^T f2 - div eta - r div p,

whose denominator ``-r lap_hat + alpha |K_hat|^2`` is strictly positive as
long as the kernel passes a nonzero mean (enforced at configuration time).
The p step is the pointwise prox of ``reg`` at ``grad u - eta/r``, and the
multiplier update is ``eta += r (p - grad u)``.

The iteration stops once the relative change of ``u`` drops to ``tol_u`` and
the split residual ``||p - grad u|| / |Omega|`` (area ``(n h)^2``) drops to
``tol_res``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .grid import (
    Kernel,
    ScalarField,
    VectorField,
    _convolve,
    _convolve_adjoint,
    _div_periodic,
    _grad_periodic,
    _laplacian_symbol_periodic,
)
from .prox import MtvParams, _mtv_prox_pair, _shrink_pair, mtv_potential
from .trace import ConvergenceTrace
from .w1 import DivergenceError

__all__ = ["AlmConfig", "AlmState", "alm_solve", "solve_u_linear", "tv_energy"]

TRACE_COLUMNS = ("iter", "rel_change", "constraint_residual", "energy")


@dataclass(frozen=True)
class AlmConfig:
    """Fidelity weight, penalty choice, and stopping control for the
    cartoon solver.

    ``r`` defaults to 10 for TV and to ``max(10, 2/a)`` for the log-tempered
    penalty, which keeps its prox single valued (``r > 1/a``).  A kernel
    whose taps sum to zero would make the u step singular and is rejected
    here rather than at solve time.
    """

    alpha: float
    regularizer: str = "tv"
    a: float | None = None
    r: float | None = None
    kernel: Kernel | None = None
    tol_u: float = 1e-5
    tol_res: float = 1e-6
    max_iters: int = 400

    def __post_init__(self) -> None:
        if not (self.alpha > 0.0 and math.isfinite(self.alpha)):
            raise ValueError(f"alpha must be positive and finite, got {self.alpha}")
        if self.regularizer not in ("tv", "mtv"):
            raise ValueError(f"unknown regularizer {self.regularizer!r}")
        if self.regularizer == "mtv":
            if self.a is None:
                raise ValueError("the log-tempered penalty needs its threshold a")
            if self.r is None:
                object.__setattr__(self, "r", max(10.0, 2.0 / self.a))
            MtvParams(self.a, self.r)  # validates a > 0 and r > 1/a
        elif self.r is None:
            object.__setattr__(self, "r", 10.0)
        if not (self.r > 0.0 and math.isfinite(self.r)):
            raise ValueError(f"r must be positive and finite, got {self.r}")
        if self.tol_u <= 0.0 or self.tol_res <= 0.0:
            raise ValueError("tolerances must be positive")
        if self.max_iters < 1:
            raise ValueError("max_iters must be at least 1")
        if self.kernel is not None and abs(self.kernel.spectrum[0, 0]) < 1e-12:
            raise ValueError(
                "kernel taps sum to zero; the u step would be singular at the "
                "zero frequency"
            )


@dataclass
class AlmState:
    """Iterates of the cartoon solver (image, split gradient, multiplier)."""

    image: np.ndarray
    split_x: np.ndarray
    split_y: np.ndarray
    mult_x: np.ndarray
    mult_y: np.ndarray
    h: float
    iterations: int
    rel_change: float
    constraint_residual: float
    converged: bool


def _reg_value(gx: np.ndarray, gy: np.ndarray, cfg: AlmConfig) -> float:
    mag = np.hypot(gx, gy)
    if cfg.regularizer == "tv":
        return float(mag.sum())
    return float(np.sum(mtv_potential(mag, cfg.a)))


def _prox_pair(wx, wy, cfg: AlmConfig):
    if cfg.regularizer == "tv":
        return _shrink_pair(wx, wy, 1.0 / cfg.r)
    return _mtv_prox_pair(wx, wy, cfg.a, cfg.r)


def _u_denominator(n: int, h: float, cfg: AlmConfig) -> np.ndarray:
    lap = _laplacian_symbol_periodic(n, h)
    if cfg.kernel is None or cfg.kernel.is_identity:
        gain = cfg.alpha
    else:
        gain = cfg.alpha * np.abs(cfg.kernel.spectrum) ** 2
    return -cfg.r * lap + gain


def solve_u_linear(
    f2: ScalarField, p: VectorField, eta: VectorField, cfg: AlmConfig
) -> ScalarField:
    """Exact Fourier solve of the u-step optimality condition."""
    if p.n != f2.n or p.h != f2.h or eta.n != f2.n or eta.h != f2.h:
        raise ValueError("fields live on different grids")
    if cfg.kernel is not None and cfg.kernel.n != f2.n:
        raise ValueError("kernel grid does not match image grid")
    k = cfg.kernel
    data = f2.data if k is None else _convolve_adjoint(k, f2.data)
    rhs = cfg.alpha * data - _div_periodic(
        eta.x + cfg.r * p.x, eta.y + cfg.r * p.y, f2.h
    )
    denom = _u_denominator(f2.n, f2.h, cfg)
    u = np.fft.ifft2(np.fft.fft2(rhs) / denom).real
    return ScalarField(u, f2.h)


def alm_solve(
    f2: ScalarField, cfg: AlmConfig, warm: AlmState | None = None
) -> tuple[AlmState, ConvergenceTrace]:
    """Run the splitting until the image settles and the split closes.

    Cold starts use ``u = f2``, ``p = grad u``, ``eta = 0``.  A warm state
    from a solve against nearby data resumes there and typically stops
    within a couple of iterations.
    """
    if cfg.kernel is not None and cfg.kernel.n != f2.n:
        raise ValueError("kernel grid does not match image grid")
    n, h, r = f2.n, f2.h, cfg.r
    k = cfg.kernel
    if warm is not None:
        if warm.image.shape != f2.data.shape or warm.h != h:
            raise ValueError("warm state lives on a different grid")
        u = warm.image
        px, py = warm.split_x, warm.split_y
        ex, ey = warm.mult_x, warm.mult_y
    else:
        u = f2.data
        px, py = _grad_periodic(u, h)
        ex = np.zeros_like(u)
        ey = np.zeros_like(u)

    denom = _u_denominator(n, h, cfg)
    base = cfg.alpha * (f2.data if k is None else _convolve_adjoint(k, f2.data))
    area = (n * h) ** 2
    trace = ConvergenceTrace(TRACE_COLUMNS)
    converged = False
    rel = math.inf
    res = math.inf
    iters = 0

    for it in range(cfg.max_iters):
        rhs = base - _div_periodic(ex + r * px, ey + r * py, h)
        u_new = np.fft.ifft2(np.fft.fft2(rhs) / denom).real
        gx, gy = _grad_periodic(u_new, h)
        px, py = _prox_pair(gx - ex / r, gy - ey / r, cfg)
        ex = ex + r * (px - gx)
        ey = ey + r * (py - gy)

        num = float(np.linalg.norm(u_new - u))
        den = float(np.linalg.norm(u))
        if den > 0.0:
            rel = num / den
        else:
            rel = 0.0 if num == 0.0 else math.inf
        res = math.sqrt(
            float(np.vdot(px - gx, px - gx).real + np.vdot(py - gy, py - gy).real)
        ) / area
        ku = u_new if k is None else _convolve(k, u_new)
        energy = _reg_value(gx, gy, cfg) + 0.5 * cfg.alpha * float(
            np.vdot(ku - f2.data, ku - f2.data).real
        )
        trace.append(it + 1, rel, res, energy)
        if not math.isfinite(energy):
            raise DivergenceError(f"non-finite energy at iteration {it + 1}")

        u = u_new
        iters = it + 1
        if rel <= cfg.tol_u and res <= cfg.tol_res:
            converged = True
            break

    return (
        AlmState(
            image=u,
            split_x=px,
            split_y=py,
            mult_x=ex,
            mult_y=ey,
            h=h,
            iterations=iters,
            rel_change=rel,
            constraint_residual=res,
            converged=converged,
        ),
        trace,
    )


def tv_energy(u: ScalarField, f2: ScalarField, cfg: AlmConfig) -> float:
    """Penalty plus fidelity value of the cartoon objective at ``u``."""
    if u.n != f2.n or u.h != f2.h:
        raise ValueError("fields live on different grids")
    gx, gy = _grad_periodic(u.data, u.h)
    k = cfg.kernel
    ku = u.data if k is None or k.is_identity else _convolve(k, u.data)
    diff = ku - f2.data
    return _reg_value(gx, gy, cfg) + 0.5 * cfg.alpha * float(np.vdot(diff, diff).real)
