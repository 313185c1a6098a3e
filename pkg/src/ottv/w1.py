"""Primal-dual solver for the transport side.

The texture subproblem

    min_v  (alpha/2) ||f1 - v||^2 + lam ||v||_KR

is solved through its flux form: the transport seminorm of ``v`` is the
minimal mass ``||m||_{1,2}`` of a flux field with ``div m = v`` under the
zero-boundary-flux divergence, so the saddle problem reads

    inf_{m,v} sup_phi  lam ||m||_{1,2} + (alpha/2) ||f1 - v||^2
                       + <phi, div m - v>.

One primal-dual iteration (steps mu, nu for m and v, tau for phi):

    m+   = shrink(m + mu grad phi; mu lam)
    v+   = (v/nu + alpha f1 + phi) / (alpha + 1/nu)
    phi+ = phi + tau (div(2m+ - m) - (2v+ - v))

where ``grad`` is the negative transpose of ``div``.  The defaults
``mu = h^2/(32 tau)``, ``nu = 1/(4 tau)`` give the step certificate
``tau mu (8/h^2) + tau nu = 1/2 < 1``; the iteration stops when the weighted
fixed-point residual

    R = h^2 [ (1/mu)||dm||^2 + (1/nu)||dv||^2 + (1/tau)||dphi||^2
              - 2 <dphi, div dm - dv> ]

falls below ``eps`` (default ``h^2``).  ``w1_distance`` and
``dual_lipschitz_norm`` run the same iteration with ``v`` pinned to a fixed
mean-free target, which drops the ``v`` terms from the residual.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .grid import ScalarField, _div_dirichlet, _grad_adjoint_dirichlet
from .prox import _shrink_pair
from .trace import ConvergenceTrace

__all__ = [
    "PdhgConfig",
    "W1State",
    "DivergenceError",
    "solve_v_subproblem",
    "w1_distance",
    "dual_lipschitz_norm",
]

TRACE_COLUMNS = ("iter", "residual", "constraint_ratio", "flux_norm")

_SPECTRAL_BOUND = 8.0  # ||div||^2 <= 8/h^2 for the two-axis difference stencil


class DivergenceError(RuntimeError):
    """The iteration produced non-finite values or a runaway residual."""


@dataclass(frozen=True)
class PdhgConfig:
    """Step sizes and stopping control for the transport iteration.

    ``mu``, ``nu``, and ``eps`` default to ``h^2/(32 tau)``, ``1/(4 tau)``,
    and ``h^2``.  Construction rejects any combination whose certificate
    ``tau * mu * (8/h^2) + tau * nu`` is not strictly below one.
    """

    alpha: float = 1.0
    lam: float = 1.0
    tau: float = 1.0
    h: float = 1.0
    mu: float | None = None
    nu: float | None = None
    eps: float | None = None
    max_iters: int = 20000

    def __post_init__(self) -> None:
        for name in ("alpha", "lam", "tau", "h"):
            val = getattr(self, name)
            if not (val > 0.0 and math.isfinite(val)):
                raise ValueError(f"{name} must be positive and finite, got {val}")
        if self.mu is None:
            object.__setattr__(self, "mu", self.h * self.h / (32.0 * self.tau))
        if self.nu is None:
            object.__setattr__(self, "nu", 1.0 / (4.0 * self.tau))
        if self.eps is None:
            object.__setattr__(self, "eps", self.h * self.h)
        for name in ("mu", "nu", "eps"):
            val = getattr(self, name)
            if not (val > 0.0 and math.isfinite(val)):
                raise ValueError(f"{name} must be positive and finite, got {val}")
        if self.max_iters < 1:
            raise ValueError("max_iters must be at least 1")
        if not self.step_certificate() < 1.0:
            raise ValueError(
                f"step certificate {self.step_certificate()} must be < 1; "
                "shrink tau, mu, or nu"
            )

    def step_certificate(self) -> float:
        """``tau * mu * (8/h^2) + tau * nu``; defaults give exactly 0.5."""
        return self.tau * self.mu * (_SPECTRAL_BOUND / (self.h * self.h)) + self.tau * self.nu


@dataclass
class W1State:
    """Iterates of the transport solver, with the previous step kept.

    The previous iterates make the v-update identity
    ``v (alpha + 1/nu) = phi_prev + alpha f1 + v_prev / nu`` checkable
    exactly, and let a warm restart resume where a run stopped.
    """

    flux_x: np.ndarray
    flux_y: np.ndarray
    texture: np.ndarray
    potential: np.ndarray
    flux_x_prev: np.ndarray
    flux_y_prev: np.ndarray
    texture_prev: np.ndarray
    potential_prev: np.ndarray
    h: float
    iterations: int
    residual: float
    constraint_ratio: float
    converged: bool

    @property
    def flux_norm(self) -> float:
        return float(np.hypot(self.flux_x, self.flux_y).sum())


def _run_pdhg(
    target: np.ndarray,
    cfg: PdhgConfig,
    warm: W1State | None,
    update_v: bool,
    lam: float,
) -> tuple[W1State, ConvergenceTrace]:
    """Shared iteration; ``update_v=False`` pins v to ``target``.

    With v free, ``target`` is the data f1 of the texture subproblem.
    """
    h, mu, nu, tau, alpha = cfg.h, cfg.mu, cfg.nu, cfg.tau, cfg.alpha
    if warm is not None:
        if warm.flux_x.shape != target.shape or warm.h != h:
            raise ValueError("warm state lives on a different grid")
        mx, my = warm.flux_x, warm.flux_y
        phi = warm.potential
        v = target if not update_v else warm.texture
    else:
        mx = np.zeros_like(target)
        my = np.zeros_like(target)
        phi = np.zeros_like(target)
        v = target if not update_v else np.zeros_like(target)
    div_m = _div_dirichlet(mx, my, h)
    trace = ConvergenceTrace(TRACE_COLUMNS)
    res_floor = math.inf
    prev = (mx, my, v, phi)
    converged = False
    residual = math.inf
    ratio = math.inf
    iters = 0
    target_norm = float(np.linalg.norm(target))

    for k in range(cfg.max_iters):
        gx, gy = _grad_adjoint_dirichlet(phi, h)
        nmx, nmy = _shrink_pair(mx + mu * gx, my + mu * gy, mu * lam)
        if update_v:
            nv = (v / nu + alpha * target + phi) / (alpha + 1.0 / nu)
        else:
            nv = v
        div_new = _div_dirichlet(nmx, nmy, h)
        dmx, dmy = nmx - mx, nmy - my
        ddiv = div_new - div_m
        residual = (1.0 / mu) * (np.vdot(dmx, dmx).real + np.vdot(dmy, dmy).real)
        if update_v:
            dv = nv - v
            nphi = phi + tau * (2.0 * div_new - div_m - (2.0 * nv - v))
            dphi = nphi - phi
            residual += (1.0 / nu) * np.vdot(dv, dv).real
            residual -= 2.0 * np.vdot(dphi, ddiv - dv).real
        else:
            nphi = phi + tau * (2.0 * div_new - div_m - nv)
            dphi = nphi - phi
            residual -= 2.0 * np.vdot(dphi, ddiv).real
        residual += (1.0 / tau) * np.vdot(dphi, dphi).real
        residual *= h * h

        if update_v:
            denom = float(np.linalg.norm(nv - target))
        else:
            denom = target_norm
        num = float(np.linalg.norm(nv - div_new))
        if denom > 0.0:
            ratio = num / denom
        else:
            ratio = 0.0 if num == 0.0 else math.inf

        flux_norm = float(np.hypot(nmx, nmy).sum())
        trace.append(k + 1, residual, ratio, flux_norm)

        if not math.isfinite(residual):
            raise DivergenceError(f"non-finite residual at iteration {k + 1}")

        prev = (mx, my, v, phi)
        mx, my, v, phi = nmx, nmy, nv, nphi
        div_m = div_new
        iters = k + 1
        if residual <= cfg.eps:
            converged = True
            break
        res_floor = min(res_floor, residual)
        if k > 10 and residual > 1e6 * max(res_floor, 1e-300):
            raise DivergenceError(
                f"residual grew {residual / res_floor:.1e}x above its floor "
                f"at iteration {k + 1}"
            )

    return (
        W1State(
            flux_x=mx,
            flux_y=my,
            texture=v,
            potential=phi,
            flux_x_prev=prev[0],
            flux_y_prev=prev[1],
            texture_prev=prev[2],
            potential_prev=prev[3],
            h=h,
            iterations=iters,
            residual=residual,
            constraint_ratio=ratio,
            converged=converged,
        ),
        trace,
    )


def solve_v_subproblem(
    f1: ScalarField, cfg: PdhgConfig, warm: W1State | None = None
) -> tuple[W1State, ConvergenceTrace]:
    """Texture part of ``f1`` under fidelity ``alpha`` and weight ``lam``.

    Returns the final state (texture ``v``, flux ``m``, potential ``phi``)
    and the per-iteration trace.  A warm state from a previous solve against
    nearby data resumes there and typically stops within a couple of
    iterations.
    """
    if cfg.h != f1.h:
        raise ValueError(f"config h={cfg.h} does not match field h={f1.h}")
    return _run_pdhg(f1.data, cfg, warm, update_v=True, lam=cfg.lam)


def _pinned_solve(
    target: np.ndarray, h: float, cfg: PdhgConfig | None
) -> tuple[W1State, ConvergenceTrace]:
    if cfg is None:
        cfg = PdhgConfig(h=h)
    elif cfg.h != h:
        raise ValueError(f"config h={cfg.h} does not match field h={h}")
    return _run_pdhg(target, cfg, None, update_v=False, lam=1.0)


def w1_distance(
    mu_field: ScalarField,
    nu_field: ScalarField,
    cfg: PdhgConfig | None = None,
    detail: bool = False,
):
    """Transport distance between two nonnegative equal-mass fields.

    Minimizes the flux mass ``||m||_{1,2}`` subject to
    ``div m = mu - nu``; the v step is pinned, and the transport weight is
    fixed at one regardless of ``cfg.lam``.  With ``detail=True`` the final
    state and trace are returned alongside the value.
    """
    if mu_field.n != nu_field.n or mu_field.h != nu_field.h:
        raise ValueError("fields live on different grids")
    if np.any(mu_field.data < 0.0) or np.any(nu_field.data < 0.0):
        raise ValueError("w1_distance needs nonnegative inputs")
    mass_gap = abs(float(mu_field.data.sum()) - float(nu_field.data.sum()))
    if mass_gap > 1e-9:
        raise ValueError(f"mass mismatch {mass_gap:.3e} exceeds 1e-9")
    state, trace = _pinned_solve(mu_field.data - nu_field.data, mu_field.h, cfg)
    value = state.flux_norm
    return (value, state, trace) if detail else value


def dual_lipschitz_norm(
    v: ScalarField, cfg: PdhgConfig | None = None, detail: bool = False
):
    """Transport seminorm of a mean-free field: min ``||m||_{1,2}`` over
    fluxes with ``div m = v``.

    Only mean-free fields are reachable as divergences, so inputs with
    ``|sum v| > 1e-9`` are rejected.
    """
    total = abs(float(v.data.sum()))
    if total > 1e-9:
        raise ValueError(f"input sums to {total:.3e}; the norm needs a mean-free field")
    state, trace = _pinned_solve(v.data, v.h, cfg)
    value = state.flux_norm
    return (value, state, trace) if detail else value
