"""Forward advection-diffusion of the anomaly probability field.

Spatial discretization on the regular voxel grid:

* advection in advective form, first-order upwind per axis (backward
  difference where the axis velocity is positive, forward where negative);
* diffusion in flux form with arithmetic-mean face diffusivity, i.e. a
  forward difference of the field nested inside a backward difference of
  face fluxes.

Faces that cross the domain boundary carry zero flux and upwind stencils
ghost-mirror the center value there, so the field stays exactly zero
outside the domain and pure diffusion conserves mass to rounding.

Time integration is either forward Euler at the CFL-stable step or an
embedded Dormand-Prince 5(4) pair whose adaptive step is capped by the
CFL bound.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .errors import (
    DimensionError,
    InvariantError,
    NumericalInstabilityError,
    ParameterError,
)
from .fields import TransportFields
from .volume import Mask3, ScalarField3, VectorField3, validate_probability

FIXED_EULER = "fixed_euler"
ADAPTIVE_RK45 = "adaptive_rk45"


@dataclass(frozen=True)
class SolverConfig:
    t_max: float = 10.0
    cfl_safety: float = 0.9
    stepper: str = ADAPTIVE_RK45
    abs_tol: float = 1e-6
    rel_tol: float = 1e-4
    clamp_each_step: bool = True

    def __post_init__(self):
        if self.t_max < 0:
            raise ParameterError(f"t_max must be >= 0, got {self.t_max}")
        if not 0.0 < self.cfl_safety <= 1.0:
            raise ParameterError(f"cfl_safety must lie in (0,1], got {self.cfl_safety}")
        if self.stepper not in (FIXED_EULER, ADAPTIVE_RK45):
            raise ParameterError(f"unknown stepper {self.stepper!r}")
        if self.abs_tol <= 0 or self.rel_tol < 0:
            raise ParameterError("tolerances must be positive")


def _axis_slices(a: int):
    lo = [slice(None)] * 3
    hi = [slice(None)] * 3
    lo[a] = slice(None, -1)
    hi[a] = slice(1, None)
    return tuple(lo), tuple(hi)


class _Stencil:
    """Precomputed coefficient arrays for repeated right-hand-side evaluation.

    Velocity, diffusivity, and the domain are fixed over one integration,
    so upwind velocity factors (with the 1/dx and the boundary ghosting
    folded in) and face diffusivities (zeroed on boundary-crossing faces)
    are built once.
    """

    def __init__(self, velocity, diffusivity, domain: Mask3, spacing):
        self.shape = domain.shape
        dom = domain.data
        self.vpos, self.vneg, self.cface = [], [], []
        for a in range(3):
            lo, hi = _axis_slices(a)
            inv_dx = 1.0 / spacing[a]
            if velocity is not None:
                v = velocity.data[..., a]
                # upwind terms vanish where the voxel is outside the domain
                # or the neighbor they read is (ghost-mirrored center)
                ok_b = np.zeros(self.shape, dtype=bool)
                ok_b[hi] = dom[lo]
                ok_f = np.zeros(self.shape, dtype=bool)
                ok_f[lo] = dom[hi]
                self.vpos.append(np.where((v > 0) & dom & ok_b, v, 0.0) * inv_dx)
                self.vneg.append(np.where((v < 0) & dom & ok_f, v, 0.0) * inv_dx)
            else:
                self.vpos.append(None)
                self.vneg.append(None)
            if diffusivity is not None:
                d = diffusivity.data
                cf = 0.5 * (d[lo] + d[hi]) * (inv_dx * inv_dx)
                cf *= dom[lo] & dom[hi]          # zero flux across the boundary
                self.cface.append(cf)
            else:
                self.cface.append(None)

    def rhs(self, p: np.ndarray, out: np.ndarray) -> np.ndarray:
        out.fill(0.0)
        for a in range(3):
            lo, hi = _axis_slices(a)
            d = p[hi] - p[lo]                    # forward face differences
            cf = self.cface[a]
            if cf is not None:
                flux = cf * d
                out[lo] += flux
                out[hi] -= flux
            vp = self.vpos[a]
            if vp is not None:
                out[hi] -= vp[hi] * d            # backward difference, v > 0
                out[lo] -= self.vneg[a][lo] * d  # forward difference, v < 0
        return out


def _validate_rhs_inputs(p: ScalarField3, other_shape, domain: Mask3):
    if p.shape != other_shape or p.shape != domain.shape:
        raise DimensionError(
            f"shape mismatch: field {p.shape}, operand {other_shape}, domain {domain.shape}"
        )


def advection_rhs(p: ScalarField3, velocity: VectorField3, domain: Mask3) -> ScalarField3:
    """-V . grad(P) with first-order upwind differences, zero outside domain."""
    _validate_rhs_inputs(p, velocity.shape, domain)
    st = _Stencil(velocity, None, domain, p.spacing)
    out = np.zeros(p.shape, dtype=np.float64)
    return ScalarField3(st.rhs(p.data, out), p.spacing)


def diffusion_rhs(p: ScalarField3, diffusivity: ScalarField3, domain: Mask3) -> ScalarField3:
    """div(D grad P) in flux form with zero flux across the domain boundary."""
    _validate_rhs_inputs(p, diffusivity.shape, domain)
    if diffusivity.data.min(initial=0.0) < 0.0:
        raise InvariantError("diffusivity must be non-negative")
    st = _Stencil(None, diffusivity, domain, p.spacing)
    out = np.zeros(p.shape, dtype=np.float64)
    return ScalarField3(st.rhs(p.data, out), p.spacing)


def stable_dt(
    velocity: VectorField3 | None,
    diffusivity: ScalarField3 | None,
    spacing,
    cfl_safety: float,
    t_max: float = math.inf,
) -> float:
    """CFL-stable explicit step: cfl_safety / max(sum|V_i|/dx_i + 2 D sum 1/dx_i^2).

    Returns ``t_max`` when there is no transport at all.
    """
    denom = 0.0
    if velocity is not None:
        denom = denom + sum(
            np.abs(velocity.data[..., a]) / spacing[a] for a in range(3)
        )
    if diffusivity is not None:
        denom = denom + 2.0 * diffusivity.data * sum(1.0 / s**2 for s in spacing)
    bound = float(np.max(denom)) if np.ndim(denom) else float(denom)
    if bound == 0.0:
        return t_max
    return cfl_safety / bound


# Dormand-Prince 5(4) tableau; the propagated solution is 5th order and the
# last row of A doubles as its weights.
_DP_A = (
    (),
    (1 / 5,),
    (3 / 40, 9 / 40),
    (44 / 45, -56 / 15, 32 / 9),
    (19372 / 6561, -25360 / 2187, 64448 / 6561, -212 / 729),
    (9017 / 3168, -355 / 33, 46732 / 5247, 49 / 176, -5103 / 18656),
    (35 / 384, 0.0, 500 / 1113, 125 / 192, -2187 / 6784, 11 / 84),
)
# 5th-order minus 4th-order weights (error estimator), k7 = f(t+h, y5)
_DP_E = (
    71 / 57600,
    0.0,
    -71 / 16695,
    71 / 1920,
    -17253 / 339200,
    22 / 525,
    -1 / 40,
)
_MAX_GROWTH = 5.0
_MIN_SHRINK = 0.2


def _check_finite(arr: np.ndarray, step: int, t: float) -> None:
    if not np.isfinite(arr).all():
        raise NumericalInstabilityError("non-finite field value", step, t)


def _integrate_euler(p, st, cfg: SolverConfig, dt: float):
    rhs_buf = np.empty_like(p)
    t, step = 0.0, 0
    while True:
        remaining = cfg.t_max - t
        if remaining <= 0:
            break
        h = min(dt, remaining)
        st.rhs(p, rhs_buf)
        p += h * rhs_buf
        step += 1
        t = cfg.t_max if h == remaining else t + h
        if cfg.clamp_each_step:
            np.clip(p, 0.0, 1.0, out=p)
        _check_finite(p, step, t)
    return p


def _integrate_rk45(p, st, cfg: SolverConfig, dt_cap: float):
    k = [np.empty_like(p) for _ in range(7)]
    h = min(dt_cap, cfg.t_max)
    t, step = 0.0, 0
    while True:
        remaining = cfg.t_max - t
        if remaining <= 0:
            break
        h = min(h, dt_cap, remaining)
        if h < 1e-14 * cfg.t_max:
            raise NumericalInstabilityError("step size collapsed", step, t)
        st.rhs(p, k[0])
        for i in range(1, 7):
            stage = p.copy()
            for j, a in enumerate(_DP_A[i]):
                if a != 0.0:
                    stage += (h * a) * k[j]
            if i < 6:
                st.rhs(stage, k[i])
            else:
                y5 = stage                        # row 7 of A = 5th-order weights
                st.rhs(y5, k[6])
        err_arr = np.zeros_like(p)
        for j, e in enumerate(_DP_E):
            if e != 0.0:
                err_arr += (h * e) * k[j]
        scale = cfg.abs_tol + cfg.rel_tol * np.maximum(np.abs(p), np.abs(y5))
        err = float(np.max(np.abs(err_arr) / scale))
        step += 1
        if not math.isfinite(err):
            raise NumericalInstabilityError("non-finite error estimate", step, t)
        if err <= 1.0:
            np.copyto(p, y5)
            t = cfg.t_max if h == remaining else t + h
            if cfg.clamp_each_step:
                np.clip(p, 0.0, 1.0, out=p)
            _check_finite(p, step, t)
            factor = _MAX_GROWTH if err == 0.0 else min(_MAX_GROWTH, 0.9 * err ** -0.2)
            h = h * max(_MIN_SHRINK, factor)
        else:
            h = h * max(_MIN_SHRINK, 0.9 * err ** -0.2)
    return p


def transport(
    p0: ScalarField3,
    fields: TransportFields,
    domain: Mask3,
    cfg: SolverConfig,
) -> ScalarField3:
    """Integrate dP/dt = advection + diffusion from t=0 to t=cfg.t_max."""
    if p0.shape != fields.shape or p0.shape != domain.shape:
        raise DimensionError(
            f"shape mismatch: P0 {p0.shape}, fields {fields.shape}, domain {domain.shape}"
        )
    validate_probability(p0, "initial anomaly probability")
    if np.any(p0.data[~domain.data] != 0.0):
        raise InvariantError("initial probability must be zero outside the domain")

    p = p0.data.copy()
    if cfg.t_max == 0.0:
        return ScalarField3(p, p0.spacing)

    st = _Stencil(fields.velocity, fields.diffusivity, domain, p0.spacing)
    dt_cap = stable_dt(
        fields.velocity, fields.diffusivity, p0.spacing, cfg.cfl_safety, cfg.t_max
    )
    if cfg.stepper == FIXED_EULER:
        p = _integrate_euler(p, st, cfg, dt_cap)
    else:
        p = _integrate_rk45(p, st, cfg, dt_cap)
    return ScalarField3(p, p0.spacing)
