"""Transport-field construction: divergence-free velocity and non-negative
diffusivity from random smooth potentials.

The velocity is the curl of a three-component Perlin potential, so its
discrete interior divergence vanishes identically (central-difference
operators along distinct axes commute).  The diffusivity is the square of
a scalar Perlin potential, non-negative by construction.  Potentials are
generated on a fixed 200^3 padding grid and center-cropped, so the same
seed yields the same local field regardless of the output shape.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import DimensionError, ParameterError
from .noise import perlin_window
from .seeds import derive_seed
from .volume import ScalarField3, VectorField3

PAD_SHAPE = (200, 200, 200)
# Tileability along the left-right axis matches the potential recipe used
# for anomaly transport; the other axes stay free.
_POTENTIAL_TILEABLE = (True, False, False)


@dataclass(frozen=True)
class TransportFields:
    """Velocity + diffusivity pair driving one transport simulation."""

    velocity: VectorField3
    diffusivity: ScalarField3
    v_multiplier: float = 1.0
    d_multiplier: float = 1.0

    def __post_init__(self):
        if self.velocity.shape != self.diffusivity.shape:
            raise DimensionError(
                f"velocity shape {self.velocity.shape} != diffusivity shape "
                f"{self.diffusivity.shape}"
            )
        if self.diffusivity.data.min(initial=0.0) < 0.0:
            raise ParameterError("diffusivity must be non-negative")

    @property
    def shape(self) -> tuple[int, int, int]:
        return self.diffusivity.shape


def curl(psi: VectorField3) -> VectorField3:
    """Curl of a vector potential.

    Central differences in the interior, first-order one-sided stencils on
    the boundary planes; spacing is honored.
    """
    if any(n < 3 for n in psi.shape):
        raise DimensionError(f"curl needs at least 3 voxels per axis, got {psi.shape}")
    dx, dy, dz = psi.spacing
    px, py, pz = (psi.component(a) for a in range(3))
    vx = np.gradient(pz, dy, axis=1) - np.gradient(py, dz, axis=2)
    vy = np.gradient(px, dz, axis=2) - np.gradient(pz, dx, axis=0)
    vz = np.gradient(py, dx, axis=0) - np.gradient(px, dy, axis=1)
    return VectorField3.from_components(vx, vy, vz, psi.spacing)


def divergence(v: VectorField3) -> ScalarField3:
    """Central-difference divergence (diagnostic companion to curl)."""
    out = sum(
        np.gradient(v.component(a), v.spacing[a], axis=a) for a in range(3)
    )
    return ScalarField3(out, v.spacing)


def _cropped_potential(shape, perlin_res, seed: int, pad_shape) -> np.ndarray:
    for a in range(3):
        if shape[a] > pad_shape[a]:
            raise ParameterError(
                f"output shape {tuple(shape)} exceeds potential pad shape {tuple(pad_shape)}"
            )
    offset = tuple((pad_shape[a] - shape[a]) // 2 for a in range(3))
    return perlin_window(pad_shape, perlin_res, _POTENTIAL_TILEABLE, seed, offset, shape)


def make_velocity(
    shape,
    perlin_res=(4, 4, 4),
    v_multiplier: float = 1.0,
    seed: int = 0,
    pad_shape=PAD_SHAPE,
) -> VectorField3:
    """Random incompressible velocity field: curl of three Perlin potentials."""
    if not np.isfinite(v_multiplier):
        raise ParameterError("v_multiplier must be finite")
    comps = [
        _cropped_potential(shape, perlin_res, derive_seed(seed, "potential", a), pad_shape)
        for a in range(3)
    ]
    psi = VectorField3.from_components(*comps)
    v = curl(psi)
    return VectorField3(v.data * float(v_multiplier), v.spacing)


def make_diffusion_potential(
    shape,
    perlin_res=(4, 4, 4),
    d_multiplier: float = 0.8,
    seed: int = 0,
    pad_shape=PAD_SHAPE,
) -> ScalarField3:
    """The scalar potential whose square is the diffusivity."""
    if d_multiplier < 0:
        raise ParameterError("d_multiplier must be non-negative")
    pot = _cropped_potential(shape, perlin_res, derive_seed(seed, "diffusion"), pad_shape)
    return ScalarField3(pot * float(d_multiplier))


def make_diffusion(
    shape,
    perlin_res=(4, 4, 4),
    d_multiplier: float = 0.8,
    seed: int = 0,
    pad_shape=PAD_SHAPE,
) -> ScalarField3:
    """Random non-negative diffusivity: square of a Perlin potential."""
    pot = make_diffusion_potential(shape, perlin_res, d_multiplier, seed, pad_shape)
    return ScalarField3(pot.data * pot.data, pot.spacing)
