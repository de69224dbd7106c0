"""Seeded 3D Perlin noise and percentile thresholding.

The construction is the classic lattice-gradient recipe: unit gradients
drawn from two angles per lattice point, ramp dot products at the eight
cell corners, quintic fade, trilinear blend.  Gradient angles come from a
counter-based Philox generator keyed by an explicit 64-bit seed, so equal
parameters give bit-identical fields on every platform.

Note the gradient directions are *not* area-uniform on the sphere (both
angles are uniform on [0, 2pi)); this matches the widely used numpy
recipe and is kept as-is.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from numpy.random import Generator, Philox

from .errors import DegenerateInputError, ParameterError
from .volume import Mask3, ScalarField3

PROBABILITY_FLOOR = 0.05


@dataclass(frozen=True)
class PerlinParams:
    shape: tuple[int, int, int]
    res: tuple[int, int, int]
    tileable: tuple[bool, bool, bool] = (False, False, False)
    seed: int = 0
    percentile: float | None = None

    def __post_init__(self):
        if len(self.shape) != 3 or len(self.res) != 3:
            raise ParameterError("shape and res must have three components")
        for s, r in zip(self.shape, self.res):
            if r < 1 or s < 1 or s % r != 0:
                raise ParameterError(
                    f"shape {self.shape} must be a positive multiple of res {self.res}"
                )
        if self.percentile is not None and not 0.0 < self.percentile < 100.0:
            raise ParameterError(f"percentile must lie in (0,100), got {self.percentile}")


def _fade(t: np.ndarray) -> np.ndarray:
    return t * t * t * (t * (t * 6 - 15) + 10)


def lattice_gradients(res, tileable, seed: int) -> np.ndarray:
    """Unit gradient vectors on the (res+1)^3 lattice.

    Tileable axes copy the first lattice plane onto the last so the field
    wraps seamlessly after one full period.
    """
    rng = Generator(Philox(seed & (2**64 - 1)))
    lat = (res[0] + 1, res[1] + 1, res[2] + 1)
    theta = 2 * np.pi * rng.random(lat)
    phi = 2 * np.pi * rng.random(lat)
    grads = np.stack(
        (np.sin(phi) * np.cos(theta), np.sin(phi) * np.sin(theta), np.cos(phi)),
        axis=3,
    )
    if tileable[0]:
        grads[-1, :, :] = grads[0, :, :]
    if tileable[1]:
        grads[:, -1, :] = grads[:, 0, :]
    if tileable[2]:
        grads[:, :, -1] = grads[:, :, 0]
    return grads


def perlin_window(pad_shape, res, tileable, seed: int, offset, out_shape) -> np.ndarray:
    """Evaluate a sub-window of the Perlin field defined on ``pad_shape``.

    The result is bit-identical to generating the full ``pad_shape`` field
    and slicing, but costs only O(window).  ``offset + out_shape`` may
    extend one voxel past the grid (the wrap plane), where corner indices
    clamp to the lattice edge; the clamped corners carry vanishing fade
    weight there.
    """
    for a in range(3):
        if pad_shape[a] % res[a] != 0:
            raise ParameterError(f"pad shape {pad_shape} not a multiple of res {res}")
        if offset[a] < 0 or offset[a] + out_shape[a] > pad_shape[a] + 1:
            raise ParameterError(
                f"window {offset}+{out_shape} outside pad shape {pad_shape}"
            )

    grads = lattice_gradients(res, tileable, seed)
    frac, cell_lo, cell_hi = [], [], []
    for a in range(3):
        delta = res[a] / pad_shape[a]
        d = pad_shape[a] // res[a]
        k = np.arange(offset[a], offset[a] + out_shape[a])
        coord = k.astype(np.float64) * delta     # identical to arange(0,res,delta)
        frac.append(coord % 1.0)
        lo = k // d
        cell_lo.append(lo)
        cell_hi.append(np.minimum(lo + 1, res[a]))

    fx = frac[0][:, None, None]
    fy = frac[1][None, :, None]
    fz = frac[2][None, None, :]
    ix = (cell_lo[0][:, None, None], cell_hi[0][:, None, None])
    iy = (cell_lo[1][None, :, None], cell_hi[1][None, :, None])
    iz = (cell_lo[2][None, None, :], cell_hi[2][None, None, :])

    def ramp(cx, cy, cz, ox, oy, oz):
        g = grads[ix[cx], iy[cy], iz[cz]]
        return (fx - ox) * g[..., 0] + (fy - oy) * g[..., 1] + (fz - oz) * g[..., 2]

    n000 = ramp(0, 0, 0, 0, 0, 0)
    n100 = ramp(1, 0, 0, 1, 0, 0)
    n010 = ramp(0, 1, 0, 0, 1, 0)
    n110 = ramp(1, 1, 0, 1, 1, 0)
    n001 = ramp(0, 0, 1, 0, 0, 1)
    n101 = ramp(1, 0, 1, 1, 0, 1)
    n011 = ramp(0, 1, 1, 0, 1, 1)
    n111 = ramp(1, 1, 1, 1, 1, 1)

    tx = _fade(frac[0])[:, None, None]
    ty = _fade(frac[1])[None, :, None]
    tz = _fade(frac[2])[None, None, :]
    n00 = n000 * (1 - tx) + tx * n100
    n10 = n010 * (1 - tx) + tx * n110
    n01 = n001 * (1 - tx) + tx * n101
    n11 = n011 * (1 - tx) + tx * n111
    n0 = (1 - ty) * n00 + ty * n10
    n1 = (1 - ty) * n01 + ty * n11
    return (1 - tz) * n0 + tz * n1


def perlin_noise_3d(params: PerlinParams) -> ScalarField3:
    """Full-shape Perlin field for the given parameters."""
    data = perlin_window(
        params.shape, params.res, params.tileable, params.seed, (0, 0, 0), params.shape
    )
    return ScalarField3(data)


def threshold_to_anomaly(
    noise: ScalarField3,
    percentile: float,
    domain: Mask3,
    floor: float = PROBABILITY_FLOOR,
) -> tuple[ScalarField3, Mask3]:
    """Threshold a noise field into an initial anomaly probability map.

    The threshold is the given percentile of the noise restricted to the
    domain; surviving voxels are rescaled affinely onto [floor, 1] so the
    anomaly has nonzero probability everywhere inside its support.  A
    constant noise field degenerates to probability 1 on the whole domain.
    """
    if not 0.0 < percentile < 100.0:
        raise ParameterError(f"percentile must lie in (0,100), got {percentile}")
    if noise.shape != domain.shape:
        raise ParameterError(f"noise shape {noise.shape} != domain shape {domain.shape}")
    if domain.count() == 0:
        raise DegenerateInputError("empty domain")

    inside = noise.data[domain.data]
    # exact order statistic: as percentile -> 0 the whole domain survives
    threshold = np.percentile(inside, percentile, method="lower")
    mask = (noise.data >= threshold) & domain.data

    p0 = _affine_rescale(noise.data, mask, floor)
    return ScalarField3(p0, noise.spacing), Mask3(mask, noise.spacing)


def _affine_rescale(data: np.ndarray, mask: np.ndarray, floor: float) -> np.ndarray:
    """Map masked values affinely onto [floor, 1]; constants map to 1."""
    vals = data[mask]
    lo, hi = vals.min(), vals.max()
    out = np.zeros(data.shape, dtype=np.float64)
    if hi > lo:
        frac = (vals - lo) / (hi - lo)        # endpoints land exactly on 0 and 1
        out[mask] = floor + (1.0 - floor) * frac
    else:
        out[mask] = 1.0
    return out


def rescale_to_probability(
    field: ScalarField3, domain: Mask3, floor: float = PROBABILITY_FLOOR
) -> tuple[ScalarField3, Mask3]:
    """Turn a non-negative seed volume (e.g. a lesion mask) into probabilities.

    Positive in-domain voxels are rescaled onto [floor, 1] with the same
    affine rule used for thresholded noise; binary masks come out as 1.
    """
    mask = (field.data > 0) & domain.data
    if not mask.any():
        raise DegenerateInputError("pathology seed has no support inside the domain")
    p0 = _affine_rescale(field.data, mask, floor)
    return ScalarField3(p0, field.spacing), Mask3(mask, field.spacing)
