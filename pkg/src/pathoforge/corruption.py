"""Clinical acquisition corruption: deformation, resolution, bias field, noise.

Each corruption level (mild / medium / severe) fixes the ranges the random
draws come from; the deformation ranges are shared by all levels.  Stage
draws have a fixed count and order regardless of which effects trigger, so
the same seed produces nested/ordered corruptions across levels.

Corruptions apply in acquisition order: deformation -> resolution -> bias
field -> noise.  The deformation warps the image, its healthy ground
truth, the probability field, and the masks identically; the intensity
corruptions touch only the image.
"""

from __future__ import annotations

import copy
import json
import math
from typing import Any

import numpy as np
from numpy.random import Generator, Philox
from scipy.ndimage import gaussian_filter, zoom

from .errors import ParameterError
from .seeds import derive_seed
from .synthesis import SampleRecord
from .volume import ScalarField3, VectorField3, apply_deformation

LEVELS = ("mild", "medium", "severe")

# Generator setup per corruption level.  Deformation ranges are identical
# across levels; sigma values for noise are on the 0-255 intensity scale.
CORRUPTION_TABLE: dict[str, dict[str, dict[str, float]]] = {
    "mild": {
        "deformation": {
            "affine_rotation_max": 15.0,
            "affine_shearing_max": 0.2,
            "affine_scaling_max": 0.2,
            "nonlinear_scale_mu_min": 0.03,
            "nonlinear_scale_mu_max": 0.06,
            "nonlinear_scale_sigma_max": 4.0,
        },
        "resolution": {"p_low_field": 0.1, "p_anisotropic": 0.0},
        "bias_field": {"mu_min": 0.01, "mu_max": 0.02, "sigma_min": 0.01, "sigma_max": 0.05},
        "noise": {"sigma_min": 0.01, "sigma_max": 1.0},
    },
    "medium": {
        "deformation": {
            "affine_rotation_max": 15.0,
            "affine_shearing_max": 0.2,
            "affine_scaling_max": 0.2,
            "nonlinear_scale_mu_min": 0.03,
            "nonlinear_scale_mu_max": 0.06,
            "nonlinear_scale_sigma_max": 4.0,
        },
        "resolution": {"p_low_field": 0.3, "p_anisotropic": 0.1},
        "bias_field": {"mu_min": 0.02, "mu_max": 0.03, "sigma_min": 0.05, "sigma_max": 0.3},
        "noise": {"sigma_min": 0.5, "sigma_max": 5.0},
    },
    "severe": {
        "deformation": {
            "affine_rotation_max": 15.0,
            "affine_shearing_max": 0.2,
            "affine_scaling_max": 0.2,
            "nonlinear_scale_mu_min": 0.03,
            "nonlinear_scale_mu_max": 0.06,
            "nonlinear_scale_sigma_max": 4.0,
        },
        "resolution": {"p_low_field": 0.5, "p_anisotropic": 0.25},
        "bias_field": {"mu_min": 0.02, "mu_max": 0.04, "sigma_min": 0.1, "sigma_max": 0.6},
        "noise": {"sigma_min": 5.0, "sigma_max": 15.0},
    },
}

LOW_FIELD_FACTOR_RANGE = (1.5, 3.0)
ANISOTROPIC_FACTOR_RANGE = (2.0, 8.0)


def parameter_table(level: str | None = None) -> dict:
    """Deep copy of the corruption parameter table (one level or all)."""
    if level is None:
        return copy.deepcopy(CORRUPTION_TABLE)
    return copy.deepcopy(_level_params(level))


def dump_parameter_table() -> str:
    """Canonical JSON dump of the full table, stable byte-for-byte."""
    return json.dumps(CORRUPTION_TABLE, indent=2, sort_keys=True) + "\n"


def _level_params(level: str) -> dict:
    if level not in CORRUPTION_TABLE:
        raise ParameterError(f"unknown corruption level {level!r}; expected one of {LEVELS}")
    return CORRUPTION_TABLE[level]


def _rng(seed: int) -> Generator:
    return Generator(Philox(seed & (2**64 - 1)))


# ---------------------------------------------------------------------------
# Deformation
# ---------------------------------------------------------------------------

def compose_affine(rotation_rad, shear, scale, shape=None) -> np.ndarray:
    """4x4 affine from per-axis rotations, shear coefficients, and scales.

    With ``shape`` given the transform is composed about the volume
    center; otherwise about the origin.
    """
    cx, sx = math.cos(rotation_rad[0]), math.sin(rotation_rad[0])
    cy, sy = math.cos(rotation_rad[1]), math.sin(rotation_rad[1])
    cz, sz = math.cos(rotation_rad[2]), math.sin(rotation_rad[2])
    rx = np.array([[1, 0, 0], [0, cx, -sx], [0, sx, cx]])
    ry = np.array([[cy, 0, sy], [0, 1, 0], [-sy, 0, cy]])
    rz = np.array([[cz, -sz, 0], [sz, cz, 0], [0, 0, 1]])
    sh = np.array([[1, shear[0], shear[1]], [0, 1, shear[2]], [0, 0, 1]])
    sc = np.diag(scale)
    m = np.eye(4)
    m[:3, :3] = rx @ ry @ rz @ sh @ sc
    if shape is not None:
        center = (np.asarray(shape, dtype=np.float64) - 1.0) / 2.0
        m[:3, 3] = center - m[:3, :3] @ center
    return m


def random_affine(level: str, seed: int, shape=None) -> np.ndarray:
    """Random 4x4 affine: per-axis rotations, shears, and scalings."""
    p = _level_params(level)["deformation"]
    rng = _rng(seed)
    rot = np.deg2rad(rng.uniform(-p["affine_rotation_max"], p["affine_rotation_max"], 3))
    shear = rng.uniform(-p["affine_shearing_max"], p["affine_shearing_max"], 3)
    scale = rng.uniform(1.0 - p["affine_scaling_max"], 1.0 + p["affine_scaling_max"], 3)
    return compose_affine(rot, shear, scale, shape)


def affine_displacement(matrix: np.ndarray, shape) -> VectorField3:
    """Pull-back displacement u(x) = M^-1 x - x on the voxel grid."""
    inv = np.linalg.inv(matrix)
    base = np.indices(shape, dtype=np.float64)
    disp = np.empty(tuple(shape) + (3,), dtype=np.float64)
    for a in range(3):
        disp[..., a] = (
            inv[a, 0] * base[0] + inv[a, 1] * base[1] + inv[a, 2] * base[2]
            + inv[a, 3] - base[a]
        )
    return VectorField3(disp)


def _smooth_displacement(shape, amplitudes, sigma, raw: np.ndarray) -> np.ndarray:
    """Smooth + upsample a coarse field; |u_a| stays <= amplitudes[a]."""
    disp = np.empty(tuple(shape) + (3,), dtype=np.float64)
    coarse = raw.shape[:3]
    for a in range(3):
        comp = gaussian_filter(raw[..., a], sigma)
        comp = zoom(comp, tuple(t / c for t, c in zip(shape, coarse)), order=1, mode="nearest")
        disp[..., a] = comp * amplitudes[a]
    return disp


def random_nonlinear(level: str, shape, seed: int) -> VectorField3:
    """Smooth random displacement, amplitude a small fraction of the extent.

    A coarse uniform field in [-1,1] is smoothed (kernel sigma drawn in
    coarse-grid voxels), upsampled to the full grid, and scaled per
    component by U(mu_min, mu_max) times the axis extent; smoothing and
    trilinear upsampling both keep the amplitude bound intact.
    """
    p = _level_params(level)["deformation"]
    rng = _rng(seed)
    amp = rng.uniform(p["nonlinear_scale_mu_min"], p["nonlinear_scale_mu_max"], 3)
    sigma = rng.uniform(1.0, p["nonlinear_scale_sigma_max"])
    coarse = tuple(max(4, s // 8) for s in shape)
    raw = rng.uniform(-1.0, 1.0, coarse + (3,))
    extents = tuple(amp[a] * shape[a] for a in range(3))
    return VectorField3(_smooth_displacement(shape, extents, sigma, raw))


def build_deformation(level: str, shape, seed: int) -> VectorField3:
    """Combined displacement: affine pull-back plus the smooth random field."""
    aff = random_affine(level, derive_seed(seed, "affine"), shape)
    u = affine_displacement(aff, shape)
    nl = random_nonlinear(level, shape, derive_seed(seed, "nonlinear"))
    return VectorField3(u.data + nl.data, u.spacing)


# ---------------------------------------------------------------------------
# Intensity corruptions
# ---------------------------------------------------------------------------

def _bias_field(shape, mean: float, amplitude: float, rng: Generator) -> np.ndarray:
    """exp(G) with G a smooth field of exact given mean and standard deviation."""
    coarse = tuple(max(4, s // 16) for s in shape)
    w = rng.standard_normal(coarse)
    w = zoom(w, tuple(t / c for t, c in zip(shape, coarse)), order=3, mode="nearest")
    w = (w - w.mean()) / w.std()
    return np.exp(mean + amplitude * w)


def apply_bias_field(
    img: ScalarField3, level: str, seed: int, info: dict[str, Any] | None = None
) -> ScalarField3:
    """Multiply by exp(G), G a smooth random field with drawn mean and spread."""
    p = _level_params(level)["bias_field"]
    rng = _rng(seed)
    mean = rng.uniform(p["mu_min"], p["mu_max"])
    amp = rng.uniform(p["sigma_min"], p["sigma_max"])
    field = _bias_field(img.shape, mean, amp, rng)
    if info is not None:
        info.update(bias_mean=float(mean), bias_amplitude=float(amp))
    return ScalarField3(np.clip(img.data * field, 0.0, 1.0), img.spacing)


def apply_noise(
    img: ScalarField3, level: str, seed: int, info: dict[str, Any] | None = None
) -> ScalarField3:
    """Additive Gaussian noise; sigma drawn on the 0-255 scale, applied on [0,1]."""
    p = _level_params(level)["noise"]
    rng = _rng(seed)
    sigma = rng.uniform(p["sigma_min"], p["sigma_max"]) / 255.0
    out = img.data + sigma * rng.standard_normal(img.shape)
    if info is not None:
        info.update(noise_sigma=float(sigma))
    return ScalarField3(np.clip(out, 0.0, 1.0), img.spacing)


def _resample_cycle(data: np.ndarray, factors) -> np.ndarray:
    """Blur, downsample by the per-axis factors, trilinearly resample back."""
    sigmas = tuple(f / 2.0 if f > 1.0 else 0.0 for f in factors)
    blurred = gaussian_filter(data, sigmas) if any(sigmas) else data
    down_shape = tuple(max(1, round(s / f)) for s, f in zip(data.shape, factors))
    down = zoom(blurred, tuple(d / s for d, s in zip(down_shape, data.shape)), order=1, mode="nearest")
    return zoom(down, tuple(s / d for s, d in zip(data.shape, down.shape)), order=1, mode="nearest")


def simulate_resolution(
    img: ScalarField3, level: str, seed: int, info: dict[str, Any] | None = None
) -> ScalarField3:
    """Partial-voluming simulation by blur + downsample + upsample cycles.

    With the level's low-field probability an isotropic cycle applies;
    with the anisotropic probability one random axis is collapsed as a
    thick-slice acquisition.  Both may fire.  Output shape always equals
    the input shape.  Draw count is independent of the triggers.
    """
    p = _level_params(level)["resolution"]
    rng = _rng(seed)
    u_low = rng.random()
    f_low = rng.uniform(*LOW_FIELD_FACTOR_RANGE)
    u_aniso = rng.random()
    axis = int(rng.integers(0, 3))
    f_aniso = rng.uniform(*ANISOTROPIC_FACTOR_RANGE)

    data = img.data
    low_fired = u_low < p["p_low_field"]
    aniso_fired = u_aniso < p["p_anisotropic"]
    if low_fired:
        data = _resample_cycle(data, (f_low,) * 3)
    if aniso_fired:
        factors = [1.0, 1.0, 1.0]
        factors[axis] = f_aniso
        data = _resample_cycle(data, tuple(factors))
    if info is not None:
        info.update(
            low_field=bool(low_fired), low_field_factor=float(f_low),
            anisotropic=bool(aniso_fired), anisotropic_axis=axis,
            anisotropic_factor=float(f_aniso),
        )
    return ScalarField3(np.clip(data, 0.0, 1.0), img.spacing)


# ---------------------------------------------------------------------------
# Full pipeline
# ---------------------------------------------------------------------------

def corrupt(
    sample: SampleRecord,
    level: str,
    seed: int,
    *,
    deform: bool = True,
    resolution: bool = True,
    bias: bool = True,
    noise: bool = True,
) -> SampleRecord:
    """Corrupt a sample at the given level.

    The deformation warps image, healthy ground truth, probability, and
    masks simultaneously; resolution, bias, and noise degrade the image
    only, leaving the targets clean.
    """
    _level_params(level)
    info: dict[str, Any] = {"level": level, "seed": int(seed)}
    image, healthy, pathology = sample.image, sample.healthy, sample.pathology
    pmask, brain = sample.pathology_mask, sample.brain

    if deform:
        disp = build_deformation(level, image.shape, derive_seed(seed, "deformation"))
        image = apply_deformation(image, disp)
        healthy = apply_deformation(healthy, disp)
        pathology = apply_deformation(pathology, disp)
        pmask = apply_deformation(pmask, disp)
        brain = apply_deformation(brain, disp)
        info["deformed"] = True
    if resolution:
        image = simulate_resolution(image, level, derive_seed(seed, "resolution"), info)
    if bias:
        image = apply_bias_field(image, level, derive_seed(seed, "bias"), info)
    if noise:
        image = apply_noise(image, level, derive_seed(seed, "noise"), info)

    prov = dict(sample.provenance)
    prov["corruption"] = info
    return SampleRecord(
        image=image, healthy=healthy, pathology=pathology,
        pathology_mask=pmask, brain=brain, provenance=prov,
    )
