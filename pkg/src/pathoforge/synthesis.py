"""Random-contrast image synthesis and anomaly intensity encoding.

A healthy image is synthesized by drawing one Gaussian intensity model per
anatomical label (domain randomization over modalities); the anomaly is
then written into it as ``I = clamp(I0 + dI * P, 0, 1)``, where the offset
field dI is drawn around -mu_white/2 when white matter is brighter than
gray (T1w-like, dark lesions) and +mu_white/2 otherwise (T2w/FLAIR-like,
bright lesions), with a per-volume random sign inversion.
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace
from typing import Any

import numpy as np
from numpy.random import Generator, Philox
from scipy.ndimage import gaussian_filter

from .errors import ConfigError, DegenerateInputError, ParameterError
from .fields import TransportFields, make_diffusion, make_velocity
from .noise import PerlinParams, perlin_noise_3d, rescale_to_probability, threshold_to_anomaly
from .seeds import derive_seed
from .transport import SolverConfig, transport
from .volume import (
    LabelVolume,
    Mask3,
    ROLE_BACKGROUND,
    ROLE_GRAY,
    ROLE_WHITE,
    ScalarField3,
    brain_mask,
    validate_probability,
)


@dataclass(frozen=True)
class ContrastParams:
    """Per-label Gaussian intensity model bounds, on the normalized [0,1] scale."""

    mean_range: tuple[float, float] = (0.1, 0.9)
    std_range: tuple[float, float] = (0.02, 0.10)
    label_overrides: dict[int, tuple[float, float]] = field(default_factory=dict)
    seed: int = 0

    def __post_init__(self):
        # lo == hi is a legal point range (deterministic piecewise-constant draw)
        for lo, hi in (self.mean_range, self.std_range):
            if not 0.0 <= lo <= hi <= 1.0:
                raise ParameterError(f"ranges must satisfy 0 <= lo <= hi <= 1, got ({lo},{hi})")


@dataclass(frozen=True)
class EncodeParams:
    sign_flip_prob: float = 0.2
    delta_smooth_sigma: float = 1.0
    support_threshold: float = 0.0    # anomaly support is {P > this}
    seed: int = 0

    def __post_init__(self):
        if not 0.0 <= self.sign_flip_prob <= 1.0:
            raise ParameterError(f"sign_flip_prob must lie in [0,1], got {self.sign_flip_prob}")
        if self.delta_smooth_sigma < 0:
            raise ParameterError("delta_smooth_sigma must be >= 0")


def draw_label_stats(labels: LabelVolume, params: ContrastParams) -> dict[int, tuple[float, float]]:
    """Seeded (mean, std) draw per present label, in ascending label order.

    Draws happen for every label before overrides apply, so adding an
    override never shifts the other labels' values.  Background labels are
    forced to (0, 0) unless explicitly overridden.
    """
    rng = Generator(Philox(params.seed & (2**64 - 1)))
    stats: dict[int, tuple[float, float]] = {}
    for lab in labels.labels_present():
        mu = rng.uniform(*params.mean_range)
        sd = rng.uniform(*params.std_range)
        stats[lab] = (float(mu), float(sd))
    for lab, (mu, sd) in params.label_overrides.items():
        if int(lab) in stats:
            stats[int(lab)] = (float(mu), float(sd))
    for lab in stats:
        role = labels.roles.get(lab)
        if role is None:
            raise ConfigError(f"label {lab} has no tissue role and no override")
        if role == ROLE_BACKGROUND and int(lab) not in {int(k) for k in params.label_overrides}:
            stats[lab] = (0.0, 0.0)
    return stats


def synthesize_contrast(labels: LabelVolume, params: ContrastParams) -> ScalarField3:
    """Draw a random-modality healthy image from a label map."""
    stats = draw_label_stats(labels, params)
    top = int(labels.data.max()) + 1
    mu_lut = np.zeros(top, dtype=np.float64)
    sd_lut = np.zeros(top, dtype=np.float64)
    for lab, (mu, sd) in stats.items():
        mu_lut[lab] = mu
        sd_lut[lab] = sd
    rng = Generator(Philox(derive_seed(params.seed, "voxels")))
    z = rng.standard_normal(labels.shape)
    img = mu_lut[labels.data] + sd_lut[labels.data] * z
    return ScalarField3(np.clip(img, 0.0, 1.0), labels.spacing)


def tissue_means(image: ScalarField3, labels: LabelVolume) -> tuple[float, float]:
    """Mean image intensity over white-matter and gray-matter voxels."""
    out = []
    for role in (ROLE_WHITE, ROLE_GRAY):
        sel = labels.role_mask(role).data
        if not sel.any():
            raise DegenerateInputError(f"no voxels with role {role}")
        out.append(float(image.data[sel].mean()))
    return out[0], out[1]


def encode_anomaly(
    image0: ScalarField3,
    pathology: ScalarField3,
    labels: LabelVolume,
    params: EncodeParams,
    info: dict[str, Any] | None = None,
) -> tuple[ScalarField3, ScalarField3]:
    """Encode a pathology probability field into a healthy image.

    Returns (diseased image, intensity offset field).  The offset is zero
    outside the anomaly support and the diseased image equals the healthy
    one exactly wherever the probability is zero.
    """
    if image0.shape != pathology.shape or image0.shape != labels.shape:
        raise ParameterError(
            f"shape mismatch: image {image0.shape}, pathology {pathology.shape}, "
            f"labels {labels.shape}"
        )
    validate_probability(pathology, "pathology probability")

    support = pathology.data > params.support_threshold
    mu_w, mu_g = tissue_means(image0, labels)
    base_mean = -mu_w / 2.0 if mu_w > mu_g else mu_w / 2.0

    rng = Generator(Philox(params.seed & (2**64 - 1)))
    flipped = bool(rng.random() < params.sign_flip_prob)
    mean = -base_mean if flipped else base_mean
    std = mu_w / 2.0

    delta = np.zeros(image0.shape, dtype=np.float64)
    if support.any():
        z = rng.standard_normal(image0.shape)
        delta[support] = mean + std * z[support]
        if params.delta_smooth_sigma > 0:
            delta = gaussian_filter(delta, params.delta_smooth_sigma)
            delta[~support] = 0.0

    img = np.clip(image0.data + delta * pathology.data, 0.0, 1.0)
    if info is not None:
        info.update(
            mu_white=mu_w, mu_gray=mu_g, delta_mean=mean, delta_std=std,
            sign_flipped=flipped,
        )
    return ScalarField3(img, image0.spacing), ScalarField3(delta, image0.spacing)


# ---------------------------------------------------------------------------
# End-to-end sample assembly
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class GenerationConfig:
    """All randomization hyperparameters for one synthetic sample."""

    perlin_res: tuple[int, int, int] = (4, 4, 4)
    percentile: float = 97.0
    potential_res: tuple[int, int, int] = (4, 4, 4)
    v_multiplier: float = 1.0
    d_multiplier: float = 0.8
    pad_shape: tuple[int, int, int] = (200, 200, 200)
    solver: SolverConfig = SolverConfig(stepper="fixed_euler")
    transport_time: float | None = None          # None: draw uniformly from [0, t_max]
    contrast: ContrastParams = ContrastParams()
    encode: EncodeParams = EncodeParams()


@dataclass
class SampleRecord:
    """One generated training sample plus its provenance."""

    image: ScalarField3          # diseased image I
    healthy: ScalarField3        # ground-truth healthy image I0
    pathology: ScalarField3      # transported probability field P
    pathology_mask: Mask3        # support of P
    brain: Mask3
    provenance: dict[str, Any]


def make_sample(
    labels: LabelVolume,
    config: GenerationConfig,
    seed: int,
    pathology_init: ScalarField3 | None = None,
) -> SampleRecord:
    """Run the full generation chain for one sample.

    Initial anomaly -> transport -> random contrast -> intensity encoding.
    ``pathology_init`` supplies a gold-standard lesion volume already in
    subject space; otherwise the initial anomaly is thresholded Perlin
    noise.  All stage seeds derive from ``seed``.
    """
    domain = brain_mask(labels)
    prov: dict[str, Any] = {"seed": int(seed), "shape": list(labels.shape)}

    if pathology_init is not None:
        p0, _ = rescale_to_probability(pathology_init, domain)
        prov["pathology_source"] = "mask"
    else:
        perlin = perlin_noise_3d(
            PerlinParams(
                shape=labels.shape,
                res=config.perlin_res,
                seed=derive_seed(seed, "p0"),
            )
        )
        p0, _ = threshold_to_anomaly(perlin, config.percentile, domain)
        prov["pathology_source"] = "perlin"
        prov["percentile"] = config.percentile

    velocity = make_velocity(
        labels.shape, config.potential_res, config.v_multiplier,
        derive_seed(seed, "velocity"), config.pad_shape,
    )
    diffusivity = make_diffusion(
        labels.shape, config.potential_res, config.d_multiplier,
        derive_seed(seed, "diffusion"), config.pad_shape,
    )
    fields = TransportFields(velocity, diffusivity, config.v_multiplier, config.d_multiplier)

    if config.transport_time is None:
        rng = Generator(Philox(derive_seed(seed, "time")))
        t = float(rng.uniform(0.0, config.solver.t_max))
    else:
        t = float(config.transport_time)
        if t > config.solver.t_max:
            raise ParameterError(f"transport_time {t} exceeds t_max {config.solver.t_max}")
    solver = replace(config.solver, t_max=t)
    p = transport(p0, fields, domain, solver) if t > 0 else p0
    prov["transport_time"] = t
    prov["solver"] = {
        "stepper": solver.stepper, "cfl_safety": solver.cfl_safety,
        "clamp_each_step": solver.clamp_each_step,
    }

    contrast = replace(config.contrast, seed=derive_seed(seed, "contrast"))
    healthy = synthesize_contrast(labels, contrast)
    prov["label_stats"] = {
        str(k): list(v) for k, v in sorted(draw_label_stats(labels, contrast).items())
    }

    encode = replace(config.encode, seed=derive_seed(seed, "encode"))
    enc_info: dict[str, Any] = {}
    image, _delta = encode_anomaly(healthy, p, labels, encode, enc_info)
    prov["encode"] = enc_info
    prov["v_multiplier"] = config.v_multiplier
    prov["d_multiplier"] = config.d_multiplier

    support = Mask3(p.data > encode.support_threshold, labels.spacing)
    return SampleRecord(
        image=image, healthy=healthy, pathology=p,
        pathology_mask=support, brain=domain, provenance=prov,
    )
