"""Training objectives and image quality metrics, as pure evaluations.

The reconstruction loss weights voxels by data source: synthetic samples
supervise the whole brain with extra attention on pathology, real samples
mask pathology out entirely.  The intra-subject contrastive loss rewards
similarity between a reconstruction and the contralateral healthy
counterpart while penalizing similarity to the diseased input, evaluated
over the pathology region minus its mirrored overlap.  No derivatives are
provided; a trainer consuming these terms differentiates them itself.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy.ndimage import uniform_filter
from scipy.special import logsumexp

from .errors import DegenerateInputError, DimensionError, ParameterError
from .volume import Mask3, ScalarField3

PSNR_INF = math.inf


@dataclass(frozen=True)
class ReconLossParams:
    """Weighting for the voxel-wise reconstruction loss.

    ``real_data`` selects the real-data branch (pathology masked out);
    synthetic data gets full supervision with ``1 + attention_weight`` on
    pathology voxels.
    """

    pathology_mask: Mask3
    real_data: bool = False
    gradient_weight: float = 0.0
    attention_weight: float = 1.0

    def __post_init__(self):
        if self.gradient_weight < 0 or self.attention_weight < 0:
            raise ParameterError("loss weights must be non-negative")


@dataclass(frozen=True)
class ContrastLossParams:
    """Temperatures and evaluation region for the contrastive loss."""

    region: Mask3
    alpha: float = 1.0
    beta: float = 1.0
    gamma: float = 1.0
    weight: float = 2.0

    def __post_init__(self):
        for name, v in (("alpha", self.alpha), ("beta", self.beta), ("gamma", self.gamma)):
            if v <= 0:
                raise ParameterError(f"temperature {name} must be positive, got {v}")
        if self.weight < 0:
            raise ParameterError("weight must be non-negative")


def _grad_l1(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    diff = np.zeros_like(a)
    for axis in range(3):
        diff += np.abs(np.gradient(a, axis=axis) - np.gradient(b, axis=axis))
    return diff


def recon_loss(pred: ScalarField3, target: ScalarField3, params: ReconLossParams) -> float:
    """Weighted L1 (+ optional gradient L1) reconstruction loss, mean per voxel."""
    if pred.shape != target.shape or pred.shape != params.pathology_mask.shape:
        raise DimensionError(
            f"shape mismatch: pred {pred.shape}, target {target.shape}, "
            f"mask {params.pathology_mask.shape}"
        )
    err = np.abs(pred.data - target.data)
    if params.gradient_weight > 0:
        err = err + params.gradient_weight * _grad_l1(pred.data, target.data)
    pathology_weight = 0.0 if params.real_data else 1.0 + params.attention_weight
    k = np.where(params.pathology_mask.data, pathology_weight, 1.0)
    return float((k * err).mean())


def contrast_loss(
    pred: ScalarField3,
    original: ScalarField3,
    mirrored: ScalarField3,
    params: ContrastLossParams,
) -> float:
    """Intra-subject contrastive loss over the unmirror-matched pathology region.

    With a = pred * mirrored and b = pred * original (voxelwise products),
    returns -log( sum e^{a/alpha} / (sum e^{b/gamma} + sum e^{a/beta}) ),
    all sums over the region, evaluated in log-sum-exp form.  An empty
    region contributes 0.
    """
    if pred.shape != original.shape or pred.shape != mirrored.shape:
        raise DimensionError("contrast loss operands must share shape")
    if pred.shape != params.region.shape:
        raise DimensionError("region mask must share the field shape")
    sel = params.region.data
    if not sel.any():
        return 0.0
    a = pred.data[sel] * mirrored.data[sel]
    b = pred.data[sel] * original.data[sel]
    log_num = logsumexp(a / params.alpha)
    log_den = logsumexp(np.concatenate([b / params.gamma, a / params.beta]))
    return float(log_den - log_num)


def total_loss(recon: float, contrast: float, contrast_weight: float = 2.0) -> float:
    return recon + contrast_weight * contrast


# ---------------------------------------------------------------------------
# Image quality metrics
# ---------------------------------------------------------------------------

def _check_metric_inputs(a: ScalarField3, b: ScalarField3, mask: Mask3) -> np.ndarray:
    if a.shape != b.shape or a.shape != mask.shape:
        raise DimensionError("metric operands must share shape")
    sel = mask.data
    if not sel.any():
        raise DegenerateInputError("empty evaluation mask")
    return sel


def metric_l1(a: ScalarField3, b: ScalarField3, mask: Mask3) -> float:
    sel = _check_metric_inputs(a, b, mask)
    return float(np.abs(a.data[sel] - b.data[sel]).mean())


def metric_psnr(a: ScalarField3, b: ScalarField3, mask: Mask3) -> float:
    """Peak signal-to-noise ratio on [0,1] data; identical inputs give +inf."""
    sel = _check_metric_inputs(a, b, mask)
    mse = float(((a.data[sel] - b.data[sel]) ** 2).mean())
    if mse == 0.0:
        return PSNR_INF
    return 10.0 * math.log10(1.0 / mse)


_SSIM_WIN = 7
_SSIM_K1, _SSIM_K2 = 0.01, 0.03


def metric_ssim(a: ScalarField3, b: ScalarField3, mask: Mask3) -> float:
    """Mean local SSIM over in-mask window centers, 7^3 windows, range 1.

    Windows use sample (unbiased) variance, matching the canonical
    implementation; centers closer than half a window to the volume edge
    are excluded so every window is fully supported.
    """
    sel = _check_metric_inputs(a, b, mask)
    for n in a.shape:
        if n < _SSIM_WIN:
            raise DimensionError(f"volume extent {n} smaller than SSIM window {_SSIM_WIN}")
    x, y = a.data, b.data
    win = _SSIM_WIN
    n = win**3
    cov_norm = n / (n - 1)
    ux = uniform_filter(x, win)
    uy = uniform_filter(y, win)
    uxx = uniform_filter(x * x, win)
    uyy = uniform_filter(y * y, win)
    uxy = uniform_filter(x * y, win)
    vx = cov_norm * (uxx - ux * ux)
    vy = cov_norm * (uyy - uy * uy)
    vxy = cov_norm * (uxy - ux * uy)

    c1 = (_SSIM_K1 * 1.0) ** 2
    c2 = (_SSIM_K2 * 1.0) ** 2
    ssim_map = ((2 * ux * uy + c1) * (2 * vxy + c2)) / (
        (ux * ux + uy * uy + c1) * (vx + vy + c2)
    )

    pad = win // 2
    interior = np.zeros(a.shape, dtype=bool)
    interior[pad:-pad, pad:-pad, pad:-pad] = True
    use = sel & interior
    if not use.any():
        raise DegenerateInputError("mask has no fully supported SSIM windows")
    return float(ssim_map[use].mean())


def metric_dice(a: Mask3, b: Mask3) -> float:
    """Dice overlap 2|A&B|/(|A|+|B|); two empty masks count as identical."""
    if a.shape != b.shape:
        raise DimensionError("dice masks must share shape")
    na, nb = a.count(), b.count()
    if na + nb == 0:
        return 1.0
    inter = int((a.data & b.data).sum())
    return 2.0 * inter / (na + nb)


def anomaly_map(
    image_in: ScalarField3, image_recon: ScalarField3, mask: Mask3 | None = None
) -> ScalarField3:
    """Voxelwise |input - reconstruction|, min-max rescaled to [0,1].

    Rescaling statistics come from the mask (whole volume if omitted); a
    constant difference field maps to all zeros.
    """
    if image_in.shape != image_recon.shape:
        raise DimensionError("anomaly map operands must share shape")
    diff = np.abs(image_in.data - image_recon.data)
    sel = mask.data if mask is not None else np.ones(diff.shape, dtype=bool)
    if mask is not None and mask.shape != image_in.shape:
        raise DimensionError("mask must share the image shape")
    lo = diff[sel].min()
    hi = diff[sel].max()
    if hi <= lo:
        return ScalarField3(np.zeros_like(diff), image_in.spacing)
    out = np.clip((diff - lo) / (hi - lo), 0.0, 1.0)
    return ScalarField3(out, image_in.spacing)


def metrics_report(
    pred: ScalarField3, target: ScalarField3, mask: Mask3, mask_threshold: float = 0.5
) -> dict[str, float]:
    """The four scores as one mapping; dice compares >= threshold binarizations."""
    return {
        "l1": metric_l1(pred, target, mask),
        "psnr": metric_psnr(pred, target, mask),
        "ssim": metric_ssim(pred, target, mask),
        "dice": metric_dice(
            Mask3(pred.data >= mask_threshold, pred.spacing),
            Mask3(target.data >= mask_threshold, target.spacing),
        ),
    }
