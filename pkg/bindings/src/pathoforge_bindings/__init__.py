"""Thin scripting interface over the pathoforge data engine.

Four entry points so ML training loops can draw samples on-the-fly:
``py_make_sample``, ``py_transport``, ``py_perlin``, ``py_metrics``.
No logic lives here; every computation routes through the core package,
so binding outputs are bit-identical to the batch CLI for equal seeds.
Arrays are exchanged as numpy ndarrays (read-only views of core buffers
where possible).
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Any, Mapping

import numpy as np

from pathoforge import (
    Mask3,
    PerlinParams,
    PipelineConfig,
    ScalarField3,
    SolverConfig,
    TransportFields,
    VectorField3,
    metrics_report,
    perlin_noise_3d,
    threshold_to_anomaly,
    transport,
)
from pathoforge.pipeline import generate_one

__all__ = ["BoundSample", "py_make_sample", "py_transport", "py_perlin", "py_metrics"]


@dataclass(frozen=True)
class BoundSample:
    """Dense-array view of one generated sample plus its provenance."""

    image: np.ndarray
    healthy: np.ndarray
    pathology: np.ndarray
    mask: np.ndarray
    brain: np.ndarray
    spacing: tuple[float, float, float]
    provenance: dict[str, Any]


def py_make_sample(
    config_mapping: Mapping[str, Any],
    subject: str | None = None,
    sample_index: int = 0,
) -> BoundSample:
    """Generate one sample in memory from a pipeline config mapping.

    The mapping uses exactly the batch-generation JSON schema (unknown
    keys are rejected by name).  ``subject`` picks one of the configured
    label volumes by path; the first is used when omitted.  Output arrays
    are numerically identical to what the CLI writes for the same seed.
    """
    cfg = PipelineConfig.from_mapping(dict(config_mapping))
    path = subject if subject is not None else cfg.labels[0]
    record = generate_one(cfg, str(path), int(sample_index))
    return BoundSample(
        image=record.image.data,
        healthy=record.healthy.data,
        pathology=record.pathology.data,
        mask=record.pathology_mask.data,
        brain=record.brain.data,
        spacing=record.image.spacing,
        provenance=record.provenance,
    )


def py_transport(
    p0: np.ndarray,
    velocity: np.ndarray,
    diffusivity: np.ndarray,
    domain: np.ndarray | None = None,
    spacing=(1.0, 1.0, 1.0),
    **solver_kwargs,
) -> np.ndarray:
    """Advect-diffuse an initial probability array; solver kwargs mirror
    the core solver config (t_max, stepper, cfl_safety, ...)."""
    p = ScalarField3(p0, spacing)
    dom = Mask3(
        np.ones(p.shape, dtype=bool) if domain is None else domain, spacing
    )
    fields = TransportFields(
        VectorField3(velocity, spacing), ScalarField3(diffusivity, spacing)
    )
    return transport(p, fields, dom, SolverConfig(**solver_kwargs)).data


def py_perlin(
    shape,
    res,
    seed: int = 0,
    tileable=(False, False, False),
    percentile: float | None = None,
    domain: np.ndarray | None = None,
):
    """Seeded Perlin noise; with a percentile, returns the thresholded
    probability field and its support mask instead."""
    noise = perlin_noise_3d(
        PerlinParams(shape=tuple(shape), res=tuple(res), tileable=tuple(tileable), seed=seed)
    )
    if percentile is None:
        return noise.data
    dom = Mask3(np.ones(noise.shape, dtype=bool) if domain is None else domain)
    p0, mask = threshold_to_anomaly(noise, percentile, dom)
    return p0.data, mask.data


def py_metrics(
    pred: np.ndarray, target: np.ndarray, mask: np.ndarray | None = None
) -> dict[str, float]:
    """The l1/psnr/ssim/dice report, identical to the CLI's JSON output."""
    a = ScalarField3(pred)
    b = ScalarField3(target)
    m = Mask3(np.ones(a.shape, dtype=bool) if mask is None else mask)
    return metrics_report(a, b, m)
