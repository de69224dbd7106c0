"""Fluid-driven synthetic pathology data engine for 3D brain volumes.

Pipeline: seed an anomaly probability field (thresholded Perlin noise or
a real lesion mask), evolve it by advection-diffusion inside the brain
mask, synthesize a random-modality healthy image from anatomy labels,
encode the anomaly as an intensity offset, and corrupt the result like a
clinical acquisition.  Loss functions and image metrics for training on
such samples are provided as pure evaluations.
"""

from .errors import (
    ConfigError,
    DegenerateInputError,
    DimensionError,
    ForgeError,
    FormatError,
    InvariantError,
    NumericalInstabilityError,
    ParameterError,
    UnsupportedFormatError,
)
from .volume import (
    AXIS_CONVENTION,
    LabelVolume,
    Mask3,
    ScalarField3,
    VectorField3,
    apply_deformation,
    as_mask,
    brain_mask,
    mask_intersect,
    mask_set_ops,
    mask_subtract,
    mask_union,
    read_volume,
    sagittal_flip,
    write_volume,
)
from .noise import PerlinParams, perlin_noise_3d, rescale_to_probability, threshold_to_anomaly
from .fields import (
    TransportFields,
    curl,
    divergence,
    make_diffusion,
    make_diffusion_potential,
    make_velocity,
)
from .transport import (
    SolverConfig,
    advection_rhs,
    diffusion_rhs,
    stable_dt,
    transport,
)
from .synthesis import (
    ContrastParams,
    EncodeParams,
    GenerationConfig,
    SampleRecord,
    encode_anomaly,
    make_sample,
    synthesize_contrast,
    tissue_means,
)
from .corruption import (
    CORRUPTION_TABLE,
    apply_bias_field,
    apply_noise,
    compose_affine,
    corrupt,
    dump_parameter_table,
    parameter_table,
    random_affine,
    random_nonlinear,
    simulate_resolution,
)
from .objective import (
    ContrastLossParams,
    ReconLossParams,
    anomaly_map,
    contrast_loss,
    metric_dice,
    metric_l1,
    metric_psnr,
    metric_ssim,
    metrics_report,
    recon_loss,
    total_loss,
)
from .pipeline import (
    PipelineConfig,
    generate_one,
    read_sample_dir,
    run_pipeline,
    snapshot_export,
    transport_trajectory,
    write_sample_dir,
)
from .seeds import derive_seed, splitmix64

__version__ = "0.1.0"
