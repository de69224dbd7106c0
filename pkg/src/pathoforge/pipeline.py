"""Batch generation: config parsing, seeded fan-out, sample emission.

A pipeline run is fully determined by its JSON config and master seed:
every sample's seed is derived from (master seed, subject id, sample
index), so re-runs are byte-identical and worker count cannot change any
output bytes.  Per-sample failures are recorded in the manifest without
aborting the batch.
"""

from __future__ import annotations

import json
import hashlib
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np
from numpy.random import Generator, Philox

from .corruption import LEVELS, corrupt
from .errors import ConfigError, ParameterError
from .fields import TransportFields
from .noise import rescale_to_probability
from .seeds import derive_seed
from .synthesis import (
    ContrastParams,
    EncodeParams,
    GenerationConfig,
    SampleRecord,
    make_sample,
)
from .transport import SolverConfig, transport
from .volume import (
    LabelVolume,
    Mask3,
    ScalarField3,
    as_mask,
    read_volume,
    write_volume,
)

SAMPLE_FILES = ("I.nii", "I0.nii", "P.nii", "mask.nii", "provenance.json")


def _canonical_json(obj) -> str:
    return json.dumps(obj, sort_keys=True, separators=(",", ":"))


def config_hash(mapping: dict) -> str:
    """Hash of the generative configuration; the output location is
    excluded so relocated runs of one config stay byte-identical."""
    reduced = {k: v for k, v in mapping.items() if k != "output_dir"}
    return hashlib.sha256(_canonical_json(reduced).encode()).hexdigest()


def _require_keys(mapping: dict, allowed: dict[str, type | tuple], where: str) -> None:
    for key in mapping:
        if key not in allowed:
            raise ConfigError(f"unknown config key {where}{key!r}")


@dataclass(frozen=True)
class PipelineConfig:
    labels: tuple[str, ...]
    output_dir: str
    pathology_source: str = "perlin"
    mask_dir: str | None = None
    label_roles: dict[int, str] = field(default_factory=dict)
    generation: GenerationConfig = GenerationConfig()
    corruption: str = "none"
    samples_per_subject: int = 1
    master_seed: int = 0
    emit_snapshots: tuple[float, ...] = ()
    raw: dict = field(default_factory=dict)

    @staticmethod
    def from_mapping(mapping: dict) -> "PipelineConfig":
        """Build a config from a JSON mapping, rejecting unknown keys."""
        top = {
            "labels": list, "output_dir": str, "pathology_source": str,
            "mask_dir": str, "label_roles": dict, "generation": dict,
            "corruption": str, "samples_per_subject": int, "master_seed": int,
            "emit_snapshots": list,
        }
        _require_keys(mapping, top, "")
        for req in ("labels", "output_dir"):
            if req not in mapping:
                raise ConfigError(f"missing required config key {req!r}")

        gen_map = dict(mapping.get("generation", {}))
        gen_keys = {
            "perlin_res": list, "percentile": float, "potential_res": list,
            "v_multiplier": float, "d_multiplier": float, "pad_shape": list,
            "transport_time": float, "solver": dict, "contrast": dict,
            "encode": dict,
        }
        _require_keys(gen_map, gen_keys, "generation.")

        solver_map = dict(gen_map.get("solver", {}))
        solver_keys = {
            "t_max": float, "cfl_safety": float, "stepper": str,
            "abs_tol": float, "rel_tol": float, "clamp_each_step": bool,
        }
        _require_keys(solver_map, solver_keys, "generation.solver.")
        solver = SolverConfig(**{**{"stepper": "fixed_euler"}, **solver_map})

        contrast_map = dict(gen_map.get("contrast", {}))
        _require_keys(
            contrast_map,
            {"mean_range": list, "std_range": list, "label_overrides": dict},
            "generation.contrast.",
        )
        overrides = {
            int(k): (float(v[0]), float(v[1]))
            for k, v in contrast_map.get("label_overrides", {}).items()
        }
        contrast = ContrastParams(
            mean_range=tuple(contrast_map.get("mean_range", (0.1, 0.9))),
            std_range=tuple(contrast_map.get("std_range", (0.02, 0.10))),
            label_overrides=overrides,
        )

        encode_map = dict(gen_map.get("encode", {}))
        _require_keys(
            encode_map,
            {"sign_flip_prob": float, "delta_smooth_sigma": float, "support_threshold": float},
            "generation.encode.",
        )
        encode = EncodeParams(**encode_map)

        tt = gen_map.get("transport_time")
        generation = GenerationConfig(
            perlin_res=tuple(gen_map.get("perlin_res", (4, 4, 4))),
            percentile=float(gen_map.get("percentile", 97.0)),
            potential_res=tuple(gen_map.get("potential_res", (4, 4, 4))),
            v_multiplier=float(gen_map.get("v_multiplier", 1.0)),
            d_multiplier=float(gen_map.get("d_multiplier", 0.8)),
            pad_shape=tuple(gen_map.get("pad_shape", (200, 200, 200))),
            solver=solver,
            transport_time=None if tt is None else float(tt),
            contrast=contrast,
            encode=encode,
        )

        corruption = mapping.get("corruption", "none")
        if corruption not in ("none",) + LEVELS:
            raise ConfigError(f"unknown corruption level {corruption!r}")
        source = mapping.get("pathology_source", "perlin")
        if source not in ("perlin", "mask_dir"):
            raise ConfigError(f"unknown pathology_source {source!r}")
        if source == "mask_dir" and not mapping.get("mask_dir"):
            raise ConfigError("pathology_source 'mask_dir' requires mask_dir")
        samples = int(mapping.get("samples_per_subject", 1))
        if samples < 1:
            raise ConfigError("samples_per_subject must be >= 1")

        return PipelineConfig(
            labels=tuple(str(p) for p in mapping["labels"]),
            output_dir=str(mapping["output_dir"]),
            pathology_source=source,
            mask_dir=mapping.get("mask_dir"),
            label_roles={int(k): str(v) for k, v in mapping.get("label_roles", {}).items()},
            generation=generation,
            corruption=corruption,
            samples_per_subject=samples,
            master_seed=int(mapping.get("master_seed", 0)),
            emit_snapshots=tuple(float(t) for t in mapping.get("emit_snapshots", [])),
            raw=dict(mapping),
        )

    @staticmethod
    def from_file(path: str | Path) -> "PipelineConfig":
        try:
            mapping = json.loads(Path(path).read_text())
        except json.JSONDecodeError as exc:
            raise ConfigError(f"{path}: invalid JSON: {exc}") from exc
        return PipelineConfig.from_mapping(mapping)

    def validate_paths(self) -> None:
        for p in self.labels:
            if not Path(p).exists():
                raise ConfigError(f"label volume not found: {p}")
        if self.pathology_source == "mask_dir":
            d = Path(self.mask_dir)
            if not d.is_dir() or not sorted(d.glob("*.nii")):
                raise ConfigError(f"mask_dir has no .nii volumes: {self.mask_dir}")


# ---------------------------------------------------------------------------
# Sample directory serialization
# ---------------------------------------------------------------------------

def write_sample_dir(record: SampleRecord, out_dir: str | Path) -> Path:
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    write_volume(record.image, out / "I.nii")
    write_volume(record.healthy, out / "I0.nii")
    write_volume(record.pathology, out / "P.nii")
    write_volume(record.pathology_mask, out / "mask.nii")
    (out / "provenance.json").write_text(
        json.dumps(record.provenance, indent=2, sort_keys=True) + "\n"
    )
    return out


def read_sample_dir(path: str | Path) -> SampleRecord:
    """Rebuild a sample record from a written directory.

    The brain mask is not serialized; the support of the healthy image
    stands in for it (background synthesizes to exactly zero).
    """
    path = Path(path)
    image = read_volume(path / "I.nii")
    healthy = read_volume(path / "I0.nii")
    pathology = read_volume(path / "P.nii")
    mask = as_mask(read_volume(path / "mask.nii"))
    prov = json.loads((path / "provenance.json").read_text())
    return SampleRecord(
        image=image, healthy=healthy, pathology=pathology,
        pathology_mask=mask,
        brain=Mask3(healthy.data > 0, healthy.spacing),
        provenance=prov,
    )


# ---------------------------------------------------------------------------
# Job execution
# ---------------------------------------------------------------------------

def _pick_pathology_init(cfg: PipelineConfig, labels: LabelVolume, seed: int):
    if cfg.pathology_source != "mask_dir":
        return None
    candidates = sorted(Path(cfg.mask_dir).glob("*.nii"))
    rng = Generator(Philox(derive_seed(seed, "mask-pick")))
    chosen = candidates[int(rng.integers(0, len(candidates)))]
    vol = read_volume(chosen)
    data = vol.data.astype(np.float64)
    if data.shape != labels.shape:
        raise ParameterError(
            f"pathology volume {chosen.name} shape {data.shape} != labels {labels.shape}"
        )
    return ScalarField3(data, labels.spacing)


def generate_one(cfg: PipelineConfig, subject_path: str, sample_index: int) -> SampleRecord:
    """Generate (and corrupt, if configured) a single sample in memory."""
    subject = Path(subject_path).stem
    seed = derive_seed(cfg.master_seed, subject, sample_index)
    labels = read_volume(subject_path)
    if not isinstance(labels, LabelVolume):
        raise ConfigError(f"{subject_path} is not an integer label volume")
    if cfg.label_roles:
        labels = labels.with_roles(cfg.label_roles)
    init = _pick_pathology_init(cfg, labels, seed)
    record = make_sample(labels, cfg.generation, seed, init)
    record.provenance["subject"] = subject
    record.provenance["sample_index"] = sample_index
    if cfg.corruption != "none":
        record = corrupt(record, cfg.corruption, derive_seed(seed, "corrupt"))
    record.provenance["config_hash"] = config_hash(cfg.raw)
    return record


def _run_job(args) -> dict:
    cfg_mapping, subject_path, index = args
    cfg = PipelineConfig.from_mapping(cfg_mapping)
    subject = Path(subject_path).stem
    entry = {
        "subject": subject,
        "index": index,
        "seed": derive_seed(cfg.master_seed, subject, index),
        "dir": f"{subject}__{index:04d}",
        "status": "ok",
    }
    started = time.perf_counter()
    try:
        record = generate_one(cfg, subject_path, index)
        write_sample_dir(record, Path(cfg.output_dir) / entry["dir"])
        if cfg.emit_snapshots:
            _emit_sample_snapshots(cfg, record, subject_path, index)
    except Exception as exc:  # recorded, not fatal to the batch
        entry["status"] = "error"
        entry["error"] = f"{type(exc).__name__}: {exc}"
    entry["wall_time_s"] = round(time.perf_counter() - started, 3)
    return entry


def _emit_sample_snapshots(cfg, record, subject_path, index):
    labels = read_volume(subject_path)
    if cfg.label_roles:
        labels = labels.with_roles(cfg.label_roles)
    seed = derive_seed(cfg.master_seed, Path(subject_path).stem, index)
    init = _pick_pathology_init(cfg, labels, seed)
    traj = trajectory_from_config(labels, cfg.generation, seed, cfg.emit_snapshots, init)
    out = Path(cfg.output_dir) / f"{Path(subject_path).stem}__{index:04d}" / "snapshots"
    snapshot_export(traj, cfg.emit_snapshots, out)


def run_pipeline(cfg: PipelineConfig, workers: int = 1, extra_flags: dict | None = None) -> dict:
    """Execute the batch, write the manifest, and return it."""
    cfg.validate_paths()
    out_root = Path(cfg.output_dir)
    out_root.mkdir(parents=True, exist_ok=True)
    jobs = [
        (cfg.raw, path, idx)
        for path in cfg.labels
        for idx in range(cfg.samples_per_subject)
    ]
    if workers > 1:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            entries = list(pool.map(_run_job, jobs))
    else:
        entries = [_run_job(j) for j in jobs]
    entries.sort(key=lambda e: (e["subject"], e["index"]))

    manifest = {
        "config": cfg.raw,
        "config_hash": config_hash(cfg.raw),
        "master_seed": cfg.master_seed,
        "workers": workers,
        "flags": extra_flags or {},
        "samples": entries,
        "failed": sum(1 for e in entries if e["status"] != "ok"),
    }
    (out_root / "manifest.json").write_text(json.dumps(manifest, indent=2, sort_keys=True) + "\n")
    return manifest


# ---------------------------------------------------------------------------
# Transport snapshots
# ---------------------------------------------------------------------------

def transport_trajectory(
    p0: ScalarField3,
    fields: TransportFields,
    domain: Mask3,
    cfg: SolverConfig,
    times,
) -> list[ScalarField3]:
    """Field state at each requested time, by re-integration from t=0.

    Each snapshot is bitwise identical to a fresh run whose horizon is
    that time; the cost is one integration per requested time.
    """
    times = [float(t) for t in times]
    for t in times:
        if t < 0 or t > cfg.t_max:
            raise ParameterError(f"snapshot time {t} outside [0, t_max={cfg.t_max}]")
    out = []
    for t in times:
        if t == 0.0:
            out.append(ScalarField3(p0.data.copy(), p0.spacing))
        else:
            out.append(transport(p0, fields, domain, replace(cfg, t_max=t)))
    return out


def trajectory_from_config(
    labels, generation, seed, times, pathology_init=None
) -> list[ScalarField3]:
    """Recreate a sample's transport inputs from its seed and snapshot them."""
    from .fields import make_diffusion, make_velocity
    from .noise import PerlinParams, perlin_noise_3d, threshold_to_anomaly
    from .volume import brain_mask

    domain = brain_mask(labels)
    if pathology_init is not None:
        p0, _ = rescale_to_probability(pathology_init, domain)
    else:
        perlin = perlin_noise_3d(
            PerlinParams(
                shape=labels.shape, res=generation.perlin_res, seed=derive_seed(seed, "p0")
            )
        )
        p0, _ = threshold_to_anomaly(perlin, generation.percentile, domain)
    velocity = make_velocity(
        labels.shape, generation.potential_res, generation.v_multiplier,
        derive_seed(seed, "velocity"), generation.pad_shape,
    )
    diffusivity = make_diffusion(
        labels.shape, generation.potential_res, generation.d_multiplier,
        derive_seed(seed, "diffusion"), generation.pad_shape,
    )
    fields = TransportFields(velocity, diffusivity)
    return transport_trajectory(p0, fields, domain, generation.solver, times)


def _write_pgm(path: Path, plane: np.ndarray) -> None:
    img = np.clip(np.rint(plane * 255.0), 0, 255).astype(np.uint8)
    with open(path, "wb") as f:
        f.write(f"P5\n{img.shape[1]} {img.shape[0]}\n255\n".encode())
        f.write(img.tobytes())


def snapshot_export(states, times, out_dir: str | Path) -> list[Path]:
    """Write central-slice PGMs (three planes) plus a raw field per time."""
    if len(states) != len(times):
        raise ParameterError("one state per requested time is required")
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    written = []
    planes = ("sagittal", "coronal", "axial")
    for state, t in zip(states, times):
        tag = f"t{float(t):g}"
        nx, ny, nz = state.shape
        slices = (
            state.data[nx // 2, :, :],
            state.data[:, ny // 2, :],
            state.data[:, :, nz // 2],
        )
        for name, plane in zip(planes, slices):
            p = out / f"{tag}_{name}.pgm"
            _write_pgm(p, plane)
            written.append(p)
        raw = out / f"{tag}.raw"
        write_volume(state, raw)
        written.append(raw)
    return written
