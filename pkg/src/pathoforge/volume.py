"""Dense 3D grid containers, mask algebra, and volume file I/O.

Axis convention (recorded in every sidecar): axis 0 runs left-right (the
sagittal flip axis), axis 1 posterior-anterior, axis 2 inferior-superior.
Data lives in memory as float64 (scalars), int32 (labels), or bool
(masks); scalar volumes are written to disk as float32.

Two file formats are supported:

* A NIfTI-1 single-file (``.nii``) subset: 348-byte little-endian header,
  magic ``n+1\\0``, datatypes uint8 (2), int16 (4), float32 (16).  Voxel
  spacing is taken from ``pixdim[1..3]``; orientation fields are ignored
  on read and written as a scaled identity.  Vector fields use ``dim[0]=4``
  with three components in the fourth dimension.
* ``<name>.raw`` (little-endian, row-major) plus a ``<name>.json`` sidecar
  with shape, spacing, dtype, kind, and the axis convention.
"""

from __future__ import annotations

import json
import struct
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from scipy.ndimage import map_coordinates

from .errors import (
    DimensionError,
    FormatError,
    InvariantError,
    ParameterError,
    UnsupportedFormatError,
)

AXIS_CONVENTION = "LR_PA_IS"

ROLE_BACKGROUND = "background"
ROLE_WHITE = "white_matter"
ROLE_GRAY = "gray_matter"
ROLE_CSF = "csf"
ROLE_OTHER = "other"
ROLES = (ROLE_BACKGROUND, ROLE_WHITE, ROLE_GRAY, ROLE_CSF, ROLE_OTHER)

# FreeSurfer-style defaults for the labels that matter to contrast synthesis.
DEFAULT_LABEL_ROLES = {
    0: ROLE_BACKGROUND,
    2: ROLE_WHITE,
    41: ROLE_WHITE,
    3: ROLE_GRAY,
    42: ROLE_GRAY,
    4: ROLE_CSF,
    5: ROLE_CSF,
    14: ROLE_CSF,
    15: ROLE_CSF,
    24: ROLE_CSF,
    43: ROLE_CSF,
    44: ROLE_CSF,
}


def _check_spacing(spacing) -> tuple[float, float, float]:
    spacing = tuple(float(s) for s in spacing)
    if len(spacing) != 3 or any(s <= 0 for s in spacing):
        raise ParameterError(f"spacing must be three positive values, got {spacing}")
    return spacing


def _frozen(arr: np.ndarray) -> np.ndarray:
    arr.flags.writeable = False
    return arr


@dataclass(frozen=True, eq=False)
class ScalarField3:
    """Dense real-valued 3D grid with voxel spacing in mm."""

    data: np.ndarray
    spacing: tuple[float, float, float] = (1.0, 1.0, 1.0)

    def __post_init__(self):
        arr = np.array(self.data, dtype=np.float64, order="C")
        if arr.ndim != 3:
            raise DimensionError(f"scalar field needs 3 axes, got {arr.ndim}")
        object.__setattr__(self, "data", _frozen(arr))
        object.__setattr__(self, "spacing", _check_spacing(self.spacing))

    @property
    def shape(self) -> tuple[int, int, int]:
        return self.data.shape


@dataclass(frozen=True, eq=False)
class VectorField3:
    """Three co-located scalar components, stored as one (nx,ny,nz,3) array."""

    data: np.ndarray
    spacing: tuple[float, float, float] = (1.0, 1.0, 1.0)

    def __post_init__(self):
        arr = np.array(self.data, dtype=np.float64, order="C")
        if arr.ndim != 4 or arr.shape[3] != 3:
            raise DimensionError(f"vector field needs shape (nx,ny,nz,3), got {arr.shape}")
        object.__setattr__(self, "data", _frozen(arr))
        object.__setattr__(self, "spacing", _check_spacing(self.spacing))

    @property
    def shape(self) -> tuple[int, int, int]:
        return self.data.shape[:3]

    def component(self, axis: int) -> np.ndarray:
        return self.data[..., axis]

    @classmethod
    def from_components(cls, x, y, z, spacing=(1.0, 1.0, 1.0)) -> "VectorField3":
        return cls(np.stack([x, y, z], axis=-1), spacing)


@dataclass(frozen=True, eq=False)
class Mask3:
    """Boolean voxel mask."""

    data: np.ndarray
    spacing: tuple[float, float, float] = (1.0, 1.0, 1.0)

    def __post_init__(self):
        arr = np.array(self.data, dtype=bool, order="C")
        if arr.ndim != 3:
            raise DimensionError(f"mask needs 3 axes, got {arr.ndim}")
        object.__setattr__(self, "data", _frozen(arr))
        object.__setattr__(self, "spacing", _check_spacing(self.spacing))

    @property
    def shape(self) -> tuple[int, int, int]:
        return self.data.shape

    def count(self) -> int:
        return int(self.data.sum())


@dataclass(frozen=True, eq=False)
class LabelVolume:
    """Integer anatomical label grid plus a label -> tissue-role table."""

    data: np.ndarray
    spacing: tuple[float, float, float] = (1.0, 1.0, 1.0)
    roles: dict[int, str] = field(default_factory=dict)

    def __post_init__(self):
        arr = np.array(self.data, order="C")
        if arr.ndim != 3:
            raise DimensionError(f"label volume needs 3 axes, got {arr.ndim}")
        if not np.issubdtype(arr.dtype, np.integer):
            raise ParameterError(f"labels must be integer-typed, got {arr.dtype}")
        if arr.min(initial=0) < 0:
            raise InvariantError("labels must be non-negative")
        arr = arr.astype(np.int32, copy=False)
        roles = dict(self.roles) if self.roles else {}
        for lab in np.unique(arr):
            lab = int(lab)
            roles.setdefault(lab, DEFAULT_LABEL_ROLES.get(lab, ROLE_OTHER))
        roles.setdefault(0, ROLE_BACKGROUND)
        bad = {r for r in roles.values() if r not in ROLES}
        if bad:
            raise ParameterError(f"unknown label roles: {sorted(bad)}")
        object.__setattr__(self, "data", _frozen(arr))
        object.__setattr__(self, "spacing", _check_spacing(self.spacing))
        object.__setattr__(self, "roles", roles)

    @property
    def shape(self) -> tuple[int, int, int]:
        return self.data.shape

    def labels_present(self) -> list[int]:
        return [int(v) for v in np.unique(self.data)]

    def role_mask(self, role: str) -> Mask3:
        """Voxels whose label carries the given tissue role."""
        keep = np.zeros(int(self.data.max()) + 1, dtype=bool)
        for lab, r in self.roles.items():
            if r == role and lab < keep.size:
                keep[lab] = True
        return Mask3(keep[self.data], self.spacing)

    def with_roles(self, roles: dict[int, str]) -> "LabelVolume":
        merged = dict(self.roles)
        merged.update({int(k): v for k, v in roles.items()})
        return LabelVolume(self.data, self.spacing, merged)


Field = ScalarField3 | VectorField3 | Mask3 | LabelVolume


def validate_probability(p: ScalarField3, what: str = "probability field") -> None:
    if p.data.size and (p.data.min() < 0.0 or p.data.max() > 1.0):
        raise InvariantError(
            f"{what} out of [0,1]: min={p.data.min():.6g} max={p.data.max():.6g}"
        )


def brain_mask(labels: LabelVolume) -> Mask3:
    """Everything that is not background."""
    bg = labels.role_mask(ROLE_BACKGROUND)
    return Mask3(~bg.data, labels.spacing)


def as_mask(vol: Field, threshold: float = 0.5) -> Mask3:
    """Coerce a loaded volume to a boolean mask."""
    if isinstance(vol, Mask3):
        return vol
    if isinstance(vol, LabelVolume):
        return Mask3(vol.data > 0, vol.spacing)
    if isinstance(vol, ScalarField3):
        return Mask3(vol.data >= threshold, vol.spacing)
    raise DimensionError("cannot interpret a vector field as a mask")


# ---------------------------------------------------------------------------
# Geometry operations
# ---------------------------------------------------------------------------

def sagittal_flip(vol: Field) -> Field:
    """Reverse the data along the left-right axis (axis 0)."""
    flipped = np.flip(vol.data, axis=0)
    if isinstance(vol, LabelVolume):
        return LabelVolume(flipped, vol.spacing, vol.roles)
    return type(vol)(flipped, vol.spacing)


def apply_deformation(vol: Field, displacement: VectorField3) -> Field:
    """Resample a volume at x + u(x), displacement u in voxel units.

    Images use trilinear interpolation with out-of-bounds reading 0;
    labels and masks use nearest-neighbor with edge clamping so no new
    label values can appear.
    """
    if displacement.shape != vol.data.shape[:3]:
        raise DimensionError(
            f"displacement shape {displacement.shape} != field shape {vol.data.shape[:3]}"
        )
    base = np.indices(vol.data.shape[:3], dtype=np.float64)
    coords = [base[a] + displacement.data[..., a] for a in range(3)]

    if isinstance(vol, ScalarField3):
        out = map_coordinates(vol.data, coords, order=1, mode="constant", cval=0.0)
        return ScalarField3(out, vol.spacing)
    if isinstance(vol, Mask3):
        out = map_coordinates(vol.data.astype(np.uint8), coords, order=0, mode="nearest")
        return Mask3(out.astype(bool), vol.spacing)
    if isinstance(vol, LabelVolume):
        out = map_coordinates(vol.data, coords, order=0, mode="nearest")
        return LabelVolume(out, vol.spacing, vol.roles)
    raise DimensionError("vector fields are not resampled directly")


def mask_union(a: Mask3, b: Mask3) -> Mask3:
    return mask_set_ops(a, b, "union")


def mask_intersect(a: Mask3, b: Mask3) -> Mask3:
    return mask_set_ops(a, b, "intersect")


def mask_subtract(a: Mask3, b: Mask3) -> Mask3:
    return mask_set_ops(a, b, "subtract")


def mask_set_ops(a: Mask3, b: Mask3, op: str) -> Mask3:
    """Voxelwise boolean algebra; subtract(a, b) = a AND NOT b."""
    if a.shape != b.shape:
        raise DimensionError(f"mask shapes differ: {a.shape} vs {b.shape}")
    if op == "union":
        return Mask3(a.data | b.data, a.spacing)
    if op == "intersect":
        return Mask3(a.data & b.data, a.spacing)
    if op == "subtract":
        return Mask3(a.data & ~b.data, a.spacing)
    raise ParameterError(f"unknown mask op {op!r}")


# ---------------------------------------------------------------------------
# NIfTI-1 subset
# ---------------------------------------------------------------------------

_NIFTI_MAGIC = b"n+1\x00"
_DT_UINT8, _DT_INT16, _DT_FLOAT32 = 2, 4, 16
_NP_FROM_CODE = {
    _DT_UINT8: np.dtype("<u1"),
    _DT_INT16: np.dtype("<i2"),
    _DT_FLOAT32: np.dtype("<f4"),
}
_BITPIX = {_DT_UINT8: 8, _DT_INT16: 16, _DT_FLOAT32: 32}


def _nifti_header(shape, spacing, datatype, ncomp=1) -> bytes:
    hdr = bytearray(348)
    struct.pack_into("<i", hdr, 0, 348)
    ndim = 3 if ncomp == 1 else 4
    struct.pack_into("<8h", hdr, 40, ndim, shape[0], shape[1], shape[2],
                     ncomp if ncomp > 1 else 1, 1, 1, 1)
    struct.pack_into("<hh", hdr, 70, datatype, _BITPIX[datatype])
    struct.pack_into("<8f", hdr, 76, 1.0, spacing[0], spacing[1], spacing[2],
                     0.0, 0.0, 0.0, 0.0)
    struct.pack_into("<f", hdr, 108, 352.0)        # vox_offset
    struct.pack_into("<ff", hdr, 112, 1.0, 0.0)    # scl_slope, scl_inter
    hdr[123] = 2                                   # xyzt_units: mm
    struct.pack_into("<hh", hdr, 252, 0, 1)        # qform off, sform on
    struct.pack_into("<4f", hdr, 280, spacing[0], 0, 0, 0)
    struct.pack_into("<4f", hdr, 296, 0, spacing[1], 0, 0)
    struct.pack_into("<4f", hdr, 312, 0, 0, spacing[2], 0)
    hdr[344:348] = _NIFTI_MAGIC
    return bytes(hdr)


def _label_datatype(arr: np.ndarray) -> int:
    hi = int(arr.max(initial=0))
    if hi <= 255:
        return _DT_UINT8
    if hi <= 32767:
        return _DT_INT16
    raise UnsupportedFormatError(f"label value {hi} exceeds the int16 subset")


def _write_nifti(vol: Field, path: Path) -> None:
    if isinstance(vol, ScalarField3):
        raw, code, ncomp = vol.data.astype("<f4"), _DT_FLOAT32, 1
    elif isinstance(vol, VectorField3):
        raw, code, ncomp = vol.data.astype("<f4"), _DT_FLOAT32, 3
    elif isinstance(vol, Mask3):
        raw, code, ncomp = vol.data.astype("<u1"), _DT_UINT8, 1
    elif isinstance(vol, LabelVolume):
        code = _label_datatype(vol.data)
        raw, ncomp = vol.data.astype(_NP_FROM_CODE[code]), 1
    else:
        raise ParameterError(f"cannot write {type(vol).__name__}")
    shape = vol.data.shape[:3]
    with open(path, "wb") as f:
        f.write(_nifti_header(shape, vol.spacing, code, ncomp))
        f.write(b"\x00\x00\x00\x00")               # no header extensions
        # NIfTI voxel order is x-fastest; components vary slowest.
        if ncomp == 1:
            f.write(raw.tobytes(order="F"))
        else:
            f.write(np.moveaxis(raw, 3, 0).tobytes(order="F"))


def _read_nifti(path: Path) -> Field:
    blob = path.read_bytes()
    if len(blob) < 352:
        raise FormatError(f"{path}: file shorter than a NIfTI-1 header")
    (size,) = struct.unpack_from("<i", blob, 0)
    if size != 348:
        raise FormatError(f"{path}: sizeof_hdr is {size}, expected 348")
    if blob[344:348] != _NIFTI_MAGIC:
        raise FormatError(f"{path}: magic is {blob[344:348]!r}, expected 'n+1\\x00'")
    dim = struct.unpack_from("<8h", blob, 40)
    datatype, _bitpix = struct.unpack_from("<hh", blob, 70)
    pixdim = struct.unpack_from("<8f", blob, 76)
    (vox_offset,) = struct.unpack_from("<f", blob, 108)

    if datatype not in _NP_FROM_CODE:
        raise UnsupportedFormatError(f"{path}: datatype code {datatype} not supported")
    if dim[0] == 3:
        ncomp = 1
    elif dim[0] == 4 and dim[4] == 3:
        ncomp = 3
    elif dim[0] == 4 and dim[4] == 1:
        ncomp = 1
    else:
        raise UnsupportedFormatError(f"{path}: dim {dim[:5]} outside the 3D subset")
    shape = tuple(int(d) for d in dim[1:4])
    if any(d < 1 for d in shape):
        raise FormatError(f"{path}: dim holds non-positive extent {shape}")
    spacing = tuple(float(p) for p in pixdim[1:4])
    if any(not np.isfinite(s) or s <= 0 for s in spacing):
        raise FormatError(f"{path}: pixdim holds non-positive spacing {spacing}")

    dt = _NP_FROM_CODE[datatype]
    offset = int(vox_offset)
    if offset < 348:
        raise FormatError(f"{path}: vox_offset {offset} inside the header")
    count = shape[0] * shape[1] * shape[2] * ncomp
    payload = np.frombuffer(blob, dtype=dt, count=count, offset=offset)
    if payload.size != count:
        raise FormatError(f"{path}: data truncated, expected {count} values")

    if ncomp == 3:
        arr = payload.reshape((3,) + shape, order="F")
        return VectorField3(np.moveaxis(arr, 0, 3).astype(np.float64), spacing)
    arr = payload.reshape(shape, order="F")
    if datatype == _DT_FLOAT32:
        return ScalarField3(arr.astype(np.float64), spacing)
    return LabelVolume(arr.astype(np.int32), spacing)


# ---------------------------------------------------------------------------
# Raw + JSON sidecar
# ---------------------------------------------------------------------------

_RAW_DTYPES = {"float32": "<f4", "float64": "<f8", "int16": "<i2", "uint8": "<u1"}


def _sidecar_paths(path: Path) -> tuple[Path, Path]:
    stem = path.with_suffix("")
    return stem.with_suffix(".raw"), stem.with_suffix(".json")


def _write_raw(vol: Field, path: Path, dtype: str | None = None) -> None:
    raw_path, json_path = _sidecar_paths(path)
    if isinstance(vol, ScalarField3):
        kind, dtype = "scalar", dtype or "float32"
    elif isinstance(vol, VectorField3):
        kind, dtype = "vector", dtype or "float32"
    elif isinstance(vol, Mask3):
        kind, dtype = "mask", "uint8"
    elif isinstance(vol, LabelVolume):
        kind = "label"
        dtype = dtype or ("uint8" if vol.data.max(initial=0) <= 255 else "int16")
    else:
        raise ParameterError(f"cannot write {type(vol).__name__}")
    if dtype not in _RAW_DTYPES:
        raise ParameterError(f"unsupported raw dtype {dtype!r}")
    meta = {
        "shape": list(vol.data.shape[:3]),
        "spacing": list(vol.spacing),
        "dtype": dtype,
        "kind": kind,
        "axis_convention": AXIS_CONVENTION,
    }
    raw_path.write_bytes(np.ascontiguousarray(vol.data).astype(_RAW_DTYPES[dtype]).tobytes())
    json_path.write_text(json.dumps(meta, indent=2, sort_keys=True) + "\n")


def _read_raw(path: Path) -> Field:
    raw_path, json_path = _sidecar_paths(path)
    if not json_path.exists():
        raise FormatError(f"{json_path}: sidecar missing")
    try:
        meta = json.loads(json_path.read_text())
    except json.JSONDecodeError as exc:
        raise FormatError(f"{json_path}: invalid JSON sidecar: {exc}") from exc
    for key in ("shape", "spacing", "dtype", "kind"):
        if key not in meta:
            raise FormatError(f"{json_path}: sidecar missing key {key!r}")
    if meta["dtype"] not in _RAW_DTYPES:
        raise UnsupportedFormatError(f"{json_path}: dtype {meta['dtype']!r} not supported")
    shape = tuple(int(v) for v in meta["shape"])
    spacing = tuple(float(v) for v in meta["spacing"])
    kind = meta["kind"]
    full_shape = shape + (3,) if kind == "vector" else shape
    count = int(np.prod(full_shape))
    payload = np.frombuffer(raw_path.read_bytes(), dtype=_RAW_DTYPES[meta["dtype"]], count=-1)
    if payload.size != count:
        raise FormatError(f"{raw_path}: expected {count} values, found {payload.size}")
    arr = payload.reshape(full_shape)
    if kind == "scalar":
        return ScalarField3(arr.astype(np.float64), spacing)
    if kind == "vector":
        return VectorField3(arr.astype(np.float64), spacing)
    if kind == "mask":
        return Mask3(arr.astype(bool), spacing)
    if kind == "label":
        return LabelVolume(arr.astype(np.int32), spacing)
    raise UnsupportedFormatError(f"{json_path}: kind {kind!r} not supported")


# ---------------------------------------------------------------------------
# Public I/O entry points
# ---------------------------------------------------------------------------

def write_volume(vol: Field, path: str | Path) -> None:
    """Write a volume; format chosen by extension (.nii or .raw/.json)."""
    path = Path(path)
    if path.suffix == ".nii":
        _write_nifti(vol, path)
    elif path.suffix in (".raw", ".json"):
        _write_raw(vol, path)
    else:
        raise ParameterError(f"unknown volume extension {path.suffix!r}")


def read_volume(path: str | Path) -> Field:
    """Read a volume written by :func:`write_volume`."""
    path = Path(path)
    if not path.exists():
        raise FileNotFoundError(path)
    if path.suffix == ".nii":
        return _read_nifti(path)
    if path.suffix in (".raw", ".json"):
        return _read_raw(path)
    raise ParameterError(f"unknown volume extension {path.suffix!r}")
