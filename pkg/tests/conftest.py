import numpy as np
import pytest

from pathoforge import LabelVolume, Mask3, ScalarField3


@pytest.fixture
def rng():
    return np.random.default_rng(20240817)


def make_labels(shape=(24, 24, 24), spacing=(1.0, 1.0, 1.0)) -> LabelVolume:
    """Toy head: background shell, white core, gray rind, a CSF pocket."""
    nx, ny, nz = shape
    idx = np.indices(shape)
    center = (np.asarray(shape) - 1) / 2.0
    r = np.sqrt(sum((idx[a] - center[a]) ** 2 for a in range(3)))
    data = np.zeros(shape, dtype=np.int32)
    data[r < 0.46 * nx] = 3     # gray rind
    data[r < 0.34 * nx] = 2     # white core
    data[r < 0.10 * nx] = 4     # CSF pocket
    return LabelVolume(data, spacing)


def ellipsoid_mask(shape, semiaxes=None) -> Mask3:
    idx = np.indices(shape)
    center = (np.asarray(shape) - 1) / 2.0
    semiaxes = semiaxes or tuple(0.42 * s for s in shape)
    q = sum(((idx[a] - center[a]) / semiaxes[a]) ** 2 for a in range(3))
    return Mask3(q <= 1.0)


def gaussian_blob(shape, center=None, sigma=4.0, peak=0.8) -> ScalarField3:
    idx = np.indices(shape)
    center = center if center is not None else (np.asarray(shape) - 1) / 2.0
    r2 = sum((idx[a] - center[a]) ** 2 for a in range(3))
    return ScalarField3(peak * np.exp(-r2 / (2 * sigma**2)))


@pytest.fixture
def labels():
    return make_labels()
