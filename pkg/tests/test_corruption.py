import json

import numpy as np
import pytest
from numpy.random import Generator, Philox

from pathoforge import (
    CORRUPTION_TABLE,
    GenerationConfig,
    ParameterError,
    ScalarField3,
    SolverConfig,
    apply_bias_field,
    apply_noise,
    compose_affine,
    corrupt,
    dump_parameter_table,
    make_sample,
    metric_ssim,
    parameter_table,
    random_affine,
    random_nonlinear,
    simulate_resolution,
)
from pathoforge.corruption import _bias_field, _resample_cycle, _smooth_displacement

from conftest import make_labels


# ---------------------------------------------------------------------------
# parameter table
# ---------------------------------------------------------------------------

def test_table_values():
    assert CORRUPTION_TABLE["mild"]["resolution"]["p_low_field"] == 0.1
    assert CORRUPTION_TABLE["medium"]["resolution"]["p_low_field"] == 0.3
    assert CORRUPTION_TABLE["severe"]["resolution"]["p_anisotropic"] == 0.25
    assert CORRUPTION_TABLE["mild"]["noise"]["sigma_max"] == 1.0
    assert CORRUPTION_TABLE["severe"]["noise"]["sigma_max"] == 15.0
    assert CORRUPTION_TABLE["severe"]["bias_field"]["sigma_max"] == 0.6
    for level in CORRUPTION_TABLE:
        d = CORRUPTION_TABLE[level]["deformation"]
        assert d["affine_rotation_max"] == 15.0
        assert d["affine_shearing_max"] == 0.2
        assert d["affine_scaling_max"] == 0.2
        assert d["nonlinear_scale_mu_min"] == 0.03
        assert d["nonlinear_scale_mu_max"] == 0.06
        assert d["nonlinear_scale_sigma_max"] == 4.0


def test_table_json_roundtrip_byte_identical():
    dumped = dump_parameter_table()
    again = json.dumps(json.loads(dumped), indent=2, sort_keys=True) + "\n"
    assert again == dumped


def test_parameter_table_is_a_copy():
    t = parameter_table()
    t["mild"]["noise"]["sigma_max"] = 999
    assert CORRUPTION_TABLE["mild"]["noise"]["sigma_max"] == 1.0


def test_unknown_level_rejected():
    with pytest.raises(ParameterError):
        parameter_table("extreme")


# ---------------------------------------------------------------------------
# affine
# ---------------------------------------------------------------------------

def test_identity_from_zero_draws():
    m = compose_affine((0.0, 0.0, 0.0), (0.0, 0.0, 0.0), (1.0, 1.0, 1.0))
    assert np.allclose(m, np.eye(4), atol=0)


def test_pure_rotation_determinant_one():
    m = compose_affine((np.deg2rad(15.0), 0.0, 0.0), (0.0,) * 3, (1.0,) * 3)
    assert np.linalg.det(m[:3, :3]) == pytest.approx(1.0, abs=1e-12)


def test_affine_determinant_scan():
    lo, hi = 0.8**3, 1.2**3
    for seed in range(1000):
        det = np.linalg.det(random_affine("mild", seed)[:3, :3])
        assert det > 0.0
        assert lo - 1e-12 <= det <= hi + 1e-12


def test_affine_centering_preserves_center():
    shape = (16, 16, 16)
    m = random_affine("mild", 7, shape)
    center = np.array([(s - 1) / 2 for s in shape] + [1.0])
    assert np.allclose(m @ center, center, atol=1e-12)


# ---------------------------------------------------------------------------
# nonlinear displacement
# ---------------------------------------------------------------------------

def test_zero_amplitude_zero_displacement():
    rng = Generator(Philox(5))
    raw = rng.uniform(-1, 1, (4, 4, 4, 3))
    disp = _smooth_displacement((16, 16, 16), (0.0, 0.0, 0.0), 2.0, raw)
    assert np.all(disp == 0.0)


def test_nonlinear_amplitude_bound():
    shape = (24, 24, 24)
    bound = 0.06 * 24
    for seed in range(100):
        disp = random_nonlinear("medium", shape, seed)
        assert np.abs(disp.data).max() <= bound + 1e-9


def test_nonlinear_determinism():
    a = random_nonlinear("severe", (12, 12, 12), 3)
    b = random_nonlinear("severe", (12, 12, 12), 3)
    assert np.array_equal(a.data, b.data)


# ---------------------------------------------------------------------------
# bias field
# ---------------------------------------------------------------------------

def test_bias_identity_at_zero():
    field = _bias_field((12, 12, 12), 0.0, 0.0, Generator(Philox(1)))
    assert np.allclose(field, 1.0, atol=0)


def test_bias_positive(rng):
    img = ScalarField3(rng.random((16, 16, 16)))
    for seed in range(5):
        field = _bias_field((16, 16, 16), 0.02, 0.3, Generator(Philox(seed)))
        assert field.min() > 0.0
        out = apply_bias_field(img, "severe", seed)
        assert out.data.min() >= 0.0 and out.data.max() <= 1.0


def test_bias_severity_ordering_on_constant_image():
    img = ScalarField3(np.full((24, 24, 24), 0.5))
    def cov(level, seed):
        out = apply_bias_field(img, level, seed).data
        return out.std() / out.mean()
    worse = sum(cov("severe", s) > cov("mild", s) for s in range(50))
    assert worse == 50


# ---------------------------------------------------------------------------
# noise
# ---------------------------------------------------------------------------

def test_mild_noise_sigma_bound():
    img = ScalarField3(np.full((8, 8, 8), 0.5))
    for seed in range(20):
        info = {}
        apply_noise(img, "mild", seed, info)
        assert info["noise_sigma"] <= 1.0 / 255.0


def test_noise_empirical_std_matches_drawn():
    img = ScalarField3(np.full((32, 32, 32), 0.5))
    for seed in range(5):
        info = {}
        out = apply_noise(img, "severe", seed, info)
        sigma = info["noise_sigma"]
        measured = (out.data - img.data).std()
        assert abs(measured - sigma) / sigma <= 0.05


# ---------------------------------------------------------------------------
# resolution
# ---------------------------------------------------------------------------

def test_resolution_preserves_shape(rng):
    img = ScalarField3(rng.random((20, 24, 28)))
    for seed in range(10):
        out = simulate_resolution(img, "severe", seed)
        assert out.shape == img.shape


def test_resolution_identity_when_not_triggered(rng):
    img = ScalarField3(rng.random((12, 12, 12)))
    hit = 0
    for seed in range(40):
        info = {}
        out = simulate_resolution(img, "mild", seed, info)
        if not info["low_field"] and not info["anisotropic"]:
            hit += 1
            assert np.array_equal(out.data, img.data)
    assert hit > 0


def test_checkerboard_partial_volume():
    n = 32
    idx = np.indices((n, n, n)).sum(axis=0)
    checker = (idx % 2).astype(float)     # 2-voxel period along the diagonal
    out = _resample_cycle(checker, (2.0, 2.0, 2.0))
    assert out.max() - out.min() < 0.2    # aliasing destroyed by the blur
    assert abs(out.mean() - 0.5) < 0.05


# ---------------------------------------------------------------------------
# full corrupt
# ---------------------------------------------------------------------------

def make_test_sample(seed=1):
    labels = make_labels((24, 24, 24))
    cfg = GenerationConfig(perlin_res=(2, 2, 2),
                           solver=SolverConfig(t_max=1.0, stepper="fixed_euler"),
                           transport_time=1.0)
    return make_sample(labels, cfg, seed=seed)


def test_all_disabled_is_identity():
    rec = make_test_sample()
    out = corrupt(rec, "severe", 42, deform=False, resolution=False, bias=False, noise=False)
    assert np.array_equal(out.image.data, rec.image.data)
    assert np.array_equal(out.healthy.data, rec.healthy.data)
    assert np.array_equal(out.pathology.data, rec.pathology.data)


def test_pathology_stays_probability_after_warp():
    rec = make_test_sample()
    out = corrupt(rec, "severe", 7)
    assert out.pathology.data.min() >= 0.0
    assert out.pathology.data.max() <= 1.0
    assert out.image.data.min() >= 0.0 and out.image.data.max() <= 1.0


def test_corrupt_determinism():
    rec = make_test_sample()
    a = corrupt(rec, "medium", 5)
    b = corrupt(rec, "medium", 5)
    for attr in ("image", "healthy", "pathology"):
        assert np.array_equal(getattr(a, attr).data, getattr(b, attr).data)


def test_targets_stay_clean():
    # healthy and pathology see only the warp, never intensity corruption
    rec = make_test_sample()
    warped_only = corrupt(rec, "severe", 11, resolution=False, bias=False, noise=False)
    full = corrupt(rec, "severe", 11)
    assert np.array_equal(full.healthy.data, warped_only.healthy.data)
    assert np.array_equal(full.pathology.data, warped_only.pathology.data)
    assert not np.array_equal(full.image.data, warped_only.image.data)


def test_masks_and_fields_get_same_warp():
    # nearest-neighbor warped mask of a binary field commutes with masking
    rec = make_test_sample()
    out = corrupt(rec, "mild", 13, resolution=False, bias=False, noise=False)
    assert out.pathology_mask.shape == rec.pathology_mask.shape
    assert out.brain.shape == rec.brain.shape


def test_severity_ordering_small():
    rec = make_test_sample()
    def degradation(level, seed):
        out = corrupt(rec, level, seed)
        return 1.0 - metric_ssim(out.image, rec.image, rec.brain)
    scores = {lvl: np.mean([degradation(lvl, s) for s in range(10)])
              for lvl in ("mild", "medium", "severe")}
    assert scores["mild"] < scores["medium"] < scores["severe"]
