"""Acceptance gate: one test per release criterion, at pinned tolerances.

Each test prints a PASS/FAIL line so the suite doubles as a checklist:

    pytest tests/test_acceptance.py -v -s
"""

import json
import math
import time

import numpy as np
import pytest

from pathoforge import (
    ContrastLossParams,
    EncodeParams,
    GenerationConfig,
    Mask3,
    PipelineConfig,
    ScalarField3,
    SolverConfig,
    TransportFields,
    VectorField3,
    anomaly_map,
    corrupt,
    dump_parameter_table,
    contrast_loss,
    encode_anomaly,
    make_diffusion,
    make_sample,
    make_velocity,
    metric_dice,
    metric_l1,
    metric_psnr,
    metric_ssim,
    perlin_noise_3d,
    recon_loss,
    run_pipeline,
    threshold_to_anomaly,
    total_loss,
    transport,
    write_volume,
)
from pathoforge.fields import divergence
from pathoforge.noise import PerlinParams
from pathoforge.objective import ReconLossParams

from conftest import ellipsoid_mask, gaussian_blob, make_labels


def report(name: str, ok: bool, detail: str = "") -> None:
    status = "PASS" if ok else "FAIL"
    print(f"[{status}] {name}" + (f"  ({detail})" if detail else ""))
    assert ok, f"{name}: {detail}"


def full_mask(shape):
    return Mask3(np.ones(shape, dtype=bool))


def uniform_velocity(shape, vec):
    data = np.zeros(shape + (3,))
    data[..., 0], data[..., 1], data[..., 2] = vec
    return VectorField3(data)


def zero_scalar(shape):
    return ScalarField3(np.zeros(shape))


def test_incompressibility_100_seeds():
    shape = (64, 64, 64)
    started = time.perf_counter()
    worst = 0.0
    for seed in range(100):
        v = make_velocity(shape, seed=seed)
        div = divergence(v).data[2:-2, 2:-2, 2:-2]
        rel = np.abs(div).max() / np.abs(v.data).max()
        worst = max(worst, rel)
    elapsed = time.perf_counter() - started
    report(
        "incompressibility: interior |div V| <= 1e-12 max|V| on 100 seeds, <= 60 s",
        worst <= 1e-12 and elapsed <= 60.0,
        f"worst rel div {worst:.2e}, {elapsed:.1f} s",
    )


def test_nonnegative_diffusion_100_seeds():
    worst = math.inf
    for seed in range(100):
        d = make_diffusion((32, 32, 32), seed=seed)
        worst = min(worst, float(d.data.min()))
    report("non-negative diffusivity over 100 seeds (exact)", worst >= 0.0,
           f"min D {worst:.3e}")


def test_transport_identity_bit_exact():
    shape = (24, 24, 24)
    p0 = gaussian_blob(shape)
    fields = TransportFields(uniform_velocity(shape, (0, 0, 0)), zero_scalar(shape))
    out = transport(p0, fields, full_mask(shape), SolverConfig(t_max=10.0))
    report("transport identity: V=0, D=0, t_max=10 returns P0 bit-exactly",
           np.array_equal(out.data, p0.data))


def test_diffusion_mass_conservation():
    shape = (32, 32, 32)
    rng = np.random.default_rng(13)
    p0 = ScalarField3(rng.random(shape))
    fields = TransportFields(uniform_velocity(shape, (0, 0, 0)),
                             make_diffusion(shape, seed=29))
    m0 = p0.data.sum()
    out_e = transport(p0, fields, full_mask(shape),
                      SolverConfig(t_max=10.0, stepper="fixed_euler"))
    rel_e = abs(out_e.data.sum() - m0) / m0
    out_rk = transport(p0, fields, full_mask(shape),
                       SolverConfig(t_max=10.0, stepper="adaptive_rk45",
                                    clamp_each_step=False))
    rel_rk = abs(out_rk.data.sum() - m0) / m0
    report("diffusion mass conservation: euler <= 1e-10, rk45 (no clamp) <= 1e-8",
           rel_e <= 1e-10 and rel_rk <= 1e-8,
           f"euler {rel_e:.2e}, rk45 {rel_rk:.2e}")


def test_diffusion_equilibrium():
    shape = (8, 8, 8)
    rng = np.random.default_rng(17)
    p0 = ScalarField3(rng.random(shape))
    fields = TransportFields(uniform_velocity(shape, (0, 0, 0)),
                             ScalarField3(np.full(shape, 0.2)))
    out = transport(p0, fields, full_mask(shape),
                    SolverConfig(t_max=500.0, stepper="fixed_euler"))
    dev = np.abs(out.data - p0.data.mean()).max()
    report("diffusion equilibrium: t=500 on 8^3 flattens to the mean (< 1e-3)",
           dev < 1e-3, f"max deviation {dev:.2e}")


def test_advection_oracle_and_maximum_principle():
    shape = (64, 64, 64)
    p0 = gaussian_blob(shape, sigma=4.0, peak=0.8)
    fields = TransportFields(uniform_velocity(shape, (1, 0, 0)), zero_scalar(shape))
    out = transport(p0, fields, full_mask(shape),
                    SolverConfig(t_max=5.0, stepper="fixed_euler"))
    idx = np.indices(shape)[0]
    shift = (idx * out.data).sum() / out.data.sum() - (idx * p0.data).sum() / p0.data.sum()
    unclamped = transport(p0, fields, full_mask(shape),
                          SolverConfig(t_max=5.0, stepper="fixed_euler",
                                       clamp_each_step=False))
    ok_shift = abs(shift - 5.0) <= 0.5
    ok_minmax = (unclamped.data.min() >= p0.data.min() - 1e-12
                 and unclamped.data.max() <= p0.data.max() + 1e-12)
    report("advection oracle: centroid moves 5.0 +- 0.5; maximum principle holds",
           ok_shift and ok_minmax, f"shift {shift:.3f}")


def test_boundary_confinement():
    shape = (32, 32, 32)
    dom = ellipsoid_mask(shape, semiaxes=(12, 10, 11))
    blob = gaussian_blob(shape, sigma=3.0, peak=1.0).data.copy()
    blob[~dom.data] = 0.0
    p0 = ScalarField3(blob)
    fields = TransportFields(make_velocity(shape, v_multiplier=4.0, seed=31),
                             make_diffusion(shape, d_multiplier=1.0, seed=31))
    out = transport(p0, fields, dom, SolverConfig(t_max=10.0, stepper="fixed_euler"))
    leaked = int((out.data[~dom.data] != 0.0).sum())
    report("boundary confinement: anomaly exactly zero outside the mask at t=10",
           leaked == 0, f"{leaked} voxels leaked")


def test_perlin_conformance():
    zero_ok = all(
        perlin_noise_3d(PerlinParams(shape=(8, 8, 8), res=(1, 1, 1), seed=s)).data[0, 0, 0] == 0.0
        for s in (0, 1, 2)
    )
    p = PerlinParams(shape=(32, 32, 32), res=(4, 4, 4), seed=5)
    det_ok = np.array_equal(perlin_noise_3d(p).data, perlin_noise_3d(p).data)
    noise = perlin_noise_3d(PerlinParams(shape=(64, 64, 64), res=(4, 4, 4), seed=8))
    _, mask = threshold_to_anomaly(noise, 90.0, full_mask((64, 64, 64)))
    occupancy = mask.count() / 64**3
    occ_ok = abs(occupancy - 0.10) <= 0.002
    amp_ok = np.abs(noise.data).max() < 1.0
    report(
        "perlin conformance: lattice zeros, determinism, occupancy 10% +- 0.2%, |n|<1",
        zero_ok and det_ok and occ_ok and amp_ok,
        f"occupancy {occupancy:.4f}, max |n| {np.abs(noise.data).max():.3f}",
    )


def test_encoding_law():
    labels = make_labels((24, 24, 24))
    lut = np.zeros(5)
    lut[2], lut[3], lut[4] = 0.8, 0.4, 0.1
    img0 = ScalarField3(lut[labels.data])
    pdata = np.zeros(labels.shape)
    pdata[8:16, 8:16, 8:16] = 1.0
    p = ScalarField3(pdata)

    out, delta = encode_anomaly(img0, ScalarField3(np.zeros(labels.shape)), labels,
                                EncodeParams(seed=3))
    identity_ok = np.array_equal(out.data, img0.data) and np.all(delta.data == 0.0)

    info = {}
    _, delta = encode_anomaly(img0, p, labels,
                              EncodeParams(sign_flip_prob=0.0, delta_smooth_sigma=0.0,
                                           seed=11), info)
    n = int(pdata.sum())
    mean_ok = abs(delta.data[pdata > 0].mean() + 0.4) <= 4 * 0.4 / math.sqrt(n)

    flips = 0
    for seed in range(400):
        info = {}
        encode_anomaly(img0, p, labels,
                       EncodeParams(sign_flip_prob=0.2, delta_smooth_sigma=0.0, seed=seed),
                       info)
        flips += info["sign_flipped"]
    freq = flips / 400
    flip_ok = abs(freq - 0.2) <= 0.04
    report(
        "encoding law: P=0 identity; mean offset -mu_w/2 within 4 SE; flips 0.20 +- 0.04",
        identity_ok and mean_ok and flip_ok,
        f"flip frequency {freq:.3f}",
    )


def test_loss_oracles():
    shape = (2, 1, 1)
    pm = np.zeros(shape, dtype=bool)
    pm[0] = True
    pred = ScalarField3(np.full(shape, 0.3))
    target = ScalarField3(np.full(shape, 0.2))

    zero = recon_loss(pred, pred, ReconLossParams(pathology_mask=Mask3(pm)))
    toy = recon_loss(pred, target,
                     ReconLossParams(pathology_mask=Mask3(pm), attention_weight=1.0))

    region = Mask3(np.ones((3, 3, 3), dtype=bool))
    x = ScalarField3(np.random.default_rng(3).random((3, 3, 3)))
    y = ScalarField3(np.random.default_rng(4).random((3, 3, 3)))
    sym = contrast_loss(x, y, y, ContrastLossParams(region=region))

    one = Mask3(np.ones((1, 1, 1), dtype=bool))
    single = contrast_loss(
        ScalarField3(np.ones((1, 1, 1))), ScalarField3(np.zeros((1, 1, 1))),
        ScalarField3(np.ones((1, 1, 1))), ContrastLossParams(region=one),
    )
    combined = total_loss(0.15, math.log(2.0), 2.0)

    # real-data branch: pathology perturbations are invisible
    shape2 = (6, 6, 6)
    rng = np.random.default_rng(5)
    tgt = ScalarField3(rng.random(shape2))
    pm2 = np.zeros(shape2, dtype=bool)
    pm2[2:4, 2:4, 2:4] = True
    perturbed = tgt.data.copy()
    perturbed[pm2] = rng.random(int(pm2.sum()))
    params_real = ReconLossParams(pathology_mask=Mask3(pm2), real_data=True)
    masked_invariant = (
        recon_loss(ScalarField3(perturbed), tgt, params_real)
        == recon_loss(tgt, tgt, params_real)
        == 0.0
    )

    checks = {
        "zero": abs(zero - 0.0) <= 1e-12,
        "toy 0.15": abs(toy - 0.15) <= 1e-12,
        "log2": abs(sym - math.log(2.0)) <= 1e-12,
        "log(1+e^-1)": abs(single - math.log(1 + math.exp(-1))) <= 1e-12,
        "0.15+2log2": abs(combined - (0.15 + 2 * math.log(2.0))) <= 1e-12,
        "real-data masking": masked_invariant,
    }
    report("loss oracles: 0, 0.15, log 2, log(1+e^-1), 0.15+2 log 2, masking invariance",
           all(checks.values()),
           ", ".join(k for k, v in checks.items() if not v) or "all exact")


def test_metric_oracles():
    shape = (12, 12, 12)
    x = ScalarField3(np.random.default_rng(6).random(shape))
    m = full_mask(shape)
    ident = (metric_l1(x, x, m) == 0.0
             and metric_psnr(x, x, m) == math.inf
             and abs(metric_ssim(x, x, m) - 1.0) <= 1e-12)
    za = np.zeros((4, 4, 4), dtype=bool)
    a = za.copy(); a[0, 0, :4] = True
    b = za.copy(); b[1, 1, :4] = True
    c = za.copy(); c[0, 0, 2:4] = True; c[1, 1, :2] = True
    dice_ok = (metric_dice(Mask3(a), Mask3(a)) == 1.0
               and metric_dice(Mask3(a), Mask3(b)) == 0.0
               and metric_dice(Mask3(a), Mask3(c)) == 0.5)
    report("metric oracles: identity fixed points, disjoint dice 0, 4/4/2 dice 0.5",
           ident and dice_ok)


def test_corruption_severity_ordering_and_table_roundtrip():
    labels = make_labels((24, 24, 24))
    cfg = GenerationConfig(perlin_res=(2, 2, 2),
                           solver=SolverConfig(t_max=1.0, stepper="fixed_euler"),
                           transport_time=1.0)
    phantom = make_sample(labels, cfg, seed=4)
    scores = {}
    for level in ("mild", "medium", "severe"):
        vals = []
        for seed in range(50):
            out = corrupt(phantom, level, seed)
            vals.append(1.0 - metric_ssim(out.image, phantom.image, phantom.brain))
        scores[level] = float(np.mean(vals))
    ordered = scores["mild"] < scores["medium"] < scores["severe"]

    dumped = dump_parameter_table()
    roundtrip = json.dumps(json.loads(dumped), indent=2, sort_keys=True) + "\n"
    table_ok = roundtrip == dumped
    report(
        "corruption severity: mean(1-SSIM) mild < medium < severe (50 seeds); table roundtrip",
        ordered and table_ok,
        f"mild {scores['mild']:.4f} < medium {scores['medium']:.4f} < severe {scores['severe']:.4f}",
    )


@pytest.fixture(scope="module")
def big_subject(tmp_path_factory):
    root = tmp_path_factory.mktemp("subjects")
    path = root / "head160.nii"
    write_volume(make_labels((160, 160, 160)), path)
    return path


def test_end_to_end_throughput_160(big_subject, tmp_path):
    cfg_map = {
        "labels": [str(big_subject)],
        "output_dir": str(tmp_path / "out"),
        "generation": {
            "percentile": 97.0,
            "solver": {"t_max": 10.0, "stepper": "fixed_euler"},
            "transport_time": 10.0,
        },
        "corruption": "severe",
        "samples_per_subject": 1,
        "master_seed": 101,
    }
    started = time.perf_counter()
    manifest = run_pipeline(PipelineConfig.from_mapping(cfg_map))
    elapsed = time.perf_counter() - started
    report("throughput: one 160^3 sample (T=10 + synthesis + severe) <= 90 s",
           manifest["failed"] == 0 and elapsed <= 90.0, f"{elapsed:.1f} s")


def test_end_to_end_determinism(tmp_path):
    subject = tmp_path / "s.nii"
    write_volume(make_labels((24, 24, 24)), subject)

    def run(tag, workers):
        cfg_map = {
            "labels": [str(subject)],
            "output_dir": str(tmp_path / tag),
            "generation": {
                "perlin_res": [2, 2, 2],
                "solver": {"t_max": 1.0, "stepper": "fixed_euler"},
                "transport_time": 1.0,
            },
            "corruption": "medium",
            "samples_per_subject": 2,
            "master_seed": 5,
        }
        run_pipeline(PipelineConfig.from_mapping(cfg_map), workers=workers)
        return {
            d.name: {f.name: f.read_bytes() for f in sorted(d.glob("*"))}
            for d in sorted((tmp_path / tag).iterdir()) if d.is_dir()
        }

    a = run("a", 1)
    b = run("b", 1)
    c = run("c", 2)
    report("determinism: identical configs byte-identical; workers do not change bytes",
           a == b == c)


def test_anomaly_map_recovers_lesion():
    labels = make_labels((40, 40, 40))
    lut = np.zeros(5)
    lut[2], lut[3], lut[4] = 0.7, 0.35, 0.1
    healthy = ScalarField3(lut[labels.data])
    lesion = np.zeros(labels.shape, dtype=bool)
    lesion[12:26, 12:26, 12:26] = True
    p = ScalarField3(lesion.astype(float))
    encoded, _ = encode_anomaly(
        healthy, p, labels,
        EncodeParams(sign_flip_prob=0.0, delta_smooth_sigma=1.0, seed=2),
    )
    # observed input carries mild acquisition noise on top of the encoding
    rng = np.random.default_rng(9)
    observed = ScalarField3(
        np.clip(encoded.data + (2.0 / 255.0) * rng.standard_normal(labels.shape), 0, 1)
    )
    brain = Mask3(labels.data > 0)
    amap = anomaly_map(observed, healthy, brain)
    detected = Mask3((amap.data >= 0.3) & brain.data)
    dice = metric_dice(detected, Mask3(lesion))
    report("anomaly map: thresholded difference recovers the planted lesion (dice >= 0.9)",
           dice >= 0.9, f"dice {dice:.3f}")
