import math

import numpy as np
import pytest

import latentface as lfp


def test_focal_length_matches_fov():
    assert lfp.focal_length() == pytest.approx(1.0 / (2.0 * math.tan(math.radians(5.0))), rel=1e-9)


def smooth_maps(size=64):
    yy, xx = np.meshgrid(np.linspace(-1, 1, size), np.linspace(-1, 1, size), indexing="ij")
    albedo = np.stack(
        [0.5 + 0.3 * np.cos(2.2 * xx + c) * np.sin(1.7 * yy - c) for c in range(3)]
    )
    depth = 1.0 + 0.08 * np.cos(1.3 * xx) * np.cos(0.9 * yy)
    return albedo, depth


def test_render_shapes_and_identity_magnification():
    albedo, depth = smooth_maps()
    img = lfp.render(albedo, np.ones_like(depth))
    assert img.shape == albedo.shape
    # constant depth 1 at the identity pose reproduces the unit-shaded albedo
    # (n = (0,0,1) and L = (0,0,1), so ka + kd = 1)
    assert np.max(np.abs(img - albedo)) < 1e-3


def test_render_mirror_symmetry():
    albedo, depth = smooth_maps()
    img = lfp.render(albedo, depth, pose=[0.3, -0.1, 0.05, 0.02, -0.01, 0.03])
    mirrored = lfp.render(
        albedo[:, :, ::-1].copy(),
        depth[:, ::-1].copy(),
        pose=[-0.3, -0.1, -0.05, -0.02, -0.01, 0.03],
    )
    assert np.max(np.abs(img[:, :, ::-1] - mirrored)) < 2e-3


def test_degenerate_pose_raises():
    albedo, depth = smooth_maps()
    with pytest.raises(lfp.InvalidInputError):
        lfp.render(albedo, depth, pose=[0, 0, 0, 0, 0, -6.0])


def test_schedule_and_q_sample_moments():
    sched = lfp.make_schedule(1000)
    assert sched["alpha_bar"][0] == 1.0
    assert sched["beta"][1] == pytest.approx(1e-4)
    assert sched["beta"][1000] == pytest.approx(0.02)

    rng = np.random.default_rng(11)
    z0 = np.full(4, 1.5)
    draws = np.stack([lfp.q_sample(z0, 600, rng.standard_normal(4)) for _ in range(4000)])
    abar = sched["alpha_bar"][600]
    assert draws.mean() == pytest.approx(math.sqrt(abar) * 1.5, abs=0.05)
    assert draws.var() == pytest.approx(1.0 - abar, rel=0.1)


def test_ddim_constant_oracle_and_callable_bridge():
    target = np.arange(12, dtype=float).reshape(3, 4) / 10.0
    calls = []

    def denoise(z, tau):
        calls.append(int(tau))
        return target

    out = lfp.ddim_sample(denoise, 3, 4, S=5, seed=42)
    assert np.max(np.abs(out - target)) < 1e-6
    assert calls == sorted(calls, reverse=True) and calls[0] == 1000


def test_conf_loss_closed_form():
    rng = np.random.default_rng(5)
    pred = rng.uniform(0, 1, (3, 8, 8))
    target = rng.uniform(0, 1, (3, 8, 8))
    mask = np.ones((8, 8), dtype=np.uint8)
    sigma = np.full((8, 8), 1.0 / math.sqrt(2.0))
    resid = np.abs(pred - target).mean(axis=0)
    assert lfp.conf_loss(pred, target, sigma, mask) == pytest.approx(2.0 * resid.mean(), abs=1e-12)
    assert lfp.conf_loss(pred, pred, sigma, mask) == pytest.approx(
        math.log(math.sqrt(2.0) * sigma[0, 0]), abs=1e-12
    )


def test_invariants_all_pass():
    rows = lfp.invariants()
    assert {r["name"] for r in rows} >= {
        "flip-involution",
        "frontal-mirror-symmetry",
        "flat-depth-normals",
        "identity-pose-magnification",
        "focal-length",
    }
    assert all(r["pass"] for r in rows)


def test_dataset_generation_and_sample_reproducibility(tmp_path):
    root = tmp_path / "corpus"
    lfp.gen_dataset(str(root), n_identities=3, frames_per_identity=2, seed=9)
    assert (root / "labels.csv").exists()
    assert (root / "pairs.csv").exists()
    assert (root / "manifest.json").exists()
    assert (root / "train" / "id0000" / "f00.png").exists()

    a = lfp.render_sample(9, 0, 0)
    b = lfp.render_sample(9, 0, 0)
    c = lfp.render_sample(9, 0, 1)
    assert a.shape == (3, 64, 64)
    assert np.array_equal(a, b)
    assert not np.array_equal(a, c)


def test_checkpoint_errors_map_to_python():
    with pytest.raises(lfp.DataError):
        lfp.read_checkpoint_meta("/nonexistent/model.lfck")
    with pytest.raises(lfp.Error):
        lfp.reconstruct("/nonexistent/model.lfck", np.zeros((3, 64, 64), dtype=np.float32))
