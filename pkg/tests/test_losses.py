import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from decolearn import losses, mri
from decolearn import tensor as T
from decolearn.data import DatasetSpec, synthesize_pair
from decolearn.deformation import invert_field, warp
from decolearn.losses import RecLossConfig, RegLossConfig, distance, finite_diff, lcc, smoothness_loss
from decolearn.mri import MeasurementModel, make_cartesian_mask
from helpers import fd_check, leaf


def lcc_bruteforce(a, b, window, eps=1e-5):
    h, w = a.shape
    r = window // 2
    n = window * window
    total = 0.0
    for i in range(h):
        for j in range(w):
            sa = sb = saa = sbb = sab = 0.0
            for di in range(-r, r + 1):
                for dj in range(-r, r + 1):
                    y, x = i + di, j + dj
                    if 0 <= y < h and 0 <= x < w:  # zero padding outside
                        p, q = a[y, x], b[y, x]
                        sa += p
                        sb += q
                        saa += p * p
                        sbb += q * q
                        sab += p * q
            cross = sab - sa * sb / n
            va = saa - sa * sa / n
            vb = sbb - sb * sb / n
            total += cross * cross / (va * vb + eps)
    return total / (h * w)


def test_distance_cases():
    x = np.random.default_rng(0).standard_normal((3, 3))
    for kind in losses.DISTANCES:
        assert distance(x, x, kind).item() == 0.0
    assert distance(np.zeros(2), np.array([3.0, -1.0]), "l1").item() == 2.0
    assert distance(np.zeros(1), np.array([0.5]), "huber").item() == 0.125
    assert distance(np.zeros(1), np.array([2.0]), "huber").item() == 1.5
    with pytest.raises(ValueError):
        distance(np.zeros(2), np.zeros(3))


def test_finite_diff_cases():
    assert not np.any(finite_diff(T.Tensor(np.full((4, 5), 2.0))).data)
    ramp = np.tile(np.arange(6.0), (4, 1))
    d = finite_diff(T.Tensor(ramp)).data
    assert np.all(d[1, :, :-1] == 1.0) and np.all(d[1, :, -1] == 0.0)
    assert not np.any(d[0])


def test_finite_diff_matches_elementwise_oracle():
    x = np.random.default_rng(1).standard_normal((5, 5))
    d = finite_diff(T.Tensor(x)).data
    ref = np.zeros((2, 5, 5))
    for i in range(5):
        for j in range(5):
            ref[0, i, j] = x[i + 1, j] - x[i, j] if i + 1 < 5 else 0.0
            ref[1, i, j] = x[i, j + 1] - x[i, j] if j + 1 < 5 else 0.0
    np.testing.assert_allclose(d, ref, rtol=0, atol=1e-15)


def test_lcc_matches_bruteforce_oracle():
    rng = np.random.default_rng(2)
    for _ in range(5):
        a, b = rng.standard_normal((2, 8, 8))
        assert abs(lcc(a, b, 3).item() - lcc_bruteforce(a, b, 3)) <= 1e-10


def test_lcc_self_and_negated():
    x = np.random.default_rng(3).standard_normal((16, 16))
    assert abs(lcc(x, x, 9).item() - 1.0) <= 1e-6
    assert abs(lcc(x, -x, 9).item() - 1.0) <= 1e-6


def test_lcc_window_too_large():
    with pytest.raises(ValueError):
        lcc(np.zeros((5, 5)), np.zeros((5, 5)), 7)


def test_smoothness_cases():
    assert smoothness_loss(np.full((2, 6, 6), 3.0)).item() == 0.0
    v = np.zeros((2, 6, 6))
    v[1, :, 3:] = 1.0  # one vertical step edge in the dx channel
    assert smoothness_loss(v).item() == 6 / (2 * 2 * 6 * 6)
    r = np.random.default_rng(4).standard_normal((2, 7, 7))
    ref = np.mean(finite_diff(T.Tensor(r)).data ** 2)
    assert abs(smoothness_loss(r).item() - ref) <= 1e-15


def _shift_pair():
    """Noiseless, fully sampled pair related by an exact integer translation."""
    x_r = np.zeros((16, 16))
    x_r[5:10, 4:9] = np.random.default_rng(5).uniform(0.2, 1.0, (5, 5))
    v_rm = np.zeros((2, 16, 16))
    v_rm[1] = 2.0
    v_mr = -v_rm
    from decolearn.deformation import warp_array
    x_m = warp_array(x_r, v_rm)
    model = MeasurementModel(make_cartesian_mask(16, 16, 1.0, 0, 0))
    return x_r, x_m, v_rm, v_mr, model


def _rec(x_r, x_m, tx_r, tx_m, model_r, model_m, y_r, y_m, cfg):
    c = lambda z: T.Tensor.from_complex(z)
    return losses.rec_loss_terms(c(y_r), c(y_m), model_r, model_m, c(x_r), c(x_m), c(tx_r), c(tx_m), cfg)


def test_rec_loss_zero_at_exact_solution():
    from decolearn.deformation import warp_array
    x_r, x_m, v_rm, v_mr, model = _shift_pair()
    y_r, y_m = mri.measure(model, x_r), mri.measure(model, x_m)
    for kind in losses.DISTANCES:
        cross, self_ = _rec(x_r, x_m, warp_array(x_r, v_rm), warp_array(x_m, v_mr), model, model, y_r, y_m,
                            RecLossConfig(distance=kind))
        assert cross.item() <= 1e-10 and self_.item() <= 1e-10


def test_gamma_zero_is_cross_only():
    p = synthesize_pair(DatasetSpec(size=32), 1)
    c = lambda z: T.Tensor.from_complex(z)
    args = (c(p.y_r), c(p.y_m), p.model_r, p.model_m, c(p.oracle_x_r), c(p.oracle_x_m),
            c(p.oracle_x_m), c(p.oracle_x_r))
    cross, _ = losses.rec_loss_terms(*args, RecLossConfig(gamma=1.0))
    assert losses.rec_loss(*args, RecLossConfig(gamma=0.0)).item() == cross.item()
    cross, self_ = losses.rec_loss_terms(*args, RecLossConfig(gamma=0.5))
    assert losses.rec_loss(*args, RecLossConfig(gamma=0.5)).item() == (cross + self_ * 0.5).item()


def test_identity_warp_has_larger_cross_loss_than_oracle():
    spec = DatasetSpec(size=64, deformation="strong")
    ident, oracle = [], []
    for s in range(20):
        p = synthesize_pair(spec, 100 + s)
        v = p.oracle_field
        from decolearn.deformation import warp_array
        tx_r, tx_m = warp_array(p.oracle_x_r, v), warp_array(p.oracle_x_m, invert_field(v))
        cfg = RecLossConfig(distance="l2")
        oracle.append(_rec(p.oracle_x_r, p.oracle_x_m, tx_r, tx_m, p.model_r, p.model_m, p.y_r, p.y_m, cfg)[0].item())
        ident.append(_rec(p.oracle_x_r, p.oracle_x_m, p.oracle_x_r, p.oracle_x_m,
                          p.model_r, p.model_m, p.y_r, p.y_m, cfg)[0].item())
    assert np.mean(ident) > np.mean(oracle)


def test_rec_loss_missing_warp_errors():
    p = synthesize_pair(DatasetSpec(size=32), 2)
    c = T.Tensor.from_complex
    with pytest.raises(ValueError):
        losses.rec_loss(c(p.y_r), c(p.y_m), p.model_r, p.model_m, c(p.oracle_x_r), c(p.oracle_x_m),
                        None, c(p.oracle_x_r), RecLossConfig())


def test_losses_are_symmetric_in_pair_order():
    p = synthesize_pair(DatasetSpec(size=32), 3)
    rng = np.random.default_rng(6)
    c = T.Tensor.from_complex
    xr, xm = c(p.oracle_x_r + 0.01 * rng.standard_normal((32, 32))), c(p.oracle_x_m)
    txr, txm = c(rng.standard_normal((32, 32))), c(rng.standard_normal((32, 32)))
    cfg = RecLossConfig()
    a = losses.rec_loss(c(p.y_r), c(p.y_m), p.model_r, p.model_m, xr, xm, txr, txm, cfg).item()
    b = losses.rec_loss(c(p.y_m), c(p.y_r), p.model_m, p.model_r, xm, xr, txm, txr, cfg).item()
    assert a == pytest.approx(b, rel=1e-14)
    v1, v2 = rng.standard_normal((2, 2, 32, 32))
    rcfg = RegLossConfig()
    a = losses.reg_loss(xr, xm, txr, txm, v1, v2, rcfg).item()
    b = losses.reg_loss(xm, xr, txm, txr, v2, v1, rcfg).item()
    assert a == pytest.approx(b, rel=1e-14)


def test_reg_loss_identical_images_zero_field():
    x = T.Tensor.from_complex(np.random.default_rng(7).standard_normal((16, 16)))
    z = np.zeros((2, 16, 16))
    assert abs(losses.reg_loss(x, x, x, x, z, z, RegLossConfig()).item() + 2.0) <= 1e-6


def test_reg_loss_lambda_zero_drops_smoothness():
    rng = np.random.default_rng(8)
    c = T.Tensor.from_complex
    xr, xm = c(rng.standard_normal((16, 16))), c(rng.standard_normal((16, 16)))
    v1, v2 = rng.standard_normal((2, 2, 16, 16))
    sim, smooth = losses.reg_loss_terms(xr, xm, xr, xm, v1, v2, RegLossConfig())
    assert losses.reg_loss(xr, xm, xr, xm, v1, v2, RegLossConfig(lam=0.0)).item() == sim.item()
    assert smooth.item() > 0


def test_reg_loss_field_gradient_matches_finite_differences():
    cfg = RegLossConfig(lam=0.1, lcc_window=3)
    for seed in range(20):
        rng = np.random.default_rng(seed)
        x_r = T.Tensor.from_complex(rng.standard_normal((1, 8, 8)) + 1j * rng.standard_normal((1, 8, 8)))
        x_m = T.Tensor.from_complex(rng.standard_normal((1, 8, 8)) + 1j * rng.standard_normal((1, 8, 8)))
        v_rm, v_mr = leaf(rng.uniform(-1, 1, (1, 2, 8, 8))), leaf(rng.uniform(-1, 1, (1, 2, 8, 8)))

        def f(a, b):
            return losses.reg_loss(x_r, x_m, warp(x_r, a), warp(x_m, b), a, b, cfg)

        fd_check(f, [v_rm, v_mr], seed=seed)


@settings(max_examples=20, deadline=None)
@given(st.integers(0, 10**6))
def test_lcc_bounded(seed):
    a, b = np.random.default_rng(seed).standard_normal((2, 10, 10))
    val = lcc(a, b, 5).item()
    assert 0.0 <= val <= 1.0


@pytest.mark.parametrize("cfg", [RecLossConfig(gamma=-1), RecLossConfig(distance="l3"),
                                 RecLossConfig(huber_delta=0), RegLossConfig(lam=-0.1),
                                 RegLossConfig(lcc_window=4)])
def test_config_validation(cfg):
    with pytest.raises(ValueError):
        cfg.validate()
