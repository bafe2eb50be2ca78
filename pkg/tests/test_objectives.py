import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from mpns.diffcore import ContractError
from mpns.model import AUX_NETS, COMPLEMENT_NETS, ArchConfig, init_model
from mpns.objectives import (MODES, TERM_NAMES, LossConfig, backward, forward_pass,
                             invariant_pns_loss, loss_c, loss_c_grads, loss_p, loss_p_grad,
                             specific_pns_loss, total_loss, zero_grad_nets)

LN2 = math.log(2.0)
SMALL = ArchConfig(encoder_hidden=(6,), predictor_hidden=(5,))


def batch(seed, n=16):
    rng = np.random.default_rng(seed)
    return rng.normal(size=(n, 20)), rng.normal(size=(n, 20)), rng.integers(0, 2, n).astype(float)


def half_model(seed=0, arch=SMALL):
    """Model whose every sigmoid head outputs exactly 0.5."""
    m = init_model(arch, seed)
    for name in ("pred_main",) + AUX_NETS:
        m.nets[name].flat[:] = 0
    return m


def test_loss_p_values():
    assert loss_p(1, 0.5) == pytest.approx(LN2, abs=1e-12)
    assert loss_p(1, 0.1) == pytest.approx(2.302585, abs=1e-6)
    assert loss_p(0, 0.1) == pytest.approx(-math.log(0.9), abs=1e-12)
    assert np.isfinite(loss_p(1, 0.0)) and np.isfinite(loss_p(0, 1.0))
    with pytest.raises(ContractError):
        loss_p(1, 1.5)
    with pytest.raises(ContractError):
        loss_p(1, np.nan)


def test_loss_c_values():
    assert loss_c(1, 1) == pytest.approx(100.0, abs=1e-9)
    assert loss_c(0, 1) == pytest.approx(1 / 1.01, abs=1e-12)
    assert loss_c(0.9, 0.1) == pytest.approx(1 / 0.81, abs=1e-12)
    with pytest.raises(ContractError):
        loss_c(1, 1, theta=0.0)


@settings(max_examples=60, deadline=None)
@given(a=st.floats(0.0, 1.0), b=st.floats(0.0, 1.0))
def test_loss_monotone_in_error(a, b):
    lo, hi = sorted((a, b))
    # farther from y = 1 means larger cross entropy and smaller loss_c
    assert loss_p(1, lo) >= loss_p(1, hi)
    assert loss_c(1, lo) <= loss_c(1, hi)
    assert loss_c(1, lo) > 0


@pytest.mark.parametrize("y,p", [(1, 0.3), (0, 0.3), (1, 0.97), (0, 0.01)])
def test_loss_gradients_match_finite_differences(y, p):
    h = 1e-7
    num = (loss_p(y, p + h) - loss_p(y, p - h)) / (2 * h)
    assert loss_p_grad(y, p) == pytest.approx(num, rel=1e-6)
    num_c = (loss_c(y, p + h) - loss_c(y, p - h)) / (2 * h)
    assert loss_c_grads(y, p)[1] == pytest.approx(num_c, rel=1e-5)
    num_y = (loss_c(y + h, p) - loss_c(y - h, p)) / (2 * h)
    assert loss_c_grads(y, p)[0] == pytest.approx(num_y, rel=1e-5)


def test_loss_c_gradient_pushes_away_from_label():
    # descending loss_c on y_hat must increase |y - y_hat|
    assert loss_c_grads(1.0, 0.7)[1] > 0
    assert loss_c_grads(0.0, 0.3)[1] < 0


def test_invariant_terms_at_half():
    m = half_model()
    r = np.ones((1, 8))
    inv_r, inv_cr, inv_constr = invariant_pns_loss(m, 1, [1.0], r, -r)
    assert inv_r == pytest.approx(LN2, abs=1e-12)
    assert inv_cr == pytest.approx(1 / 0.51, abs=1e-12)
    assert inv_constr == pytest.approx(1.3591, abs=1e-4)
    assert inv_constr == pytest.approx(inv_r * inv_cr, abs=1e-12)


def test_invariant_product_identity_on_random_model():
    m = init_model(SMALL, 4)
    rng = np.random.default_rng(4)
    for _ in range(10):
        r, c = rng.normal(size=(1, 8)), rng.normal(size=(1, 8))
        y = [float(rng.integers(0, 2))]
        inv_r, inv_cr, inv_constr = invariant_pns_loss(m, 2, y, r, c)
        assert inv_constr == pytest.approx(inv_r * inv_cr, rel=1e-12)


def test_specific_constraint_values():
    m = half_model()
    z = np.zeros((1, 8))
    assert specific_pns_loss(m, 1, 2, [1.0], z, z, z)[2] == pytest.approx(100.0, abs=1e-9)
    with pytest.raises(ContractError):
        specific_pns_loss(m, 1, 1, [1.0], z, z, z)


def test_specific_constraint_is_asymmetric():
    m = init_model(SMALL, 7)
    rng = np.random.default_rng(7)
    r1, r2, c1, c2 = (rng.normal(size=(4, 8)) for _ in range(4))
    y = [1.0, 0.0, 1.0, 0.0]
    a = specific_pns_loss(m, 1, 2, y, r1, c1, c2)[2]
    b = specific_pns_loss(m, 2, 1, y, r2, c2, c1)[2]
    assert a != pytest.approx(b)


def test_breakdown_matches_standalone_terms():
    model = init_model(SMALL, 1)
    x1, x2, y = batch(1)
    fwd = forward_pass(model, x1, x2)
    bd, _ = total_loss("mpns", fwd, y)
    R = fwd.reps
    for m in (1, 2):
        inv = invariant_pns_loss(model, m, y, R[f"r_inv{m}"], R[f"c_inv{m}"])
        spec = specific_pns_loss(model, m, 3 - m, y, R[f"r_spec{m}"], R[f"c_spec{m}"],
                                 R[f"c_spec{3 - m}"])
        for name, value in zip(TERM_NAMES, inv + spec):
            assert bd.terms[m][name] == pytest.approx(value, rel=1e-12)


def test_mode_totals_relate():
    model = init_model(SMALL, 2)
    x1, x2, y = batch(2)
    fwd = forward_pass(model, x1, x2)
    bds = {mode: total_loss(mode, fwd, y)[0] for mode in MODES}
    assert bds["net"].total == bds["net"].task
    assert bds["mpns"].total - bds["mpns_minus_c"].total == pytest.approx(
        bds["mpns"].constraint_sum(), abs=1e-12)
    assert np.array_equal(bds["mpns"].values(), bds["net"].values())


def test_closed_form_total_at_half():
    model = half_model()
    x1, x2, _ = batch(3, n=8)
    y = np.ones(8)
    bd, _ = total_loss("mpns", forward_pass(model, x1, x2), y)
    c_half = 1 / 0.51
    per_m = LN2 + c_half + LN2 * c_half + LN2 + c_half + 100.0
    assert bd.total == pytest.approx(LN2 + 2 * per_m, abs=1e-9)


@settings(max_examples=20, deadline=None)
@given(seed=st.integers(0, 10_000), mode=st.sampled_from(MODES))
def test_total_is_non_negative(seed, mode):
    model = init_model(SMALL, seed)
    x1, x2, y = batch(seed, n=6)
    bd, _ = total_loss(mode, forward_pass(model, x1, x2), y)
    assert bd.total >= 0 and np.all(bd.values() >= 0)


def test_label_count_mismatch():
    model = init_model(SMALL, 0)
    x1, x2, y = batch(0)
    with pytest.raises(ContractError):
        total_loss("mpns", forward_pass(model, x1, x2), y[:-1])
    with pytest.raises(ValueError):
        LossConfig(mode="other")


def test_net_mode_leaves_complements_and_aux_untouched():
    model = init_model(SMALL, 5)
    x1, x2, y = batch(5)
    fwd = forward_pass(model, x1, x2)
    _, pg = total_loss("net", fwd, y)
    grads = backward(model, fwd, pg, "net")
    assert set(zero_grad_nets("net")) == set(COMPLEMENT_NETS + AUX_NETS)
    for name in zero_grad_nets("net"):
        assert not grads[name].flat.any()
    assert grads["enc_inv"].flat.any() and grads["pred_main"].flat.any()


@pytest.mark.parametrize("mode", MODES)
def test_model_gradients_match_finite_differences(mode):
    model = init_model(SMALL, 11)
    x1, x2, y = batch(11, n=5)
    cfg = LossConfig(mode=mode, w_r=0.7, w_cr=1.3, w_constr=0.4)
    fwd = forward_pass(model, x1, x2)
    _, pg = total_loss(mode, fwd, y, cfg)
    grads = backward(model, fwd, pg, mode)

    def total():
        return total_loss(mode, forward_pass(model, x1, x2), y, cfg)[0].total

    rng = np.random.default_rng(0)
    h = 1e-6
    for name, params in model.nets.items():
        for k in rng.choice(params.flat.size, size=6, replace=False):
            orig = params.flat[k]
            params.flat[k] = orig + h
            up = total()
            params.flat[k] = orig - h
            down = total()
            params.flat[k] = orig
            num = (up - down) / (2 * h)
            ana = grads[name].flat[k]
            assert abs(num - ana) <= 1e-5 * max(abs(num), abs(ana), 1e-3), (name, k, num, ana)
