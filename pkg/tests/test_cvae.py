"""Frame-level attention model tests.

Oracles: Monte-Carlo estimate for the closed-form KL, hand-computed KL at
N(1,1) vs N(0,1), finite differences for every gradient path.
"""

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from gaf import cvae as gc
from gaf import tensor as gt
from gaf.attention import AttentionMap
from gaf.tensor import ContractError, Tensor
from gradcheck import assert_grads_match, model_builder

SEEDS = [0, 1, 2, 3, 4]
T, D = 5, 6


def small_model(seed, d_z=3):
    rng = np.random.default_rng([seed, 99])
    return gc.CvaeModel(D, rng, d_z=d_z, d_reduce=4, h_enc=8, h_dec=8)


def inputs(seed):
    rng = np.random.default_rng([seed, 7])
    f = Tensor(rng.standard_normal((T, D)))
    lam = AttentionMap(Tensor(rng.uniform(0, 1, T)))
    return f, lam, rng


def test_encode_zero_eps_returns_mu():
    model = small_model(0)
    f, lam, _ = inputs(0)
    s = gc.encode(model, f, lam, eps=np.zeros((T, model.d_z)))
    np.testing.assert_array_equal(s.z.data, s.mu.data)


def test_encode_per_frame_determinism():
    model = small_model(1)
    row = np.random.default_rng(3).standard_normal(D)
    f = Tensor(np.stack([row, row]))
    lam = AttentionMap(Tensor(np.array([0.4, 0.4])))
    s = gc.encode(model, f, lam, eps=np.zeros((2, model.d_z)))
    np.testing.assert_array_equal(s.mu.data[0], s.mu.data[1])
    np.testing.assert_array_equal(s.logvar.data[0], s.logvar.data[1])


def test_reparameterization_identity_exact():
    model = small_model(2)
    f, lam, rng = inputs(2)
    s = gc.encode(model, f, lam, rng=rng)
    mirror = s.mu.data + np.exp(s.logvar.data * 0.5) * s.eps
    np.testing.assert_array_equal(s.z.data, mirror)


def test_encode_rejects_bad_lambda():
    model = small_model(0)
    f, _, _ = inputs(0)
    with pytest.raises(ContractError):
        AttentionMap(Tensor(np.full(T, 1.5)))
    with pytest.raises(gt.ShapeError):
        gc.encode(model, f, AttentionMap(Tensor(np.full(T + 1, 0.5))), eps=np.zeros((T, 3)))
    with pytest.raises(ContractError):
        gc.encode(model, f, AttentionMap(Tensor(np.full(T, 0.5))))  # no rng, no eps


@pytest.mark.parametrize("seed", SEEDS)
def test_grad_encode(seed):
    model = small_model(seed)
    f, lam, rng = inputs(seed)
    eps0 = rng.standard_normal((T, model.d_z))
    w = Tensor(rng.standard_normal((T, model.d_z)))

    def loss():
        s = gc.encode(model, f, lam, eps=eps0)
        return gt.ssum(s.z * w)

    build, arrays = model_builder([model], loss)
    assert_grads_match(build, arrays)


@pytest.mark.parametrize("seed", SEEDS)
def test_grad_prior_and_decode(seed):
    model = small_model(seed)
    f, lam, rng = inputs(seed)
    z = Tensor(rng.standard_normal((T, model.d_z)))
    wp = Tensor(rng.standard_normal((T, model.d_z)))
    wd = Tensor(rng.standard_normal((T, D)))

    def prior_loss():
        mu_p, logvar_p = gc.prior(model, lam)
        return gt.ssum(mu_p * wp) + gt.ssum(gt.exp(logvar_p * 0.5) * wp)

    def decode_loss():
        return gt.ssum(gc.decode(model, z, lam) * wd)

    build, arrays = model_builder([model], prior_loss)
    assert_grads_match(build, arrays)
    build, arrays = model_builder([model], decode_loss)
    assert_grads_match(build, arrays)


def test_prior_constant_lambda_constant_params():
    model = small_model(3)
    lam = AttentionMap(Tensor(np.full(T, 0.7)))
    mu_p, logvar_p = gc.prior(model, lam)
    for row in range(1, T):
        np.testing.assert_array_equal(mu_p.data[row], mu_p.data[0])
        np.testing.assert_array_equal(logvar_p.data[row], logvar_p.data[0])


def test_prior_zero_init_is_standard_normal():
    model = small_model(4)
    for layer in (model.prior_mu, model.prior_logvar):
        layer.w.data[:] = 0.0
        layer.b.data[:] = 0.0
    lam = AttentionMap(Tensor(np.linspace(0, 1, T)))
    mu_p, logvar_p = gc.prior(model, lam)
    assert not mu_p.data.any() and not logvar_p.data.any()


def test_decode_zero_weights_zero_output():
    model = small_model(5)
    for layer in (model.dec_fc, model.theta_deconv):
        layer.w.data[:] = 0.0
        layer.b.data[:] = 0.0
    z = Tensor(np.random.default_rng(0).standard_normal((T, model.d_z)))
    lam = AttentionMap(Tensor(np.full(T, 0.5)))
    assert not gc.decode(model, z, lam).data.any()


def test_decode_permutation_equivariance():
    model = small_model(6)
    rng = np.random.default_rng(1)
    z = rng.standard_normal((T, model.d_z))
    lv = rng.uniform(0, 1, T)
    perm = rng.permutation(T)
    out = gc.decode(model, Tensor(z), AttentionMap(Tensor(lv))).data
    out_p = gc.decode(model, Tensor(z[perm]), AttentionMap(Tensor(lv[perm]))).data
    np.testing.assert_array_equal(out[perm], out_p)


# --- KL -----------------------------------------------------------------


def test_kl_identical_is_zero():
    rng = np.random.default_rng(0)
    mu = Tensor(rng.standard_normal((4, 3)))
    lv = Tensor(rng.standard_normal((4, 3)))
    assert gc.kl_gaussian(mu, lv, mu, lv).item() == 0.0


def test_kl_hand_value():
    # KL(N(1,1) || N(0,1)) = 0.5 per dimension
    one = Tensor(np.ones((1, 1)))
    zero = Tensor(np.zeros((1, 1)))
    assert gc.kl_gaussian(one, zero, zero, zero).item() == pytest.approx(0.5, abs=1e-15)


def test_kl_matches_monte_carlo():
    rng = np.random.default_rng(12)
    t_len, d_z = 3, 2
    mu_q = rng.standard_normal((t_len, d_z))
    lv_q = rng.uniform(-1, 1, (t_len, d_z))
    mu_p = rng.standard_normal((t_len, d_z))
    lv_p = rng.uniform(-1, 1, (t_len, d_z))
    closed = gc.kl_gaussian(Tensor(mu_q), Tensor(lv_q), Tensor(mu_p), Tensor(lv_p)).item()

    n = 100_000
    total = 0.0
    for t in range(t_len):
        sd_q = np.exp(lv_q[t] * 0.5)
        z = mu_q[t] + sd_q * rng.standard_normal((n, d_z))
        logq = -0.5 * (((z - mu_q[t]) / sd_q) ** 2 + lv_q[t] + np.log(2 * np.pi)).sum(axis=1)
        sd_p = np.exp(lv_p[t] * 0.5)
        logp = -0.5 * (((z - mu_p[t]) / sd_p) ** 2 + lv_p[t] + np.log(2 * np.pi)).sum(axis=1)
        total += (logq - logp).mean()
    mc = total / t_len
    assert closed == pytest.approx(mc, rel=0.02)


@settings(max_examples=50, deadline=None)
@given(st.integers(0, 10_000))
def test_kl_nonnegative(seed):
    rng = np.random.default_rng(seed)
    args = [Tensor(rng.standard_normal((2, 3))) for _ in range(4)]
    assert gc.kl_gaussian(*args).item() >= 0.0


@pytest.mark.parametrize("seed", SEEDS)
def test_grad_kl(seed):
    rng = np.random.default_rng(seed)
    arrays = [rng.standard_normal((3, 2)) for _ in range(4)]
    assert_grads_match(
        lambda a, b, c, d: gc.kl_gaussian(a, b, c, d), arrays
    )


# --- losses ---------------------------------------------------------------


def test_reconstruction_mse_zero_and_quadratic():
    rng = np.random.default_rng(2)
    f = Tensor(rng.standard_normal((T, D)))
    r = rng.standard_normal((T, D))
    assert gc.reconstruction_mse(f, f).item() == 0.0
    l1 = gc.reconstruction_mse(f, Tensor(f.data + r)).item()
    l2 = gc.reconstruction_mse(f, Tensor(f.data + 2 * r)).item()
    assert l2 == pytest.approx(4 * l1, rel=1e-12)


def test_cvae_loss_beta_zero_is_mse():
    model = small_model(7)
    f, lam, rng = inputs(7)
    eps0 = rng.standard_normal((T, model.d_z))
    total, recon, kl = gc.cvae_loss(model, f, lam, beta_kl=0.0, eps=eps0)
    assert total.item() == recon.item()
    assert kl.item() >= 0.0
    s = gc.encode(model, f, lam, eps=eps0)
    direct = gc.reconstruction_mse(f, gc.decode(model, s.z, lam)).item()
    assert total.item() == direct


def test_reconstruction_loss_equals_beta_zero_cvae_loss():
    model = small_model(8)
    f, lam, rng = inputs(8)
    eps0 = rng.standard_normal((T, model.d_z))
    total, _, _ = gc.cvae_loss(model, f, lam, beta_kl=0.0, eps=eps0)
    lr = gc.reconstruction_loss(model, f, lam, eps=eps0)
    assert abs(total.item() - lr.item()) < 1e-12


def test_cvae_loss_rejects_negative_beta():
    model = small_model(0)
    f, lam, _ = inputs(0)
    with pytest.raises(ContractError):
        gc.cvae_loss(model, f, lam, beta_kl=-0.1, eps=np.zeros((T, model.d_z)))


@pytest.mark.parametrize("seed", SEEDS)
def test_grad_cvae_loss_all_params(seed):
    model = small_model(seed)
    f, lam, rng = inputs(seed)
    eps0 = rng.standard_normal((T, model.d_z))

    def loss():
        total, _, _ = gc.cvae_loss(model, f, lam, beta_kl=0.1, eps=eps0)
        return total

    build, arrays = model_builder([model], loss)
    assert_grads_match(build, arrays)
