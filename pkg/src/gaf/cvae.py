"""Frame-level attention model: a conditional VAE over per-frame features.

Each frame feature f_t is encoded to a Gaussian posterior conditioned on the
frame's attention value, sampled once by reparameterization, and decoded back
conditioned on the same attention value. A learned prior over the latent is
conditioned on the attention value alone, so the KL term ties the latent code
to the attention signal.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Iterator, Optional

import numpy as np

from gaf import tensor as gt
from gaf.attention import AttentionMap
from gaf.layers import Linear
from gaf.tensor import ContractError, Tensor


class CvaeModel:
    """Encoder / conditional prior / decoder, all per-frame MLPs."""

    def __init__(
        self,
        D: int,
        rng: np.random.Generator,
        d_z: int = 16,
        d_reduce: int = 12,
        h_enc: int = 32,
        h_dec: int = 32,
        cond_scale: float = 1.0,
    ):
        self.D = D
        self.d_z = d_z
        self.theta_reduce = Linear(D, d_reduce, rng)
        self.enc_fc = Linear(d_reduce + 1, h_enc, rng)
        self.enc_mu = Linear(h_enc, d_z, rng)
        self.enc_logvar = Linear(h_enc, d_z, rng)
        self.prior_mu = Linear(1, d_z, rng)
        self.prior_logvar = Linear(1, d_z, rng)
        self.dec_fc = Linear(d_z + 1, h_dec, rng)
        self.theta_deconv = Linear(h_dec, D, rng)
        # the attention enters encode/decode as the last input column; start
        # it small so an untrained model is close to unconditional and the
        # conditioning strength is learned rather than inherited from init
        self.enc_fc.w.data[-1, :] *= cond_scale
        self.dec_fc.w.data[-1, :] *= cond_scale

    _FIELDS = (
        "theta_reduce", "enc_fc", "enc_mu", "enc_logvar",
        "prior_mu", "prior_logvar", "dec_fc", "theta_deconv",
    )

    def named_params(self, prefix: str = "frame") -> Iterator[tuple[str, Tensor]]:
        for name in self._FIELDS:
            yield from getattr(self, name).named_params(f"{prefix}.{name}")

    def set_trainable(self, flag: bool) -> None:
        for _, p in self.named_params():
            p.requires_grad = flag

    def frozen(self) -> bool:
        return not any(p.requires_grad for _, p in self.named_params())


@dataclass
class LatentSample:
    z: Tensor  # [T, d_z]
    mu: Tensor
    logvar: Tensor
    eps: np.ndarray  # the standard-normal draw, kept for exact replay


def _check_lam(lam: AttentionMap, t: int) -> None:
    if lam.T != t:
        raise gt.ShapeError(f"attention length {lam.T} != T={t}")
    # AttentionMap enforces [0,1] at construction; recheck cheap and loud
    if np.any(lam.lam.data < 0.0) or np.any(lam.lam.data > 1.0):
        raise ContractError("attention values out of [0,1]")


def encode(
    model: CvaeModel,
    f: Tensor,
    lam: AttentionMap,
    rng: Optional[np.random.Generator] = None,
    eps: Optional[np.ndarray] = None,
) -> LatentSample:
    """Per-frame Gaussian posterior and one reparameterized sample.

    Noise comes from `eps` when given (exact replay), else drawn from `rng`.
    """
    t = f.data.shape[0]
    _check_lam(lam, t)
    h = gt.relu(model.enc_fc(gt.concat([model.theta_reduce(f), lam.column()], axis=1)))
    mu = model.enc_mu(h)
    logvar = model.enc_logvar(h)
    if eps is None:
        if rng is None:
            raise ContractError("encode needs rng or eps")
        eps = rng.standard_normal((t, model.d_z))
    eps = np.asarray(eps, dtype=np.float64)
    if eps.shape != (t, model.d_z):
        raise gt.ShapeError(f"eps shape {eps.shape} != {(t, model.d_z)}")
    z = mu + gt.exp(logvar * 0.5) * Tensor(eps)
    return LatentSample(z=z, mu=mu, logvar=logvar, eps=eps)


def prior(model: CvaeModel, lam: AttentionMap) -> tuple[Tensor, Tensor]:
    """Latent prior parameters as a function of the attention value alone."""
    _check_lam(lam, lam.T)
    col = lam.column()
    return model.prior_mu(col), model.prior_logvar(col)


def decode(model: CvaeModel, z: Tensor, lam: AttentionMap) -> Tensor:
    """Reconstruct the feature map from (z_t, lambda_t), frame by frame."""
    t = z.data.shape[0]
    _check_lam(lam, t)
    h = gt.relu(model.dec_fc(gt.concat([z, lam.column()], axis=1)))
    return model.theta_deconv(h)


def kl_gaussian(mu_q: Tensor, logvar_q: Tensor, mu_p: Tensor, logvar_p: Tensor) -> Tensor:
    """Closed-form KL between diagonal Gaussians, summed over the latent
    dimension and averaged over frames. Non-negative by construction."""
    var_ratio = gt.exp(logvar_q - logvar_p)
    delta = mu_q - mu_p
    per_dim = 0.5 * (var_ratio + gt.square(delta) / gt.exp(logvar_p) - 1.0 + (logvar_p - logvar_q))
    return gt.mean(gt.ssum(per_dim, axis=1))


def reconstruction_mse(f: Tensor, f_hat: Tensor) -> Tensor:
    """Squared reconstruction error per frame, averaged over frames."""
    return gt.mean(gt.ssum(gt.square(f - f_hat), axis=1))


def cvae_loss(
    model: CvaeModel,
    f: Tensor,
    lam: AttentionMap,
    beta_kl: float,
    rng: Optional[np.random.Generator] = None,
    eps: Optional[np.ndarray] = None,
) -> tuple[Tensor, Tensor, Tensor]:
    """Single-sample variational loss: (total, reconstruction, kl).

    Reconstruction is mean squared error (unit-variance Gaussian decoder);
    the KL weight beta_kl must be >= 0.
    """
    if beta_kl < 0:
        raise ContractError(f"beta_kl must be >= 0, got {beta_kl}")
    sample = encode(model, f, lam, rng=rng, eps=eps)
    f_hat = decode(model, sample.z, lam)
    recon = reconstruction_mse(f, f_hat)
    mu_p, logvar_p = prior(model, lam)
    kl = kl_gaussian(sample.mu, sample.logvar, mu_p, logvar_p)
    return recon + beta_kl * kl, recon, kl


def reconstruction_loss(
    model: CvaeModel,
    f: Tensor,
    lam: AttentionMap,
    rng: Optional[np.random.Generator] = None,
    eps: Optional[np.ndarray] = None,
) -> Tensor:
    """Reconstruction term alone (no KL): encode, decode, squared error."""
    sample = encode(model, f, lam, rng=rng, eps=eps)
    return reconstruction_mse(f, decode(model, sample.z, lam))
