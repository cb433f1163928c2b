"""Variational training objective.

The quantity minimised is ``sum_t recon_t + beta * sum_t kl_t`` over the
predicted steps ``t = C+1 .. T``: the negative variational bound with the
Gaussian likelihood constant dropped, its unstated variance folded into beta.
Reconstruction sums over pixels; both terms average over the batch.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import tensor as T
from .models import GaussianParams, RngLike, SvgModel, reparam_sample
from .tensor import Tensor


@dataclass
class LossReport:
    total: float
    recon_per_step: list[float]
    kl_per_step: list[float]
    beta: float
    latents: list[np.ndarray] = field(default_factory=list, repr=False)
    posterior: list[GaussianParams] = field(default_factory=list, repr=False)
    prior: list[GaussianParams] = field(default_factory=list, repr=False)

    @property
    def recon(self) -> float:
        return float(sum(self.recon_per_step))

    @property
    def kl(self) -> float:
        return float(sum(self.kl_per_step))


def gaussian_kl(q: GaussianParams, p: GaussianParams) -> Tensor:
    """KL(q || p) between diagonal Gaussians, summed over latent dims -> shape [B]."""
    if q.mu.shape != p.mu.shape or q.sigma.shape != p.sigma.shape or q.mu.shape != q.sigma.shape:
        raise ValueError(f"gaussian_kl: shape mismatch {q.mu.shape} vs {p.mu.shape}")
    if np.any(q.sigma.data <= 0) or np.any(p.sigma.data <= 0):
        raise ValueError("gaussian_kl: standard deviations must be strictly positive")
    var_p = T.square(p.sigma)
    terms = (T.log(p.sigma) - T.log(q.sigma)
             + (T.square(q.sigma) + T.square(q.mu - p.mu)) / (2.0 * var_p) - 0.5)
    return T.sum_(terms, axis=1)


def reconstruction_loss(x_hat: Tensor, x) -> Tensor:
    """Squared error summed over pixels, averaged over the leading batch axis."""
    x = x if isinstance(x, Tensor) else Tensor(x)
    if x_hat.shape != x.shape:
        raise ValueError(f"reconstruction_loss: shape mismatch {x_hat.shape} vs {x.shape}")
    return T.sum_(T.square(x_hat - x)) * (1.0 / x.shape[0])


def sequence_elbo_loss(model: SvgModel, seq: np.ndarray, C: int, beta: float,
                       rng: RngLike) -> tuple[LossReport, Tensor]:
    """Single-sample negative bound for a time-major batch ``seq[T, B, 1, H, W]``.

    Steps ``2..C`` warm the recurrences (posterior z, no loss); each step
    ``t > C`` samples ``z_t`` from the posterior, predicts ``x_t`` from the
    ground-truth ``x_{t-1}`` and scores it.  Returns the report and the scalar
    loss tensor whose graph ``backward`` consumes.
    """
    if not model.stochastic:
        raise ValueError("deterministic model has no bound; use reconstruction_sequence_loss")
    return _sequence_loss(model, seq, C, beta, rng)


def reconstruction_sequence_loss(model: SvgModel, seq: np.ndarray, C: int) -> tuple[LossReport, Tensor]:
    """Teacher-forced prediction loss for any mode; latent models use z = posterior mean."""
    return _sequence_loss(model, seq, C, 0.0, None)


def _sequence_loss(model, seq, C, beta, rng):
    n_t, batch = seq.shape[:2]
    if not 1 <= C < n_t:
        raise ValueError(f"need 1 <= C < T, got C={C}, T={n_t}")
    emb = model.encode(seq.reshape((n_t * batch,) + seq.shape[2:]))
    hs = [emb.h[i * batch:(i + 1) * batch] for i in range(n_t)]
    skips = [s[(C - 1) * batch:C * batch] for s in emb.skips]
    st = model.init_state(batch)
    recon_terms, kl_terms = [], []
    report = LossReport(0.0, [], [], beta)
    for i in range(1, n_t):
        z = None
        if model.stochastic:
            q, st.posterior = model.posterior_step(hs[i], st.posterior)
            if model.mode == "lp":
                p, st.prior = model.prior_step(hs[i - 1], st.prior)
            else:
                p = GaussianParams.standard(batch, model.cfg.z_dim)
            z = reparam_sample(q, rng) if rng is not None else q.mu
        if i < C:
            _, st.predictor = model.advance(hs[i - 1], z, st.predictor)
            continue
        x_hat, st.predictor = model.predict_step(hs[i - 1], z, st.predictor, skips)
        recon = reconstruction_loss(x_hat, seq[i])
        recon_terms.append(recon)
        report.recon_per_step.append(recon.item())
        if model.stochastic:
            kl = T.mean(gaussian_kl(q, p))
            kl_terms.append(kl)
            report.kl_per_step.append(kl.item())
            report.latents.append(z.data.copy())
            report.posterior.append(q)
            report.prior.append(p)
        else:
            report.kl_per_step.append(0.0)
    loss = _tree_sum(recon_terms)
    if kl_terms:
        loss = loss + beta * _tree_sum(kl_terms)
    report.total = loss.item()
    return report, loss


def _tree_sum(terms: list[Tensor]) -> Tensor:
    out = terms[0]
    for t in terms[1:]:
        out = out + t
    return out
