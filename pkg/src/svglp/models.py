"""SVG model family: shared frame encoder/decoder, recurrent frame predictor,
recurrent posterior and (for the learned-prior variant) recurrent prior.

Batches are time-major numpy arrays ``[T, B, 1, H, W]`` with values in [0, 1].
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from . import tensor as T
from .config import ModelConfig
from .nn import Conv2d, GaussianLSTM, Linear, LSTMStack, Module, RecurrentState
from .tensor import Tensor


@dataclass
class FrameEmbedding:
    h: Tensor
    skips: list[Tensor]

    def rows(self, start: int, stop: int) -> "FrameEmbedding":
        return FrameEmbedding(self.h[start:stop], [s[start:stop] for s in self.skips])


@dataclass
class GaussianParams:
    mu: Tensor
    sigma: Tensor

    @classmethod
    def standard(cls, batch: int, dim: int) -> "GaussianParams":
        return cls(Tensor(np.zeros((batch, dim))), Tensor(np.ones((batch, dim))))


RngLike = np.random.Generator | Sequence[np.random.Generator]


def standard_normal(rng: RngLike, shape: tuple[int, int]) -> np.ndarray:
    """Draw ``shape`` normals; a list of generators supplies one row each."""
    if isinstance(rng, np.random.Generator):
        return rng.standard_normal(shape)
    if len(rng) != shape[0]:
        raise ValueError(f"need {shape[0]} generators, got {len(rng)}")
    return np.stack([r.standard_normal(shape[1]) for r in rng])


def reparam_sample(g: GaussianParams, rng: RngLike) -> Tensor:
    eps = standard_normal(rng, g.mu.shape)
    return g.mu + g.sigma * Tensor(eps)


class Encoder(Module):
    """DCGAN-discriminator-style encoder: stride-2 4x4 convs, then a 4x4 valid
    conv to ``h_dim`` with tanh.  Every stride-2 stage output is kept as a skip."""

    def __init__(self, cfg: ModelConfig, rng):
        chans = (1,) + cfg.channels
        self.stages = [Conv2d(chans[i], chans[i + 1], 4, rng, stride=2, padding=1)
                       for i in range(len(cfg.channels))]
        self.project = Conv2d(cfg.channels[-1], cfg.h_dim, 4, rng)
        self.frame_size = cfg.frame_size

    def __call__(self, x: Tensor) -> FrameEmbedding:
        if x.data.ndim != 4 or x.shape[1:] != (1, self.frame_size, self.frame_size):
            raise ValueError(
                f"encoder expects frames [B, 1, {self.frame_size}, {self.frame_size}], got {x.shape}")
        skips = []
        for conv in self.stages:
            x = T.leaky_relu(conv(x))
            skips.append(x)
        h = T.tanh(self.project(x))
        return FrameEmbedding(h.reshape(h.shape[0], h.shape[1]), skips)


class Decoder(Module):
    """Mirror of :class:`Encoder`.  At each resolution the matching encoder skip
    is concatenated channel-wise, a 3x3 conv is applied, then 2x upsampling.
    A final 3x3 conv and sigmoid produce the frame."""

    def __init__(self, cfg: ModelConfig, rng):
        chans = cfg.channels
        outs = (max(chans[0] // 2, 1),) + chans[:-1]
        self.fc = Linear(cfg.g_dim, chans[-1] * 16, rng)
        self.stages = [Conv2d(2 * chans[k], outs[k], 3, rng, padding=1)
                       for k in reversed(range(len(chans)))]
        self.head = Conv2d(outs[0], 1, 3, rng, padding=1)
        self.head.bias.data[:] = cfg.output_bias
        self.top_channels = chans[-1]

    def __call__(self, g: Tensor, skips: Sequence[Tensor]) -> Tensor:
        x = T.leaky_relu(self.fc(g)).reshape(g.shape[0], self.top_channels, 4, 4)
        for conv, skip in zip(self.stages, reversed(skips)):
            x = T.upsample2x(T.leaky_relu(conv(T.concat([x, skip], axis=1))))
        return T.sigmoid(self.head(x))


@dataclass
class RolloutState:
    predictor: RecurrentState
    posterior: RecurrentState | None = None
    prior: RecurrentState | None = None
    last_frame: np.ndarray | None = None
    skips: list[Tensor] | None = None


@dataclass
class RolloutResult:
    frames: np.ndarray                      # [T - C, B, 1, H, W]
    posterior: list[GaussianParams] = field(default_factory=list)
    prior: list[GaussianParams] = field(default_factory=list)


class SvgModel(Module):
    """Frame predictor plus latent inference for modes ``fp``, ``lp`` and ``det``.

    Components are created in a fixed order (encoder, decoder, predictor,
    posterior, prior) from one seeded generator, so an ``lp`` model and an
    ``fp`` model built from the same seed share every non-prior weight.
    """

    def __init__(self, cfg: ModelConfig, seed: int = 0):
        rng = np.random.default_rng(seed)
        self.cfg = cfg
        self.mode = cfg.mode
        self.encoder = Encoder(cfg, rng)
        self.decoder = Decoder(cfg, rng)
        pred_in = cfg.h_dim + (0 if cfg.mode == "det" else cfg.z_dim)
        self.predictor = LSTMStack(pred_in, cfg.g_dim, cfg.rnn_size, cfg.predictor_layers, rng)
        if cfg.mode != "det":
            self.posterior = GaussianLSTM(cfg.h_dim, cfg.z_dim, cfg.rnn_size, cfg.posterior_layers, rng)
        if cfg.mode == "lp":
            self.prior = GaussianLSTM(cfg.h_dim, cfg.z_dim, cfg.rnn_size, cfg.prior_layers, rng)

    @property
    def stochastic(self) -> bool:
        return self.mode != "det"

    def encode(self, frames) -> FrameEmbedding:
        return self.encoder(frames if isinstance(frames, Tensor) else Tensor(frames))

    def init_state(self, batch: int) -> RolloutState:
        return RolloutState(
            predictor=self.predictor.init_state(batch),
            posterior=self.posterior.init_state(batch) if self.stochastic else None,
            prior=self.prior.init_state(batch) if self.mode == "lp" else None,
        )

    def posterior_step(self, h_t, state: RecurrentState) -> tuple[GaussianParams, RecurrentState]:
        if not self.stochastic:
            raise RuntimeError("deterministic model has no posterior network")
        h = h_t.h if isinstance(h_t, FrameEmbedding) else h_t
        mu, sigma, state = self.posterior(h, state)
        return GaussianParams(mu, sigma), state

    def prior_step(self, h_prev, state: RecurrentState) -> tuple[GaussianParams, RecurrentState]:
        if self.mode != "lp":
            raise RuntimeError(f"prior_step needs a learned-prior (lp) model, this one is {self.mode!r}")
        h = h_prev.h if isinstance(h_prev, FrameEmbedding) else h_prev
        mu, sigma, state = self.prior(h, state)
        return GaussianParams(mu, sigma), state

    def advance(self, h_prev, z: Tensor | None, state: RecurrentState) -> tuple[Tensor, RecurrentState]:
        """Run the predictor recurrence; returns tanh-squashed ``g_t``."""
        h = h_prev.h if isinstance(h_prev, FrameEmbedding) else h_prev
        if self.stochastic:
            if z is None or z.shape != (h.shape[0], self.cfg.z_dim):
                raise ValueError(f"predictor needs z of shape [{h.shape[0]}, {self.cfg.z_dim}]")
            inp = T.concat([h, z], axis=1)
        else:
            if z is not None:
                raise ValueError("deterministic model takes no latent input")
            inp = h
        out, state = self.predictor(inp, state)
        return T.tanh(out), state

    def predict_step(self, h_prev, z: Tensor | None, state: RecurrentState,
                     skips: Sequence[Tensor]) -> tuple[Tensor, RecurrentState]:
        g, state = self.advance(h_prev, z, state)
        return self.decoder(g, skips), state


def rollout(model: SvgModel, frames: np.ndarray, C: int, horizon: int,
            mode: str = "prior", rng: RngLike | None = None) -> RolloutResult:
    """Generate frames ``C+1 .. horizon`` after conditioning on ``frames[:C]``.

    ``mode='prior'`` samples z from N(0, I) (fp) or the learned prior (lp) and
    feeds generated frames back in.  ``mode='posterior'`` teacher-forces the
    ground truth and samples z from the posterior; it needs all ``horizon``
    frames.  During the conditioning window the posterior supplies z and the
    prior recurrence is warmed on ground truth.  Decoder skips come from frame C.
    """
    if C < 1:
        raise ValueError("need at least one conditioning frame")
    if horizon <= C:
        raise ValueError(f"horizon {horizon} must exceed conditioning length {C}")
    if mode not in ("prior", "posterior"):
        raise ValueError(f"unknown rollout mode {mode!r}")
    need = horizon if mode == "posterior" else C
    if frames.shape[0] < need:
        raise ValueError(f"{mode} rollout needs {need} ground-truth frames, got {frames.shape[0]}")
    if model.stochastic and rng is None:
        raise ValueError("stochastic rollout needs an rng")
    batch = frames.shape[1]
    with T.no_grad():
        n_enc = need if mode == "posterior" else C
        emb = model.encode(frames[:n_enc].reshape((n_enc * batch,) + frames.shape[2:]))
        gt = [emb.rows(i * batch, (i + 1) * batch) for i in range(n_enc)]
        skips = gt[C - 1].skips
        st = model.init_state(batch)
        result = RolloutResult(frames=np.zeros((horizon - C, batch) + frames.shape[2:]))
        h_prev = gt[0]
        for i in range(1, horizon):
            generating = i >= C and mode == "prior"
            z = None
            if model.mode == "lp":
                p, st.prior = model.prior_step(h_prev, st.prior)
            if model.stochastic:
                if generating:
                    z = reparam_sample(p if model.mode == "lp" else
                                       GaussianParams.standard(batch, model.cfg.z_dim), rng)
                else:
                    q, st.posterior = model.posterior_step(gt[i], st.posterior)
                    z = reparam_sample(q, rng)
                    if i >= C:
                        result.posterior.append(q)
                if i >= C and model.mode == "lp":
                    result.prior.append(p)
            if i < C:
                _, st.predictor = model.advance(h_prev, z, st.predictor)
                h_prev = gt[i]
                continue
            x_hat, st.predictor = model.predict_step(h_prev, z, st.predictor, skips)
            result.frames[i - C] = x_hat.data
            if i + 1 < horizon:
                h_prev = model.encode(x_hat) if generating else gt[i]
        return result
