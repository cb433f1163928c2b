from dataclasses import replace

import numpy as np
import pytest

from svglp import tensor as T
from svglp.config import ModelConfig
from svglp.models import Decoder, GaussianParams, SvgModel, reparam_sample, rollout
from svglp.objective import reconstruction_loss
from svglp.tensor import Tensor

from oracles import central_diff, grad_error

TINY = ModelConfig(frame_size=8, channels=(2,), h_dim=4, g_dim=4, z_dim=2, rnn_size=3)
SMALL = ModelConfig(frame_size=16, channels=(3, 4), h_dim=6, g_dim=5, z_dim=3, rnn_size=5)


def model(mode="lp", cfg=SMALL, seed=0):
    return SvgModel(replace(cfg, mode=mode), seed=seed)


def frames(rng, n_t=6, batch=2, size=16):
    return rng.uniform(0, 1, size=(n_t, batch, 1, size, size))


class TestEncoder:
    def test_pure(self, rng):
        m, x = model(), frames(rng)[0]
        assert m.encode(x).h.data.tobytes() == m.encode(x).h.data.tobytes()

    def test_distinct_frames_distinct_embeddings(self, rng):
        m, x = model(), frames(rng)
        assert not np.allclose(m.encode(x[0]).h.data, m.encode(x[1]).h.data)

    def test_embedding_shape_and_skip_depth(self, rng):
        m = model()
        emb = m.encode(frames(rng)[0])
        assert emb.h.shape == (2, SMALL.h_dim)
        assert len(emb.skips) == len(SMALL.channels)
        assert [s.shape[1:] for s in emb.skips] == [(3, 8, 8), (4, 4, 4)]

    def test_wrong_spatial_size(self):
        with pytest.raises(ValueError, match="16"):
            model().encode(np.zeros((1, 1, 8, 8)))

    def test_gradient_wrt_frame(self, rng):
        m = model(cfg=TINY)
        x = Tensor(rng.uniform(0, 1, size=(1, 1, 8, 8)), requires_grad=True)
        T.sum_(m.encode(x).h).backward()
        num = central_diff(lambda: float(m.encode(Tensor(x.data)).h.data.sum()), x.data)
        assert grad_error(x.grad, num) < 1e-4


class TestLatentNetworks:
    def test_posterior_sigma_positive_and_mu_small_at_init(self, rng):
        m = model()
        emb = m.encode(frames(rng)[0])
        q, _ = m.posterior_step(emb, m.init_state(2).posterior)
        assert np.all(q.sigma.data > 0)
        assert np.all(np.abs(q.mu.data) < 1)

    def test_posterior_threads_state(self, rng):
        m, x = model(), frames(rng)
        embs = [m.encode(x[i]) for i in range(3)]
        s1 = m.posterior_step(embs[0], m.init_state(2).posterior)[1]
        s2 = m.posterior_step(embs[1], m.init_state(2).posterior)[1]
        a, _ = m.posterior_step(embs[2], s1)
        b, _ = m.posterior_step(embs[2], s2)
        assert not np.allclose(a.mu.data, b.mu.data)

    def test_prior_refused_outside_lp(self, rng):
        m = model("fp")
        with pytest.raises(RuntimeError):
            m.prior_step(m.encode(frames(rng)[0]), None)

    def test_det_has_no_latent_networks(self):
        names = model("det").params().names()
        assert not any(n.startswith(("posterior.", "prior.")) for n in names)

    def test_lp_equals_fp_plus_prior(self):
        lp, fp = model("lp").params(), model("fp").params()
        prior = sum(t.data.size for n, t in lp.items() if n.startswith("prior."))
        assert lp.count() == fp.count() + prior
        assert set(lp.names()) - set(fp.names()) == {n for n in lp.names() if n.startswith("prior.")}

    def test_lp_and_fp_share_non_prior_weights(self):
        lp, fp = model("lp").params(), model("fp").params()
        assert all(np.array_equal(lp[n].data, fp[n].data) for n in fp.names())


class TestReparam:
    def test_zero_sigma_returns_mu(self, rng):
        g = GaussianParams(Tensor(rng.normal(size=(3, 2))), Tensor(np.zeros((3, 2))))
        assert np.array_equal(reparam_sample(g, rng).data, g.mu.data)

    def test_fixed_seed(self):
        g = GaussianParams.standard(4, 3)
        a = reparam_sample(g, np.random.default_rng(5)).data
        assert np.array_equal(a, reparam_sample(g, np.random.default_rng(5)).data)

    def test_moments(self):
        z = reparam_sample(GaussianParams.standard(100_000, 1), np.random.default_rng(0)).data
        assert abs(z.mean()) < 0.02 and abs(z.std() - 1) < 0.02

    def test_gradients_reach_mu_and_sigma(self):
        mu = Tensor(np.zeros((2, 2)), requires_grad=True)
        sigma = Tensor(np.ones((2, 2)), requires_grad=True)
        rng = np.random.default_rng(3)
        eps = np.random.default_rng(3).standard_normal((2, 2))
        T.sum_(reparam_sample(GaussianParams(mu, sigma), rng)).backward()
        assert np.array_equal(mu.grad, np.ones((2, 2))) and np.allclose(sigma.grad, eps)

    def test_generator_per_row(self):
        g = GaussianParams.standard(2, 3)
        rows = reparam_sample(g, [np.random.default_rng(1), np.random.default_rng(2)]).data
        assert np.array_equal(rows[1], np.random.default_rng(2).standard_normal(3))
        with pytest.raises(ValueError):
            reparam_sample(g, [np.random.default_rng(1)])


class TestPredictStep:
    def test_output_in_open_unit_interval_and_pure(self, rng):
        m = model()
        emb = m.encode(frames(rng)[0])
        z = Tensor(rng.normal(size=(2, 3)) * 5)
        st = m.init_state(2).predictor
        a, _ = m.predict_step(emb, z, st, emb.skips)
        b, _ = m.predict_step(emb, z, st, emb.skips)
        assert np.all((a.data > 0) & (a.data < 1))
        assert a.data.tobytes() == b.data.tobytes()

    def test_latent_shape_checked(self, rng):
        m = model()
        emb = m.encode(frames(rng)[0])
        with pytest.raises(ValueError):
            m.predict_step(emb, Tensor(np.zeros((2, 4))), m.init_state(2).predictor, emb.skips)
        with pytest.raises(ValueError):
            model("det").predict_step(emb, Tensor(np.zeros((2, 3))), m.init_state(2).predictor, emb.skips)

    def test_reconstruction_gradient_wrt_z(self, rng):
        m = model(cfg=TINY)
        x = rng.uniform(0, 1, size=(2, 1, 1, 8, 8))
        emb = m.encode(x[0])
        z = Tensor(rng.normal(size=(1, 2)), requires_grad=True)

        def loss(zv):
            out, _ = m.predict_step(emb, zv, m.init_state(1).predictor, emb.skips)
            return reconstruction_loss(out, x[1])

        loss(z).backward()
        num = central_diff(lambda: loss(Tensor(z.data)).item(), z.data)
        assert grad_error(z.grad, num) < 1e-4

    def test_decoder_skip_channels(self):
        with pytest.raises(ValueError):
            Decoder(SMALL, np.random.default_rng(0))(Tensor(np.zeros((1, 5))),
                                                     [Tensor(np.zeros((1, 3, 8, 8)))] * 2)


class TestRollout:
    def test_same_seed_identical(self, rng):
        m, x = model(), frames(rng)
        a = rollout(m, x, 2, 6, rng=np.random.default_rng(1)).frames
        b = rollout(m, x, 2, 6, rng=np.random.default_rng(1)).frames
        assert a.tobytes() == b.tobytes() and a.shape == (4, 2, 1, 16, 16)

    def test_fp_seeds_differ(self, rng):
        m, x = model("fp"), frames(rng)
        a = rollout(m, x, 2, 6, rng=np.random.default_rng(1)).frames
        b = rollout(m, x, 2, 6, rng=np.random.default_rng(2)).frames
        assert np.linalg.norm(a - b) > 0

    def test_det_ignores_seed(self, rng):
        m, x = model("det"), frames(rng)
        assert np.array_equal(rollout(m, x, 2, 6).frames, rollout(m, x, 2, 6, rng=np.random.default_rng(5)).frames)

    def test_errors(self, rng):
        m, x = model(), frames(rng)
        with pytest.raises(ValueError):
            rollout(m, x, 3, 3, rng=rng)
        with pytest.raises(ValueError):
            rollout(m, x[:4], 2, 6, mode="posterior", rng=rng)
        with pytest.raises(ValueError):
            rollout(m, x, 2, 6)

    def test_only_conditioning_frames_used_in_prior_mode(self, rng):
        m, x = model(), frames(rng)
        y = x.copy()
        y[2:] = rng.uniform(0, 1, size=y[2:].shape)
        a = rollout(m, x, 2, 6, rng=np.random.default_rng(3)).frames
        b = rollout(m, y[:2], 2, 6, rng=np.random.default_rng(3)).frames
        assert np.array_equal(a, b)

    def test_records_distributions_for_predicted_steps(self, rng):
        m, x = model(), frames(rng)
        res = rollout(m, x, 2, 6, mode="posterior", rng=rng)
        assert len(res.posterior) == 4 and len(res.prior) == 4
        res = rollout(m, x, 2, 6, rng=rng)
        assert len(res.posterior) == 0 and len(res.prior) == 4

    def test_skips_frozen_at_last_conditioning_frame(self, rng, monkeypatch):
        m, x = model(), frames(rng)
        seen = []
        original = Decoder.__call__

        def spy(self, g, skips):
            seen.append([s.data.copy() for s in skips])
            return original(self, g, skips)

        monkeypatch.setattr(Decoder, "__call__", spy)
        rollout(m, x, 3, 6, rng=rng)
        ref = [s.data for s in m.encode(x[2]).skips]
        assert len(seen) == 3
        for skips in seen:
            assert all(a.tobytes() == b.tobytes() for a, b in zip(skips, ref))

    def test_fp_with_zeroed_latent_path_matches_deterministic(self, rng):
        det, fp = model("det"), model("fp", seed=4)
        fpp, dp = fp.params(), det.params()
        for name, t in dp.items():
            if name == "predictor.embed.weight":
                w = np.zeros(fpp[name].shape)
                w[:, :SMALL.h_dim] = t.data
                fpp[name].data = w
            else:
                fpp[name].data = t.data.copy()
        x = frames(rng)
        a = rollout(det, x, 2, 6).frames
        b = rollout(fp, x, 2, 6, rng=np.random.default_rng(8)).frames
        assert np.allclose(a, b, rtol=0, atol=1e-13)


class TestCausality:
    def _prior_params(self, m, x):
        st = m.init_state(x.shape[1]).prior
        out = []
        for i in range(1, x.shape[0]):
            p, st = m.prior_step(m.encode(x[i - 1]), st)
            out.append(p.mu.data.copy())
        return out

    def _posterior_params(self, m, x):
        st = m.init_state(x.shape[1]).posterior
        out = []
        for i in range(x.shape[0]):
            q, st = m.posterior_step(m.encode(x[i]), st)
            out.append(q.mu.data.copy())
        return out

    @pytest.mark.parametrize("t", [2, 3, 5])
    def test_prior_ignores_current_and_future_frames(self, rng, t):
        m, x = model(), frames(rng)
        y = x.copy()
        y[t - 1:] = rng.uniform(0, 1, size=y[t - 1:].shape)
        a, b = self._prior_params(m, x), self._prior_params(m, y)
        for step in range(2, t + 1):
            assert np.array_equal(a[step - 2], b[step - 2])
        assert not np.array_equal(a[t - 1], b[t - 1])

    @pytest.mark.parametrize("t", [1, 3, 5])
    def test_posterior_ignores_future_frames(self, rng, t):
        m, x = model(), frames(rng)
        y = x.copy()
        y[t:] = rng.uniform(0, 1, size=y[t:].shape)
        a, b = self._posterior_params(m, x), self._posterior_params(m, y)
        for step in range(1, t + 1):
            assert np.array_equal(a[step - 1], b[step - 1])
