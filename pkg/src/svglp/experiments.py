"""Reusable experiment drivers shared by ``scripts/`` and the acceptance suite."""

from __future__ import annotations

import json
import logging
import time
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .analysis import collision_contrast, prior_variance_probe, probe_has_contrast
from .config import DataConfig, EvalConfig, ModelConfig, RunConfig, TrainConfig
from .data import load_pool, render_sequence, synchronized_batch, trajectory_from_seed
from .evaluation import best_of_n_eval, evaluation_set, save_sheet, write_curves
from .objective import reconstruction_sequence_loss
from .tensor import no_grad
from .training import build_model, load_checkpoint, model_from_checkpoint, train

log = logging.getLogger(__name__)

ORDERING_MODES = ("lp", "det", "fp")
ORDERING_WINDOW = (8, 10)          # predicted steps scored, 1-based
ORDERING_STEPS = 15000


def ordering_config(mode: str, steps: int, seed: int = 0) -> RunConfig:
    """Equal-budget comparison setup: desk geometry, C=5, ten predicted frames."""
    return RunConfig(model=ModelConfig.desk(mode), data=DataConfig(),
                     train=TrainConfig(C=5, T=15, batch_size=8, steps=steps, seed=seed,
                                       checkpoint_every=500),
                     eval=EvalConfig(C=5, horizon=15, n_samples=20, n_sequences=64, seed=1))


def train_ordering_model(mode: str, steps: int, out: Path, pool) -> Path:
    """Train (or resume) one model of the comparison; returns its checkpoint path."""
    cfg = ordering_config(mode, steps)
    run_dir = Path(out) / mode
    ckpt_path = run_dir / "last.ckpt"
    resume = load_checkpoint(ckpt_path) if ckpt_path.exists() else None
    if resume is not None and resume.step >= steps:
        return ckpt_path
    t0 = time.time()
    train(build_model(cfg), cfg, pool, resume=resume, out_dir=run_dir)
    log.info("%s: trained to step %d in %.0f s", mode, steps, time.time() - t0)
    return ckpt_path


@dataclass
class OrderingScore:
    mode: str
    step: int
    window_ssim: float
    ssim_curve: np.ndarray
    psnr_curve: np.ndarray


def score_ordering(out: Path, test_pool, n_sequences: int = 64, n_samples: int = 20,
                   modes=ORDERING_MODES, write: bool = True) -> dict[str, OrderingScore]:
    """Best-of-N SSIM of each trained model on the same held-out sequences."""
    out = Path(out)
    ec = ordering_config("lp", 0).eval
    frames = evaluation_set(test_pool, n_sequences, ec.horizon, 32, ec.seed)
    lo, hi = ORDERING_WINDOW
    scores = {}
    for mode in modes:
        path = out / mode / "last.ckpt"
        if not path.exists():
            continue
        ckpt = load_checkpoint(path)
        res = best_of_n_eval(model_from_checkpoint(ckpt), frames, ec.C, ec.horizon, n_samples,
                             seed=ec.seed, keep_samples=write)
        ssim = res.curves["ssim"].mean
        scores[mode] = OrderingScore(mode, ckpt.step, float(ssim[lo - 1:hi].mean()), ssim,
                                     res.curves["psnr"].mean)
        if write:
            write_curves(out / f"curves_{mode}.csv", res.curves.values())
            best = res.samples[res.best["ssim"], :, np.arange(n_sequences)]
            save_sheet(out / f"samples_{mode}.png",
                       [np.concatenate([frames[:ec.C, i, 0], best[i]]) for i in range(4)]
                       + [frames[:, i, 0] for i in range(4)])
    if write:
        summary = {"n_sequences": n_sequences, "n_samples": n_samples, "window": list(ORDERING_WINDOW),
                   "modes": {m: {"step": s.step, "ssim_window": s.window_ssim,
                                 "ssim_curve": s.ssim_curve.tolist(),
                                 "psnr_curve": s.psnr_curve.tolist()} for m, s in scores.items()}}
        (out / "summary.json").write_text(json.dumps(summary, indent=2, sort_keys=True) + "\n")
    return scores


def select_probe_seed(n_frames: int, first_step: int, size: int = 32, digit_size: int = 14,
                      start: int = 0) -> int:
    """First trajectory seed whose wall hits leave steps both near and far from a
    collision in ``first_step..n_frames``.  Depends only on the trajectory."""
    seed = start
    while True:
        base = np.random.default_rng(seed)
        traj_seed = int(base.integers(0, 2 ** 63, size=1)[0])
        traj = trajectory_from_seed(traj_seed, n_frames, size, size, digit_size)
        hits = sorted({t for t, _ in traj[-1].collisions})
        if probe_has_contrast([hits], first_step, n_frames):
            return seed
        seed += 1


def collision_probe(model, test_pool, n: int = 100, n_frames: int = 15, first_step: int = 6):
    """Prior-variance curve on synchronised sequences plus its near/far contrast."""
    seed = select_probe_seed(n_frames, first_step)
    probe = synchronized_batch(test_pool, seed, n, n_frames, 32, 32)
    curve = prior_variance_probe(model, probe)
    return seed, curve, collision_contrast(curve, first_step)


def overfit_sequence(pool, index: int = 3, seed: int = 5, n_frames: int = 8) -> np.ndarray:
    """One fixed single-digit 32x32 sequence as a ``[T, 1, 1, H, W]`` batch."""
    return render_sequence([pool[index]], n_frames, 32, 32, np.random.default_rng(seed)).frames[:, None]


def overfit(mode: str, seq: np.ndarray, max_steps: int = 5000, check_every: int = 250,
            target: float = 1e-3, C: int = 1) -> tuple[int, float]:
    """Train on one repeated sequence until the teacher-forced per-pixel MSE
    (posterior-mean latents) drops below ``target``.  Returns (steps, mse)."""
    n_t = seq.shape[0]
    cfg = RunConfig(model=ModelConfig(mode=mode),
                    train=TrainConfig(C=C, T=n_t, batch_size=1, steps=0, lr=0.002))
    model = build_model(cfg)
    n_pix = (n_t - C) * seq.shape[-1] * seq.shape[-2]
    resume, mse, steps = None, float("inf"), 0
    while steps < max_steps:
        steps = min(steps + check_every, max_steps)
        cfg.train.steps = steps
        resume = train(model, cfg, batch_fn=lambda k: seq, resume=resume).checkpoint
        with no_grad():
            report, _ = reconstruction_sequence_loss(model, seq, C)
        mse = report.recon / n_pix
        if mse < target:
            break
    return steps, mse


def load_test_pool(mnist_dir="data/mnist"):
    return load_pool(mnist_dir, "test", 14)


def load_train_pool(mnist_dir="data/mnist"):
    return load_pool(mnist_dir, "train", 14)
