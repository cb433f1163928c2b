"""Frame-quality metrics and best-of-N evaluation over stochastic rollouts."""

from __future__ import annotations

import csv
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from .config import EVAL_DATA, EVAL_SAMPLE, stream
from .data import DigitImage, random_batch
from .models import SvgModel, rollout

SSIM_WINDOW = 11
SSIM_SIGMA = 1.5
SSIM_K1 = 0.01
SSIM_K2 = 0.03
PSNR_CAP = 100.0
CI_Z = 1.96
CURVE_COLUMNS = ("t", "mean", "ci95", "metric", "n_samples")


def gaussian_window(size: int = SSIM_WINDOW, sigma: float = SSIM_SIGMA) -> np.ndarray:
    """Normalised 1-D Gaussian taps; the 2-D window is their outer product."""
    x = np.arange(size) - (size - 1) / 2.0
    k = np.exp(-(x * x) / (2.0 * sigma * sigma))
    return k / k.sum()


def _filter_valid(x: np.ndarray, k: np.ndarray) -> np.ndarray:
    x = sliding_window_view(x, k.size, axis=-1) @ k
    return np.swapaxes(sliding_window_view(np.swapaxes(x, -1, -2), k.size, axis=-1) @ k, -1, -2)


def ssim_frames(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    """SSIM over the trailing two axes; leading axes are batch dimensions."""
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if a.shape != b.shape:
        raise ValueError(f"ssim: shape mismatch {a.shape} vs {b.shape}")
    if a.ndim < 2 or min(a.shape[-2:]) < SSIM_WINDOW:
        raise ValueError(f"ssim needs frames of at least {SSIM_WINDOW}x{SSIM_WINDOW}, got {a.shape}")
    k = gaussian_window()
    c1, c2 = SSIM_K1 ** 2, SSIM_K2 ** 2
    mu_a, mu_b = _filter_valid(a, k), _filter_valid(b, k)
    var_a = _filter_valid(a * a, k) - mu_a * mu_a
    var_b = _filter_valid(b * b, k) - mu_b * mu_b
    cov = _filter_valid(a * b, k) - mu_a * mu_b
    num = (2 * mu_a * mu_b + c1) * (2 * cov + c2)
    den = (mu_a * mu_a + mu_b * mu_b + c1) * (var_a + var_b + c2)
    return (num / den).mean(axis=(-2, -1))


def ssim(a: np.ndarray, b: np.ndarray) -> float:
    """Mean local SSIM of two frames (``[H, W]`` or ``[1, H, W]``)."""
    return float(ssim_frames(np.squeeze(a), np.squeeze(b)))


def psnr_frames(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if a.shape != b.shape:
        raise ValueError(f"psnr: shape mismatch {a.shape} vs {b.shape}")
    mse = np.mean((a - b) ** 2, axis=(-2, -1))
    out = np.full(mse.shape, PSNR_CAP)
    pos = mse > 0
    out[pos] = 10.0 * np.log10(1.0 / mse[pos])
    return out


def psnr(a: np.ndarray, b: np.ndarray) -> float:
    """Peak signal-to-noise ratio in dB for unit dynamic range; 100 dB when identical."""
    return float(psnr_frames(np.squeeze(a), np.squeeze(b)))


def evaluation_set(pool: list[DigitImage], n: int, n_frames: int, size: int, seed: int,
                   num_digits: int = 1) -> np.ndarray:
    """Held-out sequences ``[T, n, 1, H, W]``; sequence ``i`` depends only on ``(seed, i)``."""
    return np.concatenate([
        random_batch(pool, 1, n_frames, size, size, stream(seed, EVAL_DATA, i), num_digits)
        for i in range(n)], axis=1)


METRICS = {"ssim": ssim_frames, "psnr": psnr_frames}


@dataclass
class MetricCurve:
    metric: str
    t: np.ndarray            # 1-based frame indices of the predicted steps
    mean: np.ndarray
    ci95: np.ndarray
    n_samples: int
    n_sequences: int

    def rows(self) -> list[tuple]:
        return [(int(t), float(m), float(c), self.metric, self.n_samples)
                for t, m, c in zip(self.t, self.mean, self.ci95)]


@dataclass
class EvalResult:
    curves: dict[str, MetricCurve]
    scores: dict[str, np.ndarray] = field(repr=False)      # [N, S, steps] per metric
    best: dict[str, np.ndarray] = field(repr=False)        # [S] chosen sample per metric
    samples: np.ndarray | None = field(default=None, repr=False)


def curve_from_scores(metric: str, per_seq: np.ndarray, C: int, n_samples: int) -> MetricCurve:
    """Mean and normal-approximation 95% half-width across sequences, per step."""
    n_seq = per_seq.shape[0]
    mean = per_seq.mean(axis=0)
    if n_seq > 1:
        ci = CI_Z * per_seq.std(axis=0, ddof=1) / np.sqrt(n_seq)
    else:
        ci = np.zeros_like(mean)
    t = np.arange(C + 1, C + 1 + per_seq.shape[1])
    return MetricCurve(metric, t, mean, ci, n_samples, n_seq)


def best_of_n_eval(model: SvgModel, frames: np.ndarray, C: int, horizon: int, n: int,
                   seed: int = 0, keep_samples: bool = False) -> EvalResult:
    """Draw ``n`` prior rollouts per sequence of ``frames[T, S, 1, H, W]`` and
    score, per metric, the rollout whose mean over the predicted steps is best.

    Sample ``j`` of sequence ``i`` uses ``stream(seed, EVAL_SAMPLE, i, j)``, so
    the first ``n`` samples are the same for any larger ``n``.
    """
    if n < 1:
        raise ValueError("best_of_n_eval needs n >= 1")
    if frames.shape[0] < horizon:
        raise ValueError(f"need {horizon} ground-truth frames for scoring, got {frames.shape[0]}")
    n_seq = frames.shape[1]
    target = frames[C:horizon, :, 0]                               # [steps, S, H, W]
    draws = n if model.stochastic else 1
    scores = {m: np.zeros((draws, n_seq, horizon - C)) for m in METRICS}
    kept = []
    for j in range(draws):
        rngs = [stream(seed, EVAL_SAMPLE, i, j) for i in range(n_seq)] if model.stochastic else None
        pred = rollout(model, frames[:C], C, horizon, "prior", rngs).frames[:, :, 0]
        if keep_samples:
            kept.append(pred)
        for name, fn in METRICS.items():
            scores[name][j] = fn(pred, target).T
    if draws < n:
        scores = {m: np.repeat(s, n, axis=0) for m, s in scores.items()}
    curves, best = {}, {}
    for name, s in scores.items():
        idx = np.argmax(s.mean(axis=2), axis=0)
        best[name] = idx
        curves[name] = curve_from_scores(name, s[idx, np.arange(n_seq)], C, n)
    samples = np.stack(kept) if keep_samples else None
    return EvalResult(curves, scores, best, samples)


def write_curves(path, curves) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(CURVE_COLUMNS)
        for curve in curves:
            for t, m, c, name, n in curve.rows():
                w.writerow([t, repr(m), repr(c), name, n])


def read_curves(path) -> dict[str, MetricCurve]:
    rows: dict[str, list] = {}
    with open(path, newline="") as fh:
        for r in csv.DictReader(fh):
            rows.setdefault(r["metric"], []).append(r)
    out = {}
    for name, rs in rows.items():
        t = np.array([int(r["t"]) for r in rs])
        out[name] = MetricCurve(name, t, np.array([float(r["mean"]) for r in rs]),
                                np.array([float(r["ci95"]) for r in rs]), int(rs[0]["n_samples"]), -1)
    return out


def frame_sheet(rows: list[np.ndarray], pad: int = 1) -> np.ndarray:
    """Tile rows of frames ``[T_k, H, W]`` (ragged rows left-aligned) into one uint8 image."""
    rows = [np.asarray(r).reshape((-1,) + np.asarray(r).shape[-2:]) for r in rows]
    h, w = rows[0].shape[1:]
    cols = max(r.shape[0] for r in rows)
    sheet = np.full((len(rows) * (h + pad) + pad, cols * (w + pad) + pad), 255, dtype=np.uint8)
    for i, r in enumerate(rows):
        for j, f in enumerate(r):
            y, x = pad + i * (h + pad), pad + j * (w + pad)
            sheet[y:y + h, x:x + w] = np.round(np.clip(f, 0, 1) * 255).astype(np.uint8)
    return sheet


def save_sheet(path, rows: list[np.ndarray]) -> None:
    from PIL import Image

    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    Image.fromarray(frame_sheet(rows)).save(path)
