"""Trajectory-distribution and prior-variance diagnostics.

Velocities are measured in whole pixels as the difference of template-matched
digit offsets in consecutive frames.  Histograms use unit bins centred on
-8..8 on both axes; arrays are indexed ``[dx + 8, dy + 8]``.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from . import tensor as T
from .data import MAX_SPEED, TrajectoryState, VideoSequence, pixel_offset
from .models import SvgModel

VMAX = 8
NBINS = 2 * VMAX + 1


def _zncc_map(frame: np.ndarray, template: np.ndarray) -> np.ndarray:
    """Zero-mean normalised cross-correlation at every valid offset, ``[oy, ox]``.

    Windows with zero variance get NaN.
    """
    frame = np.asarray(frame, dtype=np.float64)
    template = np.asarray(template, dtype=np.float64)
    if frame.ndim != 2 or template.ndim != 2:
        raise ValueError("locate_digit expects 2-D frame and template")
    if frame.shape[0] < template.shape[0] or frame.shape[1] < template.shape[1]:
        raise ValueError(f"frame {frame.shape} is smaller than template {template.shape}")
    t0 = template - template.mean()
    t_norm = np.sqrt(np.sum(t0 * t0))
    win = sliding_window_view(frame, template.shape)
    n = template.size
    s1 = win.sum(axis=(-2, -1))
    s2 = np.einsum("ijkl,ijkl->ij", win, win)
    num = np.einsum("ijkl,kl->ij", win, t0)
    var = s2 - s1 * s1 / n
    den = np.sqrt(np.clip(var, 0.0, None)) * t_norm
    out = np.full(num.shape, np.nan)
    ok = (den > 1e-12 * max(1.0, t_norm)) & (var > 1e-12)
    out[ok] = num[ok] / den[ok]
    return out


def locate_digit(frame: np.ndarray, template: np.ndarray) -> tuple[int, int] | None:
    """Top-left ``(x, y)`` offset of the best template match, or ``None`` when no
    window has any variance.  Ties go to the smallest y, then the smallest x."""
    frame = np.squeeze(np.asarray(frame))
    template = getattr(template, "pixels", template)
    score = _zncc_map(frame, template)
    if np.all(np.isnan(score)):
        return None
    flat = np.where(np.isnan(score), -np.inf, score).ravel()
    y, x = divmod(int(np.argmax(flat)), score.shape[1])
    return x, y


@dataclass
class VelocityHistogram:
    counts: np.ndarray                       # [NBINS, NBINS] indexed [dx + 8, dy + 8]
    t: int
    dropped: int = 0

    @property
    def n_samples(self) -> int:
        return int(self.counts.sum())

    @property
    def centers(self) -> np.ndarray:
        return np.arange(-VMAX, VMAX + 1)

    def pmf(self) -> np.ndarray:
        total = self.counts.sum()
        if total == 0:
            raise ValueError("empty histogram")
        return self.counts / total

    @classmethod
    def from_velocities(cls, velocities, t: int, dropped: int = 0) -> "VelocityHistogram":
        counts = np.zeros((NBINS, NBINS), dtype=np.int64)
        for dx, dy in velocities:
            if abs(dx) > VMAX or abs(dy) > VMAX:
                dropped += 1
                continue
            counts[dx + VMAX, dy + VMAX] += 1
        return cls(counts, t, dropped)


def measured_velocities(frames: np.ndarray, templates, t: int) -> tuple[list[tuple[int, int]], int]:
    """Velocities between 1-based frames ``t`` and ``t+1`` for each sequence of
    ``frames[T, B, 1, H, W]``; returns the list and the count of dropped samples."""
    n_t, batch = frames.shape[:2]
    if not 1 <= t < n_t:
        raise ValueError(f"need 1 <= t < {n_t}, got {t}")
    if isinstance(templates, np.ndarray) and templates.ndim == 2:
        templates = [templates] * batch
    if len(templates) != batch:
        raise ValueError(f"need {batch} templates, got {len(templates)}")
    out, dropped = [], 0
    for b in range(batch):
        a = locate_digit(frames[t - 1, b], templates[b])
        c = locate_digit(frames[t, b], templates[b])
        if a is None or c is None:
            dropped += 1
            continue
        out.append((c[0] - a[0], c[1] - a[1]))
    return out, dropped


def velocity_distribution(sequences, templates, t: int) -> VelocityHistogram:
    """Histogram of measured velocities at step ``t`` over single-digit sequences.

    ``sequences`` is a list of :class:`VideoSequence` or a ``[T, B, 1, H, W]``
    array; ``templates`` is one digit image or one per sequence.
    """
    if isinstance(sequences, np.ndarray):
        frames = sequences
    else:
        frames = np.stack([s.frames for s in sequences], axis=1)
    if not isinstance(templates, np.ndarray):
        templates = [getattr(tp, "pixels", tp) for tp in templates]
    vel, dropped = measured_velocities(frames, templates, t)
    return VelocityHistogram.from_velocities(vel, t, dropped)


def compare_distributions(p, q) -> float:
    """Total-variation distance between two histograms (or pmfs) on the same bins."""
    p = p.counts if isinstance(p, VelocityHistogram) else np.asarray(p, dtype=np.float64)
    q = q.counts if isinstance(q, VelocityHistogram) else np.asarray(q, dtype=np.float64)
    if p.shape != q.shape:
        raise ValueError(f"binning mismatch: {p.shape} vs {q.shape}")
    return 0.5 * float(np.abs(p / p.sum() - q / q.sum()).sum())


def displacement_pmf(a: float, lo: float, hi: float, limit: float) -> np.ndarray:
    """Exact pmf over -8..8 of ``round(clip(a + u, 0, limit)) - round(a)`` for
    ``u ~ Uniform[lo, hi]``, with the renderer's rounding."""
    base = pixel_offset(a)
    out = np.zeros(NBINS)
    for k in range(0, int(np.floor(limit)) + 1):
        # positions y that render at row/column k after clamping
        y0 = -np.inf if k == 0 else k - 0.5
        y1 = np.inf if k == pixel_offset(limit) else k + 0.5
        width = max(0.0, min(y1, a + hi) - max(y0, a + lo))
        if width > 0:
            d = k - base
            if abs(d) > VMAX:
                raise ValueError(f"displacement {d} outside the histogram range")
            out[d + VMAX] += width / (hi - lo)
    return out


def post_collision_pmf(state: TrajectoryState, height: int, width: int, digit_size: int) -> np.ndarray:
    """Joint pmf ``[dx + 8, dy + 8]`` of the measured velocity between the frame
    of a wall hit (``state``) and the next frame."""
    hits = {w for t, w in state.collisions if t == state.t}
    if not hits:
        raise ValueError(f"state at t={state.t} is not a collision frame")
    lim_x, lim_y = width - digit_size, height - digit_size

    def axis(pos, limit, low_wall, high_wall):
        if low_wall in hits:
            return displacement_pmf(pos, 0.0, MAX_SPEED, limit)
        if high_wall in hits:
            return displacement_pmf(pos, -MAX_SPEED, 0.0, limit)
        return displacement_pmf(pos, -MAX_SPEED, MAX_SPEED, limit)

    return np.outer(axis(state.x, lim_x, "left", "right"), axis(state.y, lim_y, "top", "bottom"))


def split_half_floor(counts_a, counts_b) -> float:
    """TV distance between two independent ground-truth histograms: the sampling noise floor."""
    return compare_distributions(counts_a, counts_b)


@dataclass
class PriorVarianceCurve:
    t: np.ndarray                     # 1-based steps, 2..T
    mean: np.ndarray
    std: np.ndarray
    collisions: list[list[int]] = field(default_factory=list)
    per_sequence: np.ndarray | None = field(default=None, repr=False)   # [N, T-1]

    def rows(self) -> list[tuple]:
        marks = [set(c) for c in self.collisions] + [set(), set()]
        return [(int(t), float(m), float(s), int(t in marks[0]), int(t in marks[1]))
                for t, m, s in zip(self.t, self.mean, self.std)]


def prior_sigmas(model: SvgModel, frames: np.ndarray) -> np.ndarray:
    """Learned-prior sigma for steps 2..T, averaged over latent dims -> ``[B, T-1]``.

    The prior observes ground-truth frames only; nothing is sampled."""
    if model.mode != "lp":
        raise ValueError(f"prior probe needs a learned-prior model, got mode {model.mode!r}")
    n_t, batch = frames.shape[:2]
    out = np.zeros((batch, n_t - 1))
    with T.no_grad():
        state = model.prior.init_state(batch)
        for i in range(n_t - 1):
            p, state = model.prior_step(model.encode(frames[i]).h, state)
            out[:, i] = p.sigma.data.mean(axis=1)
    return out


def prior_variance_probe(model: SvgModel, probe: Sequence[VideoSequence]) -> PriorVarianceCurve:
    """Mean and spread of the learned prior's sigma over synchronised sequences,
    with the shared trajectory's wall-hit frames attached."""
    frames = np.stack([s.frames for s in probe], axis=1)
    sig = prior_sigmas(model, frames)
    t = np.arange(2, frames.shape[0] + 1)
    return PriorVarianceCurve(t, sig.mean(axis=0), sig.std(axis=0),
                              [list(c) for c in probe[0].collisions], sig)


def collision_contrast(curve: PriorVarianceCurve, first_step: int, near: int = 1,
                       far: int = 3) -> tuple[float, float, float]:
    """Mean sigma within ``near`` steps of any wall hit, mean sigma at least
    ``far`` steps from every hit, and their ratio, over steps ``>= first_step``."""
    hits = sorted({c for per_digit in curve.collisions for c in per_digit})
    if not hits:
        raise ValueError("probe trajectory has no collisions")
    dist = np.array([min(abs(int(t) - c) for c in hits) for t in curve.t])
    use = curve.t >= first_step
    near_set = use & (dist <= near)
    far_set = use & (dist >= far)
    if not near_set.any() or not far_set.any():
        raise ValueError("probe needs steps both near and far from collisions")
    a = float(curve.mean[near_set].mean())
    b = float(curve.mean[far_set].mean())
    return a, b, a / b


def probe_has_contrast(collisions: list[list[int]], first_step: int, last_step: int,
                       near: int = 1, far: int = 3) -> bool:
    hits = sorted({c for per_digit in collisions for c in per_digit})
    if not hits:
        return False
    steps = range(first_step, last_step + 1)
    dist = [min(abs(t - c) for c in hits) for t in steps]
    return any(d <= near for d in dist) and any(d >= far for d in dist)


# export ---------------------------------------------------------------------

def write_histogram(path, hist: VelocityHistogram) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["dy\\dx"] + [str(v) for v in hist.centers])
        for j, dy in enumerate(hist.centers):
            w.writerow([str(dy)] + [str(int(c)) for c in hist.counts[:, j]])


def write_prior_curve(path, curve: PriorVarianceCurve) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["t", "mean", "std", "collision_digit1", "collision_digit2"])
        for t, m, s, c1, c2 in curve.rows():
            w.writerow([t, repr(m), repr(s), c1, c2])


def plot_histograms(path, hists: Sequence[VelocityHistogram], titles: Sequence[str] | None = None) -> None:
    import matplotlib
    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    fig, axes = plt.subplots(1, len(hists), figsize=(2.4 * len(hists), 2.6), squeeze=False)
    for k, (ax, h) in enumerate(zip(axes[0], hists)):
        ax.imshow(h.pmf().T, origin="lower", extent=(-VMAX - .5, VMAX + .5, -VMAX - .5, VMAX + .5),
                  cmap="magma")
        ax.add_patch(plt.Rectangle((-MAX_SPEED - .5, -MAX_SPEED - .5), 2 * MAX_SPEED + 1,
                                   2 * MAX_SPEED + 1, fill=False, ec="w", lw=0.6, ls="--"))
        ax.set_title(titles[k] if titles else f"t={h.t}", fontsize=8)
        ax.set_xlabel("dx", fontsize=7)
        ax.set_ylabel("dy", fontsize=7)
        ax.tick_params(labelsize=6)
    fig.tight_layout()
    Path(path).parent.mkdir(parents=True, exist_ok=True)
    fig.savefig(path, dpi=120)
    plt.close(fig)


def plot_prior_curve(path, curve: PriorVarianceCurve) -> None:
    import matplotlib
    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    fig, ax = plt.subplots(figsize=(6, 2.6))
    ax.plot(curve.t, curve.mean, color="k", lw=1.2)
    ax.fill_between(curve.t, curve.mean - curve.std, curve.mean + curve.std, color="0.8")
    for colour, hits in zip(("tab:red", "tab:blue"), curve.collisions):
        for c in hits:
            ax.axvline(c, color=colour, lw=0.8, ls="--")
    ax.set_xlabel("t")
    ax.set_ylabel("mean prior sigma")
    fig.tight_layout()
    Path(path).parent.mkdir(parents=True, exist_ok=True)
    fig.savefig(path, dpi=120)
    plt.close(fig)
