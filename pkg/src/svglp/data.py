"""Stochastic Moving MNIST.

Digits move with constant velocity and, on touching a wall, are clamped to it
and receive a fresh velocity: both components are drawn from Uniform[-4, 4],
then the component normal to the wall is turned to point inward.  Positions
are continuous and rendered at the nearest integer offset; overlapping digits
are composited with a per-pixel max.

Sequence export format (little-endian)::

    char[4]  magic   b"SMMN"
    uint32   version 1
    uint32   T, H, W, count
    float32  pixels[count][T][H][W]
"""

from __future__ import annotations

import struct
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np

MAX_SPEED = 4.0
IMAGE_MAGIC = 0x00000803
LABEL_MAGIC = 0x00000801
EXPORT_MAGIC = b"SMMN"
EXPORT_VERSION = 1

TRAIN_IMAGES = "train-images-idx3-ubyte"
TRAIN_LABELS = "train-labels-idx1-ubyte"
TEST_IMAGES = "t10k-images-idx3-ubyte"
TEST_LABELS = "t10k-labels-idx1-ubyte"


class IdxFormatError(ValueError):
    pass


class PoolTooSmallError(ValueError):
    pass


@dataclass(frozen=True)
class DigitImage:
    pixels: np.ndarray      # [s, s] in [0, 1]
    index: int
    split: str
    label: int = -1

    @property
    def size(self) -> int:
        return self.pixels.shape[0]


def _read_idx(path: Path, magic: int, ndim: int) -> np.ndarray:
    raw = Path(path).read_bytes()
    if len(raw) < 4 + 4 * ndim:
        raise IdxFormatError(f"{path}: truncated header ({len(raw)} bytes)")
    found = struct.unpack(">I", raw[:4])[0]
    if found != magic:
        raise IdxFormatError(f"{path}: bad magic 0x{found:08x}, expected 0x{magic:08x}")
    dims = struct.unpack(f">{ndim}I", raw[4:4 + 4 * ndim])
    body = raw[4 + 4 * ndim:]
    need = int(np.prod(dims))
    if len(body) < need:
        raise IdxFormatError(f"{path}: truncated payload, header promises {need} bytes, found {len(body)}")
    return np.frombuffer(body, dtype=np.uint8, count=need).reshape(dims)


def load_mnist_idx(images_path, labels_path=None, split: str = "train") -> list[DigitImage]:
    """Read an IDX image file (and optional label file) into digits scaled to [0, 1]."""
    images = _read_idx(images_path, IMAGE_MAGIC, 3)
    labels = None
    if labels_path is not None:
        labels = _read_idx(labels_path, LABEL_MAGIC, 1)
        if len(labels) != len(images):
            raise IdxFormatError(f"image/label count mismatch: {len(images)} images, {len(labels)} labels")
    return [DigitImage(images[i].astype(np.float64) / 255.0, i, split,
                       int(labels[i]) if labels is not None else -1)
            for i in range(len(images))]


def write_mnist_idx(images_path, images: np.ndarray, labels_path=None, labels=None) -> None:
    images = np.asarray(images, dtype=np.uint8)
    n, rows, cols = images.shape
    Path(images_path).write_bytes(struct.pack(">4I", IMAGE_MAGIC, n, rows, cols) + images.tobytes())
    if labels_path is not None:
        labels = np.asarray(labels, dtype=np.uint8)
        Path(labels_path).write_bytes(struct.pack(">2I", LABEL_MAGIC, len(labels)) + labels.tobytes())


def downscale2x(pixels: np.ndarray) -> np.ndarray:
    """Halve resolution; bilinear sampling at the new pixel centres is a 2x2 box mean."""
    s = pixels.shape[0] // 2
    return pixels[:2 * s, :2 * s].reshape(s, 2, s, 2).mean(axis=(1, 3))


def load_pool(mnist_dir, split: str = "train", digit_size: int = 28) -> list[DigitImage]:
    mnist_dir = Path(mnist_dir)
    images, labels = (TRAIN_IMAGES, TRAIN_LABELS) if split == "train" else (TEST_IMAGES, TEST_LABELS)
    img_path = mnist_dir / images
    if not img_path.exists():
        raise FileNotFoundError(f"MNIST images not found: {img_path}")
    lab_path = mnist_dir / labels
    pool = load_mnist_idx(img_path, lab_path if lab_path.exists() else None, split)
    if digit_size == 28:
        return pool
    if digit_size != 14:
        raise ValueError("digit_size must be 28 or 14")
    return [replace(d, pixels=downscale2x(d.pixels)) for d in pool]


# trajectories --------------------------------------------------------------

@dataclass(frozen=True)
class TrajectoryState:
    """Top-left digit position, velocity in pixels/frame, and wall hits so far.

    ``t`` is the 1-based frame index this state describes; ``collisions`` holds
    ``(t, wall)`` for every frame at which the digit was clamped to a wall.
    """
    x: float
    y: float
    dx: float
    dy: float
    t: int = 1
    collisions: tuple[tuple[int, str], ...] = ()


def initial_state(rng: np.random.Generator, height: int, width: int, digit_size: int) -> TrajectoryState:
    x = rng.uniform(0, width - digit_size)
    y = rng.uniform(0, height - digit_size)
    dx, dy = rng.uniform(-MAX_SPEED, MAX_SPEED, size=2)
    return TrajectoryState(float(x), float(y), float(dx), float(dy))


def step_trajectory(state: TrajectoryState, rng: np.random.Generator, height: int, width: int,
                    digit_size: int = 28) -> TrajectoryState:
    lim_x, lim_y = width - digit_size, height - digit_size
    x, y = state.x + state.dx, state.y + state.dy
    walls = []
    if x < 0:
        x, walls = 0.0, walls + ["left"]
    elif x > lim_x:
        x, walls = float(lim_x), walls + ["right"]
    if y < 0:
        y, walls = 0.0, walls + ["top"]
    elif y > lim_y:
        y, walls = float(lim_y), walls + ["bottom"]
    dx, dy = state.dx, state.dy
    t = state.t + 1
    if not walls:
        return TrajectoryState(x, y, dx, dy, t, state.collisions)
    dx, dy = (float(v) for v in rng.uniform(-MAX_SPEED, MAX_SPEED, size=2))
    if "left" in walls:
        dx = abs(dx)
    if "right" in walls:
        dx = -abs(dx)
    if "top" in walls:
        dy = abs(dy)
    if "bottom" in walls:
        dy = -abs(dy)
    return TrajectoryState(x, y, dx, dy, t, state.collisions + tuple((t, w) for w in walls))


def simulate(state: TrajectoryState, n_frames: int, rng: np.random.Generator, height: int, width: int,
             digit_size: int) -> list[TrajectoryState]:
    states = [state]
    for _ in range(n_frames - 1):
        states.append(step_trajectory(states[-1], rng, height, width, digit_size))
    return states


def collision_steps(states: list[TrajectoryState]) -> list[int]:
    return sorted({t for t, _ in states[-1].collisions})


def pixel_offset(v: float) -> int:
    return int(np.floor(v + 0.5))


# rendering -----------------------------------------------------------------

@dataclass
class VideoSequence:
    frames: np.ndarray                               # [T, 1, H, W]
    digit_ids: tuple[int, ...] = ()
    trajectories: list[list[TrajectoryState]] = field(default_factory=list, repr=False)
    seeds: tuple[int, ...] = ()

    @property
    def collisions(self) -> list[list[int]]:
        return [collision_steps(tr) for tr in self.trajectories]


def render_frames(digits: list[np.ndarray], trajectories: list[list[TrajectoryState]],
                  height: int, width: int) -> np.ndarray:
    n_frames = len(trajectories[0])
    frames = np.zeros((n_frames, 1, height, width))
    for pix, traj in zip(digits, trajectories):
        s = pix.shape[0]
        for i, st in enumerate(traj):
            r, c = pixel_offset(st.y), pixel_offset(st.x)
            view = frames[i, 0, r:r + s, c:c + s]
            np.maximum(view, pix, out=view)
    return frames


def trajectory_from_seed(seed: int, n_frames: int, height: int, width: int,
                         digit_size: int) -> list[TrajectoryState]:
    rng = np.random.default_rng(seed)
    return simulate(initial_state(rng, height, width, digit_size), n_frames, rng, height, width, digit_size)


def render_sequence(digits: list[DigitImage], n_frames: int, height: int, width: int,
                    rng: np.random.Generator) -> VideoSequence:
    """One sequence of 1 or 2 digits, each following its own trajectory stream."""
    if not 1 <= len(digits) <= 2:
        raise ValueError("need one or two digits")
    s = digits[0].size
    if height < s or width < s:
        raise ValueError(f"frame {height}x{width} is smaller than the {s}x{s} digit")
    seeds = tuple(int(v) for v in rng.integers(0, 2 ** 63, size=len(digits)))
    trajs = [trajectory_from_seed(sd, n_frames, height, width, s) for sd in seeds]
    frames = render_frames([d.pixels for d in digits], trajs, height, width)
    return VideoSequence(frames, tuple(d.index for d in digits), trajs, seeds)


def random_batch(pool: list[DigitImage], batch: int, n_frames: int, height: int, width: int,
                 rng: np.random.Generator, num_digits: int = 1) -> np.ndarray:
    """Time-major batch ``[T, B, 1, H, W]`` of fresh sequences."""
    out = np.empty((n_frames, batch, 1, height, width))
    for b in range(batch):
        idx = rng.choice(len(pool), size=num_digits, replace=False)
        seq = render_sequence([pool[i] for i in idx], n_frames, height, width, rng)
        out[:, b] = seq.frames
    return out


def synchronized_batch(pool: list[DigitImage], trajectory_seed: int, n: int, n_frames: int,
                       height: int, width: int, num_digits: int = 1) -> list[VideoSequence]:
    """``n`` sequences with distinct digits that all follow one trajectory realisation."""
    if len(pool) < n * num_digits:
        raise PoolTooSmallError(f"need {n * num_digits} distinct digits, pool has {len(pool)}")
    s = pool[0].size
    base = np.random.default_rng(trajectory_seed)
    seeds = tuple(int(v) for v in base.integers(0, 2 ** 63, size=num_digits))
    trajs = [trajectory_from_seed(sd, n_frames, height, width, s) for sd in seeds]
    picks = base.permutation(len(pool))[:n * num_digits].reshape(n, num_digits)
    out = []
    for row in picks:
        digits = [pool[i] for i in row]
        frames = render_frames([d.pixels for d in digits], trajs, height, width)
        out.append(VideoSequence(frames, tuple(d.index for d in digits), trajs, seeds))
    return out


def branching_batch(pool: list[DigitImage], trajectory_seed: int, n: int, n_frames: int,
                    height: int, width: int, sample_seed: int = 0) -> list[VideoSequence]:
    """Single-digit sequences sharing an initial state but drawing their own
    post-bounce velocities; before the first wall hit they coincide exactly.

    Start state and digit order match ``synchronized_batch`` for the same
    ``trajectory_seed``; digits cycle when ``n`` exceeds the pool."""
    s = pool[0].size
    base = np.random.default_rng(trajectory_seed)
    start_seed = int(base.integers(0, 2 ** 63, size=1)[0])
    start = initial_state(np.random.default_rng(start_seed), height, width, s)
    order = base.permutation(len(pool))
    out = []
    for i in range(n):
        rng = np.random.default_rng([sample_seed, i])
        traj = simulate(start, n_frames, rng, height, width, s)
        digit = pool[order[i % len(pool)]]
        out.append(VideoSequence(render_frames([digit.pixels], [traj], height, width),
                                 (digit.index,), [traj], (trajectory_seed,)))
    return out


def stack_sequences(seqs: list[VideoSequence]) -> np.ndarray:
    """Time-major ``[T, B, 1, H, W]`` array from a list of sequences."""
    return np.stack([s.frames for s in seqs], axis=1)


# export --------------------------------------------------------------------

def export_sequences(path, frames: np.ndarray) -> None:
    """Write ``frames[count, T, H, W]`` (or ``[count, T, 1, H, W]``)."""
    frames = np.asarray(frames)
    if frames.ndim == 5:
        frames = frames[:, :, 0]
    count, n_t, h, w = frames.shape
    header = struct.pack("<4s5I", EXPORT_MAGIC, EXPORT_VERSION, n_t, h, w, count)
    Path(path).write_bytes(header + frames.astype("<f4").tobytes())


def read_sequences(path) -> np.ndarray:
    raw = Path(path).read_bytes()
    size = struct.calcsize("<4s5I")
    if len(raw) < size:
        raise IdxFormatError(f"{path}: truncated header")
    magic, version, n_t, h, w, count = struct.unpack("<4s5I", raw[:size])
    if magic != EXPORT_MAGIC:
        raise IdxFormatError(f"{path}: bad magic {magic!r}")
    if version != EXPORT_VERSION:
        raise IdxFormatError(f"{path}: unsupported version {version}")
    need = count * n_t * h * w * 4
    if len(raw) - size != need:
        raise IdxFormatError(f"{path}: payload has {len(raw) - size} bytes, expected {need}")
    return np.frombuffer(raw[size:], dtype="<f4").reshape(count, n_t, h, w)
