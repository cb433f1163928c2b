"""ADAM, the single-phase training loop, and checkpoint persistence.

Randomness is stateless per step: the batch for step ``k`` comes from
``stream(seed, TRAIN_BATCH, k)`` and its latent noise from
``stream(seed, TRAIN_LATENT, k)``, so a checkpoint only needs ``(seed, step)``
to resume bit-exactly.

Checkpoint layout (little-endian)::

    b"SVGCKPT\\0"  uint32 version  uint32 header_len  header (UTF-8 JSON, sorted keys)
    uint32 n_tensors, then per tensor:
        uint16 name_len, name, uint8 ndim, uint32 shape[ndim], float64 payload
    32-byte SHA-256 of everything above
"""

from __future__ import annotations

import csv
import hashlib
import json
import logging
import struct
import time
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import config as C
from .config import RunConfig
from .data import DigitImage, random_batch
from .models import SvgModel
from .nn import ParamSet
from .objective import reconstruction_sequence_loss, sequence_elbo_loss
from .tensor import zero_grad

log = logging.getLogger(__name__)

CKPT_MAGIC = b"SVGCKPT\0"
CKPT_VERSION = 1
METRIC_COLUMNS = ("step", "total", "recon", "kl", "wallclock_ms")


class NonFiniteError(FloatingPointError):
    pass


class CheckpointError(ValueError):
    pass


@dataclass
class AdamState:
    lr: float = 0.002
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    step: int = 0
    m: dict[str, np.ndarray] = field(default_factory=dict)
    v: dict[str, np.ndarray] = field(default_factory=dict)

    def copy(self) -> "AdamState":
        return AdamState(self.lr, self.beta1, self.beta2, self.eps, self.step,
                         {k: a.copy() for k, a in self.m.items()},
                         {k: a.copy() for k, a in self.v.items()})


def adam_step(params: ParamSet, state: AdamState, grads: dict[str, np.ndarray] | None = None) -> AdamState:
    """One bias-corrected ADAM update, in place.  Missing gradients count as zero."""
    if grads is None:
        grads = {name: t.grad for name, t in params.items()}
    for name, g in grads.items():
        if g is not None and not np.all(np.isfinite(g)):
            raise NonFiniteError(f"non-finite gradient for {name}")
    state.step += 1
    c1 = 1.0 - state.beta1 ** state.step
    c2 = 1.0 - state.beta2 ** state.step
    for name, t in params.items():
        g = grads.get(name)
        if g is None:
            g = np.zeros_like(t.data)
        m = state.m.get(name)
        if m is None:
            m = state.m[name] = np.zeros_like(t.data)
            state.v[name] = np.zeros_like(t.data)
        v = state.v[name]
        m *= state.beta1
        m += (1.0 - state.beta1) * g
        v *= state.beta2
        v += (1.0 - state.beta2) * g * g
        t.data = t.data - state.lr * (m / c1) / (np.sqrt(v / c2) + state.eps)
    return state


def clip_grad_norm(params: ParamSet, max_norm: float) -> tuple[float, bool]:
    """Scale all gradients so their global L2 norm is at most ``max_norm``."""
    grads = [t.grad for t in params if t.grad is not None]
    norm = float(np.sqrt(sum(float(np.sum(g * g)) for g in grads)))
    if max_norm <= 0 or norm <= max_norm:
        return norm, False
    scale = max_norm / norm
    for t in params:
        if t.grad is not None:
            t.grad = t.grad * scale
    return norm, True


@dataclass
class Checkpoint:
    config: RunConfig
    params: dict[str, np.ndarray]
    adam: AdamState
    step: int
    seed: int


def build_model(cfg: RunConfig) -> SvgModel:
    return SvgModel(cfg.model, seed=[cfg.train.seed, C.MODEL_INIT])


def make_checkpoint(model: SvgModel, adam: AdamState, cfg: RunConfig, step: int) -> Checkpoint:
    return Checkpoint(cfg, model.params().state(), adam.copy(), step, cfg.train.seed)


def model_from_checkpoint(ckpt: Checkpoint) -> SvgModel:
    model = build_model(ckpt.config)
    model.params().load(ckpt.params)
    return model


def encode_checkpoint(ckpt: Checkpoint) -> bytes:
    header = json.dumps({
        "config": ckpt.config.to_dict(),
        "step": ckpt.step,
        "seed": ckpt.seed,
        "adam": {"lr": ckpt.adam.lr, "beta1": ckpt.adam.beta1, "beta2": ckpt.adam.beta2,
                 "eps": ckpt.adam.eps, "step": ckpt.adam.step},
    }, sort_keys=True).encode()
    tensors = [(f"param/{k}", v) for k, v in ckpt.params.items()]
    tensors += [(f"adam.m/{k}", v) for k, v in ckpt.adam.m.items()]
    tensors += [(f"adam.v/{k}", v) for k, v in ckpt.adam.v.items()]
    parts = [CKPT_MAGIC, struct.pack("<II", CKPT_VERSION, len(header)), header,
             struct.pack("<I", len(tensors))]
    for name, arr in tensors:
        raw = name.encode()
        arr = np.ascontiguousarray(arr, dtype="<f8")
        parts.append(struct.pack("<H", len(raw)) + raw + struct.pack("<B", arr.ndim)
                     + struct.pack(f"<{arr.ndim}I", *arr.shape) + arr.tobytes())
    body = b"".join(parts)
    return body + hashlib.sha256(body).digest()


def decode_checkpoint(blob: bytes) -> Checkpoint:
    if len(blob) < len(CKPT_MAGIC) + 8 + 32:
        raise CheckpointError("checkpoint is truncated")
    body, digest = blob[:-32], blob[-32:]
    if not body.startswith(CKPT_MAGIC):
        raise CheckpointError("not a checkpoint file (bad magic)")
    if hashlib.sha256(body).digest() != digest:
        raise CheckpointError("checkpoint is corrupt (checksum mismatch)")
    pos = len(CKPT_MAGIC)
    version, hlen = struct.unpack_from("<II", body, pos)
    if version != CKPT_VERSION:
        raise CheckpointError(f"checkpoint version {version} is not supported (expected {CKPT_VERSION})")
    pos += 8
    header = json.loads(body[pos:pos + hlen])
    pos += hlen
    (n,) = struct.unpack_from("<I", body, pos)
    pos += 4
    params, m, v = {}, {}, {}
    for _ in range(n):
        (nlen,) = struct.unpack_from("<H", body, pos)
        pos += 2
        name = body[pos:pos + nlen].decode()
        pos += nlen
        (ndim,) = struct.unpack_from("<B", body, pos)
        pos += 1
        shape = struct.unpack_from(f"<{ndim}I", body, pos)
        pos += 4 * ndim
        size = int(np.prod(shape)) * 8
        arr = np.frombuffer(body, dtype="<f8", count=size // 8, offset=pos).reshape(shape).astype(np.float64)
        pos += size
        kind, key = name.split("/", 1)
        {"param": params, "adam.m": m, "adam.v": v}[kind][key] = arr
    a = header["adam"]
    adam = AdamState(a["lr"], a["beta1"], a["beta2"], a["eps"], a["step"], m, v)
    return Checkpoint(RunConfig.from_dict(header["config"]), params, adam, header["step"], header["seed"])


def save_checkpoint(ckpt: Checkpoint, path) -> None:
    path = Path(path)
    tmp = path.with_suffix(path.suffix + ".tmp")
    tmp.write_bytes(encode_checkpoint(ckpt))
    tmp.replace(path)


def load_checkpoint(path) -> Checkpoint:
    return decode_checkpoint(Path(path).read_bytes())


@dataclass
class TrainResult:
    checkpoint: Checkpoint
    metrics: list[tuple]


def training_batch(cfg: RunConfig, pool: list[DigitImage], step: int) -> np.ndarray:
    size = cfg.model.frame_size
    return random_batch(pool, cfg.train.batch_size, cfg.train.T, size, size,
                        C.stream(cfg.train.seed, C.TRAIN_BATCH, step), cfg.data.num_digits)


def train(model: SvgModel, cfg: RunConfig, pool: list[DigitImage] | None = None, *,
          resume: Checkpoint | None = None, out_dir=None, batch_fn=None) -> TrainResult:
    """Run ``cfg.train.steps`` total optimisation steps (continuing from ``resume``).

    ``batch_fn(step) -> [T, B, 1, H, W]`` overrides on-the-fly SM-MNIST batches.
    With ``out_dir`` set, metrics are appended to ``metrics.csv`` and
    checkpoints written every ``checkpoint_every`` steps plus at the end.
    """
    tc = cfg.train
    if pool is None and batch_fn is None:
        raise ValueError("train needs a digit pool or a batch_fn")
    batch_fn = batch_fn or (lambda k: training_batch(cfg, pool, k))
    params = model.params()
    adam = AdamState(lr=tc.lr)
    start = 0
    if resume is not None:
        params.load(resume.params)
        adam = resume.adam.copy()
        start = resume.step
    out = Path(out_dir) if out_dir is not None else None
    writer = None
    if out is not None:
        out.mkdir(parents=True, exist_ok=True)
        log_path = out / "metrics.csv"
        fresh = not log_path.exists() or resume is None
        fh = open(log_path, "w" if fresh else "a", newline="")
        writer = csv.writer(fh, lineterminator="\n")
        if fresh:
            writer.writerow(METRIC_COLUMNS)
    metrics = []
    t0 = time.perf_counter()
    try:
        for step in range(start, tc.steps):
            seq = batch_fn(step)
            if model.stochastic:
                report, loss = sequence_elbo_loss(model, seq, tc.C, tc.beta,
                                                  C.stream(tc.seed, C.TRAIN_LATENT, step))
            else:
                report, loss = reconstruction_sequence_loss(model, seq, tc.C)
            if not np.isfinite(report.total):
                if out is not None:
                    save_checkpoint(make_checkpoint(model, adam, cfg, step), out / "last_good.ckpt")
                raise NonFiniteError(f"non-finite loss {report.total} at step {step}")
            zero_grad(params)
            loss.backward()
            norm, clipped = clip_grad_norm(params, tc.clip_norm)
            if clipped:
                log.info("step %d: gradient norm %.3g clipped to %.3g", step, norm, tc.clip_norm)
            adam_step(params, adam)
            row = (step + 1, report.total, report.recon, report.kl,
                   int((time.perf_counter() - t0) * 1000))
            metrics.append(row)
            if writer is not None:
                writer.writerow([row[0], repr(row[1]), repr(row[2]), repr(row[3]), row[4]])
            if out is not None and tc.checkpoint_every and (step + 1) % tc.checkpoint_every == 0:
                fh.flush()
                save_checkpoint(make_checkpoint(model, adam, cfg, step + 1), out / "last.ckpt")
    finally:
        if writer is not None:
            fh.close()
    final = make_checkpoint(model, adam, cfg, max(start, tc.steps))
    if out is not None:
        save_checkpoint(final, out / "last.ckpt")
    return TrainResult(final, metrics)
