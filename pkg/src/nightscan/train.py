"""Dual-domain training loop, optimizer, schedule, and evaluation."""

from __future__ import annotations

import math
import os
import time
from dataclasses import asdict, dataclass, fields

import numpy as np

from . import tensor as T
from .data import SyntheticDataset, flip_arrays
from .errors import ConfigError, DimensionError, NumericError
from .metrics import psnr, ssim
from .model import NetworkConfig, TwoStageNet, network_from_checkpoint, save_checkpoint
from .rawio import pack
from .tensor import Tensor, backward, no_grad


@dataclass
class LossConfig:
    alpha_raw: float = 1.0
    beta_srgb: float = 1.0
    raw_norm: str = "l1"
    srgb_norm: str = "l1"

    def __post_init__(self):
        if self.alpha_raw < 0 or self.beta_srgb < 0:
            raise ConfigError("loss weights must be non-negative")
        for norm in (self.raw_norm, self.srgb_norm):
            if norm not in ("l1", "l2"):
                raise ConfigError(f"loss norm must be 'l1' or 'l2', got {norm!r}")


@dataclass
class TrainConfig:
    lr_init: float = 1e-4
    lr_final: float = 1e-5
    schedule: str = "cosine"
    betas: tuple = (0.9, 0.999)
    weight_decay: float = 0.0
    epochs: int = 250
    steps: int | None = None
    seed: int = 0
    batch: int = 1
    cosine_horizon_frac: float = 0.8
    augment: bool = True
    dtype: str = "float32"

    def __post_init__(self):
        if self.lr_final > self.lr_init:
            raise ConfigError(f"lr_final {self.lr_final} must not exceed lr_init {self.lr_init}")
        if self.schedule not in ("cosine", "constant"):
            raise ConfigError(f"schedule must be 'cosine' or 'constant', got {self.schedule!r}")
        if self.batch != 1:
            raise ConfigError("only batch size 1 is supported")
        if not 0.0 < self.cosine_horizon_frac <= 1.0:
            raise ConfigError("cosine_horizon_frac must be in (0, 1]")
        if self.dtype not in ("float32", "float64"):
            raise ConfigError(f"dtype must be float32 or float64, got {self.dtype!r}")
        self.betas = tuple(self.betas)

    @property
    def np_dtype(self):
        return np.float32 if self.dtype == "float32" else np.float64


def dataclass_from_dict(cls, data: dict, label: str):
    known = {f.name for f in fields(cls)}
    unknown = set(data) - known
    if unknown:
        raise ConfigError(f"unknown {label} config keys: {sorted(unknown)}")
    return cls(**data)


def _norm_term(pred, target, kind):
    if pred.shape != target.shape:
        raise DimensionError(f"loss shapes differ: {pred.shape} vs {target.shape}")
    diff = T.sub(pred, target)
    if kind == "l1":
        return T.mean(T.absolute(diff))
    return T.mean(T.mul(diff, diff))


def total_loss(o1, o2, gt_raw, gt_srgb, cfg: LossConfig):
    """alpha * norm(o1, gt_raw) + beta * norm(o2, gt_srgb); zero-weight terms are skipped."""
    terms = []
    parts = {}
    if cfg.alpha_raw > 0:
        raw_term = _norm_term(o1, gt_raw, cfg.raw_norm)
        parts["raw"] = raw_term.item()
        terms.append(T.scale(raw_term, cfg.alpha_raw))
    else:
        parts["raw"] = 0.0
    if cfg.beta_srgb > 0:
        srgb_term = _norm_term(o2, gt_srgb, cfg.srgb_norm)
        parts["srgb"] = srgb_term.item()
        terms.append(T.scale(srgb_term, cfg.beta_srgb))
    else:
        parts["srgb"] = 0.0
    if not terms:
        raise ConfigError("at least one loss weight must be positive")
    loss = terms[0] if len(terms) == 1 else T.add(terms[0], terms[1])
    return loss, parts


def cosine_lr(step, total_steps, lr_init, lr_final, horizon=None):
    """Cosine decay from lr_init to lr_final over ``horizon`` steps, then flat."""
    horizon = total_steps if horizon is None else horizon
    t = min(step, horizon)
    return lr_final + 0.5 * (lr_init - lr_final) * (1.0 + math.cos(math.pi * t / horizon))


class AdamW:
    """Adam with decoupled weight decay.  Aborts on non-finite gradients."""

    def __init__(self, named_params, betas=(0.9, 0.999), eps=1e-8, weight_decay=0.0):
        self.named = list(named_params)
        self.beta1, self.beta2 = betas
        self.eps = eps
        self.weight_decay = weight_decay
        self.t = 0
        self._m = [np.zeros_like(p.data) for _, p in self.named]
        self._v = [np.zeros_like(p.data) for _, p in self.named]

    def zero_grad(self):
        for _, p in self.named:
            p.grad = None

    def step(self, lr):
        self.t += 1
        bc1 = 1.0 - self.beta1 ** self.t
        bc2 = 1.0 - self.beta2 ** self.t
        for (name, p), m, v in zip(self.named, self._m, self._v):
            g = p.grad
            if g is None:
                continue
            if not np.isfinite(g).all():
                raise NumericError(f"non-finite gradient for parameter {name!r} at step {self.t}")
            m *= self.beta1
            m += (1.0 - self.beta1) * g
            v *= self.beta2
            v += (1.0 - self.beta2) * (g * g)
            update = (m / bc1) / (np.sqrt(v / bc2) + self.eps)
            if self.weight_decay:
                p.data = p.data - lr * self.weight_decay * p.data - lr * update
            else:
                p.data = p.data - lr * update


def evaluate(net: TwoStageNet, dataset: SyntheticDataset, dtype=None):
    """Mean PSNR/SSIM of clipped RGB outputs against the clean targets,
    plus the packed raw-domain PSNR of the first-stage output."""
    dtype = dtype or np.float32
    rows = []
    for sample in dataset.samples:
        packed_in = pack(sample.raw).astype(dtype)
        with no_grad():
            o1, o2 = net(Tensor(packed_in))
        rgb = np.clip(o2.data.astype(np.float64), 0.0, 1.0)
        raw_pred = np.clip(o1.data.astype(np.float64), 0.0, 1.0)
        rows.append(
            {
                "psnr": psnr(rgb, sample.clean_rgb, 1.0),
                "ssim": ssim(rgb, sample.clean_rgb, 1.0),
                "raw_psnr": psnr(raw_pred, sample.clean_packed, 1.0),
            }
        )
    return {
        "psnr": float(np.mean([r["psnr"] for r in rows])),
        "ssim": float(np.mean([r["ssim"] for r in rows])),
        "raw_psnr": float(np.mean([r["raw_psnr"] for r in rows])),
        "per_sample": rows,
    }


@dataclass
class TrainResult:
    net: TwoStageNet
    log: list
    metrics: dict
    baseline_psnr: float
    wall_ms: float
    ckpt_path: str | None


def train(
    dataset: SyntheticDataset,
    net_cfg: NetworkConfig,
    train_cfg: TrainConfig,
    loss_cfg: LossConfig,
    out_dir=None,
) -> TrainResult:
    """Single-sample training loop over the dataset.

    When ``out_dir`` is given, writes model.ckpt, train_log.csv and
    metrics.csv there; the final metrics are computed from the checkpoint
    reloaded from disk, so a later eval of the same file reproduces them
    exactly.
    """
    if not dataset.samples:
        raise ConfigError("dataset is empty")
    dtype = train_cfg.np_dtype
    net = TwoStageNet(net_cfg, seed=train_cfg.seed, dtype=dtype)
    opt = AdamW(
        net.named_params(),
        betas=train_cfg.betas,
        weight_decay=train_cfg.weight_decay,
    )
    total_steps = train_cfg.steps if train_cfg.steps is not None else train_cfg.epochs * len(dataset.samples)
    if total_steps < 1:
        raise ConfigError("training needs at least one step")
    horizon = max(1, round(train_cfg.cosine_horizon_frac * total_steps))

    rng = np.random.default_rng(train_cfg.seed)
    packed_inputs = [pack(s.raw).astype(dtype) for s in dataset.samples]
    order = []
    log = []
    start = time.perf_counter()
    for step in range(total_steps):
        if not order:
            order = list(rng.permutation(len(dataset.samples)))
        i = order.pop()
        sample = dataset.samples[i]
        x_np, gt_raw_np, gt_rgb_np = packed_inputs[i], sample.clean_packed, sample.clean_rgb
        if train_cfg.augment:
            flip_h = bool(rng.random() < 0.5)
            flip_v = bool(rng.random() < 0.5)
            if flip_h or flip_v:
                x_np, gt_raw_np, gt_rgb_np = flip_arrays(
                    x_np, gt_raw_np, gt_rgb_np, dataset.cfa, flip_h, flip_v
                )

        if train_cfg.schedule == "cosine":
            lr = cosine_lr(step, total_steps, train_cfg.lr_init, train_cfg.lr_final, horizon)
        else:
            lr = train_cfg.lr_init

        o1, o2 = net(Tensor(np.asarray(x_np, dtype=dtype)))
        loss, parts = total_loss(
            o1,
            o2,
            Tensor(np.asarray(gt_raw_np, dtype=dtype)),
            Tensor(np.asarray(gt_rgb_np, dtype=dtype)),
            loss_cfg,
        )
        opt.zero_grad()
        backward(loss)
        opt.step(lr)
        log.append(
            {
                "step": step,
                "lr": lr,
                "loss": loss.item(),
                "loss_raw": parts["raw"],
                "loss_srgb": parts["srgb"],
            }
        )
    wall_ms = (time.perf_counter() - start) * 1000.0

    ckpt_path = None
    if out_dir is not None:
        os.makedirs(out_dir, exist_ok=True)
        ckpt_path = os.path.join(out_dir, "model.ckpt")
        echo = {
            "network": asdict(net_cfg),
            "train": asdict(train_cfg),
            "loss": asdict(loss_cfg),
        }
        save_checkpoint(ckpt_path, net, echo, train_cfg.seed)
        net, _ = network_from_checkpoint(ckpt_path, dtype=dtype)
        metrics = evaluate(net, dataset, dtype=dtype)
        _write_train_log(os.path.join(out_dir, "train_log.csv"), log)
        write_metrics_csv(
            os.path.join(out_dir, "metrics.csv"),
            [{"variant": "train", "psnr": metrics["psnr"], "ssim": metrics["ssim"], "wall_ms": wall_ms, "seed": train_cfg.seed}],
        )
    else:
        metrics = evaluate(net, dataset, dtype=dtype)

    return TrainResult(
        net=net,
        log=log,
        metrics=metrics,
        baseline_psnr=dataset.baseline_psnr,
        wall_ms=wall_ms,
        ckpt_path=ckpt_path,
    )


def _write_train_log(path, log):
    with open(path, "w", encoding="utf-8") as fh:
        fh.write("step,lr,loss,loss_raw,loss_srgb\n")
        for row in log:
            fh.write(
                f"{row['step']},{row['lr']!r},{row['loss']!r},{row['loss_raw']!r},{row['loss_srgb']!r}\n"
            )


def write_metrics_csv(path, rows):
    with open(path, "w", encoding="utf-8") as fh:
        fh.write("variant,psnr,ssim,wall_ms,seed\n")
        for row in rows:
            fh.write(f"{row['variant']},{row['psnr']!r},{row['ssim']!r},{row['wall_ms']!r},{row['seed']}\n")
