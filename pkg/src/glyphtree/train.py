"""Contrastive alignment of the two encoders: loss, optimizer, training loop."""

from __future__ import annotations

import math
import time
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from . import autodiff as ad
from . import ids
from .autodiff import Tensor, backward
from .data import GlyphDataset
from .image_encoder import encode_image_tokens, patchify, sample_mask
from .model import (
    LOGIT_SCALE_MAX,
    ArchFlags,
    ModelConfig,
    ModelParams,
    init_params,
    save_checkpoint,
)
from .tree_encoder import build_tree_batch, encode_tree_batch


class TrainError(Exception):
    pass


class DegenerateBatch(TrainError):
    pass


class NonFiniteLoss(TrainError):
    pass


def contrastive_loss(img_emb: Tensor, tree_emb: Tensor, logit_scale: Tensor) -> Tensor:
    """Symmetric InfoNCE over a batch of matched (image, tree) pairs.

    Rows of both inputs must be unit-norm; matched rows are positives.
    """
    n = img_emb.value.shape[0]
    logits = ad.mul(ad.exp(logit_scale), ad.matmul(img_emb, ad.transpose_last2(tree_emb)))
    targets = np.arange(n)
    loss_i = ad.cross_entropy_rows(logits, targets)
    loss_t = ad.cross_entropy_rows(ad.transpose_last2(logits), targets)
    return ad.scale(ad.add(loss_i, loss_t), 0.5)


class Adam:
    """Adam with optional cosine learning-rate decay over `total_steps`."""

    def __init__(
        self,
        params: ModelParams,
        lr: float,
        total_steps: int | None = None,
        betas: tuple[float, float] = (0.9, 0.999),
        eps: float = 1e-8,
    ):
        self.params = params
        self.lr = lr
        self.total_steps = total_steps
        self.b1, self.b2 = betas
        self.eps = eps
        self.t = 0
        self.m = {n: np.zeros_like(p.value) for n, p in params.tensors.items()}
        self.v = {n: np.zeros_like(p.value) for n, p in params.tensors.items()}

    def current_lr(self) -> float:
        if not self.total_steps:
            return self.lr
        frac = min(self.t / self.total_steps, 1.0)
        return self.lr * 0.5 * (1.0 + math.cos(math.pi * frac))

    def step(self) -> None:
        lr = self.current_lr()
        self.t += 1
        for name, p in self.params.tensors.items():
            g = p.grad
            if g is None:
                continue
            m = self.m[name] = self.b1 * self.m[name] + (1 - self.b1) * g
            v = self.v[name] = self.b2 * self.v[name] + (1 - self.b2) * g * g
            mhat = m / (1 - self.b1**self.t)
            vhat = v / (1 - self.b2**self.t)
            p.value -= (lr * mhat / (np.sqrt(vhat) + self.eps)).astype(p.value.dtype)
        ls = self.params.tensors.get("logit_scale")
        if ls is not None and ls.value > LOGIT_SCALE_MAX:
            ls.value = np.asarray(LOGIT_SCALE_MAX, dtype=ls.value.dtype)


@dataclass
class TrainSample:
    char_index: int          # index into the character list
    patch_rows: np.ndarray   # (P, patch_px^2) precomputed


class TrainSet:
    """Training-split samples with parsed trees and pre-patchified images."""

    def __init__(self, dataset: GlyphDataset, cfg: ModelConfig):
        self.chars = dataset.split_chars("train")
        if not self.chars:
            raise TrainError("dataset has no training split")
        self.trees = [ids.parse_text(c.ids_string, dataset.radical_ids()) for c in self.chars]
        self.samples_by_char: list[list[np.ndarray]] = []
        for c in self.chars:
            rows = [
                patchify(dataset.load_image(rel), cfg.patch_px) for rel in c.images
            ]
            if not rows:
                raise TrainError(f"char {c.char_id} has no images")
            self.samples_by_char.append(rows)
        self.num_samples = sum(len(r) for r in self.samples_by_char)


def train_step(
    tree_batches,
    image_tokens: np.ndarray,
    kept_idx: np.ndarray,
    params: ModelParams,
    cfg: ModelConfig,
    flags: ArchFlags,
    optimizer: Adam,
) -> float:
    """One forward/backward/update over an aligned (tree, image) batch."""
    n = image_tokens.shape[0]
    if n < 2:
        raise DegenerateBatch(f"training batch of size {n}")
    params.zero_grads()
    tree_emb = encode_tree_batch(tree_batches, params, cfg, flags)
    img_emb = encode_image_tokens(image_tokens, kept_idx, params, cfg)
    loss = contrastive_loss(img_emb, tree_emb, params["logit_scale"])
    value = float(loss.value)
    if not math.isfinite(value):
        raise NonFiniteLoss(f"loss became {value} at step {optimizer.t}")
    backward(loss)
    optimizer.step()
    return value


def train(
    dataset: GlyphDataset,
    cfg: ModelConfig,
    flags: ArchFlags | None = None,
    out_ckpt: str | Path | None = None,
    log_path: str | Path | None = None,
    params: ModelParams | None = None,
    progress: bool = False,
) -> tuple[ModelParams, list[tuple[int, float, float]]]:
    """Full training run; returns the parameters and the (step, loss, ms) trace."""
    flags = flags or ArchFlags()
    rng = np.random.default_rng(cfg.seed)
    ts = TrainSet(dataset, cfg)
    if params is None:
        params = init_params(cfg, vocab_size=max(dataset.vocab) + 1, rng=rng)

    steps_per_epoch = max(1, ts.num_samples // cfg.batch)
    total_steps = cfg.epochs * steps_per_epoch
    optimizer = Adam(params, cfg.lr, total_steps=total_steps)
    num_chars = len(ts.chars)
    batch = min(cfg.batch, num_chars)
    p = cfg.num_patches

    trace: list[tuple[int, float, float]] = []
    log_fh = open(log_path, "w") if log_path else None
    if log_fh:
        log_fh.write("step,loss,wallclock_ms\n")
    try:
        for step in range(total_steps):
            t0 = time.perf_counter()
            # distinct characters per batch: duplicate characters would be
            # false negatives under the contrastive targets
            chosen = rng.choice(num_chars, size=batch, replace=False)
            trees = [ts.trees[c] for c in chosen]
            rows = np.stack(
                [
                    ts.samples_by_char[c][rng.integers(len(ts.samples_by_char[c]))]
                    for c in chosen
                ]
            )
            if cfg.mask_ratio > 0.0:
                kept = np.stack([sample_mask(p, cfg.mask_ratio, rng) for _ in range(batch)])
            else:
                kept = np.broadcast_to(np.arange(p), (batch, p)).copy()
            tokens = np.take_along_axis(rows, kept[:, :, None], axis=1)
            tb = build_tree_batch(trees, params, flags)
            loss = train_step(tb, tokens, kept, params, cfg, flags, optimizer)
            ms = (time.perf_counter() - t0) * 1000.0
            trace.append((step, loss, ms))
            if log_fh:
                log_fh.write(f"{step},{loss:.6f},{ms:.3f}\n")
            if progress and (step % 20 == 0 or step == total_steps - 1):
                print(f"step {step}/{total_steps} loss {loss:.4f} ({ms:.0f} ms)", flush=True)
    finally:
        if log_fh:
            log_fh.close()
    if out_ckpt:
        save_checkpoint(params, str(out_ckpt), cfg=cfg, flags=flags)
    return params, trace
