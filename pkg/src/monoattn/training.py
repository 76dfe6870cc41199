"""Two-pass prior -> posterior training, the prior-only variant, offline
pretraining, and the optimisation loop."""

from __future__ import annotations

import json
import logging
import time
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Literal

import numpy as np

from . import autograd as ag
from .autograd import Tensor
from .lattice import edge_occupancy, forward_log_alpha, backward_log_beta, gather_emit, posterior_from_vars
from .model import MonoAttnTransducer, pooled_frame_index
from .monotonic import chunk_sync_probs, diagonal_prior, full_support, pooled_to_frames, uniform_prior
from .nn import Adam, AdamConfig

logger = logging.getLogger(__name__)

Mode = Literal["offline", "posterior", "prior"]


@dataclass
class TrainConfig:
    mode: Mode = "posterior"
    prior: Literal["uniform", "diagonal"] = "diagonal"
    chunk_frames: int | None = 4
    steps: int = 2000
    batch_size: int = 16
    seed: int = 0
    log_every: int = 50
    optimizer: AdamConfig = field(default_factory=AdamConfig)

    def __post_init__(self):
        if self.mode not in ("offline", "posterior", "prior"):
            raise ValueError(f"unknown mode {self.mode!r}")
        if self.prior not in ("uniform", "diagonal"):
            raise ValueError(f"unknown prior {self.prior!r}")
        if self.mode != "offline" and self.chunk_frames is None:
            raise ValueError("streaming modes need chunk_frames")
        if self.mode == "offline":
            self.chunk_frames = None


@dataclass
class StepStats:
    loss: float
    fallbacks: int = 0
    forward_passes: int = 0


# -- lattice loss as an autograd primitive -------------------------------------


def transducer_nll(log_probs: Tensor, targets: np.ndarray) -> Tensor:
    """Per-sample -log p(y|x) from a (B, T', U+1, V+1) log-probability tensor.

    The backward pass uses forward-backward edge occupancies, so the gradient
    with respect to each log-probability is minus the posterior use of that
    edge.
    """
    targets = np.atleast_2d(np.asarray(targets, dtype=np.int64))
    lp = log_probs.data
    blank = lp[..., -1]
    emit = gather_emit(lp, targets)
    total, blank_occ, emit_occ = edge_occupancy(blank, emit)
    U = targets.shape[-1]

    def bw(g):
        g = np.asarray(g)[:, None, None]
        full = np.zeros_like(lp)
        full[..., -1] = -g * blank_occ
        if U:
            B, T = lp.shape[:2]
            bi, ti, ui = np.meshgrid(np.arange(B), np.arange(T), np.arange(U), indexing="ij")
            full[bi, ti, ui, targets[:, None, :]] += -g * emit_occ
        log_probs._accumulate(full)

    return ag._make(-total, (log_probs,), bw)


# -- alignments ----------------------------------------------------------------


def _prior_points(kind: str, n_points: int, U: int) -> np.ndarray:
    return (diagonal_prior if kind == "diagonal" else uniform_prior)(n_points, U).probs


def streaming_frame_alignment(point_probs: np.ndarray, chunk: int, decision_step: int,
                              n_frames: int) -> np.ndarray:
    """Chunk-synchronise an alignment over decision points and move it onto frames."""
    synced = chunk_sync_probs(point_probs, max(chunk // decision_step, 1))
    return pooled_to_frames(synced, decision_step, n_frames)


def prior_frame_alignment(kind: str, n_frames: int, U: int, chunk: int, decision_step: int) -> np.ndarray:
    n_points = len(pooled_frame_index(n_frames, decision_step))
    return streaming_frame_alignment(_prior_points(kind, n_points, U), chunk, decision_step, n_frames)


def posterior_points(log_probs: np.ndarray, targets: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Batched posterior over decision points; returns (probs (B, U+1, T'), finite mask)."""
    blank = log_probs[..., -1]
    emit = gather_emit(log_probs, targets)
    alpha = forward_log_alpha(blank, emit)
    beta = backward_log_beta(blank, emit)
    total = alpha[..., -1, -1] + blank[..., -1, -1]
    ok = np.isfinite(total)
    with np.errstate(invalid="ignore", over="ignore"):
        post = posterior_from_vars(alpha, beta, emit, np.where(ok, total, 0.0))
    return post, ok


# -- training steps ------------------------------------------------------------


class Trainer:
    """Runs one of the three training modes on a model.

    ``baseline`` models (no cross-attention) ignore alignments, so every mode
    reduces to plain Transducer training with the corresponding encoder chunking.
    """

    def __init__(self, model: MonoAttnTransducer, config: TrainConfig):
        self.model = model
        self.config = config
        self.optimizer = Adam(model.store, config.optimizer)
        self.fallback_count = 0
        self.forward_passes = 0

    # each *_loss returns a scalar Tensor (mean NLL over the batch)

    def offline_loss(self, src: np.ndarray, tgt: np.ndarray) -> Tensor:
        m = self.model
        enc = m.encode(src, None)
        align = full_support(enc.n_frames, tgt.shape[1]).probs
        self.forward_passes += 1
        return transducer_nll(m.join(enc.pooled, m.predict(tgt, enc.states, align)), tgt).mean()

    def prior_alignment(self, n_frames: int, U: int) -> np.ndarray:
        cfg, mc = self.config, self.model.config
        return prior_frame_alignment(cfg.prior, n_frames, U, cfg.chunk_frames, mc.decision_step)

    def prior_loss(self, src: np.ndarray, tgt: np.ndarray) -> Tensor:
        m = self.model
        enc = m.encode(src, self.config.chunk_frames)
        align = self.prior_alignment(enc.n_frames, tgt.shape[1])
        self.forward_passes += 1
        return transducer_nll(m.join(enc.pooled, m.predict(tgt, enc.states, align)), tgt).mean()

    def infer_posterior(self, src: np.ndarray, tgt: np.ndarray, enc=None) -> np.ndarray:
        """First pass: prior contexts -> prior lattice -> synced posterior.

        Runs without recording; returns a (B, U+1, T) frame alignment.
        """
        m, cfg = self.model, self.config
        with ag.no_grad():
            if enc is None:
                enc = m.encode(src, cfg.chunk_frames)
            H, pooled = enc.states.detach(), enc.pooled.detach()
            prior = self.prior_alignment(enc.n_frames, tgt.shape[1])
            lp = m.join(pooled, m.predict(tgt, H, prior)).data
            self.forward_passes += 1
        post, ok = posterior_points(lp, tgt)
        if not ok.all():
            # zero-probability targets keep the prior alignment
            n_bad = int((~ok).sum())
            self.fallback_count += n_bad
            logger.warning("posterior undefined for %d sample(s); using prior", n_bad)
            prior_points = _prior_points(cfg.prior, enc.n_points, tgt.shape[1])
            post[~ok] = prior_points
        return streaming_frame_alignment(post, cfg.chunk_frames, m.config.decision_step, enc.n_frames)

    def posterior_loss(self, src: np.ndarray, tgt: np.ndarray) -> Tensor:
        m = self.model
        enc = m.encode(src, self.config.chunk_frames)
        align = self.infer_posterior(src, tgt, enc)
        self.forward_passes += 1
        return transducer_nll(m.join(enc.pooled, m.predict(tgt, enc.states, align)), tgt).mean()

    def loss(self, src, tgt) -> Tensor:
        src = np.atleast_2d(src)
        tgt = np.atleast_2d(tgt)
        mode = self.config.mode
        if mode == "offline":
            return self.offline_loss(src, tgt)
        if mode == "prior" or not self.model.config.cross_attention:
            return self.prior_loss(src, tgt)
        return self.posterior_loss(src, tgt)

    def _update(self, loss: Tensor) -> tuple[float, float]:
        value = loss.item()
        ag.backward(loss)
        return value, self.optimizer.step()

    def train_step_posterior(self, src, tgt) -> float:
        self.model.store.zero_grad()
        return self._update(self.posterior_loss(np.atleast_2d(src), np.atleast_2d(tgt)))[0]

    def train_step_prior(self, src, tgt) -> float:
        self.model.store.zero_grad()
        return self._update(self.prior_loss(np.atleast_2d(src), np.atleast_2d(tgt)))[0]

    def step(self, src, tgt) -> tuple[float, float]:
        """One optimiser update; returns (loss, pre-clip gradient norm)."""
        self.model.store.zero_grad()
        return self._update(self.loss(src, tgt))


# -- data ----------------------------------------------------------------------


class BucketSampler:
    """Samples equal-length batches; no padding enters the lattice DP."""

    def __init__(self, pairs: list[tuple[np.ndarray, np.ndarray]], batch_size: int, seed: int):
        self.batch_size = batch_size
        self.rng = np.random.default_rng(seed)
        buckets: dict[tuple[int, int], list[int]] = {}
        for i, (s, t) in enumerate(pairs):
            if len(t) == 0:
                logger.warning("skipping sample %d with empty target", i)
                continue
            buckets.setdefault((len(s), len(t)), []).append(i)
        if not buckets:
            raise ValueError("no usable training samples")
        self.pairs = pairs
        self.keys = sorted(buckets)
        self.buckets = [np.array(buckets[k]) for k in self.keys]
        sizes = np.array([len(b) for b in self.buckets], dtype=float)
        self.weights = sizes / sizes.sum()

    def sample(self) -> tuple[np.ndarray, np.ndarray]:
        b = self.buckets[self.rng.choice(len(self.buckets), p=self.weights)]
        idx = self.rng.choice(b, size=self.batch_size, replace=len(b) < self.batch_size)
        src = np.stack([self.pairs[i][0] for i in idx])
        tgt = np.stack([self.pairs[i][1] for i in idx])
        return src, tgt


def train(model: MonoAttnTransducer, pairs, config: TrainConfig, log_path: str | Path | None = None,
          callback=None) -> list[dict]:
    """Optimise ``model`` in place; returns the per-step log records."""
    trainer = Trainer(model, config)
    sampler = BucketSampler(pairs, config.batch_size, config.seed)
    records = []
    fh = open(log_path, "w") if log_path else None
    t0 = time.perf_counter()
    try:
        for step in range(1, config.steps + 1):
            src, tgt = sampler.sample()
            loss, norm = trainer.step(src, tgt)
            rec = {"step": step, "loss": loss, "fallbacks": trainer.fallback_count,
                   "grad_norm": norm, "lr": trainer.optimizer.lr(),
                   "wall_time": time.perf_counter() - t0}
            records.append(rec)
            if fh:
                fh.write(json.dumps(rec) + "\n")
            if config.log_every and step % config.log_every == 0:
                logger.info("step %d loss %.4f |g| %.3f", step, loss, norm)
            if callback is not None and callback(step, rec) is False:
                break
    finally:
        if fh:
            fh.close()
    return records


def pretrain_offline(model: MonoAttnTransducer, pairs, steps: int, seed: int = 0,
                     optimizer: AdamConfig | None = None, batch_size: int = 16,
                     checkpoint: str | Path | None = None) -> list[dict]:
    """Offline curriculum phase: full-source attention and a non-causal encoder."""
    cfg = TrainConfig(mode="offline", steps=steps, seed=seed, batch_size=batch_size,
                      optimizer=optimizer or AdamConfig())
    records = train(model, pairs, cfg)
    if checkpoint is not None:
        model.save(checkpoint)
    return records


def finetune_streaming(checkpoint: str | Path, pairs, config: TrainConfig,
                       model_overrides: dict | None = None) -> MonoAttnTransducer:
    """Load an offline checkpoint and continue with streaming training."""
    if config.mode == "offline":
        raise ValueError("finetuning needs a streaming mode")
    model = MonoAttnTransducer.load(checkpoint)
    if model_overrides:
        cfg = asdict(model.config)
        cfg.update(model_overrides)
        fresh = MonoAttnTransducer(type(model.config)(**cfg))
        fresh.load_parameters(checkpoint)
        model = fresh
    train(model, pairs, config)
    return model
