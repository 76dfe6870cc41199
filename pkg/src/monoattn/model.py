"""Tiny MonoAttn-Transducer: chunk-causal encoder, predictor with monotonic
cross-attention, and a feed-forward joiner producing the probability lattice.

Batched calls take equal-length samples: ``src`` is (B, T) and ``tgt`` is
(B, U) integer arrays. Predictor state ``u`` is produced from the input
``[BOS, y_1 .. y_u]`` and cross-attends to the encoder according to row ``u``
of an alignment matrix over encoder frames (see :mod:`monoattn.monotonic`).
"""

from __future__ import annotations

import configparser
import io
import math
from dataclasses import asdict, dataclass, fields

import numpy as np

from . import autograd as ag
from .autograd import Tensor
from .lattice import ProbLattice
from .monotonic import monotonic_weights
from .nn import (
    Embedding,
    FeedForward,
    LayerNorm,
    Linear,
    ParameterStore,
    SelfAttention,
    load_checkpoint,
    merge_heads,
    save_checkpoint,
    sinusoidal_positions,
    split_heads,
)

MAX_PARAMETERS = 1_000_000


@dataclass
class ModelConfig:
    src_vocab: int = 16
    vocab_size: int = 16
    d_model: int = 64
    heads: int = 4
    d_ff: int = 256
    encoder_layers: int = 2
    predictor_layers: int = 2
    chunk_frames: int = 4
    decision_step: int = 1
    lookahead_chunks: int = 0
    max_len: int = 64
    cross_attention: bool = True
    seed: int = 0

    def __post_init__(self):
        if self.decision_step < 1:
            raise ValueError("decision_step must be >= 1")
        if self.chunk_frames % self.decision_step:
            raise ValueError("chunk_frames must be divisible by decision_step")
        if self.d_model % self.heads:
            raise ValueError("heads must divide d_model")
        if self.lookahead_chunks not in (0, 1):
            raise ValueError("lookahead_chunks must be 0 or 1")

    @property
    def blank_id(self) -> int:
        return self.vocab_size

    @property
    def bos_id(self) -> int:
        return self.vocab_size

    def to_text(self) -> str:
        cp = configparser.ConfigParser()
        cp["model"] = {k: str(v) for k, v in asdict(self).items()}
        buf = io.StringIO()
        cp.write(buf)
        return buf.getvalue()

    @classmethod
    def from_text(cls, text: str) -> ModelConfig:
        cp = configparser.ConfigParser()
        cp.read_string(text)
        sec = cp["model"]
        kwargs = {}
        for f in fields(cls):
            if f.name not in sec:
                continue
            raw = sec[f.name]
            kwargs[f.name] = raw.lower() == "true" if f.type in ("bool", bool) else int(raw)
        return cls(**kwargs)


@dataclass
class EncoderStates:
    states: Tensor        # (B, T, d)
    pooled: Tensor        # (B, T', d), last frame of each decision window
    chunk_frames: int     # effective chunk (T for offline)
    decision_step: int

    @property
    def n_frames(self) -> int:
        return self.states.shape[1]

    @property
    def n_points(self) -> int:
        return self.pooled.shape[1]


def pooled_frame_index(n_frames: int, decision_step: int) -> np.ndarray:
    """Frame (0-based) feeding each decision point: ``min((i+1)*step, T) - 1``."""
    n_points = math.ceil(n_frames / decision_step)
    return np.minimum((np.arange(n_points) + 1) * decision_step, n_frames) - 1


def chunk_attention_mask(n: int, chunk: int, lookahead: int) -> np.ndarray:
    """(n, n) boolean mask; query i sees key j iff chunk(j) <= chunk(i) + lookahead."""
    c = np.arange(n) // chunk
    return c[None, :] <= c[:, None] + lookahead


def causal_mask(n: int) -> np.ndarray:
    return np.tril(np.ones((n, n), dtype=bool))


class EncoderLayer:
    def __init__(self, store, name, d, heads, d_ff):
        self.ln1 = LayerNorm(store, f"{name}.ln1", d)
        self.attn = SelfAttention(store, f"{name}.attn", d, heads)
        self.ln2 = LayerNorm(store, f"{name}.ln2", d)
        self.ffn = FeedForward(store, f"{name}.ffn", d, d_ff)

    def __call__(self, x, mask):
        x = x + self.attn(self.ln1(x), mask)
        return x + self.ffn(self.ln2(x))


class MonotonicCrossAttention:
    def __init__(self, store, name, d, heads):
        self.heads = heads
        self.q = Linear(store, f"{name}.q", d, d)
        self.kv = Linear(store, f"{name}.kv", d, 2 * d)
        self.out = Linear(store, f"{name}.out", d, d)

    def energies(self, x: Tensor, H: Tensor) -> tuple[Tensor, Tensor]:
        d = x.shape[-1]
        q = split_heads(self.q(x), self.heads)
        kv = self.kv(H)
        k = split_heads(kv[..., :d], self.heads)
        v = split_heads(kv[..., d:], self.heads)
        return (q @ k.swapaxes(-1, -2)) * (1.0 / math.sqrt(d // self.heads)), v

    def __call__(self, x: Tensor, H: Tensor, align: np.ndarray) -> Tensor:
        """``align`` is (B, U+1, T) over encoder frames, shared across heads."""
        e, v = self.energies(x, H)
        phi = monotonic_weights(e, align[:, None, :, :])
        return self.out(merge_heads(phi @ v))


class PredictorLayer:
    """Post-norm layer: causal self-attention, monotonic cross-attention, FFN."""

    def __init__(self, store, name, d, heads, d_ff, cross: bool):
        self.heads = heads
        self.self_qkv = Linear(store, f"{name}.self.qkv", d, 3 * d)
        self.self_out = Linear(store, f"{name}.self.out", d, d)
        self.ln1 = LayerNorm(store, f"{name}.ln1", d)
        self.cross = MonotonicCrossAttention(store, f"{name}.cross", d, heads) if cross else None
        self.ln2 = LayerNorm(store, f"{name}.ln2", d)
        self.ffn = FeedForward(store, f"{name}.ffn", d, d_ff)
        self.ln3 = LayerNorm(store, f"{name}.ln3", d)

    def _self_attn(self, q, k, v, mask):
        scores = (q @ k.swapaxes(-1, -2)) * (1.0 / math.sqrt(q.shape[-1]))
        if mask is not None:
            scores = ag.where(mask, scores, -1e30)
        return self.self_out(merge_heads(ag.softmax(scores, axis=-1) @ v))

    def _qkv(self, x):
        d = x.shape[-1]
        qkv = self.self_qkv(x)
        return tuple(split_heads(qkv[..., i * d:(i + 1) * d], self.heads) for i in range(3))

    def _rest(self, x, H, align):
        if self.cross is not None:
            x = self.ln2(x + self.cross(x, H, align))
        else:
            x = self.ln2(x)
        return self.ln3(x + self.ffn(x))

    def __call__(self, x, H, align):
        q, k, v = self._qkv(x)
        x = self.ln1(x + self._self_attn(q, k, v, causal_mask(x.shape[1])))
        return self._rest(x, H, align)

    def step(self, x_new, cache_k, cache_v, H, align):
        """Process one new position given cached keys/values of earlier ones."""
        q, k, v = self._qkv(x_new)
        k_all = k if cache_k is None else ag.concat([cache_k, k], axis=2)
        v_all = v if cache_v is None else ag.concat([cache_v, v], axis=2)
        x = self.ln1(x_new + self._self_attn(q, k_all, v_all, None))
        return self._rest(x, H, align), k_all, v_all


class MonoAttnTransducer:
    def __init__(self, config: ModelConfig):
        self.config = config
        cfg = config
        self.store = ParameterStore(np.random.default_rng(cfg.seed))
        s, d = self.store, cfg.d_model
        self.src_embed = Embedding(s, "enc.embed", cfg.src_vocab, d)
        self.enc_layers = [EncoderLayer(s, f"enc.{i}", d, cfg.heads, cfg.d_ff)
                           for i in range(cfg.encoder_layers)]
        self.enc_ln = LayerNorm(s, "enc.ln", d)
        self.tgt_embed = Embedding(s, "pred.embed", cfg.vocab_size + 1, d)
        self.pred_layers = [PredictorLayer(s, f"pred.{i}", d, cfg.heads, cfg.d_ff, cfg.cross_attention)
                            for i in range(cfg.predictor_layers)]
        self.join_enc = Linear(s, "join.enc", d, d)
        self.join_pred = Linear(s, "join.pred", d, d, bias=False)
        self.join_out = Linear(s, "join.out", d, cfg.vocab_size + 1)
        self._pos = sinusoidal_positions(cfg.max_len + 1, d)
        if self.store.num_parameters() >= MAX_PARAMETERS:
            raise ValueError(f"model has {self.store.num_parameters()} parameters; toy budget is "
                             f"{MAX_PARAMETERS}")

    # -- encoder -----------------------------------------------------------

    def effective_chunk(self, chunk: int | None, n_frames: int) -> int:
        return n_frames if chunk is None or chunk >= n_frames else chunk

    def encode(self, src, chunk: int | None = None) -> EncoderStates:
        """Chunk-causal encoding; ``chunk=None`` (or >= T) encodes offline.

        One-chunk lookahead is granted in the first layer only, so the visible
        window does not grow with depth: frame t depends on source positions
        up to the end of chunk(t) + lookahead_chunks.
        """
        src = np.atleast_2d(np.asarray(src, dtype=np.int64))
        B, T = src.shape
        if T < 1:
            raise ValueError("empty source")
        if T > self.config.max_len:
            raise ValueError(f"source length {T} exceeds max_len {self.config.max_len}")
        if src.min() < 0 or src.max() >= self.config.src_vocab:
            raise ValueError("source id out of vocabulary")
        C = self.effective_chunk(chunk, T)
        d = self.config.d_model
        x = self.src_embed(src) * math.sqrt(d) + self._pos[:T]
        first = chunk_attention_mask(T, C, self.config.lookahead_chunks)
        rest = chunk_attention_mask(T, C, 0)
        for i, layer in enumerate(self.enc_layers):
            x = layer(x, first if i == 0 else rest)
        states = self.enc_ln(x)
        idx = pooled_frame_index(T, self.config.decision_step)
        return EncoderStates(states, states[:, idx, :], C, self.config.decision_step)

    # -- predictor ---------------------------------------------------------

    def _pred_input(self, ids: np.ndarray, offset: int = 0) -> Tensor:
        n = ids.shape[1]
        return self.tgt_embed(ids) * math.sqrt(self.config.d_model) + self._pos[offset:offset + n]

    def predict(self, tgt, H: Tensor, align: np.ndarray) -> Tensor:
        """Teacher-forced predictor pass with alignment-driven expected contexts.

        ``align``: (B, U+1, T) or (U+1, T) alignment over encoder frames.
        Returns states (B, U+1, d).
        """
        tgt = np.atleast_2d(np.asarray(tgt, dtype=np.int64))
        B, U = tgt.shape
        if U + 1 > self.config.max_len:
            raise ValueError("target too long")
        align = np.asarray(align, dtype=np.float64)
        if align.ndim == 2:
            align = np.broadcast_to(align, (B,) + align.shape)
        if align.shape != (B, U + 1, H.shape[1]):
            raise ValueError(f"alignment shape {align.shape} != {(B, U + 1, H.shape[1])}")
        ids = np.concatenate([np.full((B, 1), self.config.bos_id), tgt], axis=1)
        x = self._pred_input(ids)
        for layer in self.pred_layers:
            x = layer(x, H, align)
        return x

    # contexts are built per layer from that layer's energies, so the
    # training-mode pass is parameterised by the alignment itself
    predict_expected = predict

    # -- joiner ------------------------------------------------------------

    def join(self, pooled: Tensor, S: Tensor) -> Tensor:
        """Log-probabilities (B, T', U+1, V+1); blank is the last index."""
        a = self.join_enc(pooled)
        b = self.join_pred(S)
        B, Tp, d = a.shape
        U1 = b.shape[1]
        z = ag.tanh(a.reshape(B, Tp, 1, d) + b.reshape(B, 1, U1, d))
        return ag.log_softmax(self.join_out(z), axis=-1)

    def lattice(self, src, tgt, align: np.ndarray, chunk: int | None = None) -> list[ProbLattice]:
        """Convenience: numpy lattices for a batch under a given frame alignment."""
        with ag.no_grad():
            enc = self.encode(src, chunk)
            lp = self.join(enc.pooled, self.predict(tgt, enc.states, align)).data
        tgt = np.atleast_2d(tgt)
        return [ProbLattice(lp[b], tgt[b]) for b in range(lp.shape[0])]

    # -- persistence -------------------------------------------------------

    def save(self, path) -> None:
        save_checkpoint(path, self.store.state_dict(), self.config.to_text())

    @classmethod
    def load(cls, path) -> MonoAttnTransducer:
        arrays, meta = load_checkpoint(path)
        model = cls(ModelConfig.from_text(meta))
        model.store.load_state_dict(arrays)
        return model

    def load_parameters(self, path) -> None:
        arrays, meta = load_checkpoint(path)
        other = ModelConfig.from_text(meta)
        mine = asdict(self.config)
        theirs = asdict(other)
        shape_keys = ("src_vocab", "vocab_size", "d_model", "heads", "d_ff", "encoder_layers",
                      "predictor_layers", "cross_attention")
        bad = [k for k in shape_keys if mine[k] != theirs[k]]
        if bad:
            raise ValueError(f"checkpoint config mismatch on {bad}")
        self.store.load_state_dict(arrays)


class StreamingPredictor:
    """Incremental predictor: each state is computed once and then frozen.

    ``step`` appends one input token (BOS first) and attends to the currently
    visible encoder states ``H_visible`` (frames 1..g). Cached self-attention
    keys/values make the cost per emitted token independent of source length.
    """

    def __init__(self, model: MonoAttnTransducer):
        self.model = model
        self.cache_k: list[Tensor | None] = [None] * len(model.pred_layers)
        self.cache_v: list[Tensor | None] = [None] * len(model.pred_layers)
        self.states: list[np.ndarray] = []
        self.attn_frames: list[int] = []

    @property
    def length(self) -> int:
        return len(self.states)

    def step(self, token: int, H_visible: Tensor) -> np.ndarray:
        if H_visible.shape[-2] < 1:
            raise ValueError("no visible encoder states")
        if H_visible.ndim == 2:
            H_visible = H_visible.reshape(1, *H_visible.shape)
        n = H_visible.shape[1]
        align = np.zeros((1, 1, n))
        align[0, 0, -1] = 1.0
        with ag.no_grad():
            x = self.model._pred_input(np.array([[token]]), offset=self.length)
            for i, layer in enumerate(self.model.pred_layers):
                x, self.cache_k[i], self.cache_v[i] = layer.step(
                    x, self.cache_k[i], self.cache_v[i], H_visible, align)
        s = x.data[0, 0]
        self.states.append(s)
        self.attn_frames.append(n)
        return s


def predict_streaming(model: MonoAttnTransducer, target_prefix, visible: list[Tensor]) -> np.ndarray:
    """Recompute states s_0..s_u from scratch, state k attending ``visible[k]``."""
    sp = StreamingPredictor(model)
    tokens = [model.config.bos_id] + list(target_prefix)
    if len(visible) != len(tokens):
        raise ValueError("need one visible-state block per predictor state")
    for tok, H in zip(tokens, visible):
        sp.step(tok, H)
    return np.stack(sp.states)
