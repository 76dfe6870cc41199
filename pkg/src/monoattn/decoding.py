"""Greedy streaming inference with READ/WRITE trace recording."""

from __future__ import annotations

import json
import time
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import autograd as ag
from .autograd import Tensor
from .model import MonoAttnTransducer, StreamingPredictor


@dataclass
class Read:
    chunk_index: int      # 1-based index of the newest chunk read
    frames_added: int
    frames_total: int
    stamp: float | None = None


@dataclass
class Write:
    token: int
    g: int                # source tokens observed when written
    attn_frames: int      # encoder states visible to the predictor
    stamp: float | None = None


@dataclass
class DecodeTrace:
    events: list = field(default_factory=list)
    length_capped: bool = False
    write_capped: int = 0

    @property
    def writes(self) -> list[Write]:
        return [e for e in self.events if isinstance(e, Write)]

    @property
    def g(self) -> list[int]:
        return [w.g for w in self.writes]

    @property
    def tokens(self) -> list[int]:
        return [w.token for w in self.writes]

    def compute_ms(self) -> list[float]:
        """Wall-clock milliseconds from the start of decoding to each WRITE."""
        return [1000.0 * w.stamp for w in self.writes if w.stamp is not None]

    def validate(self, n_frames: int) -> None:
        if not self.events or not isinstance(self.events[0], Read):
            raise ValueError("trace must start with READ")
        read = 0
        last_g = 0
        for e in self.events:
            if isinstance(e, Read):
                read += e.frames_added
                if read != e.frames_total:
                    raise ValueError("READ bookkeeping mismatch")
            else:
                if e.g != read:
                    raise ValueError("WRITE g differs from frames read")
                if e.g < last_g:
                    raise ValueError("g must be non-decreasing")
                last_g = e.g
        if read > n_frames:
            raise ValueError("read past the end of the source")

    def to_dict(self) -> dict:
        ev = []
        for e in self.events:
            if isinstance(e, Read):
                d = {"type": "READ", "chunk": e.chunk_index, "frames": e.frames_added,
                     "total": e.frames_total}
            else:
                d = {"type": "WRITE", "token": e.token, "g": e.g, "attn": e.attn_frames}
            if e.stamp is not None:
                d["t"] = e.stamp
            ev.append(d)
        return {"events": ev, "length_capped": self.length_capped, "write_capped": self.write_capped}

    @classmethod
    def from_dict(cls, d: dict) -> DecodeTrace:
        events = []
        for e in d["events"]:
            if e["type"] == "READ":
                events.append(Read(e["chunk"], e["frames"], e["total"], e.get("t")))
            else:
                events.append(Write(e["token"], e["g"], e["attn"], e.get("t")))
        return cls(events, d.get("length_capped", False), d.get("write_capped", 0))


@dataclass
class DecodePolicyConfig:
    chunk_frames: int | None = 4   # None: offline
    max_writes_per_step: int = 10
    max_output_len: int | None = None
    record_time: bool = False

    def __post_init__(self):
        if self.chunk_frames is not None and self.chunk_frames < 1:
            raise ValueError("chunk_frames must be positive")
        if self.max_writes_per_step < 1:
            raise ValueError("max_writes_per_step must be positive")


@dataclass
class DecodeResult:
    tokens: list[int]
    trace: DecodeTrace
    states: np.ndarray      # predictor states s_0..s_U that were actually used
    attn_frames: list[int]  # frames visible to each state


def _argmax_step(model: MonoAttnTransducer, h: np.ndarray, s: np.ndarray) -> int:
    with ag.no_grad():
        lp = model.join(Tensor(h[None, None, :]), Tensor(s[None, None, :])).data
    return int(np.argmax(lp[0, 0, 0]))


def stream_decode(source, model: MonoAttnTransducer, policy: DecodePolicyConfig | None = None
                  ) -> DecodeResult:
    """Chunk-wise greedy Transducer decoding.

    For each chunk: READ it (plus the lookahead chunk, if configured), then
    visit the chunk's decision points in order. At a decision point, emit
    argmax tokens until blank (READ) or the per-point WRITE cap; the last
    decision point of the source is bounded by the length cap only. Every emitted
    token is fed to the predictor, whose monotonic attention covers all
    encoder states of the chunks received so far.
    """
    policy = policy or DecodePolicyConfig()
    source = np.asarray(source, dtype=np.int64)
    T = len(source)
    if T == 0:
        raise ValueError("empty source")
    cfg = model.config
    C = model.effective_chunk(policy.chunk_frames, T)
    if C % cfg.decision_step and C != T:
        raise ValueError("chunk_frames must be divisible by decision_step")
    lookahead = cfg.lookahead_chunks if C < T else 0
    max_len = min(policy.max_output_len or cfg.max_len - 1, cfg.max_len - 1)
    n_chunks = -(-T // C)

    t0 = time.perf_counter()
    stamp = (lambda: time.perf_counter() - t0) if policy.record_time else (lambda: None)
    trace = DecodeTrace()
    pred = StreamingPredictor(model)
    tokens: list[int] = []
    frames_read = 0
    s = None
    done = False
    for k in range(n_chunks):
        need = min(T, (k + 1 + lookahead) * C)
        if need > frames_read:
            trace.events.append(Read(min(n_chunks, k + 1 + lookahead), need - frames_read, need, stamp()))
            frames_read = need
        with ag.no_grad():
            H = model.encode(source[None, :frames_read], C).states
        attn = min((k + 1) * C, T)
        H_vis = H[:, :attn, :]
        if s is None:
            s = pred.step(cfg.bos_id, H_vis)
        chunk_end = attn
        points = range(k * C + cfg.decision_step, chunk_end + cfg.decision_step, cfg.decision_step)
        for p in points:
            frame = min(p, chunk_end) - 1
            h = H.data[0, frame]
            # at the very last decision point only the length cap applies
            final = k == n_chunks - 1 and frame == T - 1
            writes = 0
            while True:
                v = _argmax_step(model, h, s)
                if v == cfg.blank_id:
                    break
                if len(tokens) >= max_len:
                    trace.length_capped = True
                    done = True
                    break
                if writes >= policy.max_writes_per_step and not final:
                    trace.write_capped += 1
                    break
                tokens.append(v)
                trace.events.append(Write(v, frames_read, attn, stamp()))
                s = pred.step(v, H_vis)
                writes += 1
            if done or frame == chunk_end - 1:
                break
        if done:
            break
    return DecodeResult(tokens, trace, np.stack(pred.states), pred.attn_frames)


def offline_decode(source, model: MonoAttnTransducer, policy: DecodePolicyConfig | None = None
                   ) -> DecodeResult:
    """Read the whole source, then decode greedily."""
    base = policy or DecodePolicyConfig()
    return stream_decode(source, model, DecodePolicyConfig(
        chunk_frames=None, max_writes_per_step=base.max_writes_per_step,
        max_output_len=base.max_output_len, record_time=base.record_time))


def replay_trace(model: MonoAttnTransducer, source, trace: DecodeTrace,
                 chunk_frames: int | None) -> np.ndarray:
    """Teacher-forced predictor states under the trace's one-hot alignment."""
    from .monotonic import one_hot_alignment

    source = np.asarray(source, dtype=np.int64)
    T = len(source)
    C = model.effective_chunk(chunk_frames, T)
    writes = trace.writes
    frames = [min(C, T)] + [w.attn_frames for w in writes]
    align = one_hot_alignment(frames, T)
    with ag.no_grad():
        H = model.encode(source[None], C).states
        S = model.predict(np.array([[w.token for w in writes]], dtype=np.int64), H, align[None])
    return S.data[0]


def write_decode_records(path: str | Path, records: list[dict]) -> None:
    with open(path, "w") as fh:
        for r in records:
            fh.write(json.dumps(r) + "\n")


def read_decode_records(path: str | Path) -> list[dict]:
    return [json.loads(line) for line in Path(path).read_text().splitlines() if line.strip()]


def decode_record(index: int, source, result: DecodeResult, reference=None) -> dict:
    rec = {"id": index, "source": [int(x) for x in source], "hypothesis": result.tokens,
           "trace": result.trace.to_dict()}
    if reference is not None:
        rec["reference"] = [int(x) for x in reference]
    return rec
