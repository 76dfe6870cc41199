"""Synthetic streaming-transduction corpora with controllable reordering.

Each sample maps a random source string to a permuted, relabelled target:
``target[j] = relabel[source[perm[j]]]``. The gold alignment pairs target
position ``j`` with source position ``perm[j]``; its inversion count measures
how non-monotonic the sample is.

Corpus line format (0-based ids and positions)::

    <source ids, space-separated>\\t<target ids>\\t<src-tgt pairs, comma-separated>

e.g. ``3 1 4\\t9 2 7\\t1-0,0-1,2-2``.
"""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass
from pathlib import Path
from typing import Literal

import numpy as np

from .metrics import cross_count

Task = Literal["copy", "local_reorder", "block_reverse"]


@dataclass
class SyntheticTaskSpec:
    task: Task = "copy"
    vocab_size: int = 16
    min_len: int = 6
    max_len: int = 12
    reorder_window: int = 3
    reorder_prob: float = 0.5
    block_size: int = 4
    seed: int = 0
    rule_seed: int = 0

    def validate(self) -> None:
        if self.task not in ("copy", "local_reorder", "block_reverse"):
            raise ValueError(f"unknown task {self.task!r}")
        if self.min_len < 1 or self.max_len < self.min_len:
            raise ValueError(f"bad length range [{self.min_len}, {self.max_len}]")
        if self.reorder_window < 0:
            raise ValueError("reorder_window must be >= 0")
        if self.task == "local_reorder" and self.reorder_window >= self.min_len:
            raise ValueError(f"reorder_window {self.reorder_window} must be below the minimum "
                             f"length {self.min_len}")
        if not 0.0 <= self.reorder_prob <= 1.0:
            raise ValueError("reorder_prob must lie in [0, 1]")
        if self.block_size < 1:
            raise ValueError("block_size must be >= 1")
        if self.vocab_size < 2:
            raise ValueError("vocab_size must be >= 2")


@dataclass
class SyntheticSample:
    source: np.ndarray
    target: np.ndarray
    alignment: list[tuple[int, int]]  # (source_pos, target_pos)

    @property
    def cross_count(self) -> int:
        return cross_count(self.alignment)

    @property
    def permutation(self) -> np.ndarray:
        perm = np.empty(len(self.alignment), dtype=np.int64)
        for s, t in self.alignment:
            perm[t] = s
        return perm

    def to_line(self) -> str:
        return "\t".join([" ".join(map(str, self.source)), " ".join(map(str, self.target)),
                          ",".join(f"{s}-{t}" for s, t in self.alignment)])

    @classmethod
    def from_line(cls, line: str) -> SyntheticSample:
        parts = line.rstrip("\n").split("\t")
        if len(parts) != 3:
            raise ValueError(f"corpus line needs 3 tab-separated fields: {line!r}")
        src = np.array(parts[0].split(), dtype=np.int64)
        tgt = np.array(parts[1].split(), dtype=np.int64)
        align = [tuple(int(v) for v in p.split("-")) for p in parts[2].split(",") if p]
        return cls(src, tgt, align)


def relabel_table(vocab_size: int, seed: int) -> np.ndarray:
    """Fixed bijection from source symbols onto the (separate) target alphabet."""
    return np.random.default_rng([seed, 7919]).permutation(vocab_size)


def delay_table(vocab_size: int, window: int, prob: float, seed: int) -> np.ndarray:
    """Per-symbol delays: a ``prob`` share of the alphabet is delayed by U(0, window].

    Tying the delay to the symbol makes the target order a function of the
    source, so the reordering is learnable rather than noise.
    """
    rng = np.random.default_rng([seed, 104729])
    n_delayed = int(round(prob * vocab_size))
    delay = np.zeros(vocab_size)
    chosen = rng.permutation(vocab_size)[:n_delayed]
    delay[chosen] = window - rng.uniform(0.0, window, size=n_delayed)  # in (0, window]
    return delay


def local_reorder_permutation(delays: np.ndarray) -> np.ndarray:
    """Target order from a stable sort of ``i + delay_i``.

    A token is overtaken only by later tokens with ``j + d_j < i + d_i``, so
    every displacement stays within the largest delay.
    """
    delays = np.asarray(delays, dtype=np.float64)
    return np.argsort(np.arange(delays.size) + delays, kind="stable")


def block_reverse_permutation(n: int, block: int) -> np.ndarray:
    perm = np.arange(n)
    for start in range(0, n, block):
        perm[start:start + block] = perm[start:start + block][::-1]
    return perm


def make_sample(spec: SyntheticTaskSpec, rng: np.random.Generator, relabel: np.ndarray,
                delays: np.ndarray | None = None) -> SyntheticSample:
    n = int(rng.integers(spec.min_len, spec.max_len + 1))
    src = rng.integers(0, spec.vocab_size, size=n)
    if spec.task == "copy":
        perm = np.arange(n)
    elif spec.task == "local_reorder":
        if delays is None:
            delays = delay_table(spec.vocab_size, spec.reorder_window, spec.reorder_prob, spec.rule_seed)
        perm = local_reorder_permutation(delays[src])
    else:
        perm = block_reverse_permutation(n, spec.block_size)
    tgt = relabel[src[perm]]
    return SyntheticSample(src, tgt, [(int(perm[j]), j) for j in range(n)])


def generate_samples(spec: SyntheticTaskSpec, n_samples: int) -> list[SyntheticSample]:
    """Deterministic in ``spec.seed``; sample ``i`` uses its own derived stream.

    The relabelling and the per-symbol delays depend only on ``rule_seed``, so
    train and test corpora drawn with different seeds describe the same task.
    """
    spec.validate()
    relabel = relabel_table(spec.vocab_size, spec.rule_seed)
    delays = delay_table(spec.vocab_size, spec.reorder_window, spec.reorder_prob, spec.rule_seed)
    return [make_sample(spec, np.random.default_rng([spec.seed, i]), relabel, delays)
            for i in range(n_samples)]


def generate_corpus(spec: SyntheticTaskSpec, n_samples: int, path: str | Path) -> list[SyntheticSample]:
    """Write the corpus file plus ``<path>.manifest.json``; returns the samples."""
    samples = generate_samples(spec, n_samples)
    path = Path(path)
    path.write_text("".join(s.to_line() + "\n" for s in samples))
    manifest = {"spec": asdict(spec), "n_samples": n_samples, "format": "src\\ttgt\\talign"}
    Path(str(path) + ".manifest.json").write_text(json.dumps(manifest, indent=2))
    return samples


def read_corpus(path: str | Path) -> list[SyntheticSample]:
    return [SyntheticSample.from_line(line) for line in Path(path).read_text().splitlines() if line.strip()]
