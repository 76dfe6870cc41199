"""Alignment priors, chunk synchronisation, and expected monotonic context.

Alignment matrices are (U+1, T) arrays (optionally with leading batch axes):
row ``u`` is the distribution over the time step after which predictor state
``s_u`` is formed, i.e. how much source ``s_u`` may attend to. Expected context
for row ``u`` averages truncated softmax attention over those prefixes.
"""

from __future__ import annotations

import numpy as np

from . import autograd as ag
from .autograd import Tensor
from .lattice import AlignmentMatrix

_DENOM_FLOOR = 1e-300


def _first_row(T: int) -> np.ndarray:
    row = np.zeros(T)
    row[0] = 1.0
    return row


def uniform_prior(T: int, U: int) -> AlignmentMatrix:
    """Every token equally likely at every step; state 0 fixed at the first step."""
    if T < 1 or U < 0:
        raise ValueError(f"invalid shape T={T}, U={U}")
    probs = np.full((U + 1, T), 1.0 / T)
    probs[0] = _first_row(T)
    return AlignmentMatrix(probs, kind="uniform_prior")


def diagonal_prior(T: int, U: int) -> AlignmentMatrix:
    """Prior peaked on the diagonal t*U/T = u, decaying as exp(-|u - t*U/T|)."""
    if T < 1 or U < 0:
        raise ValueError(f"invalid shape T={T}, U={U}")
    u = np.arange(1, U + 1)[:, None]
    t = np.arange(1, T + 1)[None, :]
    w = np.exp(-np.abs(u - t * U / T))
    probs = np.empty((U + 1, T))
    probs[0] = _first_row(T)
    probs[1:] = w / w.sum(axis=1, keepdims=True)
    return AlignmentMatrix(probs, kind="diagonal_prior")


def full_support(T: int, U: int) -> AlignmentMatrix:
    """All mass on the last step: plain full-source attention for every state."""
    probs = np.zeros((U + 1, T))
    probs[:, -1] = 1.0
    return AlignmentMatrix(probs, kind="full_support")


def chunk_final_index(T: int, chunk: int) -> np.ndarray:
    """Index of the last step of the chunk containing each step (0-based).

    A trailing partial chunk ends at ``T - 1``.
    """
    t = np.arange(T)
    return np.minimum((t // chunk + 1) * chunk, T) - 1


def chunk_sync_probs(probs: np.ndarray, chunk: int) -> np.ndarray:
    """Move each chunk's mass onto its final step (array version, batch-aware)."""
    if chunk < 1:
        raise ValueError(f"chunk size must be >= 1, got {chunk}")
    T = probs.shape[-1]
    dest = chunk_final_index(T, chunk)
    out = np.zeros_like(probs)
    flat_in = probs.reshape(-1, T)
    flat_out = out.reshape(-1, T)
    for t in range(T):
        flat_out[:, dest[t]] += flat_in[:, t]
    return out


def chunk_synchronize(align: AlignmentMatrix, chunk_frames: int) -> AlignmentMatrix:
    if align.chunk_synced:
        raise ValueError("alignment is already chunk-synchronised")
    return AlignmentMatrix(chunk_sync_probs(align.probs, chunk_frames), kind=align.kind,
                           chunk_synced=True, chunk_frames=chunk_frames, meta=dict(align.meta))


def pooled_to_frames(probs: np.ndarray, decision_step: int, n_frames: int) -> np.ndarray:
    """Re-index an alignment over decision points onto encoder frames.

    Decision point ``i`` (0-based) sits on frame ``min((i+1)*step, T) - 1``.
    """
    n_points = probs.shape[-1]
    dest = np.minimum((np.arange(n_points) + 1) * decision_step, n_frames) - 1
    out = np.zeros(probs.shape[:-1] + (n_frames,))
    for i in range(n_points):
        out[..., dest[i]] += probs[..., i]
    return out


def one_hot_alignment(frames: np.ndarray | list[int], n_frames: int) -> np.ndarray:
    """Row ``u`` puts all mass on step ``frames[u] - 1`` (``frames`` are counts, 1-based)."""
    frames = np.asarray(frames, dtype=np.int64)
    if frames.size and (frames.min() < 1 or frames.max() > n_frames):
        raise ValueError("visible frame counts must lie in [1, T]")
    out = np.zeros((len(frames), n_frames))
    out[np.arange(len(frames)), frames - 1] = 1.0
    return out


# -- expected context ----------------------------------------------------------


def expected_context_nested(energies: np.ndarray, align: np.ndarray, H: np.ndarray) -> np.ndarray:
    """Reference double sum: sum_t pi[u,t] * softmax(e[u, :t+1]) @ H[:t+1].

    ``energies``: (..., U+1, T); ``align``: broadcastable to energies;
    ``H``: (..., T, d). Returns (..., U+1, d).
    """
    energies = np.asarray(energies, dtype=np.float64)
    align = np.broadcast_to(np.asarray(align, dtype=np.float64), energies.shape)
    T = energies.shape[-1]
    out = np.zeros(energies.shape[:-1] + (H.shape[-1],))
    for t in range(T):
        e = energies[..., : t + 1]
        w = np.exp(e - e.max(axis=-1, keepdims=True))
        w /= w.sum(axis=-1, keepdims=True)
        out += align[..., t, None] * (w @ H[..., : t + 1, :])
    return out


def monotonic_weights(energies: Tensor, align: np.ndarray) -> Tensor:
    """Effective attention weights phi from energies and a fixed alignment.

    phi[u, t] = exp(e[u, t]) * sum_{t' >= t} pi[u, t'] / sum_{t'' <= t'} exp(e[u, t'']),
    computed with one forward and one reverse cumulative sum. ``align`` is a
    constant: no gradient flows into it.
    """
    align = np.asarray(align, dtype=np.float64)
    shift = energies.data.max(axis=-1, keepdims=True)
    ex = ag.exp(energies - shift)
    denom = ag.maximum(ag.cumsum(ex, axis=-1), _DENOM_FLOOR)
    tail = ag.reverse_cumsum(align / denom, axis=-1)
    return ex * tail


def expected_context_efficient(energies: Tensor, align: np.ndarray, H: Tensor) -> Tensor:
    """Expected context c_u = sum_t phi[u, t] H[t]; differentiable in energies and H."""
    energies, H = ag.as_tensor(energies), ag.as_tensor(H)
    return monotonic_weights(energies, align) @ H
