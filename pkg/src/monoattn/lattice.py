"""Transducer alignment lattice: forward/backward variables, total probability,
posterior alignment, and brute-force path enumeration oracles.

Indices are 0-based throughout: lattice time ``t`` runs over ``0..T-1`` and
predictor state ``u`` over ``0..U``. ``blank[t, u] = log p(eps | t, u)`` and
``emit[t, u] = log p(y_{u+1} | t, u)``. A path starts at (0, 0), moves right
on blank and up on emission, and ends with a blank from (T-1, U).

The DP functions accept arbitrary leading batch axes, so a bucket of
equal-length samples is processed with one sweep over anti-diagonals.
"""

from __future__ import annotations

import itertools
import math
from dataclasses import dataclass, field
from functools import lru_cache
from typing import Literal

import numpy as np

NEG_INF = -np.inf

AlignmentKind = Literal["posterior", "uniform_prior", "diagonal_prior", "full_support", "one_hot"]


class ZeroProbabilityError(ValueError):
    """The target sequence has probability zero under the lattice."""


@dataclass(frozen=True)
class ProbLattice:
    """Log-probabilities ``log_probs[t, u, v]`` with blank at index ``V``."""

    log_probs: np.ndarray
    targets: np.ndarray

    def __post_init__(self):
        lp = np.asarray(self.log_probs, dtype=np.float64)
        y = np.asarray(self.targets, dtype=np.int64)
        object.__setattr__(self, "log_probs", lp)
        object.__setattr__(self, "targets", y)
        if lp.ndim != 3:
            raise ValueError(f"log_probs must be (T, U+1, V+1), got {lp.shape}")
        if lp.shape[1] != y.shape[0] + 1:
            raise ValueError(f"lattice has {lp.shape[1]} predictor states for {y.shape[0]} targets")
        if y.size and (y.min() < 0 or y.max() >= lp.shape[2] - 1):
            raise ValueError("target ids must lie in [0, V) (V is blank)")
        if lp.shape[0] == 0:
            raise ValueError("lattice needs at least one time step")
        if np.isnan(lp).any():
            raise ValueError("lattice contains NaN")
        m = lp.max(axis=-1, keepdims=True)
        with np.errstate(invalid="ignore"):
            norm = (m[..., 0] + np.log(np.exp(lp - m).sum(axis=-1)))
        if not np.all(np.abs(norm) <= 1e-6):
            raise ValueError("every lattice cell must be a normalised distribution")

    @property
    def T(self) -> int:
        return self.log_probs.shape[0]

    @property
    def U(self) -> int:
        return self.log_probs.shape[1] - 1

    @property
    def blank_id(self) -> int:
        return self.log_probs.shape[2] - 1

    def blank(self) -> np.ndarray:
        return self.log_probs[:, :, -1]

    def emit(self) -> np.ndarray:
        return gather_emit(self.log_probs, self.targets)


@dataclass
class AlignmentMatrix:
    """Row-stochastic (U+1, T) matrix over predictor states x time steps."""

    probs: np.ndarray
    kind: AlignmentKind
    chunk_synced: bool = False
    chunk_frames: int | None = None
    meta: dict = field(default_factory=dict)

    @property
    def shape(self) -> tuple:
        return self.probs.shape


def gather_emit(log_probs: np.ndarray, targets: np.ndarray) -> np.ndarray:
    """``emit[..., t, u] = log_probs[..., t, u, targets[..., u]]`` for u < U."""
    U = targets.shape[-1]
    lp = log_probs[..., :U, :]
    idx = np.broadcast_to(targets[..., None, :, None], lp.shape[:-1] + (1,))
    return np.take_along_axis(lp, idx, axis=-1)[..., 0]


def _check(blank: np.ndarray, emit: np.ndarray) -> tuple[int, int]:
    T, U1 = blank.shape[-2:]
    U = U1 - 1
    if emit.shape[-2:] != (T, U):
        raise ValueError(f"emit shape {emit.shape} inconsistent with blank {blank.shape}")
    if T == 0:
        raise ValueError("lattice needs at least one time step")
    if np.isnan(blank).any() or np.isnan(emit).any():
        raise ValueError("lattice contains NaN")
    return T, U


def _pad_emit(emit: np.ndarray) -> np.ndarray:
    pad = np.full(emit.shape[:-1] + (1,), NEG_INF)
    return np.concatenate([emit, pad], axis=-1)


@lru_cache(maxsize=256)
def _diagonals(T: int, U: int) -> tuple:
    out = []
    for d in range(T + U):
        t = np.arange(max(0, d - U), min(T - 1, d) + 1)
        out.append((t, d - t))
    return tuple(out)


def forward_log_alpha(blank: np.ndarray, emit: np.ndarray) -> np.ndarray:
    """log alpha(t, u) = log p(y_{1:u} | x_{1:t}), alpha(0, 0) = 1."""
    T, U = _check(blank, emit)
    ep = _pad_emit(emit)
    alpha = np.full(blank.shape, NEG_INF)
    alpha[..., 0, 0] = 0.0
    with np.errstate(invalid="ignore"):
        for t, u in _diagonals(T, U)[1:]:
            left = np.where(t > 0, alpha[..., np.maximum(t - 1, 0), u]
                            + blank[..., np.maximum(t - 1, 0), u], NEG_INF)
            down = np.where(u > 0, alpha[..., t, np.maximum(u - 1, 0)]
                            + ep[..., t, np.maximum(u - 1, 0)], NEG_INF)
            alpha[..., t, u] = np.logaddexp(left, down)
    return alpha


def backward_log_beta(blank: np.ndarray, emit: np.ndarray) -> np.ndarray:
    """log beta(t, u) = log p(y_{u+1:U} | x_{t:T}), beta(T-1, U) = p(eps | T-1, U)."""
    T, U = _check(blank, emit)
    ep = _pad_emit(emit)
    beta = np.full(blank.shape, NEG_INF)
    beta[..., T - 1, U] = blank[..., T - 1, U]
    with np.errstate(invalid="ignore"):
        for t, u in reversed(_diagonals(T, U)[:-1]):
            tn = np.minimum(t + 1, T - 1)
            un = np.minimum(u + 1, U)
            right = np.where(t < T - 1, beta[..., tn, u] + blank[..., t, u], NEG_INF)
            up = np.where(u < U, beta[..., t, un] + ep[..., t, u], NEG_INF)
            beta[..., t, u] = np.logaddexp(right, up)
    return beta


def _total(alpha: np.ndarray, blank: np.ndarray) -> np.ndarray:
    return alpha[..., -1, -1] + blank[..., -1, -1]


def forward_vars(lattice: ProbLattice) -> np.ndarray:
    return forward_log_alpha(lattice.blank(), lattice.emit())


def backward_vars(lattice: ProbLattice) -> np.ndarray:
    return backward_log_beta(lattice.blank(), lattice.emit())


def total_log_prob(lattice: ProbLattice) -> float:
    """log p(y | x) = log alpha(T-1, U) + log p(eps | T-1, U); ``-inf`` if unreachable."""
    blank = lattice.blank()
    return float(_total(forward_log_alpha(blank, lattice.emit()), blank))


def posterior_from_vars(alpha: np.ndarray, beta: np.ndarray, emit: np.ndarray,
                        total: np.ndarray) -> np.ndarray:
    """Posterior emission probabilities, shape (..., U+1, T).

    Row u >= 1 holds p(y_u emitted at time t | x, y); row 0 puts all mass at t = 0.
    """
    T, U1 = alpha.shape[-2:]
    post = np.zeros(alpha.shape[:-2] + (U1, T))
    post[..., 0, 0] = 1.0
    if U1 > 1:
        log_occ = alpha[..., :, :-1] + emit + beta[..., :, 1:] - np.asarray(total)[..., None, None]
        post[..., 1:, :] = np.swapaxes(np.exp(log_occ), -1, -2)
    return post


def posterior_alignment(lattice: ProbLattice) -> AlignmentMatrix:
    blank, emit = lattice.blank(), lattice.emit()
    alpha = forward_log_alpha(blank, emit)
    total = _total(alpha, blank)
    if not np.isfinite(total):
        raise ZeroProbabilityError("posterior undefined: target has zero probability")
    beta = backward_log_beta(blank, emit)
    return AlignmentMatrix(posterior_from_vars(alpha, beta, emit, total), kind="posterior")


def edge_occupancy(blank: np.ndarray, emit: np.ndarray
                   ) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Posterior probability of every lattice edge being on the path.

    Returns ``(total_log_prob, blank_occ, emit_occ)``; these occupancies are the
    negated gradient of ``-log p(y|x)`` with respect to ``blank`` and ``emit``.
    Samples with zero total probability get all-zero occupancies.
    """
    alpha = forward_log_alpha(blank, emit)
    beta = backward_log_beta(blank, emit)
    total = _total(alpha, blank)
    safe_total = np.where(np.isfinite(total), total, 0.0)[..., None, None]
    nxt = np.full(blank.shape, NEG_INF)
    nxt[..., :-1, :] = beta[..., 1:, :]
    nxt[..., -1, -1] = 0.0
    with np.errstate(invalid="ignore"):
        blank_occ = np.exp(alpha + blank + nxt - safe_total)
        emit_occ = np.exp(alpha[..., :, :-1] + emit + beta[..., :, 1:] - safe_total)
    dead = ~np.isfinite(total)
    if np.any(dead):
        blank_occ[dead] = 0.0
        emit_occ[dead] = 0.0
    return total, np.nan_to_num(blank_occ), np.nan_to_num(emit_occ)


# -- brute-force oracles -------------------------------------------------------

MAX_BRUTE_T = 8
MAX_BRUTE_U = 7


def _guard(lattice: ProbLattice) -> None:
    if lattice.T > MAX_BRUTE_T or lattice.U > MAX_BRUTE_U:
        raise ValueError(f"brute force limited to T <= {MAX_BRUTE_T}, U <= {MAX_BRUTE_U}; "
                         f"got T={lattice.T}, U={lattice.U}")


def enumerate_paths(T: int, U: int):
    """Yield the emission time of each target token for every monotone path."""
    for emit_slots in itertools.combinations(range(T - 1 + U), U):
        times, t, k = [], 0, 0
        for step in range(T - 1 + U):
            if k < U and emit_slots[k] == step:
                times.append(t)
                k += 1
            else:
                t += 1
        yield tuple(times)


def _path_log_prob(blank: np.ndarray, emit: np.ndarray, times: tuple) -> float:
    T = blank.shape[0]
    lp, t = 0.0, 0
    for u, te in enumerate(times):
        while t < te:
            lp += blank[t, u]
            t += 1
        lp += emit[t, u]
    U = len(times)
    while t < T:
        lp += blank[t, U]
        t += 1
    return lp


def brute_force_total_prob(lattice: ProbLattice) -> float:
    """Sum of path probabilities by explicit enumeration (probability domain)."""
    _guard(lattice)
    blank, emit = lattice.blank(), lattice.emit()
    return math.fsum(math.exp(_path_log_prob(blank, emit, p))
                     for p in enumerate_paths(lattice.T, lattice.U))


def brute_force_posterior(lattice: ProbLattice) -> AlignmentMatrix:
    _guard(lattice)
    blank, emit = lattice.blank(), lattice.emit()
    T, U = lattice.T, lattice.U
    mass = np.zeros((U + 1, T))
    total = 0.0
    for times in enumerate_paths(T, U):
        p = math.exp(_path_log_prob(blank, emit, times))
        total += p
        for u, te in enumerate(times, start=1):
            mass[u, te] += p
    if total == 0.0:
        raise ZeroProbabilityError("posterior undefined: target has zero probability")
    mass /= total
    mass[0, :] = 0.0
    mass[0, 0] = 1.0
    return AlignmentMatrix(mass, kind="posterior")


def random_lattice(rng: np.random.Generator, T: int, U: int, V: int = 4,
                   scale: float = 2.0) -> ProbLattice:
    """Normalised lattice with random logits and random targets."""
    logits = rng.normal(0.0, scale, size=(T, U + 1, V + 1))
    logits -= logits.max(axis=-1, keepdims=True)
    log_probs = logits - np.log(np.exp(logits).sum(axis=-1, keepdims=True))
    return ProbLattice(log_probs, rng.integers(0, V, size=U))
