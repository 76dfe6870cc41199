"""Latency metrics over emission delays, quality proxies, and cross counts.

Delays are ``g(u)``: the number of source tokens read when target token ``u``
was written (1-based ``u``). All latency functions work in source-token units;
pass ``frame_ms`` to report milliseconds.
"""

from __future__ import annotations

from dataclasses import asdict, dataclass
from typing import Sequence

import numpy as np


def _delays(g) -> np.ndarray:
    g = np.asarray(g, dtype=np.float64)
    if g.ndim != 1:
        raise ValueError("delays must be a 1-D sequence")
    return g


def average_lagging(g, source_length: int, reference_length: int) -> float | None:
    """AL = mean over u <= tau of g(u) - (u-1)/gamma, gamma = |ref| / T.

    ``tau`` is the first index whose delay reaches the full source (inclusive).
    Returns ``None`` for an empty hypothesis.
    """
    g = _delays(g)
    if g.size == 0:
        return None
    gamma = reference_length / source_length
    full = np.nonzero(g >= source_length)[0]
    tau = int(full[0]) + 1 if full.size else g.size
    u = np.arange(tau)
    return float(np.mean(g[:tau] - u / gamma))


def length_adaptive_average_lagging(g, source_length: int, reference_length: int,
                                    hypothesis_length: int | None = None) -> float | None:
    """AL with gamma = max(|ref|, |hyp|) / T."""
    g = _delays(g)
    hyp = g.size if hypothesis_length is None else hypothesis_length
    return average_lagging(g, source_length, max(reference_length, hyp))


def average_proportion(g, source_length: int) -> float | None:
    g = _delays(g)
    if g.size == 0:
        return None
    return float(g.sum() / (source_length * g.size))


def differentiable_average_lagging(g, source_length: int, reference_length: int) -> float | None:
    g = _delays(g)
    if g.size == 0:
        return None
    step = source_length / reference_length
    d = np.empty_like(g)
    d[0] = g[0]
    for i in range(1, g.size):
        d[i] = max(g[i], d[i - 1] + step)
    return float(np.mean(d - np.arange(g.size) * step))


laal = length_adaptive_average_lagging


@dataclass
class LatencyReport:
    AL: float | None
    LAAL: float | None
    AP: float | None
    DAL: float | None
    AL_CA: float | None = None
    LAAL_CA: float | None = None

    def to_dict(self) -> dict:
        return asdict(self)


def latency_report(g, source_length: int, reference_length: int, frame_ms: float | None = None,
                   compute_ms: Sequence[float] | None = None) -> LatencyReport:
    """All latency metrics for one trace.

    ``compute_ms[u]`` is the cumulative computation time spent before token u
    was written; computation-aware delays are ``g(u) + compute_ms[u] / frame_ms``
    in source-token units (``frame_ms`` defaults to 1 for that conversion).
    """
    g = _delays(g)
    scale = frame_ms or 1.0
    T, R = source_length, reference_length
    rep = LatencyReport(
        AL=average_lagging(g, T, R),
        LAAL=laal(g, T, R),
        AP=average_proportion(g, T),
        DAL=differentiable_average_lagging(g, T, R),
    )
    if compute_ms is not None and g.size:
        g_ca = g + np.asarray(compute_ms, dtype=np.float64) / scale
        rep.AL_CA = _ca_lagging(g_ca, T, R)
        rep.LAAL_CA = _ca_lagging(g_ca, T, max(R, g.size))
    if frame_ms:
        for name in ("AL", "LAAL", "DAL", "AL_CA", "LAAL_CA"):
            v = getattr(rep, name)
            if v is not None:
                setattr(rep, name, v * frame_ms)
    return rep


def _ca_lagging(g_ca: np.ndarray, T: int, R: int) -> float:
    # computation-aware delays may exceed T; the cutoff is taken on the ideal part
    gamma = R / T
    full = np.nonzero(g_ca >= T)[0]
    tau = int(full[0]) + 1 if full.size else g_ca.size
    return float(np.mean(g_ca[:tau] - np.arange(tau) / gamma))


# -- quality -------------------------------------------------------------------


def token_accuracy(hypothesis: Sequence[int], reference: Sequence[int]) -> float:
    """Position-wise matches over the common prefix length, divided by |reference|."""
    n = min(len(hypothesis), len(reference))
    if len(reference) == 0:
        return 1.0 if len(hypothesis) == 0 else 0.0
    hits = sum(int(h == r) for h, r in zip(hypothesis[:n], reference[:n]))
    return hits / len(reference)


def length_ratio(hypothesis: Sequence[int], reference: Sequence[int]) -> float:
    return len(hypothesis) / max(len(reference), 1)


def edit_distance(a: Sequence[int], b: Sequence[int]) -> int:
    prev = list(range(len(b) + 1))
    for i, x in enumerate(a, 1):
        cur = [i]
        for j, y in enumerate(b, 1):
            cur.append(min(prev[j] + 1, cur[j - 1] + 1, prev[j - 1] + (x != y)))
        prev = cur
    return prev[-1]


def edit_distance_normalized(hypothesis: Sequence[int], reference: Sequence[int]) -> float:
    """Levenshtein distance divided by the reference length."""
    if len(reference) == 0:
        return 0.0 if len(hypothesis) == 0 else 1.0
    return edit_distance(list(hypothesis), list(reference)) / len(reference)


# -- non-monotonicity ----------------------------------------------------------


def cross_count_bruteforce(alignment: Sequence[tuple[int, int]]) -> int:
    n = 0
    for a, (i, j) in enumerate(alignment):
        for k, l in alignment[a + 1:]:
            if (i < k and j > l) or (k < i and l > j):
                n += 1
    return n


def cross_count(alignment: Sequence[tuple[int, int]]) -> int:
    """Number of crossing alignment pairs: i < k with j > l (merge-sort inversion count)."""
    pairs = sorted(alignment)
    # ties on source position never cross; ordering ties by target keeps them non-inverted
    seq = [t for _, t in pairs]
    return _count_inversions(seq)[1]


def _count_inversions(seq: list[int]) -> tuple[list[int], int]:
    if len(seq) <= 1:
        return seq, 0
    mid = len(seq) // 2
    left, a = _count_inversions(seq[:mid])
    right, b = _count_inversions(seq[mid:])
    merged, inv, i, j = [], a + b, 0, 0
    while i < len(left) and j < len(right):
        if left[i] <= right[j]:
            merged.append(left[i])
            i += 1
        else:
            merged.append(right[j])
            inv += len(left) - i
            j += 1
    merged.extend(left[i:])
    merged.extend(right[j:])
    return merged, inv


FIXED_THRESHOLDS = (1, 6)  # easy <= 1 < medium <= 6 < hard


def tercile_edges(counts: Sequence[int]) -> tuple[float, float]:
    q = np.quantile(np.asarray(counts, dtype=float), [1 / 3, 2 / 3])
    return float(q[0]), float(q[1])


def difficulty_subsets(counts: Sequence[int], edges: tuple[float, float] | None = None) -> list[str]:
    """Label each sample easy/medium/hard by cross count.

    Default edges are the empirical terciles; pass ``FIXED_THRESHOLDS`` for the
    fixed split.
    """
    lo, hi = edges if edges is not None else tercile_edges(counts)
    return ["easy" if c <= lo else "medium" if c <= hi else "hard" for c in counts]
