"""Corpus-level decoding and scoring with easy/medium/hard breakdowns."""

from __future__ import annotations

import csv
import json
from pathlib import Path

import numpy as np

from .decoding import DecodePolicyConfig, DecodeTrace, decode_record, stream_decode
from .metrics import (
    FIXED_THRESHOLDS,
    cross_count,
    difficulty_subsets,
    edit_distance_normalized,
    latency_report,
    length_ratio,
    tercile_edges,
    token_accuracy,
)
from .model import MonoAttnTransducer
from .synthesis import SyntheticSample

SUBSETS = ("easy", "medium", "hard")


def decode_corpus(model: MonoAttnTransducer, samples: list[SyntheticSample],
                  policy: DecodePolicyConfig) -> list[dict]:
    return [decode_record(i, s.source, stream_decode(s.source, model, policy), s.target)
            for i, s in enumerate(samples)]


def score_records(records: list[dict], samples: list[SyntheticSample] | None = None,
                  frame_ms: float | None = None) -> list[dict]:
    """One row per sample: quality, latency, and cross count."""
    rows = []
    for rec in records:
        ref = rec.get("reference")
        sample = samples[rec["id"]] if samples is not None else None
        if sample is not None:
            ref = [int(x) for x in sample.target]
        if ref is None:
            raise ValueError(f"record {rec['id']} has no reference")
        hyp = rec["hypothesis"]
        trace = DecodeTrace.from_dict(rec["trace"])
        T = len(rec["source"])
        compute = trace.compute_ms() or None
        lat = latency_report(trace.g, T, len(ref), frame_ms, compute)
        row = {"id": rec["id"], "src_len": T, "ref_len": len(ref), "hyp_len": len(hyp),
               "accuracy": token_accuracy(hyp, ref), "matches": token_accuracy(hyp, ref) * len(ref),
               "edit_distance": edit_distance_normalized(hyp, ref),
               "length_ratio": length_ratio(hyp, ref),
               "cross_count": cross_count(sample.alignment) if sample is not None else None,
               "length_capped": trace.length_capped}
        row.update(lat.to_dict())
        rows.append(row)
    return rows


def _mean(values) -> float | None:
    vals = [v for v in values if v is not None]
    return float(np.mean(vals)) if vals else None


def summarize(rows: list[dict]) -> dict:
    """Corpus summary: token-weighted accuracy, mean latencies, subset breakdowns."""
    def block(rs):
        n_ref = sum(r["ref_len"] for r in rs)
        return {"n": len(rs),
                "accuracy": sum(r["matches"] for r in rs) / n_ref if n_ref else None,
                "edit_distance": _mean(r["edit_distance"] for r in rs),
                "length_ratio": _mean(r["length_ratio"] for r in rs),
                **{k: _mean(r[k] for r in rs) for k in ("AL", "LAAL", "AP", "DAL", "AL_CA", "LAAL_CA")}}

    out = {"all": block(rows)}
    counts = [r["cross_count"] for r in rows]
    if rows and all(c is not None for c in counts):
        edges = tercile_edges(counts)
        for scheme, labels in (("tercile", difficulty_subsets(counts, edges)),
                               ("fixed", difficulty_subsets(counts, FIXED_THRESHOLDS))):
            out[scheme] = {name: block([r for r, lab in zip(rows, labels) if lab == name])
                           for name in SUBSETS}
        out["tercile_edges"] = list(edges)
    return out


def assign_subsets(rows: list[dict]) -> None:
    counts = [r["cross_count"] for r in rows]
    if rows and all(c is not None for c in counts):
        for r, lab, fixed in zip(rows, difficulty_subsets(counts),
                                 difficulty_subsets(counts, FIXED_THRESHOLDS)):
            r["subset"] = lab
            r["subset_fixed"] = fixed


def write_rows_csv(path: str | Path, rows: list[dict]) -> None:
    if not rows:
        Path(path).write_text("")
        return
    keys = list(rows[0])
    with open(path, "w", newline="") as fh:
        w = csv.DictWriter(fh, fieldnames=keys)
        w.writeheader()
        w.writerows(rows)


def write_summary(path: str | Path, summary: dict) -> None:
    Path(path).write_text(json.dumps(summary, indent=2))


def evaluate_model(model: MonoAttnTransducer, samples: list[SyntheticSample],
                   chunk_frames: int | None) -> dict:
    records = decode_corpus(model, samples, DecodePolicyConfig(chunk_frames=chunk_frames))
    return summarize(score_records(records, samples))
