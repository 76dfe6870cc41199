import numpy as np
import pytest

from monoattn.decoding import (
    DecodePolicyConfig,
    DecodeTrace,
    Read,
    Write,
    decode_record,
    offline_decode,
    read_decode_records,
    replay_trace,
    stream_decode,
    write_decode_records,
)
from monoattn.model import MonoAttnTransducer
from monoattn.verify import streaming_suite, tiny_model_config


def model_with_blank_bias(bias, **kw):
    model = MonoAttnTransducer(tiny_model_config(d_model=16, heads=4, d_ff=32, max_len=40, **kw))
    model.join_out.b.data[-1] += bias
    return model


def test_all_blank_model_reads_only():
    model = model_with_blank_bias(100.0, chunk_frames=4)
    res = stream_decode(np.arange(9) % 4, model, DecodePolicyConfig(chunk_frames=4))
    assert res.tokens == [] and res.trace.g == []
    assert all(isinstance(e, Read) for e in res.trace.events)
    assert [e.frames_total for e in res.trace.events] == [4, 8, 9]


def test_trace_bookkeeping_two_chunks():
    model = model_with_blank_bias(-1.0, chunk_frames=4, decision_step=4)
    res = stream_decode(np.arange(8) % 4, model, DecodePolicyConfig(chunk_frames=4))
    reads = [e for e in res.trace.events if isinstance(e, Read)]
    assert len(reads) == 2
    chunk1 = []
    for e in res.trace.events:
        if isinstance(e, Read) and e.chunk_index == 2:
            break
        if isinstance(e, Write):
            chunk1.append(e.g)
    assert all(g == 4 for g in chunk1)
    res.trace.validate(8)


def test_streaming_and_offline_agree_and_replay():
    res = streaming_suite(n=8)
    assert res.passed, res.failures


def test_offline_decode_reads_everything_first():
    model = model_with_blank_bias(-2.0)
    src = np.array([1, 2, 3, 0, 1, 2])
    res = offline_decode(src, model)
    assert res.trace.g and all(g == len(src) for g in res.trace.g)
    assert sum(isinstance(e, Read) for e in res.trace.events) == 1


def test_write_cap_and_length_cap():
    # blank never wins: every decision point hits the WRITE cap except the last
    model = model_with_blank_bias(-100.0, chunk_frames=2)
    src = np.arange(6) % 4
    res = stream_decode(src, model, DecodePolicyConfig(chunk_frames=2, max_writes_per_step=3,
                                                       max_output_len=25))
    assert res.trace.write_capped == 5
    assert res.trace.length_capped and len(res.tokens) == 25
    g = res.trace.g
    assert g == sorted(g) and max(g) <= len(src)


def test_lookahead_reads_one_chunk_ahead():
    model = model_with_blank_bias(3.0, chunk_frames=2, lookahead_chunks=1)
    res = stream_decode(np.arange(7) % 4, model, DecodePolicyConfig(chunk_frames=2))
    reads = [e.frames_total for e in res.trace.events if isinstance(e, Read)]
    assert reads == [4, 6, 7]
    res.trace.validate(7)


def test_trace_validation_errors():
    with pytest.raises(ValueError):
        DecodeTrace([Write(1, 0, 1)]).validate(3)
    with pytest.raises(ValueError):
        DecodeTrace([Read(1, 2, 2), Write(1, 3, 2)]).validate(3)
    with pytest.raises(ValueError):
        DecodeTrace([Read(1, 4, 4)]).validate(3)
    with pytest.raises(ValueError):
        DecodePolicyConfig(max_writes_per_step=0)
    with pytest.raises(ValueError):
        stream_decode([], model_with_blank_bias(0.0))


def test_decode_is_deterministic_and_replayable():
    model = model_with_blank_bias(-1.0, chunk_frames=2)
    src = np.array([3, 1, 0, 2, 2, 1, 0])
    a = stream_decode(src, model, DecodePolicyConfig(chunk_frames=2))
    b = stream_decode(src, model, DecodePolicyConfig(chunk_frames=2))
    assert a.tokens == b.tokens and a.trace.to_dict() == b.trace.to_dict()
    assert np.abs(replay_trace(model, src, a.trace, 2) - a.states).max() < 1e-10


def test_records_round_trip(tmp_path):
    model = model_with_blank_bias(-1.0)
    src = np.array([0, 1, 2, 3])
    res = stream_decode(src, model, DecodePolicyConfig(chunk_frames=2, record_time=True))
    recs = [decode_record(0, src, res, [1, 2])]
    write_decode_records(tmp_path / "d.jsonl", recs)
    back = read_decode_records(tmp_path / "d.jsonl")
    assert back == recs
    trace = DecodeTrace.from_dict(back[0]["trace"])
    assert trace.to_dict() == res.trace.to_dict()
    assert len(trace.compute_ms()) == len(res.tokens)
