import json

import numpy as np
import pytest

from monoattn.metrics import cross_count, tercile_edges
from monoattn.synthesis import (
    SyntheticSample,
    SyntheticTaskSpec,
    delay_table,
    generate_corpus,
    generate_samples,
    local_reorder_permutation,
    read_corpus,
    relabel_table,
)


def test_copy_task_is_identity():
    for s in generate_samples(SyntheticTaskSpec(task="copy", seed=3), 100):
        relabel = relabel_table(16, 0)
        assert np.array_equal(s.target, relabel[s.source])
        assert s.cross_count == 0


@pytest.mark.parametrize("w", [1, 2, 3])
def test_local_reorder_displacement_bound(w):
    spec = SyntheticTaskSpec(task="local_reorder", reorder_window=w, reorder_prob=1.0, seed=1)
    for s in generate_samples(spec, 500):
        assert np.abs(s.permutation - np.arange(len(s.source))).max() <= w
        assert sorted(s.permutation.tolist()) == list(range(len(s.source)))


def test_displacement_bound_exhaustive_small():
    # every delay vector on a grid, window 2
    grid = np.linspace(0, 2, 5)
    for d in np.array(np.meshgrid(*[grid] * 5)).reshape(5, -1).T:
        perm = local_reorder_permutation(d)
        assert np.abs(perm - np.arange(5)).max() <= 2


def test_reordering_is_a_function_of_the_source():
    spec = SyntheticTaskSpec(task="local_reorder", seed=5)
    samples = generate_samples(spec, 300)
    seen = {}
    for s in samples:
        key = tuple(s.source)
        if key in seen:
            assert np.array_equal(seen[key], s.target)
        seen[key] = s.target
    delays = delay_table(16, 3, 0.5, 0)
    assert (delays > 0).sum() == 8 and delays.max() <= 3


def test_block_reverse_cross_counts():
    spec = SyntheticTaskSpec(task="block_reverse", block_size=4, min_len=8, max_len=8)
    for s in generate_samples(spec, 20):
        assert s.cross_count == 12  # two reversed blocks of 4
    one = SyntheticTaskSpec(task="block_reverse", block_size=4, min_len=4, max_len=4)
    assert generate_samples(one, 1)[0].cross_count == 6


def test_determinism_and_rule_sharing():
    spec = SyntheticTaskSpec(task="local_reorder", seed=9)
    a = generate_samples(spec, 50)
    b = generate_samples(spec, 50)
    assert all(x.to_line() == y.to_line() for x, y in zip(a, b))
    other = generate_samples(SyntheticTaskSpec(task="local_reorder", seed=10), 50)
    assert any(x.to_line() != y.to_line() for x, y in zip(a, other))


def test_validation():
    with pytest.raises(ValueError):
        generate_samples(SyntheticTaskSpec(task="local_reorder", reorder_window=6, min_len=6), 1)
    with pytest.raises(ValueError):
        generate_samples(SyntheticTaskSpec(task="shuffle"), 1)
    with pytest.raises(ValueError):
        generate_samples(SyntheticTaskSpec(min_len=0), 1)
    with pytest.raises(ValueError):
        generate_samples(SyntheticTaskSpec(reorder_prob=1.5), 1)


def test_corpus_round_trip(tmp_path):
    spec = SyntheticTaskSpec(task="local_reorder", seed=2)
    samples = generate_corpus(spec, 40, tmp_path / "c.txt")
    back = read_corpus(tmp_path / "c.txt")
    assert [s.to_line() for s in back] == [s.to_line() for s in samples]
    for s in back:
        assert s.cross_count == cross_count(s.alignment)
    manifest = json.loads((tmp_path / "c.txt.manifest.json").read_text())
    assert manifest["spec"]["seed"] == 2 and manifest["n_samples"] == 40
    assert SyntheticSample.from_line("3 1 4\t9 2 7\t1-0,0-1,2-2").cross_count == 1
    with pytest.raises(ValueError):
        SyntheticSample.from_line("1 2 3")


def test_cross_counts_span_terciles():
    counts = [s.cross_count for s in generate_samples(SyntheticTaskSpec(task="local_reorder"), 1000)]
    lo, hi = tercile_edges(counts)
    assert min(counts) <= lo < hi < max(counts)
