import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from monoattn.autograd import Tensor
from monoattn.lattice import posterior_alignment, random_lattice
from monoattn.monotonic import (
    chunk_final_index,
    chunk_sync_probs,
    chunk_synchronize,
    diagonal_prior,
    expected_context_efficient,
    expected_context_nested,
    full_support,
    monotonic_weights,
    one_hot_alignment,
    pooled_to_frames,
    uniform_prior,
)
from monoattn.verify import _random_rows, chunk_sync_suite


def efficient(e, a, H):
    return expected_context_efficient(Tensor(e), a, Tensor(H)).data


def test_uniform_prior_values():
    p = uniform_prior(4, 3).probs
    assert p[0].tolist() == [1, 0, 0, 0]
    assert np.all(p[1:] == 0.25)
    assert uniform_prior(1, 2).probs.tolist() == [[1.0], [1.0], [1.0]]


def test_diagonal_prior_values():
    p = diagonal_prior(2, 2).probs
    assert p[1] == pytest.approx([0.7311, 0.2689], abs=1e-4)
    assert p[0].tolist() == [1.0, 0.0]
    sq = diagonal_prior(6, 6).probs
    for u in range(1, 7):
        assert sq[u].argmax() == u - 1


def test_diagonal_prior_rows_sum_to_one():
    rng = np.random.default_rng(0)
    for _ in range(200):
        T, U = int(rng.integers(1, 40)), int(rng.integers(1, 30))
        assert np.abs(diagonal_prior(T, U).probs.sum(axis=1) - 1).max() < 1e-12


def test_chunk_sync_examples():
    row = np.array([[0.1, 0.2, 0.3, 0.4]])
    assert chunk_sync_probs(row, 2) == pytest.approx(np.array([[0, 0.3, 0, 0.7]]))
    assert np.array_equal(chunk_sync_probs(row, 1), row)
    assert chunk_sync_probs(row, 9) == pytest.approx(np.array([[0, 0, 0, 1.0]]))
    # partial trailing chunk lands on the last frame
    assert chunk_final_index(5, 2).tolist() == [1, 1, 3, 3, 4]


def test_chunk_synchronize_contract():
    align = uniform_prior(5, 2)
    synced = chunk_synchronize(align, 2)
    assert synced.chunk_synced and synced.chunk_frames == 2
    # row 0 moves to the end of the first chunk
    assert synced.probs[0].tolist() == [0, 1, 0, 0, 0]
    with pytest.raises(ValueError):
        chunk_synchronize(synced, 2)
    with pytest.raises(ValueError):
        chunk_sync_probs(align.probs, 0)


def test_chunk_sync_conservation_suite():
    res = chunk_sync_suite()
    assert res.passed, res.failures


def test_nested_examples():
    rng = np.random.default_rng(1)
    H = rng.normal(size=(1, 3))
    e = rng.normal(size=(4, 1))
    c = expected_context_nested(e, np.ones((4, 1)), H)
    assert np.allclose(c, H[0]) and np.allclose(efficient(e, np.ones((4, 1)), H), H[0])
    # one-hot row -> plain truncated attention
    T = 6
    H = rng.normal(size=(T, 5))
    e = rng.normal(size=(3, T))
    a = one_hot_alignment([2, 4, 6], T)
    ref = np.stack([np.exp(e[u, :k]) / np.exp(e[u, :k]).sum() @ H[:k] for u, k in enumerate([2, 4, 6])])
    assert np.abs(expected_context_nested(e, a, H) - ref).max() < 1e-12
    assert np.abs(efficient(e, a, H) - ref).max() < 1e-12


@settings(max_examples=50, deadline=None)
@given(T=st.integers(1, 32), U=st.integers(0, 16), seed=st.integers(0, 2**31),
       scale=st.floats(0.01, 50.0))
def test_nested_equals_efficient(T, U, seed, scale):
    rng = np.random.default_rng(seed)
    e = rng.uniform(-scale, scale, size=(4, U + 1, T))
    a = _random_rows(rng, (4, U + 1, T))
    H = rng.normal(size=(4, T, 3))
    assert np.abs(expected_context_nested(e, a, H) - efficient(e, a, H)).max() < 1e-10


def test_weights_properties():
    rng = np.random.default_rng(5)
    for _ in range(50):
        T, U = int(rng.integers(1, 20)), int(rng.integers(0, 8))
        e = rng.uniform(-50, 50, size=(U + 1, T))
        a = _random_rows(rng, (U + 1, T))
        phi = monotonic_weights(Tensor(e), a).data
        assert np.all(np.isfinite(phi))
        assert np.abs(phi.sum(axis=1) - 1).max() < 1e-6
        # monotone support: nothing beyond the last step with alignment mass
        for u in range(U + 1):
            last = np.nonzero(a[u] > 0)[0].max()
            assert np.all(phi[u, last + 1:] == 0)
        # convexity of the context
        H = rng.normal(size=(T, 4))
        c = phi @ H
        assert np.all(c <= H.max(axis=0) + 1e-9) and np.all(c >= H.min(axis=0) - 1e-9)


def test_alignment_carries_no_gradient():
    e = Tensor(np.random.default_rng(0).normal(size=(2, 3)), requires_grad=True)
    a = np.full((2, 3), 1 / 3)
    out = monotonic_weights(e, a)
    assert out.requires_grad
    # alignment is a plain array, never a graph node
    assert all(p is not a for p in out._parents)


def test_posterior_rows_feed_context():
    lat = random_lattice(np.random.default_rng(2), 5, 3)
    post = posterior_alignment(lat).probs
    rng = np.random.default_rng(3)
    e, H = rng.normal(size=(4, 5)), rng.normal(size=(5, 2))
    assert np.abs(expected_context_nested(e, post, H) - efficient(e, post, H)).max() < 1e-12


def test_full_support_and_frame_mapping():
    fs = full_support(4, 2).probs
    assert np.all(fs[:, -1] == 1)
    pts = np.array([[0.5, 0.25, 0.25]])
    assert pooled_to_frames(pts, 4, 10).tolist() == [[0, 0, 0, 0.5, 0, 0, 0, 0.25, 0, 0.25]]
    with pytest.raises(ValueError):
        one_hot_alignment([0], 3)
