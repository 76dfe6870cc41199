import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from monoattn.lattice import (
    AlignmentMatrix,
    ProbLattice,
    ZeroProbabilityError,
    backward_vars,
    brute_force_posterior,
    brute_force_total_prob,
    enumerate_paths,
    forward_vars,
    posterior_alignment,
    random_lattice,
    total_log_prob,
)


def two_by_one():
    """T'=2, U=1 lattice with hand-picked cell distributions over {y1=0, other=1, blank=2}."""
    cells = np.array([
        [[0.5, 0.2, 0.3], [0.1, 0.3, 0.6]],   # t=1: u=0, u=1
        [[0.4, 0.1, 0.5], [0.2, 0.1, 0.7]],   # t=2
    ])
    return ProbLattice(np.log(cells), np.array([0])), cells


def test_single_cell_initial_conditions():
    lat = ProbLattice(np.log(np.array([[[0.3, 0.7]]])), np.array([], dtype=np.int64))
    assert np.array_equal(forward_vars(lat), [[0.0]])
    assert backward_vars(lat)[0, 0] == pytest.approx(math.log(0.7), abs=1e-15)
    assert total_log_prob(lat) == pytest.approx(math.log(0.7), abs=1e-15)
    assert brute_force_total_prob(lat) == pytest.approx(0.7, abs=1e-15)


def test_two_path_closed_form():
    lat, p = two_by_one()
    alpha = np.exp(forward_vars(lat))
    # alpha(2,1) = alpha(1,1) p(eps|1,1) + alpha(2,0) p(y1|2,0)
    a11 = p[0, 0, 0]
    a20 = p[0, 0, 2]
    assert alpha[1, 1] == pytest.approx(a11 * p[0, 1, 2] + a20 * p[1, 0, 0], rel=1e-14)
    path_a = p[0, 0, 0] * p[0, 1, 2] * p[1, 1, 2]
    path_b = p[0, 0, 2] * p[1, 0, 0] * p[1, 1, 2]
    Z = path_a + path_b
    assert math.exp(total_log_prob(lat)) == pytest.approx(Z, rel=1e-14)
    assert brute_force_total_prob(lat) == pytest.approx(Z, rel=1e-14)
    post = posterior_alignment(lat).probs
    assert post[0].tolist() == [1.0, 0.0]
    assert post[1, 0] == pytest.approx(path_a / Z, abs=1e-14)
    assert post[1, 1] == pytest.approx(path_b / Z, abs=1e-14)
    assert post.sum(axis=1) == pytest.approx([1.0, 1.0])


def test_seeded_lattices_match_oracle():
    rng = np.random.default_rng(42)
    for T, U in [(4, 3), (5, 4), (6, 5)]:
        lat = random_lattice(rng, T, U)
        alpha, beta = forward_vars(lat), backward_vars(lat)
        ref = brute_force_total_prob(lat)
        assert math.exp(alpha[-1, -1] + lat.blank()[-1, -1]) == pytest.approx(ref, rel=1e-12)
        assert math.exp(beta[0, 0]) == pytest.approx(ref, rel=1e-12)
        assert np.abs(posterior_alignment(lat).probs - brute_force_posterior(lat).probs).max() < 1e-10


def test_forward_backward_duality_and_log_bounds():
    rng = np.random.default_rng(7)
    for _ in range(30):
        lat = random_lattice(rng, int(rng.integers(1, 8)), int(rng.integers(0, 6)))
        alpha, beta = forward_vars(lat), backward_vars(lat)
        lhs = alpha[-1, -1] + lat.blank()[-1, -1]
        assert lhs == pytest.approx(beta[0, 0], rel=1e-10)
        assert alpha.max() <= 1e-12 and beta.max() <= 1e-12
        assert forward_vars(lat)[0, 0] == 0.0
        assert beta[-1, -1] == pytest.approx(lat.blank()[-1, -1])


def test_degenerate_single_path_posterior_is_indicator():
    # T'=3, U=2; force the path: emit y1 at t=1, blank, emit y2 at t=2, blank, blank
    T, U, V = 3, 2, 3
    lp = np.full((T, U + 1, V + 1), -np.inf)
    lp[..., V] = 0.0
    tgt = np.array([1, 2])
    lp[0, 0, :] = -np.inf
    lp[0, 0, 1] = 0.0
    lp[1, 1, :] = -np.inf
    lp[1, 1, 2] = 0.0
    lat = ProbLattice(lp, tgt)
    assert total_log_prob(lat) == 0.0
    post = posterior_alignment(lat).probs
    assert np.array_equal(post, np.array([[1, 0, 0], [1, 0, 0], [0, 1, 0]], dtype=float))


def test_zero_probability_and_validation_errors():
    with np.errstate(divide="ignore"):
        lat = ProbLattice(np.log(np.array([[[1.0, 0.0]]])), np.array([], dtype=np.int64))
    assert total_log_prob(lat) == -np.inf
    with pytest.raises(ZeroProbabilityError):
        posterior_alignment(lat)
    with pytest.raises(ValueError):
        ProbLattice(np.full((1, 1, 2), np.nan), np.array([], dtype=np.int64))
    with pytest.raises(ValueError):
        ProbLattice(np.zeros((0, 2, 3)), np.array([0]))
    with pytest.raises(ValueError):
        brute_force_total_prob(random_lattice(np.random.default_rng(0), 9, 2))


def test_unnormalised_cells_rejected():
    with pytest.raises(ValueError):
        ProbLattice(np.zeros((2, 1, 3)), np.array([], dtype=np.int64))


def test_path_enumeration_count():
    for T, U in [(1, 0), (2, 1), (3, 2), (4, 3)]:
        assert len(list(enumerate_paths(T, U))) == math.comb(T - 1 + U, U)


def test_alignment_matrix_row_zero_and_kind():
    lat = random_lattice(np.random.default_rng(3), 4, 2)
    align = posterior_alignment(lat)
    assert isinstance(align, AlignmentMatrix)
    assert align.kind == "posterior" and not align.chunk_synced
    assert align.probs[0].tolist() == [1.0, 0.0, 0.0, 0.0]


@settings(max_examples=60, deadline=None)
@given(T=st.integers(1, 6), U=st.integers(0, 5), seed=st.integers(0, 2**32 - 1),
       scale=st.floats(0.1, 6.0))
def test_oracle_equivalence_property(T, U, seed, scale):
    lat = random_lattice(np.random.default_rng(seed), T, U, scale=scale)
    ref = brute_force_total_prob(lat)
    assert abs(math.exp(total_log_prob(lat)) - ref) <= 1e-12 * ref
    post = posterior_alignment(lat).probs
    assert np.abs(post.sum(axis=1) - 1).max() < 1e-6
    assert np.abs(post - brute_force_posterior(lat).probs).max() < 1e-10
