import numpy as np
import pytest

from oracles import jacobi_spectral_norm
from tangent_rugosity.errors import ConvergenceError, DimensionError, RankError
from tangent_rugosity.linalg import (
    batched_spectral_norms,
    frobenius_norm,
    make_rng,
    orthonormalize,
    sample_unit_sphere,
    spectral_norm,
)


def test_frobenius_examples():
    assert frobenius_norm(np.eye(2)) == pytest.approx(np.sqrt(2.0), abs=1e-15)
    assert frobenius_norm(np.zeros((3, 3))) == 0.0
    assert frobenius_norm([[3.0, 4.0], [0.0, 0.0]]) == 5.0


def test_frobenius_rejects_empty():
    with pytest.raises(DimensionError):
        frobenius_norm(np.zeros((0, 3)))


def test_spectral_norm_closed_forms():
    assert spectral_norm(np.diag([3.0, 1.0])) == pytest.approx(3.0, rel=1e-10)
    u = np.array([2.0, 0.0, 0.0])
    v = np.array([0.0, 3.0 / np.sqrt(2), 3.0 / np.sqrt(2)])
    assert spectral_norm(np.outer(u, v)) == pytest.approx(6.0, rel=1e-10)
    assert spectral_norm(np.zeros((3, 3))) == 0.0


def test_spectral_norm_vectors_equal_euclidean():
    x = np.array([[1.0, -2.0, 2.0]])
    assert spectral_norm(x) == 3.0
    assert spectral_norm(x.T) == 3.0


@pytest.mark.parametrize("seed", range(5))
def test_spectral_norm_matches_jacobi_oracle(seed):
    M = make_rng(seed).standard_normal((5, 5))
    assert spectral_norm(M) == pytest.approx(jacobi_spectral_norm(M), rel=1e-8)


def test_spectral_norm_rectangular_both_orientations():
    M = make_rng(11).standard_normal((3, 7))
    ref = jacobi_spectral_norm(M)
    assert spectral_norm(M) == pytest.approx(ref, rel=1e-8)
    assert spectral_norm(M.T) == pytest.approx(ref, rel=1e-8)


def test_near_tied_singular_values_converge():
    rng = make_rng(4)
    U, _ = np.linalg.qr(rng.standard_normal((6, 6)))
    V, _ = np.linalg.qr(rng.standard_normal((6, 6)))
    s = np.array([1.0, 1.0 - 1e-6, 0.5, 0.2, 0.1, 0.0])
    M = (U * s) @ V.T
    assert spectral_norm(M) == pytest.approx(1.0, rel=1e-6)


def test_nonconvergence_carries_last_iterate():
    M = make_rng(1).standard_normal((4, 4))
    with pytest.raises(ConvergenceError) as info:
        spectral_norm(M, tol=1e-300, max_iter=3)
    assert info.value.last_iterate is not None


def test_batched_matches_single():
    Ms = make_rng(2).standard_normal((6, 3, 4))
    batch = batched_spectral_norms(Ms)
    for M, s in zip(Ms, batch):
        assert s == pytest.approx(jacobi_spectral_norm(M), rel=1e-8)


def test_sphere_dim_one_is_sign():
    for seed in range(10):
        (v,) = sample_unit_sphere(1, make_rng(seed))
        assert v in (-1.0, 1.0)


def test_sphere_norm_and_mean():
    draws = sample_unit_sphere(3, make_rng(7), size=100_000)
    assert np.max(np.abs(np.linalg.norm(draws, axis=1) - 1.0)) <= 1e-12
    assert np.all(np.abs(draws.mean(axis=0)) < 0.02)


def test_sphere_rejects_zero_dim():
    with pytest.raises(DimensionError):
        sample_unit_sphere(0, make_rng(0))


def test_orthonormalize_examples():
    assert np.array_equal(orthonormalize(np.eye(3)), np.eye(3))
    Q = orthonormalize(np.array([[1.0, 1.0], [0.0, 1.0]]))
    assert np.allclose(np.abs(Q), np.eye(2), atol=1e-15)


def test_orthonormalize_random_columns():
    X = make_rng(3).standard_normal((6, 3))
    Q = orthonormalize(X)
    assert np.max(np.abs(Q.T @ Q - np.eye(3))) <= 1e-10
    # same span: projecting X onto span(Q) leaves it unchanged
    assert np.allclose(Q @ (Q.T @ X), X, atol=1e-12)


def test_orthonormalize_reports_dependent_column():
    X = np.array([[1.0, 2.0, 0.0], [0.0, 0.0, 1.0], [0.0, 0.0, 0.0]])
    with pytest.raises(RankError) as info:
        orthonormalize(X)
    assert info.value.column == 1


def test_rng_streams_reproducible():
    a = make_rng(5, 2).standard_normal(4)
    b = make_rng(5, 2).standard_normal(4)
    c = make_rng(5, 3).standard_normal(4)
    assert np.array_equal(a, b)
    assert not np.array_equal(a, c)
