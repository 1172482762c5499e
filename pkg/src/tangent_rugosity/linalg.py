"""Dense linear algebra helpers and seeded randomness.

Matrices and vectors are plain float64 numpy arrays. Every random stream comes
from numpy's PCG64 bit generator keyed by a ``SeedSequence`` built from integer
keys, so ``make_rng(seed, i)`` gives the same stream on every platform.
"""

import numpy as np

from .errors import ConvergenceError, DimensionError, RankError

DEFAULT_TOL = 1e-10
DEFAULT_MAX_ITER = 1000
SQUARE_EVERY = 20


def make_rng(*keys):
    """PCG64 generator keyed by one or more non-negative integers."""
    entropy = [int(k) for k in keys] or [0]
    return np.random.Generator(np.random.PCG64(np.random.SeedSequence(entropy)))


def as_matrix(M):
    M = np.asarray(M, dtype=np.float64)
    if M.ndim == 1:
        M = M[None, :]
    if M.ndim != 2 or M.size == 0:
        raise DimensionError(f"expected a nonempty matrix, got shape {M.shape}")
    return M


def frobenius_norm(M):
    M = as_matrix(M)
    return float(np.sqrt(np.sum(M * M)))


def batched_top_singular_pairs(Ms, tol=DEFAULT_TOL, max_iter=DEFAULT_MAX_ITER, rng=None):
    """Largest singular value and singular vectors of each matrix in a stack.

    Power iteration on the smaller Gram matrix (``M Mᵀ`` or ``Mᵀ M``) with a
    random start; each matrix stops once the relative change of its Rayleigh
    quotient drops below ``tol``.  Zero matrices return ``sigma = 0`` and zero
    vectors.

    Returns ``(sigma, U, V)`` with shapes ``(B,)``, ``(B, rows)``, ``(B, cols)``.
    """
    Ms = np.asarray(Ms, dtype=np.float64)
    if Ms.ndim != 3 or Ms.shape[1] == 0 or Ms.shape[2] == 0:
        raise DimensionError(f"expected a (B, rows, cols) stack, got shape {Ms.shape}")
    if tol <= 0 or max_iter < 1:
        raise ValueError("tol must be > 0 and max_iter >= 1")
    B, rows, cols = Ms.shape
    sigma = np.zeros(B)
    U = np.zeros((B, rows))
    V = np.zeros((B, cols))
    if B == 0:
        return sigma, U, V

    # vectors: closed form
    if rows == 1 or cols == 1:
        flat = Ms.reshape(B, -1)
        sigma = np.sqrt(np.sum(flat * flat, axis=1))
        nz = sigma > 0
        if rows == 1:
            U[nz] = 1.0
            V[nz] = Ms[nz, 0, :] / sigma[nz, None]
        else:
            V[nz] = 1.0
            U[nz] = Ms[nz, :, 0] / sigma[nz, None]
        return sigma, U, V

    left = rows <= cols
    G = Ms @ np.swapaxes(Ms, 1, 2) if left else np.swapaxes(Ms, 1, 2) @ Ms
    k = G.shape[1]
    if rng is None:
        rng = make_rng(0)
    w = rng.standard_normal((B, k))
    w /= np.linalg.norm(w, axis=1, keepdims=True)
    lam = np.zeros(B)
    active = np.ones(B, dtype=bool)
    # P is G raised to a power of two; squaring it every SQUARE_EVERY steps keeps
    # near-tied top singular values from stalling the iteration.
    P = G.copy()
    for it in range(1, max_iter + 1):
        idx = np.flatnonzero(active)
        Pw = np.einsum("bij,bj->bi", P[idx], w[idx])
        nrm = np.linalg.norm(Pw, axis=1)
        zero = nrm == 0
        new_lam = np.einsum("bi,bij,bj->b", w[idx], G[idx], w[idx])
        nxt = np.where(zero[:, None], w[idx], Pw / np.where(zero, 1.0, nrm)[:, None])
        done = zero | (np.abs(new_lam - lam[idx]) <= tol * np.abs(new_lam))
        lam[idx] = np.where(zero, 0.0, new_lam)
        w[idx] = nxt
        active[idx[done]] = False
        if not active.any():
            break
        if it % SQUARE_EVERY == 0:
            P = P @ P
            scale = np.trace(P, axis1=1, axis2=2)
            P /= np.where(scale > 0, scale, 1.0)[:, None, None]
    else:
        raise ConvergenceError(
            f"power iteration did not converge in {max_iter} iterations",
            last_iterate=np.sqrt(np.maximum(lam, 0.0)),
        )

    sigma = np.sqrt(np.maximum(lam, 0.0))
    nz = sigma > 0
    if left:
        U[nz] = w[nz]
        V[nz] = np.einsum("bij,bi->bj", Ms[nz], U[nz]) / sigma[nz, None]
    else:
        V[nz] = w[nz]
        U[nz] = np.einsum("bij,bj->bi", Ms[nz], V[nz]) / sigma[nz, None]
    return sigma, U, V


def top_singular_pair(M, tol=DEFAULT_TOL, max_iter=DEFAULT_MAX_ITER, rng=None):
    M = as_matrix(M)
    sigma, U, V = batched_top_singular_pairs(M[None], tol, max_iter, rng)
    return float(sigma[0]), U[0], V[0]


def spectral_norm(M, tol=DEFAULT_TOL, max_iter=DEFAULT_MAX_ITER, rng=None):
    """Operator 2-norm (largest singular value) by power iteration."""
    return top_singular_pair(M, tol, max_iter, rng)[0]


def batched_spectral_norms(Ms, tol=DEFAULT_TOL, max_iter=DEFAULT_MAX_ITER, rng=None):
    return batched_top_singular_pairs(Ms, tol, max_iter, rng)[0]


def sample_unit_sphere(dim, rng, size=None):
    """Uniform draw(s) on the unit sphere in R^dim via normalized Gaussians.

    With ``size=None`` returns shape ``(dim,)``; otherwise ``(size, dim)``.
    """
    if dim < 1:
        raise DimensionError("dim must be >= 1")
    shape = (dim,) if size is None else (size, dim)
    g = rng.standard_normal(shape)
    g2 = g.reshape(-1, dim)
    nrm = np.linalg.norm(g2, axis=1)
    # a zero draw has probability zero; redraw rather than divide by it
    while np.any(nrm == 0):
        bad = nrm == 0
        g2[bad] = rng.standard_normal((int(bad.sum()), dim))
        nrm = np.linalg.norm(g2, axis=1)
    return (g2 / nrm[:, None]).reshape(shape)


def orthonormalize(columns, pivot_tol=1e-10):
    """Modified Gram-Schmidt with one re-orthogonalization pass.

    Raises RankError naming the first column whose residual norm falls below
    ``pivot_tol`` (relative to the column's original norm when that exceeds 1).
    """
    A = np.asarray(columns, dtype=np.float64)
    if A.ndim != 2 or A.size == 0:
        raise DimensionError("orthonormalize expects a nonempty 2-D array of columns")
    n_rows, n_cols = A.shape
    if n_cols > n_rows:
        raise RankError(f"{n_cols} columns cannot be independent in R^{n_rows}", n_rows)
    Q = np.zeros_like(A)
    for j in range(n_cols):
        v = A[:, j].copy()
        scale = max(1.0, float(np.linalg.norm(v)))
        for _ in range(2):
            for i in range(j):
                v -= (Q[:, i] @ v) * Q[:, i]
        nrm = float(np.linalg.norm(v))
        if nrm < pivot_tol * scale:
            raise RankError(f"column {j} is linearly dependent on earlier columns", j)
        Q[:, j] = v / nrm
    return Q
