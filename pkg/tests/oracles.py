"""Independent reference computations used as test oracles.

Nothing here imports the package under test; each routine is a slow,
transparent recomputation of a quantity the package computes another way.
"""

import math
import struct

import numpy as np


def jacobi_eigenvalues(S, tol=1e-14, max_sweeps=100):
    """Eigenvalues of a symmetric matrix by cyclic Jacobi rotations."""
    A = np.array(S, dtype=np.float64)
    n = A.shape[0]
    for _ in range(max_sweeps):
        off = math.sqrt(sum(A[i, j] ** 2 for i in range(n) for j in range(n) if i != j))
        if off < tol * max(1.0, np.abs(A).max()):
            break
        for p in range(n - 1):
            for q in range(p + 1, n):
                if abs(A[p, q]) < 1e-300:
                    continue
                theta = (A[q, q] - A[p, p]) / (2.0 * A[p, q])
                t = math.copysign(1.0, theta) / (abs(theta) + math.sqrt(theta * theta + 1.0))
                c = 1.0 / math.sqrt(t * t + 1.0)
                s = t * c
                J = np.eye(n)
                J[p, p] = J[q, q] = c
                J[p, q] = s
                J[q, p] = -s
                A = J.T @ A @ J
    return np.sort(np.diag(A))


def jacobi_spectral_norm(M):
    M = np.asarray(M, dtype=np.float64)
    return math.sqrt(max(0.0, jacobi_eigenvalues(M.T @ M)[-1]))


def _act(kind, z, slope=0.0):
    if kind == "relu":
        return z if z > 0 else 0.0
    if kind == "leaky_relu":
        return z if z > 0 else slope * z
    if kind == "abs":
        return abs(z)
    if kind == "tanh":
        return math.tanh(z)
    return z


def brute_forward(layers, x):
    """Scalar-loop evaluation; ``layers`` is a list of (W, b, kind, slope)."""
    h = [float(v) for v in x]
    for W, b, kind, slope in layers:
        h = [_act(kind, sum(W[r][c] * h[c] for c in range(len(h))) + b[r], slope) for r in range(len(b))]
    return np.array(h)


def brute_pattern(layers, x):
    """Per-hidden-layer on/off (or sign for abs) of each unit, by scalar loops."""
    h = [float(v) for v in x]
    out = []
    for W, b, kind, slope in layers[:-1]:
        z = [sum(W[r][c] * h[c] for c in range(len(h))) + b[r] for r in range(len(b))]
        if kind == "abs":
            out.append(tuple(1 if v >= 0 else -1 for v in z))
        else:
            out.append(tuple(1 if v > 0 else 0 for v in z))
        h = [_act(kind, v, slope) for v in z]
    return tuple(out)


def central_jacobian(f, x, h=1e-5):
    x = np.asarray(x, dtype=np.float64)
    cols = []
    for k in range(x.size):
        e = np.zeros_like(x)
        e[k] = h
        cols.append((np.asarray(f(x + e)) - np.asarray(f(x - e))) / (2 * h))
    return np.stack(cols, axis=-1)


def central_param_gradient(value_of, arrays, h=1e-6):
    """Central differences of ``value_of()`` w.r.t. every entry of each array (mutated in place)."""
    grads = []
    for arr in arrays:
        g = np.zeros_like(arr)
        for idx in np.ndindex(arr.shape):
            old = arr[idx]
            arr[idx] = old + h
            plus = value_of()
            arr[idx] = old - h
            minus = value_of()
            arr[idx] = old
            g[idx] = (plus - minus) / (2 * h)
        grads.append(g)
    return grads


def idx_bytes(magic, dims, payload):
    """Hand-assembled IDX file: big-endian magic, dims, then raw bytes."""
    return struct.pack(">I", magic) + b"".join(struct.pack(">I", d) for d in dims) + bytes(payload)
