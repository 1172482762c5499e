"""Tangent-Hessian rugosity estimators, the augmentation surrogate and J(f).

Estimators work on a :class:`FunctionHandle`, so closed-form functions and
networks go through the same code.  Piecewise estimators need batched affine
operators; smooth estimators need batched input gradients of a scalar output.
"""

from dataclasses import asdict, dataclass, field, replace
from typing import Callable, Optional

import numpy as np

from . import network as nw
from .errors import ConfigurationError, UnsupportedActivationError
from .linalg import batched_spectral_norms, make_rng, sample_unit_sphere
from .manifold import estimate_tangent_bases, image_size, translate_image, translation_shifts

OFF_TANGENT_TOL = 1e-8
DEFAULT_STEP_FRACTION = 0.05


@dataclass(frozen=True)
class FunctionHandle:
    """Capabilities of a function R^D -> R^out.

    ``evaluate(X) -> (n, out)``; ``gradient(X) -> (n, D)`` for a scalar output;
    ``affine_operator(X) -> (A (n, out, D), b (n, out))``; ``guard(X) ->
    (X', moved)`` nudges points off region boundaries.
    """

    dim: int
    out_dim: int = 1
    evaluate: Optional[Callable] = None
    gradient: Optional[Callable] = None
    affine_operator: Optional[Callable] = None
    guard: Optional[Callable] = None

    def require(self, capability):
        if getattr(self, capability) is None:
            raise UnsupportedActivationError(f"function handle lacks the {capability} capability")

    def scaled(self, alpha):
        """Handle for ``alpha * f``."""
        ev, gr, ao = self.evaluate, self.gradient, self.affine_operator
        return replace(
            self,
            evaluate=None if ev is None else (lambda X: alpha * ev(X)),
            gradient=None if gr is None else (lambda X: alpha * gr(X)),
            affine_operator=None if ao is None else (lambda X: tuple(alpha * t for t in ao(X))),
        )


def network_handle(net, out_index=None):
    """Handle over a network; ``out_index`` restricts to a single logit."""
    sel = slice(None) if out_index is None else slice(out_index, out_index + 1)
    out_dim = net.output_dim if out_index is None else 1

    def evaluate(X):
        return nw.forward_batch(net, X)[:, sel]

    gradient = None
    if out_dim == 1:
        def gradient(X):
            return nw.input_gradients(net, X, out_index or 0)

    affine = guard = None
    if net.piecewise:
        def affine(X):
            A, b = nw.affine_operators(net, X)
            return A[:, sel, :], b[:, sel]

        def guard(X):
            return nw.guard_boundary(net, X)

    return FunctionHandle(net.input_dim, out_dim, evaluate, gradient, affine, guard)


def affine_handle(A, b):
    """Globally affine map ``x -> A x + b``."""
    A = np.atleast_2d(np.asarray(A, dtype=np.float64))
    b = np.atleast_1d(np.asarray(b, dtype=np.float64))

    def evaluate(X):
        return np.atleast_2d(X) @ A.T + b

    def affine(X):
        n = np.atleast_2d(X).shape[0]
        return np.broadcast_to(A, (n,) + A.shape).copy(), np.broadcast_to(b, (n,) + b.shape).copy()

    gradient = None
    if A.shape[0] == 1:
        def gradient(X):
            return np.broadcast_to(A[0], (np.atleast_2d(X).shape[0], A.shape[1])).copy()

    return FunctionHandle(A.shape[1], A.shape[0], evaluate, gradient, affine)


@dataclass
class RugosityConfig:
    p: float = 2
    eps: Optional[float] = None
    delta: Optional[float] = None
    m: int = 8
    d: Optional[int] = None
    seed: int = 0
    norm: str = "spectral"
    k: Optional[int] = None
    guard: bool = True
    directions: str = "auto"
    max_shift: int = 2

    def __post_init__(self):
        if self.p not in (1, 2):
            raise ConfigurationError(f"p must be 1 or 2, got {self.p}")
        for name in ("eps", "delta"):
            value = getattr(self, name)
            if value is not None and value <= 0:
                raise ConfigurationError(f"{name} must be positive")
        if self.m < 1:
            raise ConfigurationError("m must be >= 1")
        if self.norm not in ("spectral", "frobenius"):
            raise ConfigurationError(f"unknown norm {self.norm!r}")
        if self.directions not in ("auto", "tangent", "translation"):
            raise ConfigurationError(f"unknown direction mode {self.directions!r}")

    def resolved(self, ds):
        """Fill data-dependent defaults: steps from the nearest-neighbour scale, d from ds."""
        step = None
        if self.eps is None or self.delta is None:
            step = DEFAULT_STEP_FRACTION * median_nn_distance(ds.points)
        return replace(
            self,
            eps=self.eps if self.eps is not None else step,
            delta=self.delta if self.delta is not None else step,
            d=self.d if self.d is not None else ds.intrinsic_dim,
        )


@dataclass
class RugosityReport:
    estimator: str
    value: float
    per_point: np.ndarray
    p: float = 1
    eps: float = float("nan")
    m: int = 0
    d: int = 0
    seed: int = 0
    boundary_warnings: int = 0
    config: dict = field(default_factory=dict)

    @property
    def n(self):
        return len(self.per_point)

    def recompute(self):
        """Outer aggregation of ``per_point`` (summed in index order)."""
        total = 0.0
        for v in self.per_point:
            total += v
        if self.estimator == "c_hat":
            return total
        if self.estimator == "jacobian_norm":
            return total / self.n
        if self.estimator == "rugosity_smooth_direct":
            return (total / self.n) ** (1.0 / self.p)
        pre = self.d ** (self.p / 2) / (self.n * self.eps**self.p * self.m ** (self.p / 2))
        return (pre * total) ** (1.0 / self.p)

    @property
    def squared(self):
        return self.value**2

    CSV_HEADER = "estimator,p,eps,m,d,value,boundary_warnings,seed"

    def csv_row(self, label=None):
        name = self.estimator if label is None else f"{self.estimator}@{label}"
        return f"{name},{self.p:.17g},{self.eps:.17g},{self.m},{self.d},{self.value:.17g},{self.boundary_warnings},{self.seed}"

    def to_text(self):
        lines = [f"estimator={self.estimator}"]
        for key in ("value", "p", "eps", "m", "d", "seed", "boundary_warnings", "n"):
            val = getattr(self, key)
            lines.append(f"{key}={val:.17g}" if isinstance(val, float) else f"{key}={val}")
        return "\n".join(lines) + "\n"


def median_nn_distance(points):
    """Median over points of the distance to the nearest other (distinct) point."""
    X = np.asarray(points, dtype=np.float64)
    sq = np.sum(X * X, axis=1)
    n = X.shape[0]
    best = np.empty(n)
    for start in range(0, n, 512):
        stop = min(start + 512, n)
        block = X[start:stop]
        d2 = sq[start:stop, None] + sq[None, :] - 2.0 * block @ X.T
        # the expansion leaves rounding of order eps * (|a|^2 + |b|^2), so a
        # point's distance to itself or to a duplicate is not exactly zero
        dup = d2 <= 1e-12 * (sq[start:stop, None] + sq[None, :])
        dup[np.arange(stop - start), np.arange(start, stop)] = True
        d2[dup] = np.inf
        best[start:stop] = np.min(d2, axis=1)
    return float(np.median(np.sqrt(best)))


def _matrix_norms(M, kind="spectral"):
    """Norms of a stack of (out, D) matrices; vectors when out == 1."""
    if kind == "frobenius":
        return np.sqrt(np.sum(M * M, axis=(1, 2)))
    return batched_spectral_norms(M)


def _tangent_bases(ds, cfg):
    if ds.tangent_bases is not None and (cfg.d is None or cfg.d == ds.intrinsic_dim):
        return ds.tangent_bases
    d = cfg.d if cfg.d is not None else ds.intrinsic_dim
    if d > ds.dim:
        raise ConfigurationError(f"intrinsic dimension {d} exceeds ambient dimension {ds.dim}")
    return estimate_tangent_bases(ds, cfg.k, d).tangent_bases


def draw_directions(ds, cfg):
    """Unit tangent directions, shape (n, m, D); the stream for point i is keyed by (seed, i).

    ``translation`` mode (the ``auto`` choice for image data) uses normalized
    displacements of random whole-pixel shifts up to ``max_shift``; otherwise
    directions are uniform on the tangent sphere.
    """
    n, m = ds.n, cfg.m
    mode = cfg.directions
    if mode == "auto":
        mode = "translation" if ds.image_shape is not None else "tangent"
    out = np.zeros((n, m, ds.dim))
    if mode == "translation":
        width, height = image_size(ds)
        shifts = translation_shifts(cfg.max_shift)
        for i, x in enumerate(ds.points):
            rng = make_rng(cfg.seed, i)
            for j, pick in enumerate(rng.integers(0, len(shifts), size=m)):
                u = translate_image(x, width, height, *shifts[pick], fill=ds.background) - x
                nrm = np.linalg.norm(u)
                if nrm > 0:
                    out[i, j] = u / nrm
        return out
    bases = _tangent_bases(ds, cfg)
    d = bases.shape[2]
    for i in range(n):
        rng = make_rng(cfg.seed, i)
        out[i] = sample_unit_sphere(d, rng, size=m) @ bases[i].T
    return out


def _guarded(fh, X, enabled):
    if enabled and fh.guard is not None:
        return fh.guard(X)
    return np.asarray(X, dtype=np.float64), 0


# -- smooth functions ---------------------------------------------------------


def tangent_hessian_smooth(fh, x, basis, delta):
    """Finite-difference Hessian of a scalar function in tangent coordinates (d x d)."""
    fh.require("gradient")
    if delta <= 0:
        raise ValueError("delta must be positive")
    B = basis.basis if hasattr(basis, "basis") else np.asarray(basis, dtype=np.float64)
    x = np.asarray(x, dtype=np.float64)
    probes = np.vstack([x[None, :], x[None, :] + delta * B.T])
    grads = fh.gradient(probes)
    H = B.T @ ((grads[1:] - grads[0]) / delta).T
    return 0.5 * (H + H.T)


def rugosity_smooth_direct(fh, ds, cfg):
    """Monte Carlo over the data of ``‖tangent Hessian‖_F^p``, then the 1/p root."""
    cfg = cfg.resolved(ds)
    bases = _tangent_bases(ds, cfg)
    per_point = np.array(
        [np.linalg.norm(tangent_hessian_smooth(fh, x, B, cfg.delta)) ** cfg.p for x, B in zip(ds.points, bases)]
    )
    report = RugosityReport(
        "rugosity_smooth_direct", 0.0, per_point, cfg.p, cfg.delta, 0, bases.shape[2], cfg.seed, 0, asdict(cfg)
    )
    report.value = report.recompute()
    return report


def rugosity_smooth_mc(fh, ds, cfg, directions=None):
    """Gradient-difference estimator with random tangent directions.

    per-point term: ``(sum_j ‖∇f(x_i + δ u_j) − ∇f(x_i)‖²)^(p/2)``, aggregated
    with the prefactor ``d^(p/2) / (n δ^p m^(p/2))`` and the 1/p root.
    """
    fh.require("gradient")
    cfg = cfg.resolved(ds)
    U = draw_directions(ds, cfg) if directions is None else np.asarray(directions, dtype=np.float64)
    n, m, D = U.shape
    g0 = fh.gradient(ds.points)
    g1 = fh.gradient((ds.points[:, None, :] + cfg.delta * U).reshape(n * m, D)).reshape(n, m, D)
    sq = np.sum((g1 - g0[:, None, :]) ** 2, axis=2)
    per_point = np.sum(sq, axis=1) ** (cfg.p / 2)
    report = RugosityReport("rugosity_smooth_mc", 0.0, per_point, cfg.p, cfg.delta, m, cfg.d, cfg.seed, 0, asdict(cfg))
    report.value = report.recompute()
    return report


# -- piecewise-affine functions ----------------------------------------------


def piecewise_hessian_direction(fh, x, u, eps, basis=None, guard=True):
    """``(A[x + eps u] − A[x]) / eps``; zero when ``u`` leaves the tangent space.

    Returns a matrix (out, D), or a vector for scalar outputs.
    """
    fh.require("affine_operator")
    if eps <= 0:
        raise ValueError("eps must be positive")
    x = np.asarray(x, dtype=np.float64)
    u = np.asarray(u, dtype=np.float64)
    if basis is not None:
        B = basis.basis if hasattr(basis, "basis") else np.asarray(basis, dtype=np.float64)
        if np.linalg.norm(u - B @ (B.T @ u)) > OFF_TANGENT_TOL:
            H = np.zeros((fh.out_dim, fh.dim))
            return H[0] if fh.out_dim == 1 else H
    X, _ = _guarded(fh, x[None, :], guard)
    A0, _ = fh.affine_operator(X)
    A1, _ = fh.affine_operator(X + eps * u)
    H = (A1[0] - A0[0]) / eps
    return H[0] if fh.out_dim == 1 else H


CHUNK = 256


def _pair_norms(fh, X, U, step, kind):
    """``‖A[x_i + step·u_ij] − A[x_i]‖`` for every (i, j), shape (n, m), in point chunks."""
    n, m, D = U.shape
    out = np.zeros((n, m))
    for start in range(0, n, CHUNK):
        sl = slice(start, start + CHUNK)
        Xc = X[sl]
        A0, _ = fh.affine_operator(Xc)
        A1, _ = fh.affine_operator((Xc[:, None, :] + step * U[sl]).reshape(-1, D))
        dA = A1 - np.repeat(A0, m, axis=0)
        out[sl] = _matrix_norms(dA, kind).reshape(-1, m)
    return out


def rugosity_piecewise(fh, ds, cfg, directions=None):
    """Finite-difference rugosity of a piecewise-affine function.

    per-point term: ``(sum_j ‖A[x_i + ε u_j] − A[x_i]‖²)^(p/2)``, aggregated
    with the prefactor ``d^(p/2) / (n ε^p m^(p/2))`` and the 1/p root.
    """
    fh.require("affine_operator")
    cfg = cfg.resolved(ds)
    U = draw_directions(ds, cfg) if directions is None else np.asarray(directions, dtype=np.float64)
    n, m, D = U.shape
    X, moved = _guarded(fh, ds.points, cfg.guard)
    norms = _pair_norms(fh, X, U, cfg.eps, cfg.norm)
    per_point = np.sum(norms**2, axis=1) ** (cfg.p / 2)
    report = RugosityReport("rugosity_piecewise", 0.0, per_point, cfg.p, cfg.eps, m, cfg.d, cfg.seed, moved, asdict(cfg))
    report.value = report.recompute()
    return report


def c_hat(fh, ds, aug, norm="spectral", guard=True):
    """Unnormalized double sum ``sum_i sum_j ‖A[x_i + u_ij] − A[x_i]‖``."""
    fh.require("affine_operator")
    disp = aug.displacements
    if disp.shape[0] != ds.n or disp.shape[2] != ds.dim:
        raise ConfigurationError("augmentation displacements do not match the dataset")
    n, m, _ = disp.shape
    X, moved = _guarded(fh, ds.points, guard)
    if m == 0:
        per_point = np.zeros(n)
    else:
        per_point = np.sum(_pair_norms(fh, X, disp, 1.0, norm), axis=1)
    report = RugosityReport("c_hat", 0.0, per_point, 1, aug.eps_bound, m, ds.intrinsic_dim, 0, moved)
    report.value = report.recompute()
    return report


def jacobian_norm(fh, ds):
    """Mean Frobenius norm of the local slope matrix over the dataset."""
    if fh.affine_operator is not None:
        A, _ = fh.affine_operator(ds.points)
    else:
        fh.require("gradient")
        A = fh.gradient(ds.points)[:, None, :]
    per_point = np.sqrt(np.sum(A * A, axis=(1, 2)))
    report = RugosityReport("jacobian_norm", 0.0, per_point, 1, float("nan"), 0, ds.intrinsic_dim, 0, 0)
    report.value = report.recompute()
    return report
