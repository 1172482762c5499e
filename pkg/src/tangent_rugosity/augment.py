"""Augmentation sets, the augmented loss and the first-order augmentation bound.

With ``f(x) = A[x] x + b[x]``, a displaced copy ``x_i + u_ij`` changes the output
by ``ΔA x_i + Δb + A[x_i + u_ij] u_ij``.  Bounding each piece with the data
radius R, the network Lipschitz constant K1 and the loss Lipschitz constant K2
gives ``L_aug <= L + term_A + term_b + term_eps`` up to o(eps).
"""

import json
from dataclasses import asdict, dataclass

import numpy as np

from . import network as nw
from .errors import ConfigurationError, NonContinuousAugmentationError
from .linalg import batched_spectral_norms, sample_unit_sphere
from .manifold import estimate_tangent_bases, flip_image, image_size, translate_image, translation_shifts
from .rugosity import c_hat, network_handle

RESIDUAL_TOL = -1e-9
CE_GRADIENT_BOUND = np.sqrt(2.0)


@dataclass(frozen=True, eq=False)
class AugmentationSet:
    """Displacements ``u_ij`` of shape (n, m, D); ``u_i0 = 0`` is implicit."""

    displacements: np.ndarray
    kind: str = "tangent_jitter"

    def __post_init__(self):
        U = np.asarray(self.displacements, dtype=np.float64)
        if U.ndim != 3:
            raise ValueError(f"displacements must be (n, m, D), got {U.shape}")
        object.__setattr__(self, "displacements", U)

    @property
    def m(self):
        return self.displacements.shape[1]

    @property
    def eps_bound(self):
        if self.displacements.size == 0:
            return 0.0
        return float(np.max(np.linalg.norm(self.displacements, axis=2)))

    @property
    def non_continuous(self):
        return self.kind == "flip"

    def subset(self, index):
        return AugmentationSet(self.displacements[np.asarray(index)], self.kind)


def make_tangent_jitter(ds, m, eps, rng, k=None):
    """``u_ij = r B_i s`` with s uniform on the tangent sphere and r uniform on (0, eps]."""
    if eps < 0:
        raise ValueError("eps must be >= 0")
    bases = ds.tangent_bases if ds.tangent_bases is not None else estimate_tangent_bases(ds, k).tangent_bases
    n, D, d = bases.shape
    U = np.zeros((n, m, D))
    if eps > 0 and m > 0:
        s = sample_unit_sphere(d, rng, size=n * m).reshape(n, m, d)
        r = eps * (1.0 - rng.uniform(size=(n, m)))
        U = r[:, :, None] * np.einsum("nDd,nmd->nmD", bases, s)
    return AugmentationSet(U, "tangent_jitter")


def make_translations(ds, max_shift):
    """Every integer shift with ``|dx|, |dy| <= max_shift`` except the identity.

    Uncovered pixels take the dataset's blank value.
    """
    width, height = image_size(ds)
    shifts = translation_shifts(max_shift)
    U = np.zeros((ds.n, len(shifts), ds.dim))
    for i, x in enumerate(ds.points):
        for j, (dx, dy) in enumerate(shifts):
            U[i, j] = translate_image(x, width, height, dx, dy, ds.background) - x
    return AugmentationSet(U, "translation")


def make_flips(ds):
    width, height = image_size(ds)
    U = np.stack([flip_image(x, width, height) - x for x in ds.points])[:, None, :]
    return AugmentationSet(U, "flip")


# -- losses -------------------------------------------------------------------


@dataclass(frozen=True)
class LossSpec:
    kind: str = "softmax_cross_entropy"
    K2: float = None

    def __post_init__(self):
        if self.kind not in ("squared_error", "softmax_cross_entropy"):
            raise ConfigurationError(f"unknown loss {self.kind!r}")


def targets(loss, labels, out_dim):
    labels = np.asarray(labels)
    if loss.kind == "softmax_cross_entropy":
        return labels.astype(np.int64)
    if out_dim == 1:
        return labels.astype(np.float64)[:, None]
    onehot = np.zeros((labels.shape[0], out_dim))
    onehot[np.arange(labels.shape[0]), labels.astype(np.int64)] = 1.0
    return onehot


def _log_softmax(F):
    shifted = F - np.max(F, axis=1, keepdims=True)
    return shifted - np.log(np.sum(np.exp(shifted), axis=1, keepdims=True))


def loss_values(loss, F, Y):
    """Per-sample losses for outputs F (n, out) and targets from :func:`targets`."""
    if loss.kind == "softmax_cross_entropy":
        return -_log_softmax(F)[np.arange(F.shape[0]), Y]
    return np.sum((F - Y) ** 2, axis=1)


def loss_gradients(loss, F, Y):
    """Per-sample gradient of the loss w.r.t. the outputs."""
    if loss.kind == "softmax_cross_entropy":
        G = np.exp(_log_softmax(F))
        G[np.arange(F.shape[0]), Y] -= 1.0
        return G
    return 2.0 * (F - Y)


def plain_loss(net, ds, loss):
    """``sum_i loss(f(x_i), y_i)``."""
    F = nw.forward_batch(net, ds.points)
    return float(np.sum(loss_values(loss, F, targets(loss, ds.labels, net.output_dim))))


def augmented_loss(net, ds, aug, loss):
    """``(1 / (m+1)) sum_i [loss(f(x_i)) + sum_j loss(f(x_i + u_ij))]``."""
    Y = targets(loss, ds.labels, net.output_dim)
    base = loss_values(loss, nw.forward_batch(net, ds.points), Y)
    n, m, D = aug.displacements.shape
    if m == 0:
        return float(np.sum(base))
    shifted = (ds.points[:, None, :] + aug.displacements).reshape(n * m, D)
    extra = loss_values(loss, nw.forward_batch(net, shifted), np.repeat(Y, m, axis=0)).reshape(n, m)
    return float(np.sum(base + np.sum(extra, axis=1)) / (m + 1))


# -- Lipschitz constants ------------------------------------------------------


def estimate_K1(net, ds, aug):
    """Largest ‖A[x]‖₂ over original and augmented points.

    This is an empirical lower bound on the global Lipschitz constant (safety
    factor 1.0); :func:`network.certified_lipschitz` gives an upper bound.
    """
    n, m, D = aug.displacements.shape
    X = np.vstack([ds.points, (ds.points[:, None, :] + aug.displacements).reshape(n * m, D)])
    A, _ = nw.affine_operators(net, X)
    return float(np.max(batched_spectral_norms(A)))


def estimate_K2(net, ds, aug, loss):
    """Loss-gradient bound: sqrt(2) for softmax CE, else 2 * max ‖f − y‖ over all points."""
    if loss.kind == "softmax_cross_entropy":
        return float(CE_GRADIENT_BOUND)
    n, m, D = aug.displacements.shape
    X = np.vstack([ds.points, (ds.points[:, None, :] + aug.displacements).reshape(n * m, D)])
    Y = targets(loss, np.concatenate([ds.labels, np.repeat(ds.labels, m)]), net.output_dim)
    F = nw.forward_batch(net, X)
    return float(2.0 * np.max(np.linalg.norm(F - Y, axis=1)))


def check_K2(loss, net, ds):
    """Raise if a user-supplied K2 is below an observed loss-gradient norm."""
    if loss.K2 is None:
        return
    F = nw.forward_batch(net, ds.points)
    observed = np.linalg.norm(loss_gradients(loss, F, targets(loss, ds.labels, net.output_dim)), axis=1)
    if np.max(observed) > loss.K2:
        raise ConfigurationError(f"K2={loss.K2} is below an observed loss-gradient norm {np.max(observed):.6g}")


# -- bound verification -------------------------------------------------------


@dataclass
class PairResiduals:
    """Per-pair first-order losses and bound residuals, shape (n, m)."""

    l_tilde: np.ndarray
    bound: np.ndarray
    residuals: np.ndarray
    base_losses: np.ndarray

    @property
    def min(self):
        return float(np.min(self.residuals)) if self.residuals.size else float("inf")

    @property
    def violations(self):
        return int(np.sum(self.residuals < RESIDUAL_TOL))


def _pair_terms(net, ds, aug):
    n, m, D = aug.displacements.shape
    A0, b0 = nw.affine_operators(net, ds.points)
    shifted = (ds.points[:, None, :] + aug.displacements).reshape(n * m, D)
    A1, b1 = nw.affine_operators(net, shifted)
    A1 = A1.reshape((n, m) + A0.shape[1:])
    b1 = b1.reshape(n, m, -1)
    dA = A1 - A0[:, None]
    db = b1 - b0[:, None]
    return A1, dA, db


def _require_continuous(aug):
    if aug.non_continuous:
        raise NonContinuousAugmentationError("flip augmentation is not a continuous transformation")


def verify_firstorder_bound(net, ds, aug, loss, K1=None, K2=None):
    """Check the pairwise first-order inequality for every (i, j).

    ``l_tilde_ij = l_i + [ΔA x_i + Δb + A[x_i + u_ij] u_ij]ᵀ ∇l_i`` is compared
    with ``l_i + R K2 ‖ΔA‖₂ + K2 sum|Δb| + eps K1 K2``.
    """
    _require_continuous(aug)
    K1 = estimate_K1(net, ds, aug) if K1 is None else K1
    K2 = (loss.K2 if loss.K2 is not None else estimate_K2(net, ds, aug, loss)) if K2 is None else K2
    check_K2(loss, net, ds)
    n, m, _ = aug.displacements.shape
    Y = targets(loss, ds.labels, net.output_dim)
    F = nw.forward_batch(net, ds.points)
    base = loss_values(loss, F, Y)
    grad = loss_gradients(loss, F, Y)
    if m == 0:
        empty = np.zeros((n, 0))
        return PairResiduals(empty, empty, empty, base)
    A1, dA, db = _pair_terms(net, ds, aug)
    change = (
        np.einsum("nmoD,nD->nmo", dA, ds.points)
        + db
        + np.einsum("nmoD,nmD->nmo", A1, aug.displacements)
    )
    l_tilde = base[:, None] + np.einsum("nmo,no->nm", change, grad)
    dA_norm = batched_spectral_norms(dA.reshape((n * m,) + dA.shape[2:])).reshape(n, m)
    bound = base[:, None] + ds.radius * K2 * dA_norm + K2 * np.sum(np.abs(db), axis=2) + aug.eps_bound * K1 * K2
    return PairResiduals(l_tilde, bound, bound - l_tilde, base)


@dataclass
class BoundReport:
    L: float
    L_aug: float
    L_tilde_aug: float
    term_A: float
    term_b: float
    term_eps: float
    rhs: float
    K1: float
    K2: float
    R: float
    eps: float
    m: int
    n: int
    c_hat: float
    K1_certified: float
    term_eps_certified: float
    rhs_certified: float
    residual_min: float
    residual_mean: float
    n_pairs: int
    n_violations: int
    first_order_bound_holds: bool
    full_bound_holds: bool

    def to_json(self):
        return json.dumps(asdict(self), indent=2, sort_keys=False) + "\n"


def theorem1_bound(net, ds, aug, loss):
    """Every term of the augmented-loss bound, with empirical and certified K1."""
    _require_continuous(aug)
    n, m, _ = aug.displacements.shape
    K1 = estimate_K1(net, ds, aug)
    K2 = loss.K2 if loss.K2 is not None else estimate_K2(net, ds, aug, loss)
    R = ds.radius
    eps = aug.eps_bound
    L = plain_loss(net, ds, loss)
    L_aug = augmented_loss(net, ds, aug, loss)
    res = verify_firstorder_bound(net, ds, aug, loss, K1, K2)
    chat = c_hat(network_handle(net), ds, aug, guard=False).value
    if m:
        _, _, db = _pair_terms(net, ds, aug)
        db_sum = float(np.sum(np.abs(db)))
    else:
        db_sum = 0.0
    term_A = R * K2 / (m + 1) * chat
    term_b = K2 / (m + 1) * db_sum
    term_eps = K1 * K2 * m * n * eps / (m + 1)
    rhs = L + term_A + term_b + term_eps
    K1_cert = nw.certified_lipschitz(net)
    term_eps_cert = K1_cert * K2 * m * n * eps / (m + 1)
    rhs_cert = L + term_A + term_b + term_eps_cert
    L_tilde_aug = float((np.sum(res.base_losses) + np.sum(res.l_tilde)) / (m + 1))
    return BoundReport(
        L=L,
        L_aug=L_aug,
        L_tilde_aug=L_tilde_aug,
        term_A=term_A,
        term_b=term_b,
        term_eps=term_eps,
        rhs=rhs,
        K1=K1,
        K2=K2,
        R=R,
        eps=eps,
        m=m,
        n=n,
        c_hat=chat,
        K1_certified=K1_cert,
        term_eps_certified=term_eps_cert,
        rhs_certified=rhs_cert,
        residual_min=res.min,
        residual_mean=float(np.mean(res.residuals)) if res.residuals.size else 0.0,
        n_pairs=int(res.residuals.size),
        n_violations=res.violations,
        first_order_bound_holds=bool(L_tilde_aug <= rhs + 1e-9 * max(1.0, abs(rhs))),
        full_bound_holds=bool(L_aug <= rhs),
    )


def make_augmentation(kind, ds, rng, m=8, eps=0.0, max_shift=2, k=None):
    """Dispatch on an augmentation kind name; ``none`` gives an empty set."""
    if kind == "none":
        return AugmentationSet(np.zeros((ds.n, 0, ds.dim)), "none")
    if kind == "tangent_jitter":
        return make_tangent_jitter(ds, m, eps, rng, k)
    if kind == "translation":
        return make_translations(ds, max_shift)
    if kind == "flip":
        return make_flips(ds)
    raise ConfigurationError(f"unknown augmentation kind {kind!r}")

