"""Feedforward networks, exact affine-operator extraction and gradients.

A network with piecewise-affine hidden activations is affine on every region of
fixed activation pattern: ``f(x) = A[x] x + b[x]``.  ``A[x]`` is the product of
the weight matrices interleaved with diagonal masks whose entries are the
activation slopes selected by the pattern at ``x``.

All batched routines take ``X`` of shape ``(n, D)``; single-point wrappers accept
a 1-D ``x``.
"""

from dataclasses import dataclass

import numpy as np

from .errors import DimensionError, UnsupportedActivationError
from .linalg import batched_top_singular_pairs, make_rng, spectral_norm

PIECEWISE_KINDS = ("relu", "leaky_relu", "abs")
SMOOTH_KINDS = ("tanh",)
KINDS = PIECEWISE_KINDS + SMOOTH_KINDS + ("identity",)

BOUNDARY_THRESHOLD = 1e-12
BOUNDARY_STEP = 1e-9


@dataclass(frozen=True)
class Activation:
    kind: str
    slope: float = 0.0

    def __post_init__(self):
        if self.kind not in KINDS:
            raise ValueError(f"unknown activation kind {self.kind!r}")
        if self.kind == "leaky_relu" and not 0.0 < self.slope < 1.0:
            raise ValueError("leaky_relu slope must lie in (0, 1)")

    @property
    def piecewise(self):
        return self.kind in PIECEWISE_KINDS

    @property
    def smooth(self):
        return self.kind in SMOOTH_KINDS

    def __call__(self, z):
        if self.kind == "relu":
            return np.maximum(z, 0.0)
        if self.kind == "leaky_relu":
            return np.where(z > 0, z, self.slope * z)
        if self.kind == "abs":
            return np.abs(z)
        if self.kind == "tanh":
            return np.tanh(z)
        return z

    def code(self, z):
        """Activation state per unit: 1/0 for (leaky) relu, +1/-1 for abs.

        Exactly-zero pre-activations count as inactive for (leaky) relu and as
        positive for abs.
        """
        if self.kind in ("relu", "leaky_relu"):
            return (z > 0).astype(np.int8)
        if self.kind == "abs":
            return np.where(z >= 0, 1, -1).astype(np.int8)
        if self.kind == "identity":
            return np.ones(np.shape(z), dtype=np.int8)
        raise UnsupportedActivationError(f"{self.kind} has no activation pattern")

    def mask(self, code):
        """Diagonal slope entries selected by an activation code."""
        code = np.asarray(code)
        if self.kind == "leaky_relu":
            return np.where(code == 1, 1.0, self.slope)
        return code.astype(np.float64)

    def derivative(self, z):
        if self.kind == "tanh":
            t = np.tanh(z)
            return 1.0 - t * t
        if self.kind == "identity":
            return np.ones_like(z)
        return self.mask(self.code(z))

    def __str__(self):
        return f"leaky_relu {self.slope!r}" if self.kind == "leaky_relu" else self.kind


def activation(spec, slope=0.01):
    """Build an Activation from ``"relu"``, ``"leaky_relu"`` (with slope) etc."""
    if isinstance(spec, Activation):
        return spec
    return Activation(spec, slope if spec == "leaky_relu" else 0.0)


IDENTITY = Activation("identity")


@dataclass(frozen=True, eq=False)
class Layer:
    weight: np.ndarray
    bias: np.ndarray
    activation: Activation = IDENTITY

    @property
    def shape(self):
        return self.weight.shape


@dataclass(frozen=True, eq=False)
class Network:
    layers: tuple

    def __post_init__(self):
        layers = []
        for k, layer in enumerate(self.layers):
            W = np.asarray(layer.weight, dtype=np.float64)
            b = np.asarray(layer.bias, dtype=np.float64)
            if W.ndim != 2 or b.shape != (W.shape[0],):
                raise DimensionError(f"layer {k}: weight {W.shape} and bias {b.shape} disagree")
            layers.append(Layer(W, b, layer.activation))
        layers = tuple(layers)
        object.__setattr__(self, "layers", layers)
        if not layers:
            raise ValueError("a network needs at least one layer")
        for k, layer in enumerate(layers):
            W = layer.weight
            if k and W.shape[1] != layers[k - 1].weight.shape[0]:
                raise DimensionError(
                    f"layer {k} expects width {W.shape[1]}, previous layer gives "
                    f"{layers[k - 1].weight.shape[0]}"
                )
        if layers[-1].activation.kind != "identity":
            raise ValueError("the final layer must use the identity activation")
        hidden = [layer.activation for layer in layers[:-1]]
        if any(a.smooth for a in hidden) and any(a.piecewise for a in hidden):
            raise UnsupportedActivationError(
                "mixing smooth and piecewise-affine hidden activations is not supported"
            )

    @property
    def input_dim(self):
        return self.layers[0].weight.shape[1]

    @property
    def output_dim(self):
        return self.layers[-1].weight.shape[0]

    @property
    def depth(self):
        return len(self.layers)

    @property
    def hidden_widths(self):
        return [layer.weight.shape[0] for layer in self.layers[:-1]]

    @property
    def piecewise(self):
        return not any(layer.activation.smooth for layer in self.layers)

    @property
    def weights(self):
        return [layer.weight for layer in self.layers]

    @property
    def biases(self):
        return [layer.bias for layer in self.layers]

    def with_params(self, weights, biases):
        return Network(
            tuple(
                Layer(np.array(W, dtype=np.float64), np.array(b, dtype=np.float64), layer.activation)
                for W, b, layer in zip(weights, biases, self.layers)
            )
        )


@dataclass(frozen=True)
class AffineOperator:
    A: np.ndarray
    b: np.ndarray
    pattern: tuple


@dataclass
class ParamGradient:
    weights: list
    biases: list

    @classmethod
    def zeros_like(cls, net):
        return cls([np.zeros_like(W) for W in net.weights], [np.zeros_like(b) for b in net.biases])

    def __add__(self, other):
        return ParamGradient(
            [a + b for a, b in zip(self.weights, other.weights)],
            [a + b for a, b in zip(self.biases, other.biases)],
        )

    def scaled(self, alpha):
        return ParamGradient([alpha * w for w in self.weights], [alpha * b for b in self.biases])

    def flat(self):
        return np.concatenate([a.ravel() for pair in zip(self.weights, self.biases) for a in pair])


def init_network(widths, hidden_activation="relu", rng=None, slope=0.01):
    """Uniform Glorot-style init on [-s, s], s = sqrt(6 / (in + out)); zero biases.

    ``widths`` lists every layer width including input and output,
    e.g. ``[2, 64, 64, 2]``.
    """
    if len(widths) < 2:
        raise ValueError("widths needs at least input and output sizes")
    rng = make_rng(0) if rng is None else rng
    act = activation(hidden_activation, slope)
    layers = []
    for k, (n_in, n_out) in enumerate(zip(widths[:-1], widths[1:])):
        s = np.sqrt(6.0 / (n_in + n_out))
        W = rng.uniform(-s, s, size=(n_out, n_in))
        last = k == len(widths) - 2
        layers.append(Layer(W, np.zeros(n_out), IDENTITY if last else act))
    return Network(tuple(layers))


def _as_batch(net, X):
    X = np.asarray(X, dtype=np.float64)
    single = X.ndim == 1
    if single:
        X = X[None, :]
    if X.ndim != 2 or X.shape[1] != net.input_dim:
        raise DimensionError(f"input has shape {X.shape[1:]}, network expects ({net.input_dim},)")
    return X, single


def _rows_times(H, W):
    """``H @ W.T`` computed one row at a time.

    A plain 2-D product lets BLAS pick blockings by batch size, so a row's
    result can change in the last bit when other rows are added.  Stacking
    rows keeps every output row independent of the batch.
    """
    return np.matmul(H[:, None, :], W.T)[:, 0, :]


def forward_cache(net, X):
    """Pre-activations and post-activations of every layer for a batch."""
    X, _ = _as_batch(net, X)
    zs, hs = [], [X]
    h = X
    for layer in net.layers:
        z = _rows_times(h, layer.weight) + layer.bias
        h = layer.activation(z)
        zs.append(z)
        hs.append(h)
    return zs, hs


def forward_batch(net, X):
    return forward_cache(net, X)[1][-1]


def patterns_batch(net, X):
    """Per-hidden-layer activation codes, each of shape (n, width)."""
    zs, _ = forward_cache(net, X)
    return [layer.activation.code(z) for layer, z in zip(net.layers[:-1], zs[:-1])]


def forward(net, x):
    """Evaluate one input; returns ``(output, pattern)``.

    ``pattern`` is a tuple of per-layer code arrays for piecewise networks and
    ``None`` for smooth ones.
    """
    x, _ = _as_batch(net, x)
    zs, hs = forward_cache(net, x)
    if not net.piecewise:
        return hs[-1][0], None
    codes = tuple(layer.activation.code(z)[0] for layer, z in zip(net.layers[:-1], zs[:-1]))
    return hs[-1][0], codes


def region_codes(net, X):
    """Hashable activation-pattern code for each row of ``X``."""
    _require_piecewise(net)
    codes = patterns_batch(net, X)
    if not codes:
        return [b""] * np.atleast_2d(X).shape[0]
    stacked = np.concatenate(codes, axis=1)
    return [row.tobytes() for row in stacked]


def vq_region_id(net, x):
    return region_codes(net, np.asarray(x, dtype=np.float64)[None, :])[0]


def _require_piecewise(net):
    if not net.piecewise:
        raise UnsupportedActivationError("affine operators need piecewise-affine activations")


def _masks(net, codes):
    return [layer.activation.mask(c) for layer, c in zip(net.layers[:-1], codes)]


def _slopes_from_masks(net, masks, n):
    """Stack of A matrices (n, out, D), built from the output side inward."""
    A = np.broadcast_to(net.layers[-1].weight, (n,) + net.layers[-1].weight.shape)
    for k in range(net.depth - 2, -1, -1):
        A = (A * masks[k][:, None, :]) @ net.layers[k].weight
    return np.array(A)


def affine_operators(net, X):
    """Batched ``(A, b)`` with ``A`` of shape (n, out, D) and ``b`` (n, out)."""
    _require_piecewise(net)
    X, _ = _as_batch(net, X)
    n = X.shape[0]
    masks = _masks(net, patterns_batch(net, X))
    A = _slopes_from_masks(net, masks, n)
    offset = np.zeros((n, net.input_dim))
    for k, layer in enumerate(net.layers):
        offset = _rows_times(offset, layer.weight) + layer.bias
        if k < net.depth - 1:
            offset = offset * masks[k]
    return A, offset


def affine_operator(net, x):
    """Exact local affine form ``(A, b, pattern)`` of the network at ``x``."""
    _require_piecewise(net)
    x, _ = _as_batch(net, x)
    A, b = affine_operators(net, x)
    _, pattern = forward(net, x[0])
    return AffineOperator(A[0], b[0], pattern)


def preactivation_margin(net, X):
    """Smallest |pre-activation| over hidden units, per row (inf without hidden layers)."""
    zs, _ = forward_cache(net, X)
    hidden = [np.abs(z) for layer, z in zip(net.layers[:-1], zs[:-1]) if layer.activation.kind != "identity"]
    if not hidden:
        return np.full(zs[0].shape[0], np.inf)
    return np.min(np.concatenate(hidden, axis=1), axis=1)


def guard_boundary(net, X, threshold=BOUNDARY_THRESHOLD, step=BOUNDARY_STEP):
    """Nudge rows sitting on a region boundary by ``step`` along a fixed direction.

    Returns the guarded copy and the number of rows moved.
    """
    X, _ = _as_batch(net, X)
    on_boundary = preactivation_margin(net, X) < threshold
    if not on_boundary.any():
        return X, 0
    direction = np.ones(net.input_dim) / np.sqrt(net.input_dim)
    X = X.copy()
    X[on_boundary] += step * direction
    return X, int(on_boundary.sum())


def input_gradients(net, X, out_index=0):
    """Gradient of output ``out_index`` w.r.t. the input for every row of ``X``."""
    if not 0 <= out_index < net.output_dim:
        raise DimensionError(f"out_index {out_index} outside [0, {net.output_dim})")
    X, _ = _as_batch(net, X)
    if net.piecewise:
        A, _ = affine_operators(net, X)
        return A[:, out_index, :]
    zs, _ = forward_cache(net, X)
    delta = np.zeros((X.shape[0], net.output_dim))
    delta[:, out_index] = 1.0
    for k in range(net.depth - 1, -1, -1):
        delta = delta * net.layers[k].activation.derivative(zs[k])
        delta = delta @ net.layers[k].weight
    return delta


def gradient_wrt_input(net, x, out_index=0):
    x = np.asarray(x, dtype=np.float64)
    if x.ndim != 1:
        raise DimensionError("gradient_wrt_input takes a single input vector")
    return input_gradients(net, x[None, :], out_index)[0]


def backprop_batch(net, X, output_gradients, cache=None):
    """Parameter gradients summed over the batch, given dLoss/dOutput per row.

    ``cache`` may carry a precomputed ``forward_cache(net, X)``.
    """
    X, _ = _as_batch(net, X)
    G = np.asarray(output_gradients, dtype=np.float64)
    if G.ndim == 1:
        G = G[None, :]
    if G.shape != (X.shape[0], net.output_dim):
        raise DimensionError(f"output gradient shape {G.shape} != {(X.shape[0], net.output_dim)}")
    zs, hs = forward_cache(net, X) if cache is None else cache
    dWs, dbs = [None] * net.depth, [None] * net.depth
    delta = G
    for k in range(net.depth - 1, -1, -1):
        delta = delta * net.layers[k].activation.derivative(zs[k])
        dWs[k] = delta.T @ hs[k]
        dbs[k] = delta.sum(axis=0)
        if k:
            delta = delta @ net.layers[k].weight
    return ParamGradient(dWs, dbs)


def backprop(net, x, output_gradient):
    x = np.asarray(x, dtype=np.float64)
    if x.ndim != 1:
        raise DimensionError("backprop takes a single input vector; use backprop_batch")
    return backprop_batch(net, x[None, :], np.asarray(output_gradient, dtype=np.float64)[None, :])


def _left_right_products(net, masks, n):
    """Products to the left and right of every weight matrix inside A.

    ``A = left[k] @ W_k @ right[k]`` for each layer k, with left of shape
    (n, out, width_out_k) and right of shape (n, width_in_k, D).
    """
    L = net.depth
    left = [None] * L
    left[L - 1] = np.broadcast_to(np.eye(net.output_dim), (n, net.output_dim, net.output_dim))
    for k in range(L - 2, -1, -1):
        left[k] = (left[k + 1] @ net.layers[k + 1].weight) * masks[k][:, None, :]
    right = [None] * L
    right[0] = None  # identity on the input space
    for k in range(1, L):
        prev = net.layers[k - 1].weight
        prod = prev if right[k - 1] is None else prev @ right[k - 1]
        right[k] = masks[k - 1][:, :, None] * prod
    return left, right


def penalty_terms(net, X, X_shifted, norm_kind="spectral", rng=None):
    """Values ``‖A[x'] − A[x]‖`` per row and their weight gradient, summed over rows.

    Activation patterns at both points are held fixed, so the value is a
    multilinear function of the weights.  For the spectral norm the gradient
    uses the top singular pair of the difference.
    """
    _require_piecewise(net)
    X, _ = _as_batch(net, X)
    X2, _ = _as_batch(net, X_shifted)
    if X.shape != X2.shape:
        raise DimensionError("X and X_shifted must have the same shape")
    n = X.shape[0]
    m1 = _masks(net, patterns_batch(net, X))
    m2 = _masks(net, patterns_batch(net, X2))
    if net.depth == 1:
        return np.zeros(n), ParamGradient.zeros_like(net)
    dA = _slopes_from_masks(net, m2, n) - _slopes_from_masks(net, m1, n)
    if norm_kind == "spectral":
        values, U, V = batched_top_singular_pairs(dA, rng=rng)
        G = U[:, :, None] * V[:, None, :]
    elif norm_kind == "frobenius":
        values = np.sqrt(np.sum(dA * dA, axis=(1, 2)))
        G = dA / np.where(values > 0, values, 1.0)[:, None, None]
    else:
        raise ValueError(f"unknown norm kind {norm_kind!r}")
    grads = ParamGradient.zeros_like(net)
    for masks, sign in ((m2, 1.0), (m1, -1.0)):
        left, right = _left_right_products(net, masks, n)
        for k in range(net.depth):
            GR = G if right[k] is None else np.einsum("bod,bkd->bok", G, right[k])
            grads.weights[k] += sign * np.einsum("boi,bok->ik", left[k], GR)
    return values, grads


def penalty_gradient(net, x, u, eps, norm_kind="spectral"):
    """``‖A[x + eps·u] − A[x]‖`` and its gradient with both patterns frozen."""
    if eps <= 0:
        raise ValueError("eps must be positive")
    x = np.asarray(x, dtype=np.float64)
    u = np.asarray(u, dtype=np.float64)
    values, grads = penalty_terms(net, x[None, :], (x + eps * u)[None, :], norm_kind)
    return float(values[0]), grads


def scale_output(net, alpha):
    """Multiply the final layer's weights and bias by ``alpha``."""
    layers = list(net.layers)
    last = layers[-1]
    layers[-1] = Layer(alpha * last.weight, alpha * last.bias, last.activation)
    return Network(tuple(layers))


def certified_lipschitz(net):
    """Product of layer spectral norms; bounds ‖A[x]‖₂ for (leaky) relu / abs nets."""
    out = 1.0
    for layer in net.layers:
        out *= spectral_norm(layer.weight)
    return out


# -- plain-text serialization ---------------------------------------------------

HEADER = "maso-net v1"


def _fmt(values):
    return " ".join(f"{v:.17g}" for v in values)


def dumps(net):
    lines = [f"{HEADER} D={net.input_dim} L={net.depth}"]
    for layer in net.layers:
        out_dim, in_dim = layer.weight.shape
        lines.append(f"{out_dim} {in_dim}")
        lines.append(str(layer.activation))
        lines.extend(_fmt(row) for row in layer.weight)
        lines.append(_fmt(layer.bias))
    return "\n".join(lines) + "\n"


def loads(text):
    lines = text.splitlines()
    head = lines[0].split()
    if " ".join(head[:2]) != HEADER:
        raise ValueError(f"not a {HEADER} file: {lines[0]!r}")
    fields = dict(tok.split("=") for tok in head[2:])
    depth = int(fields["L"])
    pos = 1
    layers = []
    for _ in range(depth):
        out_dim, in_dim = (int(t) for t in lines[pos].split())
        act_tokens = lines[pos + 1].split()
        act = Activation(act_tokens[0], float(act_tokens[1]) if len(act_tokens) > 1 else 0.0)
        pos += 2
        W = np.array([[float(t) for t in lines[pos + r].split()] for r in range(out_dim)]).reshape(out_dim, in_dim)
        pos += out_dim
        b = np.array([float(t) for t in lines[pos].split()])
        pos += 1
        layers.append(Layer(W, b, act))
    net = Network(tuple(layers))
    if net.input_dim != int(fields["D"]):
        raise DimensionError("header D does not match the first layer")
    return net


def save_network(net, path):
    with open(path, "w") as fh:
        fh.write(dumps(net))


def load_network(path):
    with open(path) as fh:
        return loads(fh.read())
