"""Datasets on low-dimensional manifolds, tangent estimation and image I/O."""

import gzip
import json
import os
import struct
from dataclasses import dataclass, replace

import numpy as np

from .errors import ConfigurationError, DimensionError, FormatError
from .linalg import orthonormalize, sample_unit_sphere

IDX_IMAGES_MAGIC = 0x00000803
IDX_LABELS_MAGIC = 0x00000801
EIGENGAP_TOL = 1e-12


@dataclass(frozen=True, eq=False)
class Dataset:
    """Points in R^D with labels and an intrinsic dimension.

    ``tangent_bases`` (optional) has shape (n, D, d) with orthonormal columns.
    ``image_shape`` is ``(channels, height, width)`` for image data, and
    ``background`` the value of a blank pixel after normalization, used to
    pad shifted images.
    """

    points: np.ndarray
    labels: np.ndarray
    intrinsic_dim: int
    tangent_bases: np.ndarray = None
    image_shape: tuple = None
    name: str = ""
    background: float = 0.0

    def __post_init__(self):
        X = np.asarray(self.points, dtype=np.float64)
        if X.ndim != 2 or X.shape[0] == 0:
            raise DimensionError(f"points must be a nonempty (n, D) array, got {X.shape}")
        object.__setattr__(self, "points", X)
        labels = np.asarray(self.labels)
        if labels.shape[0] != X.shape[0]:
            raise DimensionError("one label per point is required")
        object.__setattr__(self, "labels", labels)
        if not 1 <= self.intrinsic_dim <= X.shape[1]:
            raise DimensionError(f"intrinsic_dim {self.intrinsic_dim} outside [1, {X.shape[1]}]")
        if self.tangent_bases is not None:
            B = np.asarray(self.tangent_bases, dtype=np.float64)
            if B.shape != (X.shape[0], X.shape[1], self.intrinsic_dim):
                raise DimensionError(f"tangent bases have shape {B.shape}")
            gram = np.einsum("nij,nik->njk", B, B)
            if np.max(np.abs(gram - np.eye(self.intrinsic_dim))) > 1e-10:
                raise ValueError("tangent bases must have orthonormal columns")
            object.__setattr__(self, "tangent_bases", B)
        if self.image_shape is not None:
            shape = tuple(int(s) for s in self.image_shape)
            if int(np.prod(shape)) != X.shape[1]:
                raise DimensionError(f"image shape {shape} does not match D={X.shape[1]}")
            object.__setattr__(self, "image_shape", shape)

    @property
    def n(self):
        return self.points.shape[0]

    @property
    def dim(self):
        return self.points.shape[1]

    @property
    def radius(self):
        return float(np.max(np.linalg.norm(self.points, axis=1)))

    def subset(self, index):
        index = np.asarray(index)
        bases = None if self.tangent_bases is None else self.tangent_bases[index]
        return replace(self, points=self.points[index], labels=self.labels[index], tangent_bases=bases)


@dataclass(frozen=True, eq=False)
class TangentBasis:
    basis: np.ndarray
    anchor_index: int
    warning: str = None

    @property
    def dim(self):
        return self.basis.shape[1]


def split(ds, n_test, rng):
    """Random train/test split of a dataset (test gets ``n_test`` points)."""
    if not 0 < n_test < ds.n:
        raise ValueError("n_test must lie strictly between 0 and n")
    perm = rng.permutation(ds.n)
    return ds.subset(np.sort(perm[n_test:])), ds.subset(np.sort(perm[:n_test]))


def random_rotation(D, rng):
    Q, R = np.linalg.qr(rng.standard_normal((D, D)))
    return Q * np.sign(np.diag(R))


def gen_circle(D, n, noise, rng):
    """Unit circle, rotated into R^D; label 1 on the lower half (angle >= pi).

    Angles are evenly spaced with a random phase.
    """
    if D < 2:
        raise DimensionError("the circle needs D >= 2")
    if n < 3 or noise < 0:
        raise ValueError("need n >= 3 and noise >= 0")
    Q = random_rotation(D, rng)
    phase = rng.uniform()
    theta = 2.0 * np.pi * (np.arange(n) + phase) / n
    flat = np.zeros((n, D))
    flat[:, 0], flat[:, 1] = np.cos(theta), np.sin(theta)
    tangent = np.zeros((n, D))
    tangent[:, 0], tangent[:, 1] = -np.sin(theta), np.cos(theta)
    points = flat @ Q.T
    labels = (theta % (2 * np.pi) >= np.pi).astype(np.int64)
    bases = None
    if noise > 0:
        points = points + noise * rng.standard_normal(points.shape)
    else:
        bases = (tangent @ Q.T)[:, :, None]
    return Dataset(points, labels, 1, bases, name="circle")


def swiss_roll_point(t, h):
    return np.stack([t * np.cos(t), h, t * np.sin(t)], axis=-1)


def gen_swiss_roll(n, noise, rng):
    """Swiss roll in R^3: (t cos t, h, t sin t), t in [1.5pi, 4.5pi], h in [0, 21].

    Labels are the roll parameter t (a regression target).
    """
    if n < 10:
        raise ValueError("need n >= 10")
    t = 1.5 * np.pi * (1.0 + 2.0 * rng.uniform(size=n))
    h = 21.0 * rng.uniform(size=n)
    points = swiss_roll_point(t, h)
    bases = None
    if noise > 0:
        points = points + noise * rng.standard_normal(points.shape)
    else:
        dt = np.stack([np.cos(t) - t * np.sin(t), np.zeros(n), np.sin(t) + t * np.cos(t)], axis=1)
        dt /= np.linalg.norm(dt, axis=1, keepdims=True)
        dh = np.broadcast_to([0.0, 1.0, 0.0], (n, 3))
        bases = np.stack([dt, dh], axis=2)
    return Dataset(points, t, 2, bases, name="swiss_roll")


SPIRAL_T_MIN = 0.5
SPIRAL_TURNS = 1.5


def gen_spirals(n, noise, rng, turns=SPIRAL_TURNS):
    """Two interleaved spiral arms in R^2 with radius at most 1.

    Point i goes to arm ``i % 2``; arm k follows angle ``t + k*pi`` at radius
    ``t / t_max``.
    """
    if n < 10:
        raise ValueError("need n >= 10")
    t_max = 2.0 * np.pi * turns
    t = rng.uniform(SPIRAL_T_MIN, t_max, size=n)
    arm = np.arange(n) % 2
    angle = t + np.pi * arm
    r = t / t_max
    points = np.stack([r * np.cos(angle), r * np.sin(angle)], axis=1)
    bases = None
    if noise > 0:
        points = points + noise * rng.standard_normal(points.shape)
    else:
        tang = np.stack(
            [np.cos(angle) / t_max - r * np.sin(angle), np.sin(angle) / t_max + r * np.cos(angle)], axis=1
        )
        bases = (tang / np.linalg.norm(tang, axis=1, keepdims=True))[:, :, None]
    return Dataset(points, arm.astype(np.int64), 1, bases, name="spirals")


def default_neighbors(d):
    return max(2 * d + 2, 8)


def _neighbor_order(points, i):
    dist = np.linalg.norm(points - points[i], axis=1)
    order = np.argsort(dist, kind="stable")
    # x_i itself and exact duplicates of it carry no direction information
    return order[dist[order] > 0], dist


def estimate_tangent_basis(ds, i, k=None, d=None):
    """Local PCA tangent basis at point ``i`` from its ``k`` nearest neighbours.

    The neighbourhood is ``x_i`` plus its ``k`` nearest distinct neighbours
    (ties broken by index); it is centred and its top ``d`` principal directions
    are returned.  A vanishing eigengap is reported on ``warning``.
    """
    d = ds.intrinsic_dim if d is None else d
    k = default_neighbors(d) if k is None else k
    if k < d + 1 or k >= ds.n:
        raise ValueError(f"need d + 1 <= k < n, got k={k}")
    order, _ = _neighbor_order(ds.points, i)
    if order.size < k:
        raise ValueError(f"point {i} has fewer than {k} distinct neighbours")
    hood = np.vstack([ds.points[i], ds.points[order[:k]]])
    hood = hood - hood.mean(axis=0)
    _, s, Vt = np.linalg.svd(hood, full_matrices=False)
    basis = Vt[:d].T
    # fixed sign convention: largest-magnitude entry of each column positive
    pivots = np.argmax(np.abs(basis), axis=0)
    basis = basis * np.sign(basis[pivots, np.arange(d)])
    basis = orthonormalize(basis)
    eig = np.concatenate([s * s, np.zeros(max(0, d + 1 - s.size))])
    warning = None
    if eig[d - 1] - eig[d] < EIGENGAP_TOL:
        warning = f"degenerate neighbourhood at point {i}: eigengap {eig[d - 1] - eig[d]:.3g}"
    return TangentBasis(basis, i, warning)


def estimate_tangent_bases(ds, k=None, d=None):
    """Dataset copy with local-PCA tangent bases at every point."""
    d = ds.intrinsic_dim if d is None else d
    bases = np.stack([estimate_tangent_basis(ds, i, k, d).basis for i in range(ds.n)])
    return replace(ds, intrinsic_dim=d, tangent_bases=bases)


def principal_angle(B1, B2):
    """Largest principal angle (radians) between the column spans of B1 and B2."""
    s = np.linalg.svd(B1.T @ B2, compute_uv=False)
    return float(np.arccos(np.clip(np.min(s), -1.0, 1.0)))


def sample_tangent_direction(basis, rng):
    B = basis.basis if isinstance(basis, TangentBasis) else np.asarray(basis)
    return B @ sample_unit_sphere(B.shape[1], rng)


# -- images -------------------------------------------------------------------


def _image_dims(x, width, height):
    size = width * height
    if x.size == size:
        return 1
    if x.size == 3 * size:
        return 3
    raise DimensionError(f"vector of length {x.size} is not a {height}x{width} image")


def translate_image(x, width, height, dx, dy, fill=0.0):
    """Shift an image by whole pixels (dx to the right, dy down), padding with ``fill``.

    Vectors of length 3*width*height are treated as channel-major colour images.
    """
    x = np.asarray(x, dtype=np.float64)
    if abs(dx) >= width or abs(dy) >= height:
        raise ValueError(f"shift ({dx}, {dy}) too large for a {height}x{width} image")
    channels = _image_dims(x, width, height)
    img = x.reshape(channels, height, width)
    out = np.full_like(img, fill)
    src_r = slice(max(0, -dy), height - max(0, dy))
    dst_r = slice(max(0, dy), height - max(0, -dy))
    src_c = slice(max(0, -dx), width - max(0, dx))
    dst_c = slice(max(0, dx), width - max(0, -dx))
    out[:, dst_r, dst_c] = img[:, src_r, src_c]
    return out.reshape(-1)


def translation_shifts(max_shift):
    """All integer shifts with ``|dx|, |dy| <= max_shift`` except the identity."""
    return [
        (dx, dy)
        for dy in range(-max_shift, max_shift + 1)
        for dx in range(-max_shift, max_shift + 1)
        if (dx, dy) != (0, 0)
    ]


def image_size(ds):
    if ds.image_shape is None:
        raise ConfigurationError("dataset carries no image shape")
    _, height, width = ds.image_shape
    return width, height


def flip_image(x, width, height):
    x = np.asarray(x, dtype=np.float64)
    channels = _image_dims(x, width, height)
    return x.reshape(channels, height, width)[:, :, ::-1].reshape(-1)


def _open(path):
    with open(path, "rb") as fh:
        raw = fh.read()
    if raw[:2] == b"\x1f\x8b":
        raw = gzip.decompress(raw)
    return raw


def read_idx(path, expected_magic):
    """Parse an IDX file; returns the uint8 payload reshaped to its header dims."""
    raw = _open(path)
    if len(raw) < 4:
        raise FormatError("file too short for an IDX header", len(raw))
    (magic,) = struct.unpack(">I", raw[:4])
    if magic != expected_magic:
        raise FormatError(f"bad magic 0x{magic:08x}, expected 0x{expected_magic:08x}", 0)
    ndim = magic & 0xFF
    header_end = 4 + 4 * ndim
    if len(raw) < header_end:
        raise FormatError("truncated IDX header", len(raw))
    dims = struct.unpack(f">{ndim}I", raw[4:header_end])
    size = int(np.prod(dims))
    if len(raw) < header_end + size:
        raise FormatError(f"truncated IDX payload: need {size} bytes", len(raw))
    return np.frombuffer(raw, dtype=np.uint8, count=size, offset=header_end).reshape(dims)


def write_idx(path, array, compress=None):
    array = np.ascontiguousarray(array, dtype=np.uint8)
    magic = 0x00000800 | array.ndim
    payload = struct.pack(f">I{array.ndim}I", magic, *array.shape) + array.tobytes()
    if compress if compress is not None else str(path).endswith(".gz"):
        payload = gzip.compress(payload, mtime=0)
    with open(path, "wb") as fh:
        fh.write(payload)


def normalize_images(pixels):
    """Subtract the dataset's mean pixel value, then scale to infinity norm one.

    Returns the normalized pixels and the value a raw zero pixel maps to.
    """
    X = np.asarray(pixels, dtype=np.float64)
    mean = X.mean()
    X = X - mean
    scale = np.max(np.abs(X))
    if scale == 0:
        return X, -mean
    return X / scale, -mean / scale


def load_idx(images_path, labels_path, limit=None, d=10):
    images = read_idx(images_path, IDX_IMAGES_MAGIC)
    labels = read_idx(labels_path, IDX_LABELS_MAGIC)
    if images.shape[0] != labels.shape[0]:
        raise FormatError("image and label counts differ", 4)
    if limit is not None:
        images, labels = images[:limit], labels[:limit]
    n, height, width = images.shape
    X, blank = normalize_images(images.reshape(n, height * width))
    return Dataset(X, labels.astype(np.int64), d, image_shape=(1, height, width), name="idx", background=blank)


# -- CSV ----------------------------------------------------------------------


def _fmt_row(values):
    return ",".join(f"{v:.17g}" for v in values)


def save_dataset_csv(ds, path):
    """Rows ``x_0,...,x_{D-1},label`` with 17 significant digits."""
    header = ",".join([f"x_{j}" for j in range(ds.dim)] + ["label"])
    with open(path, "w") as fh:
        fh.write(header + "\n")
        for x, y in zip(ds.points, ds.labels):
            fh.write(_fmt_row(list(x) + [y]) + "\n")


def save_tangents_csv(ds, path):
    with open(path, "w") as fh:
        for B in ds.tangent_bases:
            fh.write(_fmt_row(B.ravel()) + "\n")


def dataset_metadata(ds, seed=None):
    return {
        "name": ds.name,
        "n": ds.n,
        "D": ds.dim,
        "d": ds.intrinsic_dim,
        "R": ds.radius,
        "seed": seed,
        "image_shape": list(ds.image_shape) if ds.image_shape else None,
        "background": ds.background,
        "labels": "class" if np.issubdtype(ds.labels.dtype, np.integer) else "real",
    }


def load_dataset_csv(path, d, tangents_path=None, image_shape=None, integer_labels=True, name="", background=0.0):
    data = np.loadtxt(path, delimiter=",", skiprows=1, ndmin=2)
    X, y = data[:, :-1], data[:, -1]
    if integer_labels:
        y = y.astype(np.int64)
    bases = None
    if tangents_path is not None:
        bases = np.loadtxt(tangents_path, delimiter=",", ndmin=2).reshape(X.shape[0], X.shape[1], d)
    return Dataset(X, y, d, bases, image_shape, name, background)


def save_dataset_dir(train, test, directory, seed=None):
    """Write train/test CSVs, tangent CSVs when present, and ``meta.json``."""
    os.makedirs(directory, exist_ok=True)
    meta = {}
    for tag, ds in (("train", train), ("test", test)):
        save_dataset_csv(ds, os.path.join(directory, f"{tag}.csv"))
        if ds.tangent_bases is not None:
            save_tangents_csv(ds, os.path.join(directory, f"{tag}_tangents.csv"))
        meta[tag] = dataset_metadata(ds, seed)
    with open(os.path.join(directory, "meta.json"), "w") as fh:
        json.dump(meta, fh, indent=2, sort_keys=True)
        fh.write("\n")


def load_dataset_dir(directory):
    with open(os.path.join(directory, "meta.json")) as fh:
        meta = json.load(fh)
    out = []
    for tag in ("train", "test"):
        info = meta[tag]
        tangents = os.path.join(directory, f"{tag}_tangents.csv")
        out.append(
            load_dataset_csv(
                os.path.join(directory, f"{tag}.csv"),
                info["d"],
                tangents if os.path.exists(tangents) else None,
                tuple(info["image_shape"]) if info["image_shape"] else None,
                info["labels"] == "class",
                info["name"],
                info.get("background", 0.0),
            )
        )
    return tuple(out)

