"""Mini-batch training: plain loss, augmented loss, or loss plus the rugosity penalty."""

import time
from dataclasses import dataclass, field, fields
from typing import Optional

import numpy as np

from . import network as nw
from .augment import LossSpec, loss_gradients, loss_values, targets
from .errors import ConfigurationError, DivergenceError, UnsupportedActivationError
from .linalg import make_rng
from .rugosity import RugosityConfig, c_hat, draw_directions, jacobian_norm, network_handle, rugosity_piecewise


@dataclass
class TrainConfig:
    epochs: int = 200
    batch_size: int = 16
    optimizer: str = "adam"
    lr: float = 0.005
    beta1: float = 0.9
    beta2: float = 0.999
    adam_eps: float = 1e-8
    lr_schedule: Optional[list] = None
    lam: float = 0.0
    penalty_norm: str = "spectral"
    penalty_mode: str = "sample"
    seed: int = 0
    eval_every: int = 10
    record_wall_time: bool = False

    def __post_init__(self):
        if self.lam < 0:
            raise ConfigurationError("lam must be >= 0")
        if self.batch_size < 1 or self.epochs < 1 or self.eval_every < 1:
            raise ConfigurationError("epochs, batch_size and eval_every must be >= 1")
        if self.optimizer not in ("sgd", "adam"):
            raise ConfigurationError(f"unknown optimizer {self.optimizer!r}")
        if self.penalty_norm not in ("spectral", "frobenius"):
            raise ConfigurationError(f"unknown penalty norm {self.penalty_norm!r}")
        if self.penalty_mode not in ("sample", "full"):
            raise ConfigurationError(f"unknown penalty mode {self.penalty_mode!r}")
        if self.lr_schedule is not None:
            starts = [e for e, _ in self.lr_schedule]
            if any(b <= a for a, b in zip(starts, starts[1:])):
                raise ConfigurationError("lr_schedule epochs must be strictly increasing")

    def schedule(self):
        """(start_epoch, lr) pairs; default decays to 0.3x at half and 0.2x at three quarters."""
        if self.lr_schedule is not None:
            return [(int(e), float(lr)) for e, lr in self.lr_schedule]
        return [(0, self.lr), (self.epochs // 2, 0.3 * self.lr), ((3 * self.epochs) // 4, 0.2 * self.lr)]

    def lr_at(self, epoch):
        lr = self.lr
        for start, value in self.schedule():
            if epoch >= start:
                lr = value
        return lr


class SGD:
    def __init__(self, cfg):
        pass

    def step(self, params, grads, lr):
        for p, g in zip(params, grads):
            p -= lr * g


class Adam:
    def __init__(self, cfg):
        self.b1, self.b2, self.eps = cfg.beta1, cfg.beta2, cfg.adam_eps
        self.t = 0
        self.m = self.v = None

    def step(self, params, grads, lr):
        if self.m is None:
            self.m = [np.zeros_like(p) for p in params]
            self.v = [np.zeros_like(p) for p in params]
        self.t += 1
        c1 = 1.0 - self.b1**self.t
        c2 = 1.0 - self.b2**self.t
        for p, g, m, v in zip(params, grads, self.m, self.v):
            m *= self.b1
            m += (1.0 - self.b1) * g
            v *= self.b2
            v += (1.0 - self.b2) * g * g
            p -= lr * (m / c1) / (np.sqrt(v / c2) + self.eps)


@dataclass
class TraceRow:
    epoch: int
    train_loss: float
    train_acc: float
    test_acc: float
    rugosity_train: float
    rugosity_test: float
    jacobian_norm: float
    c_hat: float
    wall_ms: float


TRACE_FIELDS = [f.name for f in fields(TraceRow)]


def _csv_value(v):
    if isinstance(v, (int, np.integer)):
        return str(v)
    return "" if np.isnan(v) else f"{v:.17g}"


@dataclass
class MetricTrace:
    rows: list = field(default_factory=list)

    def to_csv(self):
        lines = [",".join(TRACE_FIELDS)]
        for row in self.rows:
            lines.append(",".join(_csv_value(getattr(row, name)) for name in TRACE_FIELDS))
        return "\n".join(lines) + "\n"

    def write(self, path):
        with open(path, "w") as fh:
            fh.write(self.to_csv())

    @property
    def final(self):
        return self.rows[-1]


def evaluate(net, ds, loss):
    """Mean loss and accuracy (argmax of the logits; NaN for regression)."""
    F = nw.forward_batch(net, ds.points)
    mean_loss = float(np.mean(loss_values(loss, F, targets(loss, ds.labels, net.output_dim))))
    if not np.issubdtype(ds.labels.dtype, np.integer) or net.output_dim == 1:
        return mean_loss, float("nan")
    return mean_loss, float(np.mean(np.argmax(F, axis=1) == ds.labels))


class _Measures:
    """Rugosity, Jacobian-norm and c_hat evaluation with directions drawn once."""

    def __init__(self, train_ds, test_ds, rugosity_cfg, aug):
        self.train_ds, self.test_ds = train_ds, test_ds
        self.aug = aug if aug is not None and aug.m > 0 and not aug.non_continuous else None
        self.cfg = None
        if rugosity_cfg is not None:
            self.cfg = RugosityConfig(**{**rugosity_cfg.__dict__, "p": 2}).resolved(train_ds)
            self.dirs_train = draw_directions(train_ds, self.cfg)
            self.dirs_test = None if test_ds is None else draw_directions(test_ds, self.cfg)

    def __call__(self, net):
        nan = float("nan")
        if not net.piecewise:
            return nan, nan, nan, nan
        fh = network_handle(net)
        rug_train = rug_test = nan
        if self.cfg is not None:
            rug_train = rugosity_piecewise(fh, self.train_ds, self.cfg, self.dirs_train).squared
            if self.test_ds is not None:
                rug_test = rugosity_piecewise(fh, self.test_ds, self.cfg, self.dirs_test).squared
        jac = jacobian_norm(fh, self.train_ds).value
        chat = nan
        if self.aug is not None:
            chat = c_hat(fh, self.train_ds, self.aug).value
        return rug_train, rug_test, jac, chat


def train(net, train_ds, test_ds, cfg, aug=None, loss=None, rugosity_cfg=None, penalty_set=None):
    """Train a copy of ``net``; returns ``(trained_net, MetricTrace)``.

    * ``aug`` given: each batch item also contributes its m displaced copies,
      weighted ``1 / (m + 1)`` as in the augmented loss; otherwise the plain
      mean loss is used.
    * ``lam > 0``: adds ``lam`` times the batch mean of
      ``‖A[x_i + u_ij] − A[x_i]‖`` with one fresh j per item per step (or the
      average over all j in ``full`` mode), j indexing ``penalty_set``.

    The traced ``c_hat`` uses ``penalty_set`` when given, else ``aug``.
    """
    loss = LossSpec() if loss is None else loss
    if cfg.lam > 0:
        if not net.piecewise:
            raise UnsupportedActivationError("the rugosity penalty needs piecewise-affine activations")
        if penalty_set is None or penalty_set.m == 0:
            raise ConfigurationError("lam > 0 needs a penalty_set of displacements")
        if penalty_set.non_continuous:
            raise ConfigurationError("the rugosity penalty needs a continuous displacement set")
    for name, s in (("augmentation", aug), ("penalty", penalty_set)):
        if s is not None and s.displacements.shape[0] != train_ds.n:
            raise ConfigurationError(f"{name} set does not match the training set")

    net = net.with_params(net.weights, net.biases)
    params = [p for layer in net.layers for p in (layer.weight, layer.bias)]
    opt = Adam(cfg) if cfg.optimizer == "adam" else SGD(cfg)
    measures = _Measures(train_ds, test_ds, rugosity_cfg, penalty_set if penalty_set is not None else aug)
    X_all = train_ds.points
    Y_all = targets(loss, train_ds.labels, net.output_dim)
    use_aug_loss = aug is not None and aug.m > 0
    pen = penalty_set
    trace = MetricTrace()
    t0 = time.perf_counter()
    step = 0

    for epoch in range(1, cfg.epochs + 1):
        lr = cfg.lr_at(epoch - 1)
        perm = make_rng(cfg.seed, epoch).permutation(train_ds.n)
        for start in range(0, train_ds.n, cfg.batch_size):
            idx = perm[start:start + cfg.batch_size]
            X, Y = X_all[idx], Y_all[idx]
            B = idx.size
            if use_aug_loss:
                m = aug.m
                Xb = np.vstack([X, (X[:, None, :] + aug.displacements[idx]).reshape(B * m, -1)])
                Yb = np.concatenate([Y, np.repeat(Y, m, axis=0)])
                weight = 1.0 / (B * (m + 1))
            else:
                Xb, Yb, weight = X, Y, 1.0 / B
            cache = nw.forward_cache(net, Xb)
            F = cache[1][-1]
            batch_loss = float(np.sum(loss_values(loss, F, Yb))) * weight
            if not np.isfinite(batch_loss):
                raise DivergenceError("non-finite training loss", epoch)
            if loss.K2 is not None:
                gnorm = np.max(np.linalg.norm(loss_gradients(loss, F[:B], Yb[:B]), axis=1))
                if gnorm > loss.K2:
                    raise ConfigurationError(f"observed loss-gradient norm {gnorm:.6g} exceeds K2={loss.K2}")
            grads = nw.backprop_batch(net, Xb, weight * loss_gradients(loss, F, Yb), cache=cache)
            if cfg.lam > 0:
                rng = make_rng(cfg.seed, epoch, step)
                if cfg.penalty_mode == "sample":
                    j = rng.integers(0, pen.m, size=B)
                    _, pg = nw.penalty_terms(net, X, X + pen.displacements[idx, j], cfg.penalty_norm)
                    grads = grads + pg.scaled(cfg.lam / B)
                else:
                    X_rep = np.repeat(X, pen.m, axis=0)
                    shifted = X_rep + pen.displacements[idx].reshape(B * pen.m, -1)
                    _, pg = nw.penalty_terms(net, X_rep, shifted, cfg.penalty_norm)
                    grads = grads + pg.scaled(cfg.lam / (B * pen.m))
            flat_grads = [g for pair in zip(grads.weights, grads.biases) for g in pair]
            opt.step(params, flat_grads, lr)
            step += 1

        if epoch % cfg.eval_every == 0 or epoch == cfg.epochs:
            train_loss, train_acc = evaluate(net, train_ds, loss)
            if not np.isfinite(train_loss):
                raise DivergenceError("non-finite training loss", epoch)
            test_acc = evaluate(net, test_ds, loss)[1] if test_ds is not None else float("nan")
            rug_train, rug_test, jac, chat = measures(net)
            wall = (time.perf_counter() - t0) * 1e3 if cfg.record_wall_time else float("nan")
            trace.rows.append(TraceRow(epoch, train_loss, train_acc, test_acc, rug_train, rug_test, jac, chat, wall))
    return net, trace
