import numpy as np
import pytest

from tangent_rugosity import network as nw
from tangent_rugosity.augment import AugmentationSet, LossSpec, make_tangent_jitter
from tangent_rugosity.errors import ConfigurationError, DivergenceError, UnsupportedActivationError
from tangent_rugosity.linalg import make_rng
from tangent_rugosity.manifold import Dataset, gen_spirals, split
from tangent_rugosity.rugosity import RugosityConfig
from tangent_rugosity.train import TRACE_FIELDS, TrainConfig, evaluate, train


def linear_problem(n=40, seed=0):
    rng = make_rng(seed)
    X = rng.standard_normal((n, 3))
    y = X @ np.array([1.0, -2.0, 0.5]) + 0.3
    return Dataset(X, y, 3)


def test_config_validation():
    with pytest.raises(ConfigurationError):
        TrainConfig(lam=-1.0)
    with pytest.raises(ConfigurationError):
        TrainConfig(batch_size=0)
    with pytest.raises(ConfigurationError):
        TrainConfig(lr_schedule=[(0, 0.1), (0, 0.01)])


def test_default_schedule_shape():
    cfg = TrainConfig(epochs=200, lr=0.005)
    assert cfg.lr_at(0) == 0.005
    assert cfg.lr_at(100) == pytest.approx(0.0015)
    assert cfg.lr_at(150) == pytest.approx(0.001)


def test_full_batch_sgd_descends_monotonically():
    ds = linear_problem()
    net = nw.Network((nw.Layer(np.zeros((1, 3)), np.zeros(1)),))
    cfg = TrainConfig(epochs=30, batch_size=ds.n, optimizer="sgd", lr=0.05, lr_schedule=[(0, 0.05)], eval_every=1)
    _, trace = train(net, ds, None, cfg, loss=LossSpec("squared_error"))
    losses = [r.train_loss for r in trace.rows]
    assert all(b < a for a, b in zip(losses, losses[1:]))


def test_zero_displacement_augmentation_matches_plain():
    rng = make_rng(1)
    ds = gen_spirals(60, 0.0, rng)
    net = nw.init_network([2, 16, 2], "relu", rng)
    cfg = TrainConfig(epochs=5, eval_every=5, seed=3)
    a, _ = train(net, ds, None, cfg)
    b, _ = train(net, ds, None, cfg, aug=AugmentationSet(np.zeros((ds.n, 4, 2))))
    # same objective, but the batch sum runs over B(m+1) rows instead of B,
    # so agreement is to rounding rather than bitwise
    for wa, wb in zip(a.weights + a.biases, b.weights + b.biases):
        assert np.max(np.abs(wa - wb)) <= 1e-13


def test_training_does_not_mutate_input():
    ds = linear_problem()
    net = nw.init_network([3, 4, 1], "relu", make_rng(0))
    before = [w.copy() for w in net.weights]
    train(net, ds, None, TrainConfig(epochs=2, eval_every=2), loss=LossSpec("squared_error"))
    assert all(np.array_equal(a, b) for a, b in zip(before, net.weights))


def test_trace_rows_and_csv_determinism():
    rng = make_rng(2)
    tr, te = split(gen_spirals(120, 0.0, rng), 40, rng)
    net = nw.init_network([2, 8, 2], "relu", make_rng(3))
    cfg = TrainConfig(epochs=7, eval_every=3, seed=4)
    aug = make_tangent_jitter(tr, 2, 0.05, make_rng(5))
    rcfg = RugosityConfig(eps=0.05, m=2)
    _, t1 = train(net, tr, te, cfg, aug=aug, rugosity_cfg=rcfg)
    _, t2 = train(net, tr, te, cfg, aug=aug, rugosity_cfg=rcfg)
    assert [r.epoch for r in t1.rows] == [3, 6, 7]
    assert t1.to_csv() == t2.to_csv()
    header, first = t1.to_csv().splitlines()[:2]
    assert header.split(",") == TRACE_FIELDS
    # wall time is off by default so the CSV stays reproducible
    assert first.endswith(",")
    row = t1.final
    assert np.isfinite([row.rugosity_train, row.rugosity_test, row.jacobian_norm, row.c_hat]).all()


def test_penalty_requires_piecewise_and_displacements():
    ds = gen_spirals(20, 0.0, make_rng(0))
    smooth = nw.init_network([2, 4, 2], "tanh", make_rng(0))
    with pytest.raises(UnsupportedActivationError):
        train(smooth, ds, None, TrainConfig(lam=0.1), penalty_set=make_tangent_jitter(ds, 2, 0.05, make_rng(1)))
    net = nw.init_network([2, 4, 2], "relu", make_rng(0))
    with pytest.raises(ConfigurationError):
        train(net, ds, None, TrainConfig(lam=0.1))


@pytest.mark.parametrize("mode", ["sample", "full"])
def test_penalty_runs_and_is_deterministic(mode):
    rng = make_rng(6)
    ds = gen_spirals(40, 0.0, rng)
    net = nw.init_network([2, 8, 8, 2], "relu", rng)
    pen = make_tangent_jitter(ds, 3, 0.1, rng)
    cfg = TrainConfig(epochs=3, eval_every=3, lam=0.5, penalty_mode=mode, seed=1)
    a, ta = train(net, ds, None, cfg, penalty_set=pen)
    b, tb = train(net, ds, None, cfg, penalty_set=pen)
    assert ta.to_csv() == tb.to_csv()
    c, _ = train(net, ds, None, TrainConfig(epochs=3, eval_every=3, seed=1))
    assert not np.array_equal(a.weights[0], c.weights[0])


def test_divergence_reports_epoch():
    ds = linear_problem()
    ds.labels[0] = np.inf
    net = nw.Network((nw.Layer(np.zeros((1, 3)), np.zeros(1)),))
    with pytest.raises(DivergenceError) as info:
        train(net, ds, None, TrainConfig(epochs=3, optimizer="sgd"), loss=LossSpec("squared_error"))
    assert info.value.epoch == 1


def test_K2_checked_during_training():
    ds = linear_problem()
    net = nw.Network((nw.Layer(np.zeros((1, 3)), np.zeros(1)),))
    with pytest.raises(ConfigurationError):
        train(net, ds, None, TrainConfig(epochs=1), loss=LossSpec("squared_error", K2=1e-6))


# -- evaluate -------------------------------------------------------------------------


def test_evaluate_constant_logits_one_class():
    ds = Dataset(make_rng(0).standard_normal((10, 2)), np.zeros(10, dtype=np.int64), 2)
    net = nw.Network((nw.Layer(np.zeros((2, 2)), np.array([1.0, 0.0])),))
    assert evaluate(net, ds, LossSpec())[1] == 1.0


def test_evaluate_random_labels_near_half():
    rng = make_rng(1)
    X = rng.standard_normal((1000, 4))
    ds = Dataset(X, rng.integers(0, 2, 1000), 4)
    net = nw.init_network([4, 16, 2], "relu", make_rng(2))
    # binomial sd at n=1000 is about 0.016
    assert abs(evaluate(net, ds, LossSpec())[1] - 0.5) <= 0.05


def test_evaluate_exact_affine_fit_zero_loss():
    ds = linear_problem()
    net = nw.Network((nw.Layer(np.array([[1.0, -2.0, 0.5]]), np.array([0.3])),))
    loss, acc = evaluate(net, ds, LossSpec("squared_error"))
    assert loss == pytest.approx(0.0, abs=1e-28)
    assert np.isnan(acc)


@pytest.mark.slow
def test_spirals_reach_full_train_accuracy():
    tr, te = split(gen_spirals(1200, 0.0, make_rng(100)), 500, make_rng(200))
    net = nw.init_network([2, 64, 64, 2], "relu", make_rng(0))
    _, trace = train(net, tr, te, TrainConfig(epochs=300, eval_every=300))
    assert trace.final.train_acc >= 0.99
