import json

import numpy as np
import pytest

from tangent_rugosity import network as nw
from tangent_rugosity.augment import (
    AugmentationSet,
    LossSpec,
    augmented_loss,
    check_K2,
    estimate_K1,
    estimate_K2,
    make_augmentation,
    make_flips,
    make_tangent_jitter,
    make_translations,
    plain_loss,
    theorem1_bound,
    verify_firstorder_bound,
)
from tangent_rugosity.errors import ConfigurationError, NonContinuousAugmentationError
from tangent_rugosity.linalg import make_rng
from tangent_rugosity.manifold import Dataset, gen_circle, gen_spirals
from tangent_rugosity.train import TrainConfig, train


def image_dataset(images):
    images = np.asarray(images, dtype=np.float64)
    n, h, w = images.shape
    return Dataset(images.reshape(n, -1), np.zeros(n, dtype=np.int64), 2, image_shape=(1, h, w))


@pytest.fixture(scope="module")
def trained_spirals():
    rng = make_rng(0)
    ds = gen_spirals(200, 0.0, rng)
    net = nw.init_network([2, 32, 32, 2], "relu", make_rng(1))
    net, _ = train(net, ds, None, TrainConfig(epochs=60, eval_every=60))
    return net, ds


# -- construction --------------------------------------------------------------------


def test_jitter_zero_eps():
    ds = gen_circle(3, 20, 0.0, make_rng(0))
    assert not np.any(make_tangent_jitter(ds, 5, 0.0, make_rng(1)).displacements)


def test_jitter_stays_in_tangent_space_and_bound():
    ds = gen_circle(4, 50, 0.0, make_rng(0))
    aug = make_tangent_jitter(ds, 6, 0.05, make_rng(1))
    B = ds.tangent_bases
    U = aug.displacements
    resid = U - np.einsum("nDd,nmd->nmD", B, np.einsum("nDd,nmD->nmd", B, U))
    assert np.max(np.linalg.norm(resid, axis=2)) <= 1e-10
    assert aug.eps_bound <= 0.05
    assert np.all(np.linalg.norm(U, axis=2) > 0)


def test_jitter_circle_norm_window():
    eps = 0.05
    ds = gen_circle(3, 40, 0.0, make_rng(2))
    aug = make_tangent_jitter(ds, 8, eps, make_rng(3))
    norms = np.linalg.norm(ds.points[:, None, :] + aug.displacements, axis=2)
    # tangent step r ⊥ x on the unit circle: norm = sqrt(1 + r²)
    assert np.all(norms >= 1 - eps) and np.all(norms <= 1 + eps)


def test_translations_count_and_zero_image():
    ds = image_dataset(np.zeros((2, 5, 5)))
    aug = make_translations(ds, 1)
    assert aug.m == 8
    assert not np.any(aug.displacements)


def test_translation_pads_with_background():
    ds = Dataset(np.full((2, 16), -0.25), np.zeros(2, dtype=np.int64), 2, image_shape=(1, 4, 4), background=-0.25)
    assert not np.any(make_translations(ds, 1).displacements)


def test_translation_diagonal_norm():
    img = np.zeros((1, 5, 5))
    img[0, 2, 2] = 0.7
    aug = make_translations(image_dataset(img), 1)
    from tangent_rugosity.manifold import translation_shifts

    for (dx, dy), u in zip(translation_shifts(1), aug.displacements[0]):
        if dx and dy:
            assert np.linalg.norm(u) == pytest.approx(np.sqrt(2) * 0.7, abs=1e-15)


def test_translations_need_image_metadata():
    with pytest.raises(ConfigurationError):
        make_translations(gen_circle(3, 10, 0.0, make_rng(0)), 1)


def test_flip_flagged_and_rejected(trained_spirals):
    ds = image_dataset(make_rng(0).uniform(size=(3, 4, 4)))
    aug = make_flips(ds)
    assert aug.non_continuous and aug.m == 1
    net = nw.init_network([16, 4, 2], "relu", make_rng(0))
    with pytest.raises(NonContinuousAugmentationError):
        theorem1_bound(net, ds, aug, LossSpec())
    with pytest.raises(NonContinuousAugmentationError):
        verify_firstorder_bound(net, ds, aug, LossSpec())


def test_make_augmentation_dispatch():
    ds = gen_circle(3, 10, 0.0, make_rng(0))
    assert make_augmentation("none", ds, make_rng(0)).m == 0
    with pytest.raises(ConfigurationError):
        make_augmentation("rotate", ds, make_rng(0))


# -- losses ---------------------------------------------------------------------------


def test_augmented_loss_degenerate_cases():
    rng = make_rng(4)
    ds = gen_spirals(40, 0.0, rng)
    net = nw.init_network([2, 8, 2], "relu", rng)
    loss = LossSpec()
    L = plain_loss(net, ds, loss)
    assert augmented_loss(net, ds, AugmentationSet(np.zeros((40, 0, 2))), loss) == L
    assert augmented_loss(net, ds, AugmentationSet(np.zeros((40, 3, 2))), loss) == L


def test_augmented_loss_affine_closed_form():
    rng = make_rng(5)
    A, b = rng.standard_normal((1, 2)), rng.standard_normal(1)
    net = nw.Network((nw.Layer(A, b),))
    X = rng.standard_normal((6, 2))
    y = rng.standard_normal(6)
    ds = Dataset(X, y, 1)
    U = rng.standard_normal((6, 3, 2)) * 0.1
    loss = LossSpec("squared_error")
    # oracle: residuals of an affine map written out per pair
    total = 0.0
    for i in range(6):
        r0 = float(A[0] @ X[i] + b[0] - y[i])
        total += r0 * r0
        for j in range(3):
            r = r0 + float(A[0] @ U[i, j])
            total += r * r
    assert augmented_loss(net, ds, AugmentationSet(U), loss) == pytest.approx(total / 4, rel=1e-13)


def test_K2_choices_and_check():
    rng = make_rng(6)
    ds = gen_spirals(30, 0.0, rng)
    net = nw.init_network([2, 8, 2], "relu", rng)
    aug = make_tangent_jitter(ds, 2, 0.01, rng)
    assert estimate_K2(net, ds, aug, LossSpec()) == pytest.approx(np.sqrt(2))
    assert estimate_K2(net, ds, aug, LossSpec("squared_error")) > 0
    with pytest.raises(ConfigurationError):
        check_K2(LossSpec("squared_error", K2=1e-9), net, ds)


def test_K1_examples():
    ds = gen_circle(3, 20, 0.0, make_rng(0))
    aug = make_tangent_jitter(ds, 3, 0.1, make_rng(1))
    ident = nw.Network((nw.Layer(np.eye(3), np.zeros(3)),))
    assert estimate_K1(ident, ds, aug) == pytest.approx(1.0, rel=1e-12)
    net = nw.init_network([3, 10, 10, 2], "relu", make_rng(2))
    k = estimate_K1(net, ds, aug)
    assert estimate_K1(nw.scale_output(net, 3.0), ds, aug) == pytest.approx(3.0 * k, rel=1e-9)
    assert k <= nw.certified_lipschitz(net)


# -- bound ----------------------------------------------------------------------------------


def test_bound_zero_displacements(trained_spirals):
    net, ds = trained_spirals
    rep = theorem1_bound(net, ds, AugmentationSet(np.zeros((ds.n, 4, 2))), LossSpec())
    assert rep.rhs == rep.L
    assert rep.term_A == rep.term_b == rep.term_eps == 0.0


def test_bound_affine_network():
    rng = make_rng(7)
    ds = gen_spirals(30, 0.0, rng)
    net = nw.Network((nw.Layer(rng.standard_normal((2, 2)), rng.standard_normal(2)),))
    aug = make_tangent_jitter(ds, 4, 0.05, rng)
    rep = theorem1_bound(net, ds, aug, LossSpec())
    assert rep.term_A == 0.0 and rep.term_b == 0.0
    assert rep.rhs == rep.L + rep.K1 * rep.K2 * aug.m * ds.n * aug.eps_bound / (aug.m + 1)
    res = verify_firstorder_bound(net, ds, aug, LossSpec())
    assert res.min >= -1e-9


def test_pair_residual_degenerate():
    rng = make_rng(8)
    ds = gen_spirals(20, 0.0, rng)
    net = nw.init_network([2, 8, 2], "relu", rng)
    res = verify_firstorder_bound(net, ds, AugmentationSet(np.zeros((20, 2, 2))), LossSpec(), K1=1.0, K2=1.0)
    assert np.array_equal(res.l_tilde, np.repeat(res.base_losses[:, None], 2, axis=1))
    assert np.all(res.residuals == 0.0)


def test_trained_bound_and_identity(trained_spirals):
    net, ds = trained_spirals
    aug = make_tangent_jitter(ds, 5, 0.01, make_rng(9))
    rep = theorem1_bound(net, ds, aug, LossSpec())
    assert rep.residual_min >= -1e-9
    assert rep.first_order_bound_holds
    assert rep.rhs == rep.L + rep.term_A + rep.term_b + rep.term_eps
    assert rep.term_A == rep.R * rep.K2 / (rep.m + 1) * rep.c_hat
    assert rep.K1 <= rep.K1_certified
    fields = json.loads(rep.to_json())
    assert {"L", "L_aug", "term_A", "term_b", "term_eps", "rhs", "K1", "K2", "R"} <= set(fields)
