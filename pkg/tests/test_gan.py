import json
import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from kddgan.gan import (
    Adam, BatchNormState, DiscriminatorNet, GeneratorNet, TabularGAN, augment, batch_norm_forward,
    bce_loss, class_seed, default_targets, discriminator_loss_and_grads, gan_scale,
    generator_loss_and_grads, leaky_relu, sigmoid, snap_categoricals, synthesize, train_gan,
)
from kddgan.preprocess import Block, FeatureMatrix

LATENT, G_W, D_W, WIDTH = 5, (7, 6, 6, 5), (6, 5, 4), 4


def nets(seed=0):
    rng = np.random.default_rng(seed)
    return GeneratorNet(LATENT, G_W, WIDTH, rng), DiscriminatorNet(WIDTH, D_W, rng), rng


def rel_err(a, n):
    scale = max(abs(a), abs(n))
    return 0.0 if scale < 1e-10 else abs(a - n) / scale


def fd_check(params, analytic, loss, rng, eps=1e-5, coords=10):
    worst = 0.0
    for p, g in zip(params, analytic):
        flat, gflat = p.reshape(-1), g.reshape(-1)
        for i in rng.choice(flat.size, size=min(coords, flat.size), replace=False):
            old = flat[i]
            flat[i] = old + eps
            up = loss()
            flat[i] = old - eps
            down = loss()
            flat[i] = old
            worst = max(worst, rel_err(gflat[i], (up - down) / (2 * eps)))
    return worst


def test_leaky_relu_values():
    assert leaky_relu(2.0) == 2.0
    assert leaky_relu(-1.0) == -0.2
    assert leaky_relu(0.0) == 0.0
    with pytest.raises(ValueError):
        leaky_relu(1.0, slope=1.5)


def test_bce_values():
    assert bce_loss([0.5, 0.5], [1, 0]) == pytest.approx(math.log(2), abs=1e-9)
    assert bce_loss([1 - 1e-7], [1]) == pytest.approx(0.0, abs=1e-6)
    assert bce_loss([1.0], [1]) == pytest.approx(-math.log(1 - 1e-7))
    assert np.isfinite(bce_loss([0.0], [1]))
    with pytest.raises(ValueError):
        bce_loss([0.5], [1, 0])


@settings(max_examples=60, deadline=None)
@given(st.lists(st.tuples(st.floats(0, 1), st.integers(0, 1)), min_size=1, max_size=20))
def test_bce_symmetry_and_nonnegativity(pairs):
    p = np.array([a for a, _ in pairs])
    y = np.array([b for _, b in pairs], dtype=float)
    loss = bce_loss(p, y)
    assert loss >= 0
    assert loss == pytest.approx(bce_loss(1 - p, 1 - y), rel=1e-9, abs=1e-12)


@settings(max_examples=40, deadline=None)
@given(st.floats(-1e4, 1e4))
def test_sigmoid_stays_in_closed_unit_interval(x):
    s = float(sigmoid(x))
    assert 0.0 <= s <= 1.0
    assert s == pytest.approx(1 / (1 + math.exp(-x)) if x > -700 else 0.0, abs=1e-12)


def test_batch_norm_train_mode_standardises():
    rng = np.random.default_rng(0)
    x = rng.normal(3, 2, size=(32, 5))
    state = BatchNormState.init(5)
    y, (xhat, _) = batch_norm_forward(x, state, "train")
    np.testing.assert_allclose(xhat.mean(axis=0), 0, atol=1e-6)
    np.testing.assert_allclose(xhat.var(axis=0), 1, atol=1e-5)
    np.testing.assert_array_equal(y, xhat)


def test_batch_norm_running_update_one_step():
    x = np.array([[1.0, 2.0], [3.0, 6.0], [5.0, 1.0]])
    state = BatchNormState.init(2, momentum=0.9)
    batch_norm_forward(x, state, "train")
    np.testing.assert_allclose(state.running_mean, 0.1 * 0 + 0.9 * x.mean(axis=0))
    np.testing.assert_allclose(state.running_var, 0.1 * 1 + 0.9 * x.var(axis=0))


def test_batch_norm_eval_and_single_row():
    state = BatchNormState.init(3)
    state.running_mean[:] = [1.0, -2.0, 0.5]
    out, _ = batch_norm_forward(state.running_mean[None, :].copy(), state, "eval")
    np.testing.assert_allclose(out, 0)
    with pytest.raises(ValueError):
        batch_norm_forward(np.ones((1, 3)), state, "train")


def test_generator_shapes_range_and_determinism():
    gen, disc, rng = nets()
    z = np.random.default_rng(1).standard_normal((16, LATENT))
    out, _ = gen.forward(z, "train")
    assert out.shape == (16, WIDTH) and np.all((out > 0) & (out < 1))
    gen2, _, _ = nets()
    np.testing.assert_array_equal(gen2.forward(z, "train")[0], out)
    p = disc.proba(out)
    assert p.shape == (16,) and np.all((p > 0) & (p < 1))
    with pytest.raises(ValueError):
        gen.forward(np.zeros((4, LATENT + 1)))


def test_block_counts_are_fixed():
    rng = np.random.default_rng(0)
    with pytest.raises(ValueError):
        GeneratorNet(4, (8, 8, 8), 3, rng)
    with pytest.raises(ValueError):
        DiscriminatorNet(3, (8, 8), rng)


def test_discriminator_gradients_match_finite_differences():
    gen, disc, rng = nets(3)
    real = rng.uniform(size=(8, WIDTH))
    fake = rng.uniform(size=(8, WIDTH))
    _, grads = discriminator_loss_and_grads(disc, real, fake)
    loss = lambda: discriminator_loss_and_grads(disc, real, fake)[0]
    assert fd_check(disc.params(), grads, loss, rng) < 1e-4


def test_generator_gradients_match_finite_differences():
    gen, disc, rng = nets(4)
    z = rng.standard_normal((8, LATENT))
    _, grads = generator_loss_and_grads(gen, disc, z)
    loss = lambda: generator_loss_and_grads(gen, disc, z)[0]
    assert len(grads) == len(gen.params())
    assert fd_check(gen.params(), grads, loss, rng) < 1e-4


def test_discriminator_input_gradient():
    _, disc, rng = nets(5)
    x = rng.uniform(size=(8, WIDTH))
    logits, cache = disc.forward(x)
    _, dx = disc.backward(np.ones(8), cache)
    eps = 1e-6
    for i, j in [(0, 0), (3, 2), (7, 3)]:
        xp, xm = x.copy(), x.copy()
        xp[i, j] += eps
        xm[i, j] -= eps
        fd = (disc.forward(xp)[0].sum() - disc.forward(xm)[0].sum()) / (2 * eps)
        assert rel_err(dx[i, j], fd) < 1e-6


def test_adam_first_step_moves_by_learning_rate():
    _, disc, _ = nets(6)
    before = [p.copy() for p in disc.params()]
    opt = Adam(disc, lr=1e-3)
    grads = [np.full_like(p, 2.0) for p in disc.params()]
    opt.step(grads)
    for b, a in zip(before, disc.params()):
        np.testing.assert_allclose(b - a, 1e-3, rtol=1e-6)


def toy_rows(n=64, seed=0):
    return np.clip(np.random.default_rng(seed).normal(0.7, 0.05, (n, 2)), 0, 1)


SMALL = dict(latent_dim=8, generator_widths=(16, 16, 16, 16), discriminator_widths=(16, 16, 8), batch_size=16)


def test_training_trace_and_bitwise_determinism():
    X = toy_rows()
    a = TabularGAN(epochs=7, random_state=3, **SMALL).fit(X)
    b = TabularGAN(epochs=7, random_state=3, **SMALL).fit(X)
    assert len(a.trace_.g_loss) == len(a.trace_.d_loss) == 7
    assert a.to_json() == b.to_json()
    assert a.trace_.to_csv().splitlines()[0] == "epoch,g_loss,d_loss"
    assert len(a.trace_.to_csv().splitlines()) == 8


def test_fit_validation():
    with pytest.raises(ValueError, match="batch_size"):
        TabularGAN(epochs=1, batch_size=64).fit(toy_rows(10))
    with pytest.raises(ValueError, match=r"\[0, 1\]"):
        TabularGAN(epochs=1, **SMALL).fit(toy_rows() + 1)
    with pytest.raises(ValueError):
        TabularGAN(epochs=0, **SMALL).fit(toy_rows())
    with pytest.raises(ValueError):
        TabularGAN(epochs=1, **{**SMALL, "batch_size": 1}).fit(toy_rows())


def test_sample_and_json_roundtrip():
    gan = TabularGAN(epochs=3, **SMALL).fit(toy_rows())
    s = synthesize(gan, 500, seed=9)
    assert s.shape == (500, 2) and np.all((s >= 0) & (s <= 1))
    np.testing.assert_array_equal(s, synthesize(gan, 500, seed=9))
    again = TabularGAN.from_dict(json.loads(gan.to_json()))
    np.testing.assert_array_equal(again.sample(50, 1), gan.sample(50, 1))
    with pytest.raises(ValueError):
        gan.sample(0)


def _blocks():
    return (
        Block("proto", "onehot", 0, 3, ("a", "b", "c")),
        Block("flag", "ordinal", 3, 1, ("x", "y", "z", "w", "v")),
        Block("num", "minmax", 4, 1),
    )


def test_snap_categoricals_makes_valid_codes():
    rows = np.random.default_rng(0).uniform(size=(200, 5))
    snapped = snap_categoricals(rows, _blocks())
    assert np.all(snapped[:, :3].sum(axis=1) == 1)
    assert set(np.unique(snapped[:, :3])) <= {0.0, 1.0}
    assert set(np.round(snapped[:, 3] * 4, 12)) <= {0.0, 1.0, 2.0, 3.0, 4.0}
    np.testing.assert_array_equal(snapped[:, 4], rows[:, 4])
    assert gan_scale(_blocks(), 5).tolist() == [1, 1, 1, 4, 1]


def _class_matrix(seed=0):
    rng = np.random.default_rng(seed)
    counts = [80, 40, 20]
    vals, ids = [], []
    for c, n in enumerate(counts):
        block = np.zeros((n, 5))
        block[np.arange(n), rng.integers(0, 3, n)] = 1
        block[:, 3] = rng.integers(0, 5, n)
        block[:, 4] = np.clip(rng.normal(0.2 + 0.3 * c, 0.05, n), 0, 1)
        vals.append(block)
        ids.append(np.full(n, c))
    return FeatureMatrix(np.vstack(vals), ("a", "b", "c", "flag", "num"), np.concatenate(ids),
                         ("normal", "dos", "rare"), _blocks())


def test_augment_contract():
    fm = _class_matrix()
    res = augment(fm, {"dos": 80, "rare": 50, "normal": 10}, epochs=2, **SMALL)
    m = res.matrix
    np.testing.assert_array_equal(m.values[:len(fm)], fm.values)
    np.testing.assert_array_equal(m.class_ids[:len(fm)], fm.class_ids)
    counts = np.bincount(m.class_ids)
    assert counts.tolist() == [80, 80, 50]
    assert set(res.gans) == {"dos", "rare"}
    new = m.values[len(fm):]
    assert np.all(new[:, :3].sum(axis=1) == 1)
    assert np.all(np.isin(new[:, 3], np.arange(5)))
    assert len(res.gans["rare"].trace_.g_loss) == 2


def test_augment_identity_and_absent_class():
    fm = _class_matrix()
    assert augment(fm, {}, epochs=1, **SMALL).matrix is fm
    with pytest.raises(ValueError, match="absent"):
        augment(fm, {"ghost": 10}, epochs=1, **SMALL)


def test_default_targets_balance_attack_classes():
    fm = _class_matrix()
    targets = default_targets(fm)
    assert targets == {"dos": 40, "rare": 40}
    res = augment(fm, targets, epochs=1, **SMALL)
    counts = np.bincount(res.matrix.class_ids)
    assert counts[1] == counts[2] == 40


def test_per_class_gan_sees_only_its_class(monkeypatch):
    fm = _class_matrix()
    seen = []
    real_fit = TabularGAN.fit

    def spy(self, X, y=None):
        seen.append(X.copy())
        return real_fit(self, X, y)

    monkeypatch.setattr(TabularGAN, "fit", spy)
    augment(fm, {"rare": 30}, epochs=1, **SMALL)
    assert len(seen) == 1
    expected = fm.of_class(2).values / gan_scale(fm.blocks, 5)
    np.testing.assert_array_equal(seen[0], expected)


def test_train_gan_rejects_mixed_classes_and_seeds_differ_by_class():
    fm = _class_matrix()
    with pytest.raises(ValueError, match="single class"):
        train_gan(fm, epochs=1, **SMALL)
    assert class_seed(0, "nmap") != class_seed(0, "satan")
    assert class_seed(0, "nmap") == class_seed(0, "nmap")


def test_short_toy_run_moves_towards_the_data():
    X = toy_rows(128, seed=1)
    gan = TabularGAN(epochs=150, random_state=0, **{**SMALL, "batch_size": 32}).fit(X)
    untrained = TabularGAN(epochs=1, random_state=0, **{**SMALL, "batch_size": 32}).fit(X)
    err = np.abs(gan.sample(1000, 0).mean(axis=0) - X.mean(axis=0)).max()
    err0 = np.abs(untrained.sample(1000, 0).mean(axis=0) - X.mean(axis=0)).max()
    assert err < err0
