"""End-to-end acceptance checks, one or more tests per numbered criterion.

Each test carries a ``criterion`` marker; conftest prints one PASS/FAIL line
per criterion at the end of the run. Pipeline criteria run on a real
NSL-KDD file when ``KDDGAN_NSLKDD`` points at one and on seeded synthetic
records otherwise.
"""

import itertools
import json
import math
import os
from pathlib import Path

import numpy as np
import pytest
import yaml

from kddgan import evaluation, synthetic
from kddgan.cli import main
from kddgan.gan import (
    DiscriminatorNet, GeneratorNet, TabularGAN, bce_loss, discriminator_loss_and_grads,
    generator_loss_and_grads, leaky_relu,
)
from kddgan.gbt import BoostedTreesClassifier, softmax_grad_hess, softmax_loss
from kddgan.ingest import clean, load_label_map, map_labels, read_nslkdd
from kddgan.isoforest import IsoForest, anomaly_score, c, grow_isolation_tree
from kddgan.preprocess import TabularEncoder, allocate, stratified_split
from test_gbt import enumerate_first_split
from test_isoforest import c_oracle, expected_path

REAL = os.environ.get("KDDGAN_NSLKDD")
ATTACKS = ("DDoS", "ipsweep", "neptune", "nmap", "portsweep", "satan", "smurf")
# the full-scale GAN budget takes hours on a CPU; augmentation runs use this
REDUCED_EPOCHS = 500


def dataset(root: Path, scale: float) -> Path:
    if REAL:
        return Path(REAL).resolve()
    path = root / f"synthetic-{scale}.txt"
    if not path.exists():
        path.write_text(synthetic.generate_records(scale=scale, seed=0))
    return path


def run_pipeline(root: Path, data: Path, steps, **overrides) -> Path:
    cfg = {"paths": {"dataset": str(data), "out": "out"}, **overrides}
    (root / "cfg.yaml").write_text(yaml.safe_dump(cfg))
    for step in steps:
        assert main([*step, "--config", str(root / "cfg.yaml")]) == 0, step
    return root / "out"


def metrics_of(out: Path, tag: str) -> dict:
    return json.loads((out / f"metrics-{tag}.json").read_text())


@pytest.fixture(scope="module")
def full_data(tmp_path_factory):
    return dataset(tmp_path_factory.mktemp("data"), 1.0)


# -- 1 ---------------------------------------------------------------------

@pytest.mark.slow
@pytest.mark.criterion(1, "baseline test accuracy >= 0.990")
def test_baseline_accuracy(tmp_path, full_data, record_property):
    out = run_pipeline(tmp_path, full_data, [["ingest"], ["train"]])
    acc = metrics_of(out, "baseline")["accuracy"]
    record_property("detail", f"accuracy {acc:.6f} (published 0.995362)")
    assert acc >= 0.990


# -- 2 ---------------------------------------------------------------------

@pytest.mark.slow
@pytest.mark.criterion(2, "augmentation keeps accuracy and the worst attack recall")
def test_augmentation_effect(tmp_path, record_property):
    data = dataset(tmp_path, 0.1)
    out = run_pipeline(
        tmp_path, data, [["ingest"], ["train"], ["train", "--augmented"], ["compare"]],
        gan={"epochs": REDUCED_EPOCHS},
    )
    before, after = metrics_of(out, "baseline"), metrics_of(out, "augmented")
    worst = lambda m: min(m["classes"][c]["recall"] for c in ATTACKS if c in m["classes"])
    record_property("detail", (
        f"accuracy {before['accuracy']:.6f} -> {after['accuracy']:.6f}; "
        f"min attack recall {worst(before):.4f} -> {worst(after):.4f}; "
        f"gan epochs {REDUCED_EPOCHS}"
    ))
    # the published per-class cells sit next to ours in this report for reading, not asserting
    assert "published" in (out / "comparison.txt").read_text().lower()
    assert after["accuracy"] >= before["accuracy"] - 0.005
    assert worst(after) >= worst(before)


# -- 3 ---------------------------------------------------------------------

def _all_coordinates_rel_err(params, grads, loss, eps=1e-5):
    worst = 0.0
    for p, g in zip(params, grads):
        flat, gflat = p.reshape(-1), g.reshape(-1)
        for i in range(flat.size):
            old = flat[i]
            flat[i] = old + eps
            up = loss()
            flat[i] = old - eps
            down = loss()
            flat[i] = old
            fd = (up - down) / (2 * eps)
            scale = max(abs(fd), abs(gflat[i]))
            if scale > 1e-8:
                worst = max(worst, abs(fd - gflat[i]) / scale)
    return worst


@pytest.mark.criterion(3, "GAN and GBT gradients match finite differences")
def test_gan_gradients_all_parameters(record_property):
    rng = np.random.default_rng(0)
    gen = GeneratorNet(4, (6, 5, 5, 4), 3, rng)
    disc = DiscriminatorNet(3, (5, 4, 3), rng)
    real, z = rng.uniform(size=(8, 3)), rng.standard_normal((8, 4))
    fake = rng.uniform(size=(8, 3))
    _, dg = discriminator_loss_and_grads(disc, real, fake)
    d_err = _all_coordinates_rel_err(disc.params(), dg, lambda: discriminator_loss_and_grads(disc, real, fake)[0])
    _, gg = generator_loss_and_grads(gen, disc, z)
    g_err = _all_coordinates_rel_err(gen.params(), gg, lambda: generator_loss_and_grads(gen, disc, z)[0])
    record_property("detail", f"GAN max rel err D {d_err:.1e}, G {g_err:.1e}")
    assert d_err < 1e-4 and g_err < 1e-4


@pytest.mark.criterion(3, "GAN and GBT gradients match finite differences")
def test_gbt_gradient_hessian(record_property):
    rng = np.random.default_rng(1)
    eps = 1e-5
    worst = 0.0
    for _ in range(50):
        k = int(rng.integers(2, 9))
        m = rng.normal(size=(1, k)) * 2
        y = np.array([rng.integers(k)])
        g, h = softmax_grad_hess(m, y)
        for j in range(k):
            e = np.zeros_like(m)
            e[0, j] = eps
            fd_g = (softmax_loss(m + e, y)[0] - softmax_loss(m - e, y)[0]) / (2 * eps)
            # the hessian is the diagonal, i.e. the derivative of g_j along margin j
            fd_h = (softmax_grad_hess(m + e, y)[0][0, j] - softmax_grad_hess(m - e, y)[0][0, j]) / (2 * eps)
            for a, n in ((g[0, j], fd_g), (h[0, j], fd_h)):
                scale = max(abs(a), abs(n))
                if scale > 1e-6:
                    worst = max(worst, abs(a - n) / scale)
    record_property("detail", f"GBT max rel err {worst:.1e}")
    assert worst < 1e-5


# -- 4 ---------------------------------------------------------------------

@pytest.mark.criterion(4, "first split equals the exhaustive gain argmax")
def test_split_gain_oracle_suite(record_property):
    checked = 0
    for n in range(2, 9):
        layouts = {tuple(range(n)), tuple(i // 2 for i in range(n)), tuple((i * i) % 5 for i in range(n))}
        for xs in layouts:
            x = np.array(xs, dtype=float) * 0.75
            for labels in itertools.product((0, 1), repeat=n):
                y = np.array(labels)
                if y.min() == y.max():
                    continue
                m = BoostedTreesClassifier(n_rounds=1, max_depth=1, min_child_weight=0).fit(x[:, None], y)
                best, _ = enumerate_first_split(x, y, 2, mcw=0)
                t = m.trees_[0]
                got = None if t.is_leaf(0) else (t.feature[0], t.threshold[0])
                assert got == (None if best is None else (0, best[0])), (xs, labels)
                checked += 1
    record_property("detail", f"{checked} datasets")
    assert checked > 1000


# -- 5 ---------------------------------------------------------------------

@pytest.mark.criterion(5, "isolation forest formulas, outlier ranking and path oracle")
def test_isolation_forest_checks(record_property):
    assert c(1) == 0.0 and c(2) == 1.0
    for psi in (2, 3, 64, 256):
        assert c(psi) == pytest.approx(c_oracle(psi), rel=1e-12)
        assert anomaly_score(c(psi), psi) == 0.5
    for seed in range(5):
        rng = np.random.default_rng(seed)
        X = np.vstack([rng.normal(size=(500, 2)), [[10.0, 10.0]]])
        s = IsoForest(random_state=seed).fit(X).score_samples(np.array([[10.0, 10.0], X[:500].mean(axis=0)]))
        assert s[0] > s[1]
    values = [0.0, 1.0, 3.0, 7.0, 8.0]
    X = np.array(values)[:, None]
    rng = np.random.default_rng(5)
    sims = np.zeros(len(values))
    n_trees = 10_000
    for _ in range(n_trees):
        sims += grow_isolation_tree(X, rng, 3).path_lengths(X)
    exact = np.array([expected_path(values, v, 3) for v in values])
    worst = float(np.max(np.abs(sims / n_trees - exact) / exact))
    record_property("detail", f"path oracle max rel err {worst:.4f}")
    assert worst < 0.02


# -- 6 ---------------------------------------------------------------------

@pytest.mark.criterion(6, "formula units for BCE, accuracy and LeakyReLU")
def test_formula_units():
    assert abs(bce_loss([0.5, 0.5], [1, 0]) - math.log(2)) <= 1e-9
    truth = np.arange(10) % 3
    pred = truth.copy()
    pred[:2] = (pred[:2] + 1) % 3
    assert evaluation.accuracy(pred, truth) == 0.8
    assert evaluation.metrics(evaluation.confusion(pred, truth, 3)).accuracy == 0.8
    assert leaky_relu(-1.0) == -0.2


# -- 7 ---------------------------------------------------------------------

@pytest.mark.slow
@pytest.mark.criterion(7, "encoder round-trip on the cleaned dataset; split within one row")
def test_encoder_roundtrip_and_split(full_data, record_property):
    ds, _ = clean(read_nslkdd(full_data))
    ds, _ = map_labels(ds, load_label_map(), keep=("normal", *ATTACKS))
    enc = TabularEncoder().fit(ds)
    fm = enc.transform(ds)
    back = enc.inverse_transform(fm)
    for spec in ds.feature_specs:
        a, b = ds.column(spec.name), back.column(spec.name)
        if spec.kind == "categorical":
            assert list(a) == list(b), spec.name
        else:
            np.testing.assert_allclose(b, a, rtol=1e-12, atol=1e-9, err_msg=spec.name)
    assert list(back.labels) == list(ds.labels)
    np.testing.assert_array_equal(enc.transform(back).values, fm.values)

    split = stratified_split(fm.class_ids, (0.6, 0.2, 0.2), seed=0)
    worst = 0.0
    for k in range(fm.n_classes):
        n = int((fm.class_ids == k).sum())
        got = [int(np.isin(part, np.flatnonzero(fm.class_ids == k)).sum()) for part in (split.train, split.val, split.test)]
        assert sum(got) == n
        worst = max(worst, max(abs(g - r * n) for g, r in zip(got, (0.6, 0.2, 0.2))))
        assert got == allocate(n, (0.6, 0.2, 0.2))
    record_property("detail", f"{len(ds)} rows, worst split deviation {worst:.2f} rows")
    assert worst <= 1.0


# -- 8 ---------------------------------------------------------------------

@pytest.mark.slow
@pytest.mark.criterion(8, "toy GAN means within 0.1 in at least 2 of 3 seeds")
def test_toy_gan_convergence(record_property):
    hits, errs = 0, []
    for seed in range(3):
        X = np.clip(np.random.default_rng(100 + seed).normal(0.7, 0.05, (64, 2)), 0.0, 1.0)
        gan = TabularGAN(epochs=2000, random_state=seed).fit(X)
        err = float(np.abs(gan.sample(2000, seed).mean(axis=0) - X.mean(axis=0)).max())
        errs.append(err)
        hits += err <= 0.1
    record_property("detail", "max mean error per seed " + ", ".join(f"{e:.3f}" for e in errs))
    assert hits >= 2


# -- 9 ---------------------------------------------------------------------

@pytest.mark.slow
@pytest.mark.criterion(9, "two full pipeline runs give byte-identical artifacts")
def test_pipeline_determinism(tmp_path, record_property):
    data = dataset(tmp_path, 0.02)
    runs = []
    for name in ("a", "b"):
        root = tmp_path / name
        root.mkdir()
        out = run_pipeline(root, data, [["all"]], gan={"epochs": 50})
        runs.append({p.name: p.read_bytes() for p in sorted(out.iterdir())})
    assert runs[0].keys() == runs[1].keys()
    differing = [k for k in runs[0] if runs[0][k] != runs[1][k]]
    record_property("detail", f"{len(runs[0])} artifacts compared")
    assert not differing, differing
    assert {"model-baseline.json", "model-augmented.json", "model-isoforest.json", "comparison.json"} <= runs[0].keys()
