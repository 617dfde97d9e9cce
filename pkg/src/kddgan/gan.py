"""Per-class tabular GAN written directly in numpy.

Generator: four blocks of Dense -> LeakyReLU(0.2) -> BatchNorm, then a dense
layer with a sigmoid, so generated rows live in [0, 1] like the min-max scaled
training features. Discriminator: three Dense -> LeakyReLU(0.2) blocks and a
sigmoid output. Both are trained with binary cross-entropy; the generator uses
the non-saturating objective (its fakes are scored against target 1).

Everything is float64 and all gradients are computed by explicit
backpropagation, which keeps runs bit-reproducible for a fixed seed.
"""
from __future__ import annotations

import json
import logging
import zlib
from dataclasses import dataclass, field
from typing import Mapping, Sequence

import numpy as np
from numba import njit
from sklearn.base import BaseEstimator
from sklearn.utils.validation import check_array, check_is_fitted

logger = logging.getLogger(__name__)

GAN_FORMAT = "kddgan.gan/1"
BCE_CLAMP = 1e-7


def leaky_relu(v, slope: float = 0.2):
    if not 0 < slope < 1:
        raise ValueError("slope must be in (0, 1)")
    v = np.asarray(v, dtype=np.float64)
    return np.maximum(v, slope * v)


def sigmoid(x):
    # tanh form cannot overflow
    return 0.5 * (1.0 + np.tanh(0.5 * np.asarray(x, dtype=np.float64)))


def bce_loss(predictions, targets) -> float:
    """Mean binary cross-entropy; predictions are clamped to [1e-7, 1 - 1e-7]."""
    p = np.asarray(predictions, dtype=np.float64).ravel()
    y = np.asarray(targets, dtype=np.float64).ravel()
    if p.shape != y.shape or p.size == 0:
        raise ValueError(f"predictions and targets must be non-empty and equal length ({p.size} vs {y.size})")
    p = np.clip(p, BCE_CLAMP, 1.0 - BCE_CLAMP)
    return float(-np.mean(y * np.log(p) + (1.0 - y) * np.log(1.0 - p)))


@dataclass
class DenseLayer:
    weights: np.ndarray  # (out, in)
    bias: np.ndarray  # (out,)

    @classmethod
    def init(cls, n_in: int, n_out: int, rng: np.random.Generator) -> "DenseLayer":
        bound = 1.0 / np.sqrt(n_in)
        return cls(rng.uniform(-bound, bound, (n_out, n_in)), rng.uniform(-bound, bound, n_out))

    def forward(self, x):
        return x @ self.weights.T + self.bias

    def backward(self, x, dy):
        """Returns (dx, dW, db)."""
        return dy @ self.weights, dy.T @ x, dy.sum(axis=0)

    def params(self):
        return [self.weights, self.bias]

    def slots(self):
        return [(self, "weights"), (self, "bias")]


@dataclass
class BatchNormState:
    scale: np.ndarray
    shift: np.ndarray
    running_mean: np.ndarray
    running_var: np.ndarray
    momentum: float = 0.9
    epsilon: float = 1e-5

    @classmethod
    def init(cls, width: int, momentum: float = 0.9, epsilon: float = 1e-5) -> "BatchNormState":
        return cls(np.ones(width), np.zeros(width), np.zeros(width), np.ones(width), momentum, epsilon)

    def params(self):
        return [self.scale, self.shift]

    def slots(self):
        return [(self, "scale"), (self, "shift")]


def batch_norm_forward(batch, state: BatchNormState, mode: str = "train"):
    """Normalise columns of ``batch``; returns ``(output, cache)``.

    Train mode uses the batch mean and (biased) variance and moves the running
    statistics by ``running <- (1 - momentum) * running + momentum * batch``.
    Eval mode normalises with the running statistics.
    """
    if mode == "train":
        if batch.shape[0] < 2:
            raise ValueError("train-mode batch norm needs at least 2 rows")
        mu = batch.mean(axis=0)
        var = batch.var(axis=0)
        m = state.momentum
        state.running_mean[:] = (1.0 - m) * state.running_mean + m * mu
        state.running_var[:] = (1.0 - m) * state.running_var + m * var
    elif mode == "eval":
        mu, var = state.running_mean, state.running_var
    else:
        raise ValueError(f"unknown mode {mode!r}")
    inv_std = 1.0 / np.sqrt(var + state.epsilon)
    xhat = (batch - mu) * inv_std
    return state.scale * xhat + state.shift, (xhat, inv_std)


def batch_norm_backward(dy, state: BatchNormState, cache):
    """Train-mode gradient; returns (dx, dscale, dshift)."""
    xhat, inv_std = cache
    n = dy.shape[0]
    dxhat = dy * state.scale
    dx = inv_std / n * (n * dxhat - dxhat.sum(axis=0) - xhat * (dxhat * xhat).sum(axis=0))
    return dx, (dy * xhat).sum(axis=0), dy.sum(axis=0)


class GeneratorNet:
    def __init__(self, latent_dim, widths, out_dim, rng, slope=0.2, bn_momentum=0.9, bn_epsilon=1e-5):
        if len(widths) != 4:
            raise ValueError("the generator has exactly four hidden blocks")
        self.latent_dim = latent_dim
        self.slope = slope
        self.dense = []
        self.norms = []
        n_in = latent_dim
        for w in widths:
            self.dense.append(DenseLayer.init(n_in, w, rng))
            self.norms.append(BatchNormState.init(w, bn_momentum, bn_epsilon))
            n_in = w
        self.out = DenseLayer.init(n_in, out_dim, rng)

    def slots(self):
        s = []
        for d, bn in zip(self.dense, self.norms):
            s += d.slots() + bn.slots()
        return s + self.out.slots()

    def params(self):
        return [getattr(obj, name) for obj, name in self.slots()]

    def forward(self, z, mode="train"):
        z = np.asarray(z, dtype=np.float64)
        if z.ndim != 2 or z.shape[1] != self.latent_dim:
            raise ValueError(f"latent input must have shape (n, {self.latent_dim})")
        cache = []
        h = z
        for d, bn in zip(self.dense, self.norms):
            a = d.forward(h)
            act = np.maximum(a, self.slope * a)
            y, bn_cache = batch_norm_forward(act, bn, mode)
            cache.append((h, a, bn_cache))
            h = y
        logits = self.out.forward(h)
        out = sigmoid(logits)
        cache.append((h, out))
        return out, cache

    def backward(self, d_out, cache):
        """Gradient of a loss w.r.t. parameters, given dL/d(output)."""
        h, out = cache[-1]
        d_logits = d_out * out * (1.0 - out)
        dh, dw, db = self.out.backward(h, d_logits)
        grads_out = [dw, db]
        grads = []
        for d, bn, (h_in, a, bn_cache) in zip(self.dense[::-1], self.norms[::-1], cache[-2::-1]):
            dact, dscale, dshift = batch_norm_backward(dh, bn, bn_cache)
            da = dact * np.where(a > 0, 1.0, self.slope)
            dh, dw, db = d.backward(h_in, da)
            grads = [dw, db, dscale, dshift] + grads
        return grads + grads_out

    def state(self) -> dict:
        return {
            "dense": [[d.weights.tolist(), d.bias.tolist()] for d in self.dense],
            "norms": [
                [bn.scale.tolist(), bn.shift.tolist(), bn.running_mean.tolist(), bn.running_var.tolist()]
                for bn in self.norms
            ],
            "out": [self.out.weights.tolist(), self.out.bias.tolist()],
        }

    def load_state(self, doc: dict):
        for d, (w, b) in zip(self.dense, doc["dense"]):
            d.weights[:], d.bias[:] = w, b
        for bn, (s, t, m, v) in zip(self.norms, doc["norms"]):
            bn.scale[:], bn.shift[:], bn.running_mean[:], bn.running_var[:] = s, t, m, v
        self.out.weights[:], self.out.bias[:] = doc["out"]


class DiscriminatorNet:
    def __init__(self, in_dim, widths, rng, slope=0.2):
        if len(widths) != 3:
            raise ValueError("the discriminator has exactly three hidden blocks")
        self.slope = slope
        self.dense = []
        n_in = in_dim
        for w in widths:
            self.dense.append(DenseLayer.init(n_in, w, rng))
            n_in = w
        self.out = DenseLayer.init(n_in, 1, rng)

    def slots(self):
        s = []
        for d in self.dense:
            s += d.slots()
        return s + self.out.slots()

    def params(self):
        return [getattr(obj, name) for obj, name in self.slots()]

    def forward(self, x):
        """Returns (logits of shape (n,), cache)."""
        cache = []
        h = x
        for d in self.dense:
            a = d.forward(h)
            cache.append((h, a))
            h = np.maximum(a, self.slope * a)
        cache.append(h)
        return self.out.forward(h)[:, 0], cache

    def backward(self, d_logits, cache):
        """Returns (parameter grads, dL/dx)."""
        h = cache[-1]
        dh, dw, db = self.out.backward(h, d_logits[:, None])
        grads = [dw, db]
        for d, (h_in, a) in zip(self.dense[::-1], cache[-2::-1]):
            da = dh * np.where(a > 0, 1.0, self.slope)
            dh, dw, db = d.backward(h_in, da)
            grads = [dw, db] + grads
        return grads, dh

    def proba(self, x):
        return sigmoid(self.forward(x)[0])

    def state(self) -> dict:
        return {
            "dense": [[d.weights.tolist(), d.bias.tolist()] for d in self.dense],
            "out": [self.out.weights.tolist(), self.out.bias.tolist()],
        }

    def load_state(self, doc: dict):
        for d, (w, b) in zip(self.dense, doc["dense"]):
            d.weights[:], d.bias[:] = w, b
        self.out.weights[:], self.out.bias[:] = doc["out"]


@njit(cache=True)
def _adam_update(p, g, m, v, lr, beta1, beta2, eps, c1, c2):
    for i in range(p.shape[0]):
        m[i] = beta1 * m[i] + (1.0 - beta1) * g[i]
        v[i] = beta2 * v[i] + (1.0 - beta2) * g[i] * g[i]
        p[i] -= lr * (m[i] / c1) / (np.sqrt(v[i] / c2) + eps)


class Adam:
    """Adaptive-moment descent over a network's parameters.

    The parameters are moved into one flat buffer (the layers keep views into
    it) so a step is a single pass over memory.
    """

    def __init__(self, net, lr=2e-4, beta1=0.5, beta2=0.999, eps=1e-8):
        slots = net.slots()
        arrays = [getattr(obj, name) for obj, name in slots]
        self.flat = np.concatenate([a.ravel() for a in arrays])
        offset = 0
        for (obj, name), a in zip(slots, arrays):
            setattr(obj, name, self.flat[offset:offset + a.size].reshape(a.shape))
            offset += a.size
        self.lr, self.beta1, self.beta2, self.eps = lr, beta1, beta2, eps
        self.m = np.zeros_like(self.flat)
        self.v = np.zeros_like(self.flat)
        self.t = 0

    def step(self, grads):
        self.t += 1
        g = np.concatenate([x.ravel() for x in grads])
        _adam_update(
            self.flat, g, self.m, self.v, self.lr, self.beta1, self.beta2, self.eps,
            1.0 - self.beta1**self.t, 1.0 - self.beta2**self.t,
        )


def discriminator_loss_and_grads(disc: DiscriminatorNet, real, fake):
    """BCE over the stacked batch (real -> 1, fake -> 0)."""
    x = np.vstack([real, fake])
    y = np.concatenate([np.ones(len(real)), np.zeros(len(fake))])
    logits, cache = disc.forward(x)
    p = sigmoid(logits)
    grads, _ = disc.backward((p - y) / len(y), cache)
    return bce_loss(p, y), grads


def generator_loss_and_grads(gen: GeneratorNet, disc: DiscriminatorNet, z):
    """Non-saturating generator loss BCE(D(G(z)), 1)."""
    fake, gcache = gen.forward(z, "train")
    logits, dcache = disc.forward(fake)
    p = sigmoid(logits)
    _, d_fake = disc.backward((p - 1.0) / len(p), dcache)
    return bce_loss(p, np.ones(len(p))), gen.backward(d_fake, gcache)


@dataclass
class TrainTrace:
    g_loss: list[float] = field(default_factory=list)
    d_loss: list[float] = field(default_factory=list)

    def to_csv(self) -> str:
        lines = ["epoch,g_loss,d_loss"]
        lines += [f"{i},{g!r},{d!r}" for i, (g, d) in enumerate(zip(self.g_loss, self.d_loss), 1)]
        return "\n".join(lines) + "\n"


class TabularGAN(BaseEstimator):
    """GAN over rows scaled to [0, 1].

    One epoch is a pass over the shuffled rows in batches of ``batch_size``
    (the remainder is spread over the other batches). Each batch performs one
    discriminator step and one generator step.
    """

    def __init__(
        self,
        latent_dim: int = 64,
        generator_widths: Sequence[int] = (128, 256, 256, 128),
        discriminator_widths: Sequence[int] = (256, 128, 64),
        epochs: int = 5000,
        batch_size: int = 64,
        learning_rate: float = 2e-4,
        beta1: float = 0.5,
        beta2: float = 0.999,
        leaky_slope: float = 0.2,
        bn_momentum: float = 0.9,
        bn_epsilon: float = 1e-5,
        random_state: int = 0,
    ):
        self.latent_dim = latent_dim
        self.generator_widths = generator_widths
        self.discriminator_widths = discriminator_widths
        self.epochs = epochs
        self.batch_size = batch_size
        self.learning_rate = learning_rate
        self.beta1 = beta1
        self.beta2 = beta2
        self.leaky_slope = leaky_slope
        self.bn_momentum = bn_momentum
        self.bn_epsilon = bn_epsilon
        self.random_state = random_state

    def _build(self, n_features: int, rng):
        self.generator_ = GeneratorNet(
            self.latent_dim, tuple(self.generator_widths), n_features, rng,
            self.leaky_slope, self.bn_momentum, self.bn_epsilon,
        )
        self.discriminator_ = DiscriminatorNet(
            n_features, tuple(self.discriminator_widths), rng, self.leaky_slope
        )
        self.n_features_in_ = n_features

    def fit(self, X, y=None):
        X = check_array(X, dtype=np.float64)
        if self.epochs < 1:
            raise ValueError("epochs must be >= 1")
        if self.batch_size < 2:
            raise ValueError("batch_size must be >= 2")
        if len(X) < self.batch_size:
            raise ValueError(f"need at least batch_size={self.batch_size} rows, got {len(X)}")
        if X.min() < 0 or X.max() > 1:
            raise ValueError("GAN inputs must be scaled to [0, 1]")
        rng = np.random.default_rng(self.random_state)
        self._build(X.shape[1], rng)
        gen, disc = self.generator_, self.discriminator_
        opt_g = Adam(gen, self.learning_rate, self.beta1, self.beta2)
        opt_d = Adam(disc, self.learning_rate, self.beta1, self.beta2)
        n_batches = len(X) // self.batch_size
        trace = TrainTrace()
        for epoch in range(self.epochs):
            g_sum = d_sum = 0.0
            for batch in np.array_split(rng.permutation(len(X)), n_batches):
                real = X[batch]
                m = len(batch)
                fake, _ = gen.forward(rng.standard_normal((m, self.latent_dim)), "train")
                d_loss, d_grads = discriminator_loss_and_grads(disc, real, fake)
                opt_d.step(d_grads)
                g_loss, g_grads = generator_loss_and_grads(
                    gen, disc, rng.standard_normal((m, self.latent_dim))
                )
                opt_g.step(g_grads)
                g_sum += g_loss
                d_sum += d_loss
            trace.g_loss.append(g_sum / n_batches)
            trace.d_loss.append(d_sum / n_batches)
            if (epoch + 1) % 500 == 0:
                logger.info("epoch %d: g_loss %.4f d_loss %.4f", epoch + 1, trace.g_loss[-1], trace.d_loss[-1])
        self.trace_ = trace
        return self

    def sample(self, n: int, random_state=None, blocks=None) -> np.ndarray:
        """Draw ``n`` rows with the generator in eval mode.

        With ``blocks`` (the encoder layout, in GAN scale) categorical
        positions are snapped to valid codes.
        """
        check_is_fitted(self, "generator_")
        if n < 1:
            raise ValueError("n must be >= 1")
        rng = np.random.default_rng(random_state)
        out, _ = self.generator_.forward(rng.standard_normal((n, self.latent_dim)), "eval")
        return snap_categoricals(out, blocks) if blocks else out

    def to_dict(self) -> dict:
        check_is_fitted(self, "generator_")
        params = self.get_params()
        params["generator_widths"] = list(params["generator_widths"])
        params["discriminator_widths"] = list(params["discriminator_widths"])
        return {
            "format": GAN_FORMAT,
            "params": params,
            "n_features": self.n_features_in_,
            "generator": self.generator_.state(),
            "discriminator": self.discriminator_.state(),
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), sort_keys=True, separators=(",", ":"))

    @classmethod
    def from_dict(cls, doc: dict) -> "TabularGAN":
        if doc.get("format") != GAN_FORMAT:
            raise ValueError(f"unsupported GAN document format {doc.get('format')!r}")
        gan = cls(**doc["params"])
        gan._build(doc["n_features"], np.random.default_rng(0))
        gan.generator_.load_state(doc["generator"])
        gan.discriminator_.load_state(doc["discriminator"])
        return gan


def gan_scale(blocks, n_features: int) -> np.ndarray:
    """Per-column divisor mapping encoded values onto [0, 1]: ordinal codes are
    divided by the largest code, everything else is already in range."""
    scale = np.ones(n_features)
    for b in blocks or ():
        if b.directive == "ordinal":
            scale[b.start] = max(len(b.vocabulary) - 1, 1)
    return scale


def snap_categoricals(rows: np.ndarray, blocks) -> np.ndarray:
    """Re-binarise one-hot blocks by arg-max and round ordinal columns to the
    nearest valid code (rows are in GAN scale)."""
    rows = np.clip(np.array(rows, dtype=np.float64), 0.0, 1.0)
    for b in blocks:
        if b.directive == "onehot":
            block = rows[:, b.start:b.stop]
            hot = np.zeros_like(block)
            hot[np.arange(len(block)), np.argmax(block, axis=1)] = 1.0
            rows[:, b.start:b.stop] = hot
        elif b.directive == "ordinal":
            top = max(len(b.vocabulary) - 1, 1)
            rows[:, b.start] = np.rint(rows[:, b.start] * top) / top
    return rows


def train_gan(class_rows, **params) -> TabularGAN:
    """Fit a GAN on one class of a FeatureMatrix (values rescaled to [0, 1])."""
    if len(set(np.asarray(class_rows.class_ids).tolist())) > 1:
        raise ValueError("train_gan expects rows of a single class")
    scale = gan_scale(class_rows.blocks, class_rows.values.shape[1])
    return TabularGAN(**params).fit(np.clip(class_rows.values / scale, 0.0, 1.0))


def synthesize(gan: TabularGAN, n: int, seed: int = 0, blocks=None) -> np.ndarray:
    return gan.sample(n, random_state=seed, blocks=blocks)


def class_seed(base_seed: int, class_name: str) -> int:
    return int(np.random.SeedSequence([int(base_seed), zlib.crc32(class_name.encode())]).generate_state(1)[0])


def default_targets(fm, exclude: Sequence[str] = ("normal",)) -> dict[str, int]:
    """Raise every non-excluded class to the largest such class's count."""
    counts = np.bincount(fm.class_ids, minlength=fm.n_classes)
    names = [n for n in fm.class_names if n not in exclude]
    if not names:
        return {}
    top = max(int(counts[fm.class_names.index(n)]) for n in names)
    return {n: top for n in names}


@dataclass
class AugmentResult:
    matrix: object
    gans: dict[str, TabularGAN]
    synthetic: dict[str, np.ndarray]


def augment(train_fm, targets: Mapping[str, int], **gan_params) -> AugmentResult:
    """Append GAN rows for every class whose count is below its target.

    Original rows stay untouched as the prefix of the returned matrix; each
    class gets its own GAN, seeded from ``random_state`` and the class name.
    """
    counts = np.bincount(train_fm.class_ids, minlength=train_fm.n_classes)
    for name in targets:
        if name not in train_fm.class_names or counts[train_fm.class_names.index(name)] == 0:
            raise ValueError(f"augmentation target for absent class {name!r}")
    scale = gan_scale(train_fm.blocks, train_fm.values.shape[1])
    base_seed = gan_params.pop("random_state", 0)
    gans, synthetic = {}, {}
    new_rows, new_ids = [], []
    for cid, name in enumerate(train_fm.class_names):
        if name not in targets or counts[cid] >= targets[name]:
            continue
        seed = class_seed(base_seed, name)
        rows = train_fm.of_class(cid)
        logger.info("training GAN for %s on %d rows", name, len(rows))
        params = dict(gan_params)
        batch = params.get("batch_size", 64)
        if len(rows) < batch:
            if len(rows) < 2:
                raise ValueError(f"class {name!r} has {len(rows)} row(s); a GAN needs at least 2")
            logger.info("batch size for %s lowered to %d (class size)", name, len(rows))
            params["batch_size"] = len(rows)
        gan = train_gan(rows, random_state=seed, **params)
        k = int(targets[name] - counts[cid])
        sampled = gan.sample(k, random_state=seed + 1, blocks=train_fm.blocks) * scale
        gans[name] = gan
        synthetic[name] = sampled
        new_rows.append(sampled)
        new_ids.append(np.full(k, cid, dtype=train_fm.class_ids.dtype))
    if not new_rows:
        return AugmentResult(train_fm, gans, synthetic)
    out = train_fm.with_rows(np.vstack(new_rows), np.concatenate(new_ids))
    return AugmentResult(out, gans, synthetic)
