"""Frozen-encoder evaluation probes.

Probe features for a clip are the temporal mean of its per-frame embeddings
concatenated with the per-step embedding displacement norms
``||u_{t+1} - u_t||``.  The mean carries content that is constant in time;
the displacement profile carries temporal structure, which a mean-pooled
clip embedding is blind to by construction (it is invariant under frame
permutations).  Probes that must ignore temporal structure can pass
``mean_only_features`` instead.

The probe classifier is full-batch multinomial logistic regression trained by
gradient descent with step halving, run to a loss-change tolerance of 1e-6 or
500 epochs.  All probes are deterministic given (encoder, dataset, seed).
"""

from __future__ import annotations

import hashlib
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .autodiff import grad_and_value, sqrt, value_of
from .encoder import EncoderParams, embed_frames, flatten_params, init_params, unflatten_params
from .errors import InvalidInputError
from .synth import Clip, make_static_clip, shuffle_clip

PROBE_NAMES = ("linear", "order", "static")


def clip_features(params: EncoderParams, frames: np.ndarray) -> np.ndarray:
    """Mean embedding plus consecutive-frame displacement norms."""
    u = value_of(embed_frames(params, frames))
    mean = u.mean(axis=1)
    diffs = np.linalg.norm(np.diff(u, axis=1), axis=0)
    return np.concatenate([mean, diffs])


def mean_only_features(params: EncoderParams, frames: np.ndarray) -> np.ndarray:
    """Permutation-invariant features: the temporal mean embedding only."""
    u = value_of(embed_frames(params, frames))
    return u.mean(axis=1)


def params_id(params: EncoderParams) -> str:
    return hashlib.sha256(flatten_params(params).tobytes()).hexdigest()[:12]


@dataclass(frozen=True)
class ProbeReport:
    probe: str
    accuracy: float
    n_samples: int
    seed: int
    checkpoint: str

    def __post_init__(self):
        if not 0.0 <= self.accuracy <= 1.0:
            raise InvalidInputError("accuracy must lie in [0, 1]")


@dataclass
class LinearClassifier:
    """Affine multinomial classifier over standardized features."""

    weights: np.ndarray  # (n_features + 1, n_classes)
    mean: np.ndarray
    scale: np.ndarray

    def logits(self, x: np.ndarray) -> np.ndarray:
        xs = (np.asarray(x, dtype=float) - self.mean) / self.scale
        xb = np.concatenate([xs, np.ones((xs.shape[0], 1))], axis=1)
        return xb @ self.weights

    def predict(self, x: np.ndarray) -> np.ndarray:
        return np.argmax(self.logits(x), axis=1)

    def accuracy(self, x: np.ndarray, y: np.ndarray) -> float:
        return float(np.mean(self.predict(x) == np.asarray(y)))


def _cross_entropy(xb: np.ndarray, y: np.ndarray, w: np.ndarray) -> float:
    logits = xb @ w
    shift = logits.max(axis=1, keepdims=True)
    lse = np.log(np.exp(logits - shift).sum(axis=1)) + shift[:, 0]
    return float(np.mean(lse - logits[np.arange(len(y)), y]))


def fit_multinomial(
    x: np.ndarray,
    y: np.ndarray,
    n_classes: int | None = None,
    max_epochs: int = 500,
    tol: float = 1e-6,
) -> LinearClassifier:
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=int)
    if np.unique(y).size < 2:
        raise InvalidInputError("classifier training needs at least two classes")
    if n_classes is None:
        n_classes = int(y.max()) + 1
    mean = x.mean(axis=0)
    scale = x.std(axis=0)
    scale = np.where(scale < 1e-12, 1.0, scale)
    xs = (x - mean) / scale
    xb = np.concatenate([xs, np.ones((xs.shape[0], 1))], axis=1)
    onehot = np.zeros((len(y), n_classes))
    onehot[np.arange(len(y)), y] = 1.0

    w = np.zeros((xb.shape[1], n_classes))
    loss = _cross_entropy(xb, y, w)
    lr = 1.0
    for _ in range(max_epochs):
        logits = xb @ w
        shift = logits.max(axis=1, keepdims=True)
        e = np.exp(logits - shift)
        p = e / e.sum(axis=1, keepdims=True)
        g = xb.T @ (p - onehot) / len(y)
        while True:
            w_new = w - lr * g
            loss_new = _cross_entropy(xb, y, w_new)
            if loss_new <= loss or lr < 1e-10:
                break
            lr *= 0.5
        improvement = loss - loss_new
        w, loss = w_new, loss_new
        lr = min(lr * 1.05, 16.0)
        if 0.0 <= improvement < tol:
            break
    return LinearClassifier(weights=w, mean=mean, scale=scale)


def _features_matrix(params, clips, feature_fn) -> np.ndarray:
    return np.stack([feature_fn(params, clip.frames) for clip in clips])


def _split_indices(n: int, seed: int, train_fraction: float = 0.8):
    order = np.random.default_rng([seed, 23]).permutation(n)
    n_train = max(1, int(round(train_fraction * n)))
    if n_train >= n:
        n_train = n - 1
    return order[:n_train], order[n_train:]


def linear_probe_full(
    params: EncoderParams,
    clips: list[Clip],
    seed: int = 0,
    labels=None,
    feature_fn=clip_features,
    checkpoint_id: str = "",
):
    """Train the probe classifier; returns (report, classifier, test clips)."""
    if labels is None:
        labels = np.asarray([c.label for c in clips], dtype=int)
    else:
        labels = np.asarray(labels, dtype=int)
    if np.unique(labels).size < 2:
        raise InvalidInputError("linear probe needs a dataset with at least two classes")
    x = _features_matrix(params, clips, feature_fn)
    train_idx, test_idx = _split_indices(len(clips), seed)
    classifier = fit_multinomial(x[train_idx], labels[train_idx])
    accuracy = classifier.accuracy(x[test_idx], labels[test_idx])
    report = ProbeReport(
        probe="linear",
        accuracy=accuracy,
        n_samples=len(test_idx),
        seed=seed,
        checkpoint=checkpoint_id or params_id(params),
    )
    test_clips = [clips[i] for i in test_idx]
    return report, classifier, test_clips


def linear_probe(
    params: EncoderParams,
    clips: list[Clip],
    seed: int = 0,
    labels=None,
    feature_fn=clip_features,
    checkpoint_id: str = "",
) -> ProbeReport:
    report, _, _ = linear_probe_full(params, clips, seed, labels, feature_fn, checkpoint_id)
    return report


def static_degradation_probe(
    params: EncoderParams,
    classifier: LinearClassifier,
    clips: list[Clip],
    feature_fn=clip_features,
) -> tuple[float, float]:
    """Accuracy on the given clips and on their frozen-first-frame versions."""
    labels = np.asarray([c.label for c in clips], dtype=int)
    x_real = _features_matrix(params, clips, feature_fn)
    x_static = _features_matrix(params, [make_static_clip(c) for c in clips], feature_fn)
    return classifier.accuracy(x_real, labels), classifier.accuracy(x_static, labels)


def order_discrimination_probe(
    params: EncoderParams,
    clips: list[Clip],
    seed: int = 0,
    feature_fn=clip_features,
    checkpoint_id: str = "",
) -> ProbeReport:
    """Ordered-vs-shuffled binary probe on frozen clip features.

    Each clip contributes one ordered (label 1) and one shuffled (label 0)
    sample; the train/test split is by clip so both versions stay together.
    """
    ordered = _features_matrix(params, clips, feature_fn)
    shuffled = np.stack(
        [
            feature_fn(params, shuffle_clip(clip, seed=[seed, 29, i])[0].frames)
            for i, clip in enumerate(clips)
        ]
    )
    train_idx, test_idx = _split_indices(len(clips), seed)

    def assemble(idx):
        x = np.concatenate([ordered[idx], shuffled[idx]])
        y = np.concatenate([np.ones(len(idx), dtype=int), np.zeros(len(idx), dtype=int)])
        return x, y

    x_train, y_train = assemble(train_idx)
    x_test, y_test = assemble(test_idx)
    classifier = fit_multinomial(x_train, y_train, n_classes=2)
    accuracy = classifier.accuracy(x_test, y_test)
    return ProbeReport(
        probe="order",
        accuracy=accuracy,
        n_samples=len(y_test),
        seed=seed,
        checkpoint=checkpoint_id or params_id(params),
    )


def train_supervised(
    clips: list[Clip],
    seed: int = 0,
    embed_dim: int = 8,
    hidden_dims: tuple[int, ...] = (64,),
    epochs: int = 150,
    lr: float = 0.5,
    max_clips: int = 200,
) -> EncoderParams:
    """Cross-entropy baseline: the same encoder trained directly on labels.

    The classification head reads both the mean embedding and the
    displacement-norm profile, so temporal structure is learnable.
    """
    clips = clips[:max_clips]
    labels = np.asarray([c.label for c in clips], dtype=int)
    n_classes = int(labels.max()) + 1
    if np.unique(labels).size < 2:
        raise InvalidInputError("supervised training needs at least two classes")
    obs_dim = clips[0].obs_dim
    n_steps = clips[0].num_frames - 1
    rng = np.random.default_rng([seed, 31])
    template = init_params(rng, obs_dim, embed_dim, hidden_dims=hidden_dims)
    enc_size = flatten_params(template).size
    head_mean = rng.normal(0.0, 0.1, size=(n_classes, embed_dim))
    head_diff = rng.normal(0.0, 0.1, size=(n_classes, n_steps))
    head_bias = np.zeros(n_classes)
    flat = np.concatenate(
        [flatten_params(template), head_mean.ravel(), head_diff.ravel(), head_bias]
    )

    frame_stack = [np.asarray(c.frames, dtype=float) for c in clips]

    def loss_fn(theta):
        enc = unflatten_params(template, theta[:enc_size])
        pos = enc_size
        wm = theta[pos : pos + n_classes * embed_dim].reshape((n_classes, embed_dim))
        pos += n_classes * embed_dim
        wd = theta[pos : pos + n_classes * n_steps].reshape((n_classes, n_steps))
        pos += n_classes * n_steps
        wb = theta[pos : pos + n_classes]
        total = None
        for frames, label in zip(frame_stack, labels):
            u = embed_frames(enc, frames)
            mean = u.mean(axis=1)
            d = u[:, 1:] - u[:, :-1]
            norms = sqrt((d * d).sum(axis=0))
            logits = wm @ mean + wd @ norms + wb
            shift = float(np.max(value_of(logits)))
            lse = ((logits - shift).exp().sum()).log() + shift
            nll = lse - logits[int(label)]
            total = nll if total is None else total + nll
        return total / float(len(clips))

    for _ in range(epochs):
        _, g = grad_and_value(loss_fn, flat)
        flat = flat - lr * g
    return unflatten_params(template, flat[:enc_size])


def append_report(path, report: ProbeReport) -> None:
    """Append one probe result row; the file is created with a header once."""
    path = Path(path)
    line = (
        f"{report.probe},{report.checkpoint},{repr(float(report.accuracy))},"
        f"{report.n_samples},{report.seed}\n"
    )
    if not path.exists():
        path.write_text("probe,checkpoint,accuracy,n,seed\n" + line, encoding="utf-8")
    else:
        with path.open("a", encoding="utf-8") as fh:
            fh.write(line)
