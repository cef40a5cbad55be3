"""Sum-of-glyphs task: learn a per-image classifier from the sum of a sequence."""
from __future__ import annotations

import time
from dataclasses import dataclass

import numpy as np
from sklearn.base import BaseEstimator, ClassifierMixin
from sklearn.utils.validation import check_is_fitted

from ..estimators import GradientEstimator, Indecater
from ..nn import ParamStore, backward, forward, init_params, make_optimizer, mlp, optimizer_step

NLL_FLOOR = 1e-7


def make_glyph_data(n: int, rng, n_classes: int = 4, side: int = 4,
                    flip: float = 0.1, template_seed: int = 1234) -> tuple:
    """Noisy binary glyphs. Returns (images (n, side*side), labels (n,)).

    Templates come from ``template_seed`` so that different draws share classes.
    """
    trng = np.random.default_rng(template_seed)
    P = side * side
    while True:
        templates = (trng.random((n_classes, P)) < 0.5).astype(np.float64)
        dist = np.abs(templates[:, None] - templates[None]).sum(-1)
        if n_classes < 2 or dist[np.triu_indices(n_classes, 1)].min() >= P // 4:
            break
    labels = rng.integers(0, n_classes, size=n)
    noise = rng.random((n, P)) < flip
    return np.abs(templates[labels] - noise), labels


@dataclass
class NesyDataset:
    images: np.ndarray    # (S, D, P)
    digits: np.ndarray    # (S, D)
    sums: np.ndarray      # (S,)
    indices: np.ndarray   # (S, D) source row of every image

    def __len__(self) -> int:
        return len(self.sums)

    @property
    def seq_len(self) -> int:
        return self.digits.shape[1]


def nesy_build_dataset(images, labels, seq_len: int, rng) -> NesyDataset:
    """Partition a shuffled source into floor(M / seq_len) disjoint sequences."""
    images = np.asarray(images, dtype=np.float64)
    labels = np.asarray(labels, dtype=np.int64)
    M = len(images)
    if len(labels) != M:
        raise ValueError("images and labels differ in length")
    if seq_len < 1:
        raise ValueError("sequence length must be positive")
    if seq_len > M:
        raise ValueError(f"cannot build sequences of length {seq_len} from {M} images")
    S = M // seq_len
    idx = rng.permutation(M)[:S * seq_len].reshape(S, seq_len)
    digits = labels[idx]
    return NesyDataset(images[idx], digits, digits.sum(axis=1), idx)


def n_sum_labels(n_classes: int, seq_len: int) -> int:
    return (n_classes - 1) * seq_len + 1


def sum_distribution(probs) -> np.ndarray:
    """Distribution of the sum of independent categoricals; probs (..., D, C)."""
    probs = np.asarray(probs, dtype=np.float64)
    *lead, D, C = probs.shape
    out = np.zeros((*lead, (C - 1) * D + 1))
    out[..., 0] = 1.0
    width = 1
    for d in range(D):
        new = np.zeros_like(out)
        for c in range(C):
            new[..., c:c + width] += out[..., :width] * probs[..., d, c:c + 1]
        out, width = new, width + C - 1
    return out


def exact_sum_probability(probs, sums) -> np.ndarray:
    """p(sum of digits == s) for probs (B, D, C) and sums (B,)."""
    dist = sum_distribution(probs)
    s = np.asarray(sums, dtype=np.int64)
    ok = (s >= 0) & (s < dist.shape[-1])
    return np.where(ok, np.take_along_axis(dist, np.clip(s, 0, dist.shape[-1] - 1)[:, None], 1)[:, 0], 0.0)


def _sum_indicator(sums):
    sums = np.asarray(sums)

    def f(x):
        return (x.sum(axis=-1) == sums[:, None]).astype(np.float64)
    return f


def nesy_nll(layers, params: ParamStore, images, sums, estimator: GradientEstimator,
             rng, step: int = 0) -> tuple:
    """-log E[1{sum x = s}] averaged over the batch; classifier gradients go into ``params``.

    images has shape (B, D, P).  Returns (loss, per-example E estimates, BatchEstimate).
    """
    if estimator.requires_relaxation:
        raise ValueError("function has zero derivative almost everywhere; "
                         "use a score-based estimator")
    images = np.asarray(images, dtype=np.float64)
    if images.ndim != 3:
        raise ValueError("images must have shape (B, D, P)")
    B, D, P = images.shape
    params.zero_grad()
    fwd = forward(params, layers, images.reshape(B * D, P))
    logits = fwd.output.reshape(B, D, -1)
    est = estimator.estimate_batched(logits, _sum_indicator(sums), rng, step=step)
    e = np.maximum(est.value, NLL_FLOOR)
    loss = float(np.mean(-np.log(e)))
    upstream = -est.grad / e[:, None, None] / B
    backward(fwd, upstream.reshape(B * D, -1), params)
    return loss, est.value, est


class NesySumClassifier(ClassifierMixin, BaseEstimator):
    """Image classifier trained only from sequence sums.

    ``fit(X, y)`` takes sequences X (S, D, P) and their sums y.  ``predict``
    returns the sum of the per-image argmax classes and ``predict_digits``
    the classes themselves.  ``history_`` holds one dict per epoch.
    """

    def __init__(self, n_classes=4, hidden=(32,), estimator=None, learning_rate=1e-3,
                 batch_size=16, n_epochs=200, target_accuracy=None, random_state=0):
        self.n_classes = n_classes
        self.hidden = hidden
        self.estimator = estimator
        self.learning_rate = learning_rate
        self.batch_size = batch_size
        self.n_epochs = n_epochs
        self.target_accuracy = target_accuracy
        self.random_state = random_state

    def _estimator(self):
        if self.estimator is not None:
            return self.estimator
        return Indecater(n_samples=2, fresh_per_variable=True)

    @staticmethod
    def _check_X(X) -> np.ndarray:
        X = np.asarray(X, dtype=np.float64)
        if X.ndim != 3:
            raise ValueError("expected sequences of shape (S, D, P)")
        if not np.all(np.isfinite(X)):
            raise ValueError("input contains non-finite values")
        return X

    def fit(self, X, y, eval_set=None):
        X = self._check_X(X)
        y = np.asarray(y, dtype=np.int64)
        if len(y) != len(X):
            raise ValueError("X and y differ in length")
        est = self._estimator()
        if est.requires_relaxation:
            raise ValueError("function has zero derivative almost everywhere; "
                             "use a score-based estimator")
        rng = np.random.default_rng(self.random_state)
        S, D, P = X.shape
        self.layers_ = mlp("clf", [P, *self.hidden, self.n_classes])
        self.params_ = init_params(self.layers_, rng)
        self.classes_ = np.arange(n_sum_labels(self.n_classes, D))
        opt = make_optimizer("adam", self.learning_rate)
        self.history_, self.diverged_ = [], False
        samples = evals = step = 0
        elapsed = 0.0
        for epoch in range(1, self.n_epochs + 1):
            t0 = time.perf_counter()
            order = rng.permutation(S)
            losses = []
            for start in range(0, S, self.batch_size):
                b = order[start:start + self.batch_size]
                loss, _, be = nesy_nll(self.layers_, self.params_, X[b], y[b], est, rng, step)
                samples += be.samples_drawn * len(b)
                evals += be.function_evals * len(b)
                losses.append(loss)
                step += 1
                try:
                    optimizer_step(opt, self.params_.values, self.params_.grads)
                except FloatingPointError:
                    self.diverged_ = True
                    break
            elapsed += time.perf_counter() - t0
            rec = {"epoch": epoch, "step": step, "loss": float(np.mean(losses)),
                   "samples": samples, "function_evals": evals, "elapsed_ms": elapsed * 1e3}
            if eval_set is not None:
                rec["accuracy"] = self.score(*eval_set)
            self.history_.append(rec)
            if self.diverged_:
                break
            if (self.target_accuracy is not None and "accuracy" in rec
                    and rec["accuracy"] >= self.target_accuracy):
                break
        return self

    def predict_proba_digits(self, images) -> np.ndarray:
        check_is_fitted(self, "params_")
        images = np.asarray(images, dtype=np.float64)
        lead = images.shape[:-1]
        z = forward(self.params_, self.layers_, images.reshape(-1, images.shape[-1])).output
        z = np.exp(z - z.max(axis=1, keepdims=True))
        return (z / z.sum(axis=1, keepdims=True)).reshape(*lead, self.n_classes)

    def predict_digits(self, images) -> np.ndarray:
        return self.predict_proba_digits(images).argmax(axis=-1)

    def predict(self, X) -> np.ndarray:
        return self.predict_digits(self._check_X(X)).sum(axis=1)

    def predict_sum_proba(self, X) -> np.ndarray:
        return sum_distribution(self.predict_proba_digits(self._check_X(X)))
