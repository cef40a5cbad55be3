"""Discrete VAE with Bernoulli latents and a Bernoulli(0.5) prior."""
from __future__ import annotations

import time
from dataclasses import dataclass

import numpy as np
from sklearn.base import BaseEstimator, TransformerMixin
from sklearn.utils.validation import check_array, check_is_fitted

from ..estimators import GradientEstimator, Indecater, gradient_variance_probe
from ..nn import (Dense, ParamStore, Tape, accumulate, apply_layers, backward, forward,
                  init_params, make_optimizer, mlp, optimizer_step)

LOG2 = np.log(2.0)


def binarize(images) -> np.ndarray:
    """1 where a pixel is strictly above 0.5, else 0."""
    a = np.asarray(images, dtype=np.float64)
    if a.size and (np.nanmin(a) < 0 or np.nanmax(a) > 1 or np.isnan(a).any()):
        raise ValueError("pixel values must lie in [0, 1]")
    return (a > 0.5).astype(np.float64)


def make_pattern_data(n: int, rng, side: int = 8, n_prototypes: int = 8,
                      density: float = 0.3, flip: float = 0.05) -> np.ndarray:
    """Binary side x side images: seeded random prototypes with bit-flip noise."""
    protos = (rng.random((n_prototypes, side * side)) < density).astype(np.float64)
    which = rng.integers(0, n_prototypes, size=n)
    flips = rng.random((n, side * side)) < flip
    return np.abs(protos[which] - flips)


def kl_bernoulli_half(logits) -> np.ndarray:
    """KL(Bernoulli(sigmoid(l)) || Bernoulli(0.5)) per entry."""
    l = np.asarray(logits, dtype=np.float64)
    log_q = -np.logaddexp(0.0, -l)
    log_1mq = -np.logaddexp(0.0, l)
    q = np.exp(log_q)
    return np.maximum(q * log_q + (1 - q) * log_1mq + LOG2, 0.0)


@dataclass
class DvaeModel:
    data_dim: int = 64
    latent_dim: int = 16
    hidden: tuple = (48, 32)

    @property
    def encoder(self) -> list[Dense]:
        return mlp("enc", [self.data_dim, *self.hidden, self.latent_dim])

    @property
    def decoder(self) -> list[Dense]:
        return mlp("dec", [self.latent_dim, *reversed(self.hidden), self.data_dim])

    def init(self, rng) -> ParamStore:
        store = init_params(self.encoder, rng)
        return init_params(self.decoder, rng, store)

    def log_likelihood(self, params: ParamStore, z: np.ndarray, x: np.ndarray) -> np.ndarray:
        """log p(x | z) for z of shape (B, M, L) against x of shape (B, P); returns (B, M)."""
        B, M, L = z.shape
        tape = Tape()
        h = apply_layers(tape, params, self.decoder, tape.leaf(z.reshape(B * M, L)))
        targets = np.repeat(x, M, axis=0)
        return tape.bce_with_logits(h, targets).value.reshape(B, M)


def _cat_logits(enc_logits: np.ndarray) -> np.ndarray:
    # a Bernoulli bit as a 2-way categorical with logits (0, l)
    return np.stack([np.zeros_like(enc_logits), enc_logits], axis=-1)


def dvae_elbo(model: DvaeModel, params: ParamStore, batch: np.ndarray,
              estimator: GradientEstimator, rng, step: int = 0) -> tuple:
    """Negated ELBO estimate for ``batch``; gradients are written into ``params.grads``.

    Returns (negated ELBO averaged over the batch, BatchEstimate).
    """
    x = np.asarray(batch, dtype=np.float64)
    if x.ndim != 2 or x.shape[1] != model.data_dim:
        raise ValueError(f"batch must have shape (B, {model.data_dim})")
    B = len(x)
    params.zero_grad()
    enc = forward(params, model.encoder, x)
    logits = enc.output
    theta = _cat_logits(logits)

    def f(z):
        return model.log_likelihood(params, z.astype(np.float64), x)

    if estimator.requires_relaxation:
        def f_relaxed(y):
            Bn, N, L, _ = y.shape
            dec = forward(params, model.decoder, y[..., 1].reshape(Bn * N, L))
            tape = dec.tape
            ll = tape.bce_with_logits(dec.out_node, np.repeat(x, N, axis=0))
            scale = -1.0 / (Bn * N)
            tape.backward(ll, np.full(ll.shape, scale))
            accumulate(tape, params)
            gz = dec.input_node.grad / scale
            gy = np.zeros_like(y)
            gy[..., 1] = gz.reshape(Bn, N, L)
            return ll.value.reshape(Bn, N), gy

        est = estimator.estimate_batched(theta, None, rng, f_relaxed=f_relaxed, step=step)
    else:
        est = estimator.estimate_batched(theta, f, rng, step=step)
        z = est.samples.astype(np.float64)
        N = z.shape[1]
        dec = forward(params, model.decoder, z.reshape(B * N, -1))
        ll = dec.tape.bce_with_logits(dec.out_node, np.repeat(x, N, axis=0))
        dec.tape.backward(ll, np.full(ll.shape, -1.0 / (B * N)))
        accumulate(dec.tape, params)

    q = 0.5 * (1.0 + np.tanh(0.5 * logits))
    kl = kl_bernoulli_half(logits).sum(axis=1)
    d_logits = (-est.grad[..., 1] + logits * q * (1 - q)) / B
    backward(enc, d_logits, params)
    loss = float(np.mean(-est.value + kl))
    return loss, est


def negated_elbo(model: DvaeModel, params: ParamStore, X: np.ndarray, rng,
                 n_samples: int = 4) -> float:
    """Monte Carlo negated ELBO with discrete latent samples, averaged over rows."""
    logits = forward(params, model.encoder, X).output
    q = 0.5 * (1.0 + np.tanh(0.5 * logits))
    z = (rng.random((len(X), n_samples, model.latent_dim)) < q[:, None]).astype(np.float64)
    recon = model.log_likelihood(params, z, X).mean(axis=1)
    return float(np.mean(-recon + kl_bernoulli_half(logits).sum(axis=1)))


class DiscreteVAE(TransformerMixin, BaseEstimator):
    """Bernoulli-latent VAE trained with a pluggable discrete gradient estimator.

    ``transform`` returns the posterior bit probabilities.  ``history_``
    holds one dict per logged step; ``probes_`` the gradient-variance
    comparison for ``probe_estimators`` at ``probe_steps``.
    """

    def __init__(self, latent_dim=16, hidden=(48, 32), estimator=None, learning_rate=1e-4,
                 batch_size=32, n_steps=2000, log_every=100, eval_size=256, n_probes=8,
                 probe_estimators=None, probe_steps=(), random_state=0):
        self.latent_dim = latent_dim
        self.hidden = hidden
        self.estimator = estimator
        self.learning_rate = learning_rate
        self.batch_size = batch_size
        self.n_steps = n_steps
        self.log_every = log_every
        self.eval_size = eval_size
        self.n_probes = n_probes
        self.probe_estimators = probe_estimators
        self.probe_steps = probe_steps
        self.random_state = random_state

    def _estimator(self):
        return self.estimator if self.estimator is not None else Indecater(n_samples=2)

    def fit(self, X, y=None):
        X = check_array(X, dtype=np.float64)
        if not np.all((X == 0) | (X == 1)):
            raise ValueError("DiscreteVAE expects binarised data")
        rng = np.random.default_rng(self.random_state)
        self.model_ = DvaeModel(X.shape[1], self.latent_dim, tuple(self.hidden))
        self.params_ = self.model_.init(rng)
        est = self._estimator()
        opt = make_optimizer("adam", self.learning_rate)
        eval_rows = X[rng.permutation(len(X))[:self.eval_size]]
        eval_seed = int(rng.integers(2**31))
        probe_seed = int(rng.integers(2**31))
        probe_batch = X[rng.permutation(len(X))[:self.batch_size]]
        self.history_, self.probes_ = [], {}
        self.diverged_ = False
        samples = evals = 0
        elapsed = 0.0
        probe_steps = set(self.probe_steps or ())

        def record(step):
            var = self._probe(est, probe_batch, probe_seed + step)
            self.history_.append({
                "step": step, "negated_elbo": self.negated_elbo(eval_rows, eval_seed),
                "grad_variance": var, "samples": samples, "function_evals": evals,
                "elapsed_ms": elapsed * 1e3})
            if step in probe_steps:
                comp = {est.label: var}
                for name, other in (self.probe_estimators or {}).items():
                    comp[name] = self._probe(other, probe_batch, probe_seed + step)
                self.probes_[step] = comp

        record(0)
        for step in range(1, self.n_steps + 1):
            t0 = time.perf_counter()
            batch = X[rng.integers(0, len(X), size=self.batch_size)]
            _, be = dvae_elbo(self.model_, self.params_, batch, est, rng, step - 1)
            samples += be.samples_drawn * len(batch)
            evals += be.function_evals * len(batch)
            try:
                optimizer_step(opt, self.params_.values, self.params_.grads)
            except FloatingPointError:
                self.diverged_ = True
                break
            elapsed += time.perf_counter() - t0
            if step % self.log_every == 0 or step == self.n_steps or step in probe_steps:
                record(step)
        return self

    def _probe(self, est, batch, seed):
        saved = {k: g.copy() for k, g in self.params_.grads.items()}

        def grad_fn(r):
            dvae_elbo(self.model_, self.params_, batch, est, r)
            return self.params_.flat_grad()

        var = gradient_variance_probe(grad_fn, self.n_probes, np.random.default_rng(seed))
        for k, g in saved.items():
            self.params_.grads[k][...] = g
        return var

    def transform(self, X):
        check_is_fitted(self, "params_")
        X = check_array(X, dtype=np.float64)
        logits = forward(self.params_, self.model_.encoder, X).output
        return 0.5 * (1.0 + np.tanh(0.5 * logits))

    def negated_elbo(self, X, random_state=0, n_samples: int = 4) -> float:
        check_is_fitted(self, "params_")
        X = check_array(X, dtype=np.float64)
        return negated_elbo(self.model_, self.params_, X,
                            np.random.default_rng(random_state), n_samples)

    def score(self, X, y=None):
        return -self.negated_elbo(X)
