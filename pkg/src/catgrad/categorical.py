"""Multivariate categorical distributions with an exact enumeration oracle.

A :class:`Factorisation` stores one dense logit table per variable.  Table
``d`` has one row per joint assignment of the variables before ``d``
(row-major, last parent fastest), or a single row when the factors are
independent.  Parameter gradients are returned as lists of arrays with the
same shapes as the tables.
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, Iterator, Sequence

import numpy as np

DEFAULT_BUDGET = 10**7

INDEPENDENT = "independent"
CHAIN = "chain"


class SupportTooLarge(ValueError):
    def __init__(self, size: int, budget: int):
        super().__init__(f"support too large: {size} outcomes exceeds budget {budget}")
        self.size = size
        self.budget = budget


def softmax_row(logits) -> np.ndarray:
    """Numerically stable softmax of a single logit vector."""
    v = np.asarray(logits, dtype=np.float64)
    if v.ndim != 1 or v.size == 0:
        raise ValueError("empty logit row")
    if not np.all(np.isfinite(v)):
        raise ValueError("logit row contains non-finite values")
    e = np.exp(v - v.max())
    return e / e.sum()


def softmax(a: np.ndarray, axis: int = -1) -> np.ndarray:
    a = np.asarray(a, dtype=np.float64)
    e = np.exp(a - a.max(axis=axis, keepdims=True))
    return e / e.sum(axis=axis, keepdims=True)


def log_softmax(a: np.ndarray, axis: int = -1) -> np.ndarray:
    a = np.asarray(a, dtype=np.float64)
    s = a - a.max(axis=axis, keepdims=True)
    return s - np.log(np.exp(s).sum(axis=axis, keepdims=True))


def inverse_cdf(probs: np.ndarray, u: np.ndarray) -> np.ndarray:
    """Pick, per row, the first category whose cumulative mass exceeds ``u``."""
    cdf = np.cumsum(probs, axis=-1)
    k = (cdf <= u[..., None]).sum(axis=-1)
    # u can land above cdf[-1] when the row sums to 1 - ulp
    return np.minimum(k, probs.shape[-1] - 1)


@dataclass(frozen=True)
class LogitTable:
    """Per-variable logit rows of a product of independent categoricals."""

    cards: tuple
    rows: tuple

    def __init__(self, rows: Sequence):
        rows = tuple(np.array(r, dtype=np.float64) for r in rows)
        for d, r in enumerate(rows):
            if r.ndim != 1 or r.size == 0:
                raise ValueError(f"row {d} must be a non-empty vector")
            if not np.all(np.isfinite(r)):
                raise ValueError(f"row {d} contains non-finite logits")
            r.setflags(write=False)
        object.__setattr__(self, "rows", rows)
        object.__setattr__(self, "cards", tuple(r.size for r in rows))

    @classmethod
    def from_matrix(cls, logits) -> "LogitTable":
        return cls(list(np.asarray(logits, dtype=np.float64)))


class Factorisation:
    """Ordered factor list p(x) = prod_d p(x_d | x_<d).

    Build with :meth:`independent` or :meth:`chain`; instances are treated
    as immutable.
    """

    def __init__(self, cards: Sequence[int], tables: Sequence, kind: str):
        if kind not in (INDEPENDENT, CHAIN):
            raise ValueError(f"unknown factorisation kind {kind!r}")
        cards = tuple(int(k) for k in cards)
        if len(cards) != len(tables):
            raise ValueError("need exactly one table per variable")
        if any(k < 1 for k in cards):
            raise ValueError("cardinalities must be positive")
        checked = []
        n_parents = 1
        for d, (k, t) in enumerate(zip(cards, tables)):
            t = np.array(t, dtype=np.float64)
            if t.ndim == 1:
                t = t[None, :]
            expected = 1 if kind == INDEPENDENT else n_parents
            if t.shape != (expected, k):
                raise ValueError(
                    f"table {d} has shape {t.shape}, expected {(expected, k)}")
            if not np.all(np.isfinite(t)):
                raise ValueError(f"table {d} contains non-finite logits")
            t.setflags(write=False)
            checked.append(t)
            n_parents *= k
        self.cards = cards
        self.tables = tuple(checked)
        self.kind = kind
        self._probs = tuple(softmax(t) for t in self.tables)
        self._logp = tuple(log_softmax(t) for t in self.tables)

    @classmethod
    def independent(cls, rows) -> "Factorisation":
        if isinstance(rows, LogitTable):
            rows = rows.rows
        rows = [np.asarray(r, dtype=np.float64) for r in rows]
        return cls([r.size for r in rows], rows, INDEPENDENT)

    @classmethod
    def chain(cls, tables) -> "Factorisation":
        tables = [np.atleast_2d(np.asarray(t, dtype=np.float64)) for t in tables]
        return cls([t.shape[1] for t in tables], tables, CHAIN)

    @property
    def n_vars(self) -> int:
        return len(self.cards)

    @property
    def is_independent(self) -> bool:
        return self.kind == INDEPENDENT

    @property
    def probs(self) -> tuple:
        return self._probs

    @property
    def n_params(self) -> int:
        return sum(t.size for t in self.tables)

    def zeros_like_params(self, lead: tuple = ()) -> list:
        return [np.zeros(lead + t.shape) for t in self.tables]

    def with_tables(self, tables) -> "Factorisation":
        return Factorisation(self.cards, tables, self.kind)

    def parent_index(self, x: np.ndarray, d: int) -> np.ndarray:
        """Row of table ``d`` selected by the parents of each assignment."""
        x = np.asarray(x)
        if self.kind == INDEPENDENT or d == 0:
            return np.zeros(x.shape[:-1], dtype=np.int64)
        idx = np.zeros(x.shape[:-1], dtype=np.int64)
        for j in range(d):
            idx = idx * self.cards[j] + x[..., j]
        return idx

    def check_assignments(self, x) -> np.ndarray:
        x = np.asarray(x)
        if x.ndim == 1:
            x = x[None, :]
        if x.shape[-1] != self.n_vars:
            raise ValueError(
                f"assignment has {x.shape[-1]} entries, expected {self.n_vars}")
        if not np.issubdtype(x.dtype, np.integer):
            if not np.all(np.equal(np.mod(x, 1), 0)):
                raise ValueError("assignments must be integers")
            x = x.astype(np.int64)
        if self.n_vars and (np.any(x < 0) or np.any(x >= np.array(self.cards))):
            raise ValueError("assignment entry out of range")
        return x

    def fill(self, x: np.ndarray, u: np.ndarray, start: int) -> np.ndarray:
        """Ancestrally sample columns ``start..D-1`` of ``x`` in place from uniforms ``u``."""
        idx = self.parent_index(x, start) if start < self.n_vars else None
        for d in range(start, self.n_vars):
            p = self._probs[d][idx]
            x[..., d] = inverse_cdf(p, u[..., d])
            if self.kind == CHAIN:
                idx = idx * self.cards[d] + x[..., d]
        return x

    def sample_from_uniforms(self, u: np.ndarray) -> np.ndarray:
        x = np.zeros(u.shape, dtype=np.int64)
        return self.fill(x, u, 0)

    def log_prob_many(self, x: np.ndarray) -> np.ndarray:
        x = np.asarray(x)
        out = np.zeros(x.shape[:-1])
        idx = np.zeros(x.shape[:-1], dtype=np.int64)
        for d in range(self.n_vars):
            out = out + self._logp[d][idx, x[..., d]]
            if self.kind == CHAIN:
                idx = idx * self.cards[d] + x[..., d]
        return out

    def __repr__(self) -> str:
        return f"Factorisation(kind={self.kind!r}, cards={self.cards})"


def log_prob(fact: Factorisation, x) -> float:
    x = fact.check_assignments(x)
    return float(fact.log_prob_many(x)[0])


def score(fact: Factorisation, x) -> list:
    """Gradient of log p(x) w.r.t. every logit table entry."""
    x = fact.check_assignments(x)[0]
    grads = fact.zeros_like_params()
    idx = 0
    for d in range(fact.n_vars):
        p = fact.probs[d][idx]
        g = -p.copy()
        g[x[d]] += 1.0
        grads[d][idx] = g
        if fact.kind == CHAIN:
            idx = idx * fact.cards[d] + x[d]
    return grads


def sample_ancestral(fact: Factorisation, n: int, rng: np.random.Generator) -> np.ndarray:
    """Draw an ``n x D`` batch, one variable at a time in factorisation order."""
    if n < 1:
        raise ValueError("sample count must be at least 1")
    u = rng.random((n, fact.n_vars))
    return fact.sample_from_uniforms(u)


def support_size(cards: Sequence[int]) -> int:
    size = 1
    for k in cards:
        size *= int(k)
    return size


def enumerate_support(cards: Sequence[int], budget: int = DEFAULT_BUDGET) -> np.ndarray:
    """All assignments in row-major order (last variable fastest)."""
    cards = tuple(int(k) for k in cards)
    size = support_size(cards)
    if size > budget:
        raise SupportTooLarge(size, budget)
    if not cards:
        return np.zeros((1, 0), dtype=np.int64)
    grids = np.indices(cards).reshape(len(cards), -1).T
    return np.ascontiguousarray(grids, dtype=np.int64)


def iter_support(cards: Sequence[int], budget: int = DEFAULT_BUDGET,
                 chunk: int = 1 << 18) -> Iterator[np.ndarray]:
    cards = tuple(int(k) for k in cards)
    size = support_size(cards)
    if size > budget:
        raise SupportTooLarge(size, budget)
    if not cards:
        yield np.zeros((1, 0), dtype=np.int64)
        return
    for start in range(0, size, chunk):
        flat = np.arange(start, min(size, start + chunk))
        yield np.stack(np.unravel_index(flat, cards), axis=1).astype(np.int64)


class FunctionOracle:
    """Deterministic f over assignments.

    Subclasses implement :meth:`batch`.  Those that also provide
    :meth:`relaxed` can be used with the Gumbel-Softmax estimator.
    """

    has_relaxation = False

    def batch(self, x: np.ndarray) -> np.ndarray:
        raise NotImplementedError

    def __call__(self, x) -> float:
        x = np.asarray(x)
        return float(self.batch(x[None, :])[0]) if x.ndim == 1 else self.batch(x)

    def relaxed(self, y: list) -> tuple:
        """Values and per-variable gradients at relaxed samples ``y[d]`` of shape (M, K_d)."""
        raise ValueError("Gumbel-Softmax requires a relaxed function")


class CallableFunction(FunctionOracle):
    def __init__(self, fn: Callable[[np.ndarray], np.ndarray], relaxed=None):
        self.fn = fn
        self._relaxed = relaxed
        self.has_relaxation = relaxed is not None

    def batch(self, x):
        return np.asarray(self.fn(np.asarray(x)), dtype=np.float64)

    def relaxed(self, y):
        if self._relaxed is None:
            return super().relaxed(y)
        return self._relaxed(y)


class LookupFunction(FunctionOracle):
    """f given by a dense table with one entry per joint assignment."""

    def __init__(self, table):
        self.table = np.asarray(table, dtype=np.float64)
        self._flat = self.table.ravel()

    @classmethod
    def random(cls, cards, rng: np.random.Generator, scale: float = 1.0) -> "LookupFunction":
        return cls(scale * rng.standard_normal(tuple(cards)))

    def batch(self, x):
        x = np.asarray(x)
        if x.shape[-1] == 0:
            return np.full(x.shape[:-1], float(self.table))
        flat = np.ravel_multi_index(tuple(np.moveaxis(x, -1, 0)), self.table.shape)
        return self._flat[flat]


class AdditiveFunction(FunctionOracle):
    """f(x) = sum_d g_d(x_d); the relaxation replaces each one-hot by a soft vector."""

    has_relaxation = True

    def __init__(self, terms: Sequence):
        self.terms = [np.asarray(t, dtype=np.float64) for t in terms]

    def batch(self, x):
        x = np.asarray(x)
        out = np.zeros(x.shape[:-1])
        for d, g in enumerate(self.terms):
            out = out + g[x[..., d]]
        return out

    def relaxed(self, y):
        vals = sum(yd @ g for yd, g in zip(y, self.terms))
        grads = [np.broadcast_to(g, yd.shape).copy() for yd, g in zip(y, self.terms)]
        return np.asarray(vals, dtype=np.float64), grads


def expected_value(fact: Factorisation, f: FunctionOracle,
                   budget: int = DEFAULT_BUDGET) -> float:
    total = 0.0
    for x in iter_support(fact.cards, budget):
        total += float(np.exp(fact.log_prob_many(x)) @ f.batch(x))
    return total


def exact_expectation(fact: Factorisation, f: FunctionOracle,
                      budget: int = DEFAULT_BUDGET) -> float:
    """Explicit sum of p(x) f(x) over the whole support."""
    return expected_value(fact, f, budget)


def exact_gradient(fact: Factorisation, f: FunctionOracle,
                   budget: int = DEFAULT_BUDGET) -> list:
    """sum_x f(x) p(x) d/dtheta log p(x), by enumeration."""
    grads = fact.zeros_like_params()
    for x in iter_support(fact.cards, budget):
        w = np.exp(fact.log_prob_many(x)) * f.batch(x)
        idx = np.zeros(len(x), dtype=np.int64)
        for d in range(fact.n_vars):
            k = fact.cards[d]
            rows = grads[d].shape[0]
            p = fact.probs[d][idx]
            onehot = np.zeros_like(p)
            onehot[np.arange(len(x)), x[:, d]] = 1.0
            contrib = w[:, None] * (onehot - p)
            for j in range(k):
                grads[d][:, j] += np.bincount(idx, weights=contrib[:, j], minlength=rows)
            if fact.kind == CHAIN:
                idx = idx * k + x[:, d]
    return grads


def marginals(fact: Factorisation, budget: int = DEFAULT_BUDGET) -> list:
    """Exact single-variable marginals by enumeration."""
    out = [np.zeros(k) for k in fact.cards]
    for x in iter_support(fact.cards, budget):
        p = np.exp(fact.log_prob_many(x))
        for d, k in enumerate(fact.cards):
            out[d] += np.bincount(x[:, d], weights=p, minlength=k)
    return out


def flatten(grads: Sequence[np.ndarray], lead: int = 0) -> np.ndarray:
    """Concatenate per-table arrays into one vector (or ``lead`` leading axes + vector)."""
    if not grads:
        return np.zeros(0)
    if lead == 0:
        return np.concatenate([np.ravel(g) for g in grads])
    shape = grads[0].shape[:lead]
    return np.concatenate([np.reshape(g, shape + (-1,)) for g in grads], axis=-1)


def unflatten(vec: np.ndarray, fact: Factorisation) -> list:
    out, pos = [], 0
    for t in fact.tables:
        out.append(np.asarray(vec[pos:pos + t.size]).reshape(t.shape))
        pos += t.size
    return out


def random_independent(cards: Sequence[int], rng: np.random.Generator,
                       scale: float = 1.0) -> Factorisation:
    return Factorisation.independent([scale * rng.standard_normal(k) for k in cards])


def random_chain(cards: Sequence[int], rng: np.random.Generator,
                 scale: float = 1.0) -> Factorisation:
    tables, parents = [], 1
    for k in cards:
        tables.append(scale * rng.standard_normal((parents, k)))
        parents *= k
    return Factorisation.chain(tables)
