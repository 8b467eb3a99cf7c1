"""Brute-force references that share no code with the package's dynamic programs."""

import itertools

import numpy as np


def all_alignments(T, U, K):
    """Every SHIFT(1)/BLANK(0) string of length T that starts with SHIFT, has U shifts and runs <= K."""
    out = []
    for rest in itertools.product((1, 0), repeat=T - 1):
        a = (1,) + rest
        if sum(a) != U:
            continue
        runs, cur = [], 0
        for s in a:
            if s == 1:
                if cur:
                    runs.append(cur)
                cur = 1
            else:
                cur += 1
        runs.append(cur)
        if max(runs) <= K:
            out.append((a, tuple(runs)))
    return out


def path_prob(trans, emit, y, a):
    """Product of per-frame transition and token probabilities (probability domain)."""
    p = 1.0
    u = -1
    for t, s in enumerate(a):
        if s == 1:
            u += 1
        p *= trans[t, s] * emit[t, y[u]]
    return p


def brute(trans, emit, y, K):
    """List of (durations, probability) over all valid alignments."""
    T = trans.shape[0]
    return [(runs, path_prob(trans, emit, y, a)) for a, runs in all_alignments(T, len(y), K)]


def random_probs(rng, T, V, spread=1.5):
    def norm(z):
        e = np.exp(z - z.max(axis=1, keepdims=True))
        return e / e.sum(axis=1, keepdims=True)
    return norm(rng.normal(size=(T, 2)) * spread), norm(rng.normal(size=(T, V)) * spread)


def central_diff(f, x, eps=1e-5):
    x = np.array(x, dtype=float)
    g = np.zeros_like(x)
    for i in np.ndindex(x.shape):
        old = x[i]
        x[i] = old + eps
        fp = f(x)
        x[i] = old - eps
        fm = f(x)
        x[i] = old
        g[i] = (fp - fm) / (2 * eps)
    return g


def rel_err(a, n):
    a, n = np.asarray(a, float), np.asarray(n, float)
    return np.abs(a - n) / np.maximum(np.maximum(np.abs(a), np.abs(n)), 1e-8)
