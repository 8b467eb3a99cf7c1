"""Closed-form loss terms of the latent-duration objective, with analytic gradients.

All terms are written as quantities to minimize (negated ELBO terms).
Squared distances that touch the codebook go through a stop-gradient split
``alpha * |a - sg[b]|^2 + beta * |sg[a] - b|^2``: the reported value is the
plain ``|a - b|^2`` while the gradient reaching ``a`` is scaled by ``alpha``
and the one reaching ``b`` by ``beta``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Tuple

import numpy as np
from scipy.special import log_softmax, logsumexp

from .core_types import Codebook, DurationSequence, LossBreakdown, ValidationError


@dataclass(frozen=True)
class SgCoeffs:
    alpha: float = 1.0
    beta: float = 0.0

    def __post_init__(self):
        if self.alpha < 0 or self.beta < 0:
            raise ValidationError("stop-gradient coefficients must be non-negative")
        if self.alpha + self.beta <= 0:
            raise ValidationError("alpha + beta must be positive")


def _codewords(cb) -> np.ndarray:
    return cb.codewords if isinstance(cb, Codebook) else np.asarray(cb, dtype=np.float64)


def _indices(l, K: int) -> np.ndarray:
    durations = l.durations if isinstance(l, DurationSequence) else tuple(l)
    idx = np.asarray(durations, dtype=np.int64) - 1
    if idx.size and (idx.min() < 0 or idx.max() >= K):
        raise ValidationError(f"codeword index out of range 1..{K}")
    return idx


def sg_sqdist(a: np.ndarray, b: np.ndarray, c: SgCoeffs) -> Tuple[float, np.ndarray, np.ndarray]:
    """``|a - b|^2`` with gradients ``2 alpha (a - b)`` for ``a`` and ``2 beta (b - a)`` for ``b``."""
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if a.shape != b.shape:
        raise ValidationError(f"dimension mismatch: {a.shape} vs {b.shape}")
    diff = a - b
    return float(diff @ diff), 2.0 * c.alpha * diff, -2.0 * c.beta * diff


def decoder_nll(x: np.ndarray, mu: np.ndarray, sigma_d: float) -> Tuple[float, np.ndarray]:
    """Gaussian negative log-likelihood ``-sum_t log N(x_t; mu_t, sigma_d^2 I)`` and its mu-gradient."""
    if not sigma_d > 0:
        raise ValidationError("sigma_d must be positive")
    x = np.asarray(x, dtype=np.float64)
    mu = np.asarray(mu, dtype=np.float64)
    if x.shape != mu.shape:
        raise ValidationError(f"shape mismatch: {x.shape} vs {mu.shape}")
    var = sigma_d * sigma_d
    diff = mu - x
    T, O = x.shape
    value = float(np.sum(diff * diff)) / (2.0 * var) + T * O * 0.5 * math.log(2.0 * math.pi * var)
    return value, diff / var


def _sqdist(c: np.ndarray, e: np.ndarray) -> np.ndarray:
    """Pairwise ``|c_u - e_k|^2`` as a ``U x K`` matrix, computed from differences."""
    diff = c[:, None, :] - e[None, :, :]
    return np.einsum("ukd,ukd->uk", diff, diff)


def prior_logits(c: np.ndarray, cb) -> np.ndarray:
    """Log-probabilities of every codeword under the prior given activation ``c``.

    Accepts a single vector (returns length ``K``) or a ``U x D`` matrix.
    """
    e = _codewords(cb)
    c = np.asarray(c, dtype=np.float64)
    single = c.ndim == 1
    c2 = c[None, :] if single else c
    if c2.shape[1] != e.shape[1]:
        raise ValidationError(f"activation dim {c2.shape[1]} != codeword dim {e.shape[1]}")
    out = log_softmax(-_sqdist(c2, e), axis=1)
    return out[0] if single else out


def prior_kl(c_seq: np.ndarray, cb, l, sg: SgCoeffs) -> Tuple[float, np.ndarray, np.ndarray]:
    """``sum_u |c_u - e_{l_u}|^2 + log sum_k exp(-|c_u - e_k|^2)``.

    Equals ``-sum_u log P(l_u)`` under :func:`prior_logits`.  Every squared
    distance, including those inside the log-sum-exp, is split by ``sg``;
    returns ``(value, grad_c, grad_codebook)``.
    """
    e = _codewords(cb)
    c = np.asarray(c_seq, dtype=np.float64)
    idx = _indices(l, e.shape[0])
    if c.shape != (idx.size, e.shape[1]):
        raise ValidationError(f"activations shape {c.shape} != ({idx.size}, {e.shape[1]})")
    d2 = _sqdist(c, e)
    rows = np.arange(idx.size)
    value = float(np.sum(d2[rows, idx]) + np.sum(logsumexp(-d2, axis=1)))

    # d value / d d2[u, k] = onehot(l_u) - softmax(-d2_u)
    w = -np.exp(log_softmax(-d2, axis=1))
    w[rows, idx] += 1.0
    # d d2[u,k] / d c_u = 2 (c_u - e_k)
    diff = c[:, None, :] - e[None, :, :]
    g_pair = 2.0 * w[:, :, None] * diff
    grad_c = sg.alpha * g_pair.sum(axis=1)
    grad_e = -sg.beta * g_pair.sum(axis=0)
    return value, grad_c, grad_e


def _half_inv_var(sigma: float) -> float:
    # 0.5 * (1/sigma)^2 rounds to exactly 3.125 for sigma = 0.4; 1 / (2 sigma^2) does not
    inv = 1.0 / sigma
    return 0.5 * inv * inv


def vq_kl(d_seq: np.ndarray, cb, l, sigma: float, sg: SgCoeffs) -> Tuple[float, np.ndarray, np.ndarray]:
    """``sum_u |d_u - e_{l_u}|^2 / (2 sigma^2)``; returns ``(value, grad_d, grad_codebook)``."""
    if not sigma > 0:
        raise ValidationError("sigma must be positive")
    e = _codewords(cb)
    d = np.asarray(d_seq, dtype=np.float64)
    idx = _indices(l, e.shape[0])
    if d.shape != (idx.size, e.shape[1]):
        raise ValidationError(f"posterior means shape {d.shape} != ({idx.size}, {e.shape[1]})")
    scale = _half_inv_var(sigma)
    diff = d - e[idx]
    value = scale * float(np.sum(diff * diff))
    grad_d = sg.alpha * 2.0 * scale * diff
    grad_e = np.zeros_like(e)
    np.add.at(grad_e, idx, -sg.beta * 2.0 * scale * diff)
    return value, grad_d, grad_e


def vq_kl_alt(d_seq: np.ndarray, cb, l, sigma: float) -> float:
    """Quantization KL against a codebook-normalized Gaussian, with the mixture KL approximated.

    ``sum_u |d_u - e_{l_u}|^2 / (2 sigma^2) + log sum_k exp(-|d_u - e_k|^2 / (2 sigma^2))``,
    constant normalizer dropped.
    """
    if not sigma > 0:
        raise ValidationError("sigma must be positive")
    e = _codewords(cb)
    d = np.asarray(d_seq, dtype=np.float64)
    idx = _indices(l, e.shape[0])
    scaled = _sqdist(d, e) * _half_inv_var(sigma)
    rows = np.arange(idx.size)
    return float(np.sum(scaled[rows, idx]) + np.sum(logsumexp(-scaled, axis=1)))


def total_objective(decoder_nll: float, prior_kl: float, vq_kl: float, ctc_nll: float,
                    gamma: float) -> LossBreakdown:
    """Combine the terms; ``ctc_nll`` is ``-log P(y|x)`` from the aligner."""
    parts = (decoder_nll, prior_kl, vq_kl, ctc_nll, gamma)
    if not all(math.isfinite(float(p)) for p in parts):
        raise ValidationError(f"non-finite loss input: {parts}")
    total = decoder_nll + prior_kl + vq_kl + gamma * ctc_nll
    return LossBreakdown(float(decoder_nll), float(prior_kl), float(vq_kl), float(ctc_nll), float(total))
