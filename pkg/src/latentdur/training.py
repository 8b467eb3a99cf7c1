"""Joint training of aligner, latent nets, decoder and codebook; prior-driven synthesis."""

from __future__ import annotations

import logging
from dataclasses import dataclass, field
from typing import Callable, Iterable, List, Optional, Sequence, Tuple

import numpy as np
from scipy.special import softmax

from . import losses, models, seq_ops, trellis
from .core_types import (DurationSequence, LossBreakdown, ModelParams, TrainConfig,
                         ValidationError, validate_duration)
from .models import GradBuffer, ModelSpec

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class AdamState:
    m: np.ndarray
    v: np.ndarray
    step: int = 0

    @classmethod
    def zeros(cls, n: int) -> "AdamState":
        return cls(np.zeros(n), np.zeros(n), 0)

    def to_dict(self) -> dict:
        return {"step": self.step, "m": [float(x) for x in self.m], "v": [float(x) for x in self.v]}

    @classmethod
    def from_dict(cls, d: dict) -> "AdamState":
        return cls(np.asarray(d["m"], dtype=np.float64), np.asarray(d["v"], dtype=np.float64), int(d["step"]))


def adam_update(params: np.ndarray, grads: np.ndarray, state: AdamState, lr: float = 5e-5,
                beta1: float = 0.9, beta2: float = 0.999,
                eps: float = 1e-8) -> Tuple[np.ndarray, AdamState]:
    """One bias-corrected Adam step; returns new arrays, inputs are left untouched."""
    params = np.asarray(params, dtype=np.float64)
    grads = np.asarray(grads, dtype=np.float64)
    if params.shape != grads.shape or state.m.shape != params.shape:
        raise ValidationError(f"shape mismatch: params {params.shape}, grads {grads.shape}, "
                              f"state {state.m.shape}")
    t = state.step + 1
    m = beta1 * state.m + (1.0 - beta1) * grads
    v = beta2 * state.v + (1.0 - beta2) * grads * grads
    m_hat = m / (1.0 - beta1 ** t)
    v_hat = v / (1.0 - beta2 ** t)
    return params - lr * m_hat / (np.sqrt(v_hat) + eps), AdamState(m, v, t)


@dataclass
class ItemResult:
    loss: LossBreakdown
    grad: np.ndarray
    durations: DurationSequence
    hypotheses: List[Tuple[DurationSequence, float]]


@dataclass
class StepReport:
    loss: LossBreakdown
    params: ModelParams
    state: AdamState
    durations: List[Optional[DurationSequence]]
    skipped: int = 0


def _elbo_terms(params: ModelParams, cfg: TrainConfig, tokens: np.ndarray, x: np.ndarray,
                l: DurationSequence, grad: GradBuffer, weight: float) -> Tuple[float, float, float]:
    """Decoder NLL, prior KL and VQ KL for fixed durations; adds ``weight`` times their gradients.

    Codewords fed to the networks as inputs (feedback codes and the upsampled
    decoder code) are treated as constants.
    """
    cb = params["codebook"]
    g = cfg.g
    codes = cb[np.asarray(l.durations) - 1]
    prev = codes[:-1]
    xbar = seq_ops.aggregate(x, l, g)

    c, phi_cache = models.latentnet_phi(params, prev, tokens)
    d, psi_cache = models.latentnet_psi(params, prev, xbar, tokens)
    z_hat = seq_ops.upsample(codes, l, g)
    y_hat = seq_ops.upsample(tokens, l, g)
    mu, dec_cache = models.decoder(params, models.teacher_inputs(x), z_hat, y_hat)

    dec_val, d_mu = losses.decoder_nll(x, mu, cfg.sigma_d)
    pk_val, d_c, de_prior = losses.prior_kl(c, cb, l, losses.SgCoeffs(cfg.alpha_prior, cfg.beta_prior))
    vq_val, d_d, de_vq = losses.vq_kl(d, cb, l, cfg.sigma, losses.SgCoeffs(cfg.alpha_vq, cfg.beta_vq))

    models.decoder_backward(params, dec_cache, weight * d_mu, grad)
    models.latentnet_phi_backward(params, phi_cache, weight * d_c, grad)
    models.latentnet_psi_backward(params, psi_cache, weight * d_d, grad)
    grad.add("codebook", weight * (de_prior + de_vq))
    return dec_val, pk_val, vq_val


def item_loss_and_grad(params: ModelParams, cfg: TrainConfig, tokens: Sequence[int],
                       frames: np.ndarray) -> ItemResult:
    """Loss breakdown and flat gradient of the minimized objective for one utterance.

    Raises :class:`~latentdur.core_types.InfeasibleError` when the item
    cannot be aligned with durations in ``[1, K]``.
    """
    y = np.asarray(tokens, dtype=np.int64)
    sf = seq_ops.group_frames(frames, cfg.g)
    em, enc_cache = models.acoustic_encoder(params, sf.frames)
    hyps = trellis.nbest_beam(em, y, cfg.K, cfg.beam_train)
    if cfg.posterior_weighting == "best":
        weights = np.array([1.0])
        hyps_used = hyps[:1]
    else:
        weights = softmax(np.array([s for _, s in hyps]))
        hyps_used = hyps

    grad = GradBuffer(params)
    dec = pk = vq = 0.0
    for (l, _), w in zip(hyps_used, weights):
        assert validate_duration(l, len(y), sf.frames.shape[0], cfg.K) is None
        a, b, c = _elbo_terms(params, cfg, y, sf.padded_frames, l, grad, float(w))
        dec += w * a
        pk += w * b
        vq += w * c

    mg = trellis.marginal_gradient(em, y, cfg.K)
    models.acoustic_encoder_backward(params, enc_cache, -cfg.gamma * mg.log_trans,
                                     -cfg.gamma * mg.log_emit, grad)
    loss = losses.total_objective(float(dec), float(pk), float(vq), -mg.log_marginal, cfg.gamma)
    return ItemResult(loss, grad.values, hyps[0][0], hyps)


def _mean_loss(parts: Sequence[LossBreakdown]) -> LossBreakdown:
    n = len(parts)
    if n == 0:
        nan = float("nan")
        return LossBreakdown(nan, nan, nan, nan, nan)
    fields = ("decoder_nll", "prior_kl", "vq_kl", "ctc_nll", "total")
    sums = [sum(getattr(p, f) for p in parts) / n for f in fields]
    return LossBreakdown(*sums)


def train_step(batch: Sequence[Tuple[Sequence[int], np.ndarray]], params: ModelParams,
               config: TrainConfig, state: AdamState) -> StepReport:
    """Average the per-item objective over ``batch`` and take one Adam step.

    Items that admit no valid alignment are skipped and counted.
    """
    total = np.zeros(params.size)
    parts: List[LossBreakdown] = []
    used: List[Optional[DurationSequence]] = []
    skipped = 0
    for tokens, frames in batch:
        try:
            res = item_loss_and_grad(params, config, tokens, frames)
        except trellis.InfeasibleError as exc:
            log.warning("skipping infeasible item: %s", exc)
            skipped += 1
            used.append(None)
            continue
        total += res.grad
        parts.append(res.loss)
        used.append(res.durations)
    if parts:
        total /= len(parts)
    new_values, new_state = adam_update(params.values, total, state, config.learning_rate,
                                        config.adam_beta1, config.adam_beta2, config.adam_eps)
    return StepReport(_mean_loss(parts), params.with_values(new_values), new_state, used, skipped)


def duration_accuracy(predicted: Iterable[Optional[Sequence[int]]],
                      truth: Iterable[Sequence[int]]) -> float:
    """Fraction of tokens whose predicted duration equals the reference (``None`` counts as wrong)."""
    hit = n = 0
    for p, t in zip(predicted, truth):
        t = tuple(t)
        n += len(t)
        if p is not None:
            hit += sum(int(a == b) for a, b in zip(tuple(p), t))
    return hit / n if n else float("nan")


@dataclass
class TrainResult:
    params: ModelParams
    state: AdamState
    history: List[dict] = field(default_factory=list)


def train(items: Sequence, config: TrainConfig, *, params: Optional[ModelParams] = None,
          state: Optional[AdamState] = None,
          on_step: Optional[Callable[[dict], None]] = None) -> TrainResult:
    """Run ``epochs`` shuffled passes of mini-batches, stopping early at ``max_steps``.

    ``items`` are objects with ``tokens`` and ``frames`` (``true_durations``
    is only read to fill the log's ``duration_accuracy``).
    """
    spec = ModelSpec.from_config(config)
    if params is None:
        params = models.init_params(spec, config.seed, config.init_scale)
    if state is None:
        state = AdamState.zeros(params.size)
    rng = np.random.default_rng(config.seed + 1)
    history: List[dict] = []
    step = 0
    for _epoch in range(config.epochs):
        order = rng.permutation(len(items))
        for start in range(0, len(order), config.batch_size):
            if config.max_steps is not None and step >= config.max_steps:
                return TrainResult(params, state, history)
            batch_items = [items[i] for i in order[start:start + config.batch_size]]
            rep = train_step([(it.tokens, it.frames) for it in batch_items], params, config, state)
            params, state = rep.params, rep.state
            step += 1
            record = {"step": step, **rep.loss.to_dict()}
            truth = [getattr(it, "true_durations", None) for it in batch_items]
            if all(t is not None for t in truth):
                record["duration_accuracy"] = duration_accuracy(
                    [d.durations if d is not None else None for d in rep.durations], truth)
            else:
                record["duration_accuracy"] = None
            history.append(record)
            if on_step is not None:
                on_step(record)
    return TrainResult(params, state, history)


def viterbi_durations(tokens: Sequence[int], frames: np.ndarray, params: ModelParams,
                      config: TrainConfig) -> DurationSequence:
    """Best aligner durations for one utterance."""
    sf = seq_ops.group_frames(frames, config.g)
    em, _ = models.acoustic_encoder(params, sf.frames)
    a, _ = trellis.viterbi_best(em, tokens, config.K)
    return trellis.alignment_to_duration(a)


def infer_durations(tokens: Sequence[int], params: ModelParams, config: TrainConfig) -> DurationSequence:
    """Greedy prior decoding: each token takes the most probable codeword, fed back to the next.

    Ties go to the smaller duration.
    """
    cb = params["codebook"]
    h = None
    z = None
    out = []
    for v in tokens:
        c, h = models.latentnet_phi_step(params, h, z, int(v))
        k = int(np.argmax(losses.prior_logits(c, cb)))
        out.append(k + 1)
        z = cb[k]
    return DurationSequence(tuple(out))


def synthesize(tokens: Sequence[int], params: ModelParams, config: TrainConfig,
               durations: Optional[DurationSequence] = None) -> np.ndarray:
    """Free-running decoder output of ``g * sum(l)`` frames, starting from the zero go-frame."""
    y = np.asarray(tokens, dtype=np.int64)
    l = infer_durations(y, params, config) if durations is None else durations
    codes = params["codebook"][np.asarray(l.durations) - 1]
    z_hat = seq_ops.upsample(codes, l, config.g)
    y_hat = seq_ops.upsample(y, l, config.g)
    x_prev = np.zeros(params.shape_of("theta.a")[0])
    frames = np.empty((len(y_hat), x_prev.size))
    for t in range(len(y_hat)):
        x_prev = models.decoder_step(params, x_prev, z_hat[t], int(y_hat[t]))
        frames[t] = x_prev
    return frames
