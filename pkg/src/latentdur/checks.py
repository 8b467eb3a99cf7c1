"""Self-verification suite behind ``latentdur check``.

Each check compares a fast path against an independent route: the trellis
against exhaustive enumeration, analytic gradients against central
differences, closed forms against their definitions.
"""

from __future__ import annotations

import time
from dataclasses import dataclass
from typing import Callable, List

import numpy as np
from scipy.special import log_softmax, logsumexp

from . import losses, models, seq_ops, training, trellis
from .core_types import TrainConfig, validate_duration


@dataclass
class CheckResult:
    name: str
    passed: bool
    detail: str
    seconds: float = 0.0


def _random_instance(rng: np.random.Generator, max_T=8, max_U=4, max_K=4, V=4):
    while True:
        U = int(rng.integers(1, max_U + 1))
        K = int(rng.integers(1, max_K + 1))
        lo, hi = U, min(U * K, max_T)
        if lo <= hi:
            break
    T = int(rng.integers(lo, hi + 1))
    em = trellis.EmissionTable(log_softmax(rng.normal(size=(T, 2)) * 2, axis=1),
                               log_softmax(rng.normal(size=(T, V)) * 2, axis=1))
    return em, rng.integers(0, V, size=U), K


def check_oracle(n: int = 100, seed: int = 0) -> CheckResult:
    rng = np.random.default_rng(seed)
    worst = 0.0
    for _ in range(n):
        em, y, K = _random_instance(rng)
        paths = trellis.enumerate_valid(em.T, len(y), K)
        scores = np.array([trellis.path_log_score(em, y, d) for d in paths])
        brute = np.exp(scores).sum()
        fast = np.exp(trellis.log_marginal(trellis.forward(em, y, K)))
        worst = max(worst, abs(fast - brute) / brute)
        _, vs = trellis.viterbi_best(em, y, K)
        if abs(vs - scores.max()) > 1e-10:
            return CheckResult("oracle equivalence", False, f"viterbi {vs} != max {scores.max()}")
        nb = trellis.nbest_beam(em, y, K, len(paths))
        want = [paths[i].durations for i in np.argsort(-scores, kind="stable")]
        if [d.durations for d, _ in nb] != want:
            return CheckResult("oracle equivalence", False, "n-best list differs from enumeration")
    return CheckResult("oracle equivalence", worst <= 1e-10, f"{n} instances, max rel err {worst:.2e}")


def check_posterior(n: int = 50, seed: int = 1) -> CheckResult:
    rng = np.random.default_rng(seed)
    worst = 0.0
    for _ in range(n):
        em, y, K = _random_instance(rng)
        tr = trellis.forward_backward(em, y, K)
        z = trellis.log_marginal(tr)
        per_t = logsumexp(tr.log_alpha + tr.log_beta, axis=(1, 2))
        worst = max(worst, float(np.max(np.abs(per_t - z))))
    return CheckResult("posterior consistency", worst <= 1e-8, f"max abs err {worst:.2e}")


def check_ctc_gradient(n: int = 10, seed: int = 2) -> CheckResult:
    rng = np.random.default_rng(seed)
    worst = 0.0
    for _ in range(n):
        em, y, K = _random_instance(rng)
        T, V = em.T, em.V

        def f(v):
            e = trellis.EmissionTable(v[:2 * T].reshape(T, 2), v[2 * T:].reshape(T, V))
            g = trellis.marginal_gradient(e, y, K)
            return g.log_marginal, np.concatenate([g.log_trans.ravel(), g.log_emit.ravel()])

        x = np.concatenate([em.log_trans.ravel(), em.log_emit.ravel()])
        _, ga = f(x)
        active = np.flatnonzero(np.abs(ga) > 1e-6)
        worst = max(worst, models.finite_diff_check(f, x, 1e-5, active))
    return CheckResult("trellis marginal gradient", worst <= 1e-5, f"max rel err {worst:.2e}")


def check_loss_gradients(n: int = 10, seed: int = 3) -> CheckResult:
    rng = np.random.default_rng(seed)
    worst = 0.0
    for _ in range(n):
        K, D, U = 4, 3, 3
        e = rng.normal(size=(K, D))
        c = rng.normal(size=(U, D))
        l = rng.integers(1, K + 1, size=U)
        sg = losses.SgCoeffs(float(rng.uniform(0.5, 2)), float(rng.uniform(0.5, 2)))
        _, gc, ge = losses.prior_kl(c, e, l, sg)
        nc = models.numeric_gradient(lambda v: losses.prior_kl(v.reshape(U, D), e, l, sg)[0], c)
        ne = models.numeric_gradient(lambda v: losses.prior_kl(c, v.reshape(K, D), l, sg)[0], e)
        worst = max(worst, models.relative_error(gc.ravel(), sg.alpha * nc).max(),
                    models.relative_error(ge.ravel(), sg.beta * ne).max())
        _, gd, ge = losses.vq_kl(c, e, l, 0.4, sg)
        nd = models.numeric_gradient(lambda v: losses.vq_kl(v.reshape(U, D), e, l, 0.4, sg)[0], c)
        ne = models.numeric_gradient(lambda v: losses.vq_kl(c, v.reshape(K, D), l, 0.4, sg)[0], e)
        worst = max(worst, models.relative_error(gd.ravel(), sg.alpha * nd).max(),
                    models.relative_error(ge.ravel(), sg.beta * ne).max())
        x = rng.normal(size=(5, 2))
        mu = rng.normal(size=(5, 2))
        worst = max(worst, models.finite_diff_check(
            lambda v: losses.decoder_nll(x, v.reshape(5, 2), 3.0), mu))
    return CheckResult("loss gradients", worst <= 1e-5, f"max rel err {worst:.2e}")


def check_model_gradients(n: int = 3, seed: int = 4) -> CheckResult:
    rng = np.random.default_rng(seed)
    cfg = TrainConfig(K=3, g=2, D=2, O=2, V=3, E=2, H=3, beam_train=2,
                      alpha_prior=1.0, beta_prior=1.0, alpha_vq=1.0, beta_vq=1.0)
    spec = models.ModelSpec.from_config(cfg)
    worst = 0.0
    for i in range(n):
        p = models.init_params(spec, seed=int(rng.integers(1 << 30)))
        tokens = rng.integers(0, 3, size=3)
        frames = rng.normal(size=(int(rng.integers(6, 13)), 2))
        cb_slice = p.slice_of("codebook")

        def f(v):
            r = training.item_loss_and_grad(p.with_values(v), cfg, tokens, frames)
            return r.loss.total, r.grad

        idx = [j for j in range(p.size) if not (cb_slice.start <= j < cb_slice.stop)]
        worst = max(worst, models.finite_diff_check(f, p.values, 1e-5, idx))
    return CheckResult("end-to-end model gradients", worst <= 1e-4, f"max rel err {worst:.2e}")


def check_closed_forms(seed: int = 5) -> CheckResult:
    rng = np.random.default_rng(seed)
    e = rng.normal(size=(5, 4))
    c = rng.normal(size=(6, 4))
    l = rng.integers(1, 6, size=6)
    v, _, _ = losses.prior_kl(c, e, l, losses.SgCoeffs(1.0, 0.0))
    lp = losses.prior_logits(c, e)
    ident = abs(v + lp[np.arange(6), l - 1].sum())
    norm = float(np.max(np.abs(logsumexp(lp, axis=1))))
    mult = losses.vq_kl(np.array([[1.0]]), np.array([[0.0]]), [1], 0.4, losses.SgCoeffs())[0]
    k1 = losses.prior_kl(c, e[:1], [1] * 6, losses.SgCoeffs())[0]
    k1_alt = losses.vq_kl_alt(c, e[:1], [1] * 6, 0.4)
    ok = ident <= 1e-10 and norm <= 1e-12 and mult == 3.125 and k1 == 0.0 and k1_alt == 0.0
    return CheckResult("closed-form identities", ok,
                       f"prior identity {ident:.1e}, norm {norm:.1e}, vq multiplier {mult}, "
                       f"K=1 prior {k1}, K=1 alt {k1_alt}")


def check_constraints(n: int = 300, seed: int = 6) -> CheckResult:
    rng = np.random.default_rng(seed)
    for _ in range(n):
        em, y, K = _random_instance(rng, max_T=20, max_U=6, max_K=5)
        for d, _ in trellis.nbest_beam(em, y, K, int(rng.integers(1, 6))):
            bad = validate_duration(d, len(y), em.T, K)
            if bad is not None:
                return CheckResult("beam constraints", False, str(bad))
        l = rng.integers(1, 6, size=int(rng.integers(1, 8)))
        a = trellis.duration_to_alignment(l)
        if trellis.duration_to_alignment(trellis.alignment_to_duration(a)) != a:
            return CheckResult("beam constraints", False, f"round trip failed for {l}")
    return CheckResult("beam constraints", True, f"{n} instances valid, round trips exact")


def check_seq_ops(seed: int = 7) -> CheckResult:
    rng = np.random.default_rng(seed)
    v = rng.normal(size=(4, 3))
    l = [2, 1, 3, 2]
    ok = all(np.allclose(seq_ops.aggregate(seq_ops.upsample(v, l, g), l, g), v, rtol=0, atol=1e-15)
             for g in (1, 2, 3))
    return CheckResult("aggregate/upsample inverse", ok, "g in {1,2,3}")


CHECKS: List[Callable[[], CheckResult]] = [
    check_oracle, check_posterior, check_ctc_gradient, check_loss_gradients,
    check_model_gradients, check_closed_forms, check_constraints, check_seq_ops,
]


def run_all() -> List[CheckResult]:
    results = []
    for fn in CHECKS:
        t0 = time.perf_counter()
        try:
            res = fn()
        except Exception as exc:  # a crash is a failed check, not an aborted suite
            res = CheckResult(fn.__name__, False, f"raised {type(exc).__name__}: {exc}")
        res.seconds = time.perf_counter() - t0
        results.append(res)
    return results


def format_table(results: List[CheckResult]) -> str:
    width = max(len(r.name) for r in results)
    lines = [f"{'check':<{width}}  result  time    detail"]
    for r in results:
        lines.append(f"{r.name:<{width}}  {'PASS' if r.passed else 'FAIL':<6}  {r.seconds:5.2f}s  {r.detail}")
    return "\n".join(lines)
