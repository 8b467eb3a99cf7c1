"""Duration-constrained monotonic alignment trellis.

States are ``(t, u, r)``: super-frame ``t`` is emitted by token ``u`` whose
run so far has length ``r``.  Keeping the run length in the state is what
removes every path with a duration above ``K``; paths that do not start in
``(1, 1, 1)`` or end in token ``U`` never enter the tables.

Arrays are 0-based internally: ``log_alpha[t, u, r - 1]``.  Every path has
exactly ``U`` SHIFTs, and its score is::

    sum_t log P(a_t | x_t) + log P(y_{u(t)} | x_t)

with transition and token probabilities kept separate (there is no blank
label in the token vocabulary).
"""

from __future__ import annotations

import functools
from dataclasses import dataclass
from typing import Iterator, List, NamedTuple, Optional, Sequence, Tuple

import numpy as np
from scipy.special import logsumexp

from .core_types import (BLANK, SHIFT, Alignment, DurationSequence, InfeasibleError,
                         TokenSequence, ValidationError)

NEG_INF = -np.inf

MAX_ENUMERATION = 10 ** 6


@dataclass(frozen=True)
class EmissionTable:
    """Per-super-frame log-probabilities.

    ``log_trans[t]`` holds ``(log P(BLANK|x_t), log P(SHIFT|x_t))`` and
    ``log_emit[t, v]`` is ``log P(v|x_t)``.  Rows are expected to be
    normalized, but this is not enforced so that perturbed tables can be fed
    to finite-difference checks; see :func:`check_normalized`.
    """

    log_trans: np.ndarray
    log_emit: np.ndarray

    def __post_init__(self):
        lt = np.asarray(self.log_trans, dtype=np.float64)
        le = np.asarray(self.log_emit, dtype=np.float64)
        if lt.ndim != 2 or lt.shape[1] != 2:
            raise ValidationError(f"log_trans must be T' x 2, got {lt.shape}")
        if le.ndim != 2 or le.shape[0] != lt.shape[0] or le.shape[1] < 1:
            raise ValidationError(f"log_emit must be T' x V with T'={lt.shape[0]}, got {le.shape}")
        object.__setattr__(self, "log_trans", lt)
        object.__setattr__(self, "log_emit", le)

    @property
    def T(self) -> int:
        return self.log_trans.shape[0]

    @property
    def V(self) -> int:
        return self.log_emit.shape[1]

    @classmethod
    def from_probs(cls, trans: np.ndarray, emit: np.ndarray) -> "EmissionTable":
        with np.errstate(divide="ignore"):
            return cls(np.log(trans), np.log(emit))


def check_normalized(em: EmissionTable, tol: float = 1e-9) -> bool:
    return bool(np.all(np.abs(logsumexp(em.log_trans, axis=1)) <= tol)
                and np.all(np.abs(logsumexp(em.log_emit, axis=1)) <= tol))


@dataclass(frozen=True)
class Trellis:
    """Forward and/or backward tables of shape ``(T', U, K)``.

    ``mask`` marks states lying on at least one valid path; every other
    entry of both tables is ``-inf``.
    """

    T: int
    U: int
    K: int
    mask: np.ndarray
    log_alpha: Optional[np.ndarray] = None
    log_beta: Optional[np.ndarray] = None


class MarginalGradient(NamedTuple):
    log_marginal: float
    log_trans: np.ndarray
    log_emit: np.ndarray


def _tokens(y) -> np.ndarray:
    if isinstance(y, TokenSequence):
        return y.as_array()
    arr = np.asarray(y, dtype=np.int64).reshape(-1)
    if arr.size == 0:
        raise ValidationError("token sequence must be non-empty")
    return arr


def is_feasible(T: int, U: int, K: int) -> bool:
    return U >= 1 and K >= 1 and U <= T <= U * K


def _check(em: EmissionTable, y: np.ndarray, K: int, allow_infeasible: bool = False) -> bool:
    if K < 1:
        raise ValidationError("K must be >= 1")
    if y.min() < 0 or y.max() >= em.V:
        raise ValidationError(f"token ids must lie in 0..{em.V - 1}")
    ok = is_feasible(em.T, len(y), K)
    if not ok and not allow_infeasible:
        raise InfeasibleError(
            f"no alignment of {len(y)} tokens to {em.T} super-frames with K={K} "
            f"(need {len(y)} <= T' <= {len(y) * K})")
    return ok


def _factors(em: EmissionTable, y: np.ndarray) -> Tuple[np.ndarray, np.ndarray]:
    """Per-(t, u) log factors for entering token u (SHIFT) and staying in it (BLANK)."""
    emit = em.log_emit[:, y]
    return em.log_trans[:, SHIFT, None] + emit, em.log_trans[:, BLANK, None] + emit


def reachability(T: int, U: int, K: int) -> np.ndarray:
    """Boolean ``(T, U, K)`` mask of states on some valid path."""
    fwd = np.zeros((T, U, K), dtype=bool)
    bwd = np.zeros((T, U, K), dtype=bool)
    if not is_feasible(T, U, K):
        return fwd
    fwd[0, 0, 0] = True
    for t in range(1, T):
        fwd[t, 1:, 0] = fwd[t - 1, :-1, :].any(axis=1)
        fwd[t, :, 1:] = fwd[t - 1, :, :-1]
    bwd[T - 1, U - 1, :] = True
    for t in range(T - 2, -1, -1):
        bwd[t, :, :-1] = bwd[t + 1, :, 1:]
        bwd[t, :-1, :] |= bwd[t + 1, 1:, 0][:, None]
    return fwd & bwd


def _forward_table(shift: np.ndarray, blank: np.ndarray, K: int, mask: np.ndarray) -> np.ndarray:
    T, U = shift.shape
    a = np.full((T, U, K), NEG_INF)
    a[0, 0, 0] = shift[0, 0]
    for t in range(1, T):
        prev = np.where(mask[t - 1], a[t - 1], NEG_INF)
        a[t, 1:, 0] = logsumexp(prev[:-1, :], axis=1) + shift[t, 1:]
        a[t, :, 1:] = prev[:, :-1] + blank[t, :, None]
    a[~mask] = NEG_INF
    return a


def _backward_table(shift: np.ndarray, blank: np.ndarray, K: int, mask: np.ndarray,
                    reduce=np.logaddexp) -> np.ndarray:
    T, U = shift.shape
    b = np.full((T, U, K), NEG_INF)
    b[T - 1, U - 1, :] = 0.0
    for t in range(T - 2, -1, -1):
        nxt = np.where(mask[t + 1], b[t + 1], NEG_INF)
        stay = np.full((U, K), NEG_INF)
        stay[:, :-1] = nxt[:, 1:] + blank[t + 1, :, None]
        move = np.full((U, K), NEG_INF)
        move[:-1, :] = (nxt[1:, 0] + shift[t + 1, 1:])[:, None]
        b[t] = reduce(stay, move)
    b[~mask] = NEG_INF
    return b


def forward(em: EmissionTable, y, K: int, *, allow_infeasible: bool = False) -> Trellis:
    """Fill ``log_alpha``.

    ``log_alpha[t, u, r]`` is the log-sum of all valid path prefixes that end
    at super-frame ``t`` inside token ``u`` with run length ``r + 1``.
    Raises :class:`InfeasibleError` unless ``allow_infeasible`` is set, in
    which case the table is all ``-inf``.
    """
    y = _tokens(y)
    _check(em, y, K, allow_infeasible)
    mask = reachability(em.T, len(y), K)
    if not mask.any():
        return Trellis(em.T, len(y), K, mask, log_alpha=np.full(mask.shape, NEG_INF))
    shift, blank = _factors(em, y)
    return Trellis(em.T, len(y), K, mask, log_alpha=_forward_table(shift, blank, K, mask))


def backward(em: EmissionTable, y, K: int, *, allow_infeasible: bool = False) -> Trellis:
    """Fill ``log_beta``: log-sum over completions from each state to ``(T', U, *)``."""
    y = _tokens(y)
    _check(em, y, K, allow_infeasible)
    mask = reachability(em.T, len(y), K)
    if not mask.any():
        return Trellis(em.T, len(y), K, mask, log_beta=np.full(mask.shape, NEG_INF))
    shift, blank = _factors(em, y)
    return Trellis(em.T, len(y), K, mask, log_beta=_backward_table(shift, blank, K, mask))


def forward_backward(em: EmissionTable, y, K: int) -> Trellis:
    y = _tokens(y)
    _check(em, y, K)
    mask = reachability(em.T, len(y), K)
    shift, blank = _factors(em, y)
    return Trellis(em.T, len(y), K, mask,
                   log_alpha=_forward_table(shift, blank, K, mask),
                   log_beta=_backward_table(shift, blank, K, mask))


def log_marginal(trellis: Trellis) -> float:
    """``log P(y | x)``: log-sum of ``log_alpha`` over the terminal states."""
    if trellis.log_alpha is None:
        raise ValidationError("log_marginal needs a forward-filled trellis")
    return float(logsumexp(trellis.log_alpha[trellis.T - 1, trellis.U - 1, :]))


def occupancy(trellis: Trellis) -> np.ndarray:
    """Posterior probability of each state given ``y`` and ``x``."""
    z = log_marginal(trellis)
    with np.errstate(invalid="ignore"):
        post = np.exp(trellis.log_alpha + trellis.log_beta - z)
    post[~trellis.mask] = 0.0
    return post


def marginal_gradient(em: EmissionTable, y, K: int) -> MarginalGradient:
    """Gradient of ``log P(y|x)`` w.r.t. every entry of ``log_trans`` and ``log_emit``.

    The derivative with respect to a log-probability entry is the posterior
    expected number of times the path uses it: SHIFT at ``t`` is occupancy of
    run length 1, BLANK is occupancy of longer runs, and token ``v`` at ``t``
    collects the occupancy of every position ``u`` with ``y_u = v``.
    Entries are treated as free inputs (no renormalization coupling).
    """
    y = _tokens(y)
    tr = forward_backward(em, y, K)
    post = occupancy(tr)
    g_trans = np.empty((em.T, 2))
    g_trans[:, SHIFT] = post[:, :, 0].sum(axis=1)
    g_trans[:, BLANK] = post[:, :, 1:].sum(axis=(1, 2))
    g_emit = np.zeros_like(em.log_emit)
    per_token = post.sum(axis=2)
    for u, v in enumerate(y):
        g_emit[:, v] += per_token[:, u]
    return MarginalGradient(log_marginal(tr), g_trans, g_emit)


def _max_completion(em: EmissionTable, y: np.ndarray, K: int) -> np.ndarray:
    mask = reachability(em.T, len(y), K)
    shift, blank = _factors(em, y)
    return _backward_table(shift, blank, K, mask, reduce=np.maximum)


def _tie(a: float, b: float) -> bool:
    return abs(a - b) <= 1e-10 * (1.0 + max(abs(a), abs(b)))


def path_log_score(em: EmissionTable, y, durations: Sequence[int]) -> float:
    """Joint log-probability of ``y`` and the alignment implied by ``durations``."""
    y = _tokens(y)
    a = duration_to_alignment(DurationSequence(tuple(durations)))
    tok = np.repeat(y, list(durations))
    if len(tok) != em.T:
        raise ValidationError(f"durations cover {len(tok)} super-frames, table has {em.T}")
    steps = np.asarray([int(x) for x in a.transitions])
    return float(np.sum(em.log_trans[np.arange(em.T), steps]) + np.sum(em.log_emit[np.arange(em.T), tok]))


def viterbi_best(em: EmissionTable, y, K: int) -> Tuple[Alignment, float]:
    """Highest-scoring constraint-satisfying alignment and its joint log score.

    The path is traced forward against the exact max-completion table, so at
    each step the chosen child is optimal.  Ties go to SHIFT, i.e. the
    earliest possible token change.
    """
    y = _tokens(y)
    _check(em, y, K)
    U = len(y)
    best = _max_completion(em, y, K)
    shift, blank = _factors(em, y)
    u, r = 0, 0
    score = shift[0, 0]
    steps = [SHIFT]
    for t in range(1, em.T):
        v_shift = score + shift[t, u + 1] + best[t, u + 1, 0] if u + 1 < U else NEG_INF
        v_blank = score + blank[t, u] + best[t, u, r + 1] if r + 1 < K else NEG_INF
        if v_shift > v_blank or (v_shift > NEG_INF and _tie(v_shift, v_blank)):
            u, r = u + 1, 0
            score = score + shift[t, u]
            steps.append(SHIFT)
        else:
            r += 1
            score = score + blank[t, u]
            steps.append(BLANK)
    return Alignment(tuple(steps)), float(score)


@dataclass
class _Hyp:
    prefix: float
    rank: float
    u: int
    r: int
    steps: Tuple[int, ...]


def _hyp_order(a: _Hyp, b: _Hyp) -> int:
    if not _tie(a.rank, b.rank):
        return -1 if a.rank > b.rank else 1
    if a.steps != b.steps:
        return -1 if a.steps > b.steps else 1
    return 0


def nbest_beam(em: EmissionTable, y, K: int, N: int,
               completion: str = "max") -> List[Tuple[DurationSequence, float]]:
    """Up to ``N`` distinct duration sequences with their joint log scores, best first.

    Partial hypotheses advance one super-frame at a time carrying ``(u, r)``
    and are ranked by their accumulated log score plus a completion score
    read from the trellis.  With ``completion="max"`` that is the exact best
    completion, so the beam returns the true top-``N`` paths (and ``N=1``
    reproduces :func:`viterbi_best`).  ``completion="sum"`` ranks lattice
    points by forward times backward mass instead.
    """
    if N < 1:
        raise ValidationError("beam width must be >= 1")
    y = _tokens(y)
    _check(em, y, K)
    U = len(y)
    if completion == "max":
        comp = _max_completion(em, y, K)
    elif completion == "sum":
        comp = forward_backward(em, y, K).log_beta
    else:
        raise ValidationError(f"unknown completion {completion!r}")
    shift, blank = _factors(em, y)
    key = functools.cmp_to_key(_hyp_order)

    beam = [_Hyp(shift[0, 0], shift[0, 0] + comp[0, 0, 0], 0, 0, (int(SHIFT),))]
    for t in range(1, em.T):
        cand = []
        for h in beam:
            if h.u + 1 < U:
                p = h.prefix + shift[t, h.u + 1]
                c = comp[t, h.u + 1, 0]
                if c > NEG_INF and p > NEG_INF:
                    cand.append(_Hyp(p, p + c, h.u + 1, 0, h.steps + (int(SHIFT),)))
            if h.r + 1 < K:
                p = h.prefix + blank[t, h.u]
                c = comp[t, h.u, h.r + 1]
                if c > NEG_INF and p > NEG_INF:
                    cand.append(_Hyp(p, p + c, h.u, h.r + 1, h.steps + (int(BLANK),)))
        cand.sort(key=key)
        beam = cand[:N]

    done = [h for h in beam if h.u == U - 1]
    for h in done:
        h.rank = h.prefix
    done.sort(key=key)
    return [(alignment_to_duration(Alignment(h.steps)), float(h.prefix)) for h in done]


def alignment_to_duration(a: Alignment | Sequence[int]) -> DurationSequence:
    """Run length of every token: one for its SHIFT plus the BLANKs that follow."""
    steps = a.transitions if isinstance(a, Alignment) else tuple(a)
    if not steps or steps[0] != SHIFT:
        raise ValidationError("alignment must start with SHIFT")
    durations: List[int] = []
    for s in steps:
        if s == SHIFT:
            durations.append(1)
        elif s == BLANK:
            durations[-1] += 1
        else:
            raise ValidationError(f"unknown transition {s!r}")
    return DurationSequence(tuple(durations))


def duration_to_alignment(d: DurationSequence | Sequence[int]) -> Alignment:
    durations = d.durations if isinstance(d, DurationSequence) else tuple(d)
    if any(int(l) < 1 for l in durations):
        raise ValidationError("durations must be >= 1")
    steps: List[int] = []
    for l in durations:
        steps.append(SHIFT)
        steps.extend([BLANK] * (int(l) - 1))
    return Alignment(tuple(steps))


def count_valid(T: int, U: int, K: int) -> int:
    """Number of compositions of ``T`` into ``U`` parts in ``[1, K]``."""
    ways = [1] + [0] * T
    for _ in range(U):
        nxt = [0] * (T + 1)
        for total, w in enumerate(ways):
            if w:
                for l in range(1, K + 1):
                    if total + l > T:
                        break
                    nxt[total + l] += w
        ways = nxt
    return ways[T]


def enumerate_valid(T_super: int, U: int, K: int) -> List[DurationSequence]:
    """Every duration sequence with ``U`` parts in ``[1, K]`` summing to ``T_super``.

    Lexicographic order.  Refuses instances with more than ``MAX_ENUMERATION``
    solutions.
    """
    n = count_valid(T_super, U, K)
    if n > MAX_ENUMERATION:
        raise ValidationError(f"{n} valid duration sequences exceeds the limit of {MAX_ENUMERATION}")

    def rec(remaining: int, parts: int) -> Iterator[Tuple[int, ...]]:
        if parts == 0:
            if remaining == 0:
                yield ()
            return
        lo = max(1, remaining - K * (parts - 1))
        hi = min(K, remaining - (parts - 1))
        for l in range(lo, hi + 1):
            for rest in rec(remaining - l, parts - 1):
                yield (l,) + rest

    return [DurationSequence(d) for d in rec(T_super, U)]


def _encode(a: Optional[np.ndarray]):
    if a is None:
        return None
    return ["-inf" if v == NEG_INF else float(v) for v in a.reshape(-1)]


def trellis_to_dict(trellis: Trellis) -> dict:
    """JSON-ready dump: dimensions plus row-major tables with ``"-inf"`` strings."""
    return {
        "dims": [trellis.T, trellis.U, trellis.K],
        "log_alpha": _encode(trellis.log_alpha),
        "log_beta": _encode(trellis.log_beta),
        "mask": [bool(m) for m in trellis.mask.reshape(-1)],
    }


def trellis_from_dict(d: dict) -> Trellis:
    T, U, K = d["dims"]

    def dec(vals):
        if vals is None:
            return None
        return np.array([NEG_INF if v == "-inf" else float(v) for v in vals]).reshape(T, U, K)

    return Trellis(T, U, K, np.asarray(d["mask"], dtype=bool).reshape(T, U, K),
                   log_alpha=dec(d["log_alpha"]), log_beta=dec(d["log_beta"]))
