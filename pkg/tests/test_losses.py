import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from scipy.special import logsumexp

from latentdur import losses
from latentdur.core_types import Codebook, ValidationError

from oracles import central_diff


def test_sg_equal_points():
    v, ga, gb = losses.sg_sqdist(np.ones(3), np.ones(3), losses.SgCoeffs(2.0, 1.0))
    assert v == 0.0 and not ga.any() and not gb.any()


def test_sg_default_blocks_second_argument():
    _, _, gb = losses.sg_sqdist(np.array([1.0, -2.0]), np.array([0.5, 3.0]), losses.SgCoeffs())
    assert not gb.any()


def test_sg_hand_example_and_branches():
    a, b = np.array([1.0, 0.0]), np.array([0.0, 0.0])
    sg = losses.SgCoeffs(2.0, 1.0)
    v, ga, gb = losses.sg_sqdist(a, b, sg)
    assert v == 1.0 and ga.tolist() == [4.0, 0.0] and gb.tolist() == [-2.0, 0.0]
    f_a = lambda p: losses.sg_sqdist(p, b, sg)[0]
    f_b = lambda p: losses.sg_sqdist(a, p, sg)[0]
    assert np.allclose(ga, sg.alpha * central_diff(f_a, a), rtol=1e-8)
    assert np.allclose(gb, sg.beta * central_diff(f_b, b), rtol=1e-8)


def test_sg_errors():
    with pytest.raises(ValidationError):
        losses.sg_sqdist(np.zeros(2), np.zeros(3), losses.SgCoeffs())
    with pytest.raises(ValidationError):
        losses.SgCoeffs(0.0, 0.0)
    with pytest.raises(ValidationError):
        losses.SgCoeffs(-1.0, 1.0)


def test_decoder_nll_at_mean():
    x = np.random.default_rng(0).normal(size=(4, 3))
    v, g = losses.decoder_nll(x, x, 3.0)
    assert v == pytest.approx(4 * 1.5 * math.log(2 * math.pi * 9.0), rel=1e-14)
    assert not g.any()


def test_decoder_nll_single_frame():
    v, g = losses.decoder_nll(np.array([[3.0]]), np.array([[0.0]]), 3.0)
    assert v == pytest.approx(2.5175508218727822, rel=1e-14)
    assert v == pytest.approx(0.5 + 0.5 * math.log(18 * math.pi), rel=1e-14)
    num = central_diff(lambda m: losses.decoder_nll(np.array([[3.0]]), m, 3.0)[0], np.array([[0.0]]))
    assert g[0, 0] == pytest.approx(num[0, 0], rel=1e-8)


def test_decoder_nll_errors():
    with pytest.raises(ValidationError):
        losses.decoder_nll(np.zeros((2, 2)), np.zeros((2, 3)), 3.0)
    with pytest.raises(ValidationError):
        losses.decoder_nll(np.zeros((2, 2)), np.zeros((2, 2)), 0.0)


def test_prior_equidistant_is_uniform():
    e = np.array([[1.0, 0.0], [-1.0, 0.0], [0.0, 1.0], [0.0, -1.0]])
    p = np.exp(losses.prior_logits(np.zeros(2), Codebook(e)))
    assert np.allclose(p, 0.25, rtol=0, atol=1e-15)


def test_prior_two_codewords():
    e = np.array([[0.0, 0.0], [1.0, 0.0]])
    p = np.exp(losses.prior_logits(e[0], e))
    assert p[0] == pytest.approx(1 / (1 + math.exp(-1)), rel=1e-14)
    assert p[0] == pytest.approx(0.7310585786300049, rel=1e-14)


@settings(max_examples=50, deadline=None)
@given(st.integers(0, 2**31 - 1))
def test_prior_rows_normalize(seed):
    rng = np.random.default_rng(seed)
    lp = losses.prior_logits(rng.normal(size=(5, 3)) * 3, rng.normal(size=(6, 3)))
    assert np.max(np.abs(np.exp(lp).sum(axis=1) - 1.0)) <= 1e-12


def test_prior_kl_single_codeword_is_zero():
    rng = np.random.default_rng(1)
    v, gc, ge = losses.prior_kl(rng.normal(size=(4, 3)), rng.normal(size=(1, 3)), [1] * 4,
                                losses.SgCoeffs(1.0, 1.0))
    assert v == 0.0


def test_prior_kl_symmetric_pair():
    e = np.array([[1.0, 0.0], [-1.0, 0.0]])
    c = np.array([[0.0, 2.0], [0.0, -0.5], [0.0, 0.0]])
    v, _, _ = losses.prior_kl(c, e, [1, 2, 1], losses.SgCoeffs())
    assert v == pytest.approx(3 * math.log(2), rel=1e-14)
    lp = losses.prior_logits(c, e)
    assert v == pytest.approx(-(lp[0, 0] + lp[1, 1] + lp[2, 0]), rel=1e-14)


def test_prior_kl_rejects_bad_indices():
    with pytest.raises(ValidationError):
        losses.prior_kl(np.zeros((2, 2)), np.zeros((3, 2)), [1, 4], losses.SgCoeffs())
    with pytest.raises(ValidationError):
        losses.prior_kl(np.zeros((2, 2)), np.zeros((3, 2)), [1], losses.SgCoeffs())


def test_vq_kl_zero_at_codewords():
    e = np.random.default_rng(2).normal(size=(5, 3))
    l = [2, 5, 1]
    assert losses.vq_kl(e[np.array(l) - 1], e, l, 0.4, losses.SgCoeffs(2.0, 1.0))[0] == 0.0


def test_vq_kl_multiplier_and_branches():
    sg = losses.SgCoeffs(2.0, 1.0)
    d = np.array([[0.6, 0.8]])
    e = np.zeros((2, 2))
    v, gd, ge = losses.vq_kl(d, e, [1], 0.4, sg)
    assert v == 3.125
    assert np.allclose(gd, sg.alpha * central_diff(lambda p: losses.vq_kl(p, e, [1], 0.4, sg)[0], d), rtol=1e-8)
    assert np.allclose(ge, sg.beta * central_diff(lambda p: losses.vq_kl(d, p, [1], 0.4, sg)[0], e),
                       rtol=1e-8, atol=1e-12)


def test_vq_kl_alt_cases():
    rng = np.random.default_rng(3)
    d = rng.normal(size=(3, 2))
    assert losses.vq_kl_alt(d, rng.normal(size=(1, 2)), [1, 1, 1], 0.4) == 0.0
    e = rng.normal(size=(4, 2))
    l = [3, 1, 4]
    scaled = np.array([[np.sum((du - ek) ** 2) for ek in e] for du in d]) / (2 * 0.4 ** 2)
    want = losses.vq_kl(d, e, l, 0.4, losses.SgCoeffs())[0] + logsumexp(-scaled, axis=1).sum()
    assert losses.vq_kl_alt(d, e, l, 0.4) == pytest.approx(want, rel=1e-12)
    pair = np.array([[1.0, 0.0], [-1.0, 0.0]])
    mid = np.array([[0.0, 0.3], [0.0, -2.0]])
    assert losses.vq_kl_alt(mid, pair, [1, 2], 0.4) == pytest.approx(2 * math.log(2), rel=1e-12)


def test_total_objective():
    assert losses.total_objective(0, 0, 0, 0, 0.5).total == 0.0
    lb = losses.total_objective(1.0, 2.0, 3.0, 4.0, 0.5)
    assert lb.total == 8.0 and lb.ctc_nll == 4.0
    with pytest.raises(ValidationError):
        losses.total_objective(1.0, float("inf"), 0.0, 0.0, 0.5)


@settings(max_examples=25, deadline=None)
@given(st.integers(0, 2**31 - 1))
def test_prior_and_vq_gradients(seed):
    rng = np.random.default_rng(seed)
    K, D, U = 4, 3, 3
    e, c = rng.normal(size=(K, D)), rng.normal(size=(U, D))
    l = rng.integers(1, K + 1, size=U)
    sg = losses.SgCoeffs(float(rng.uniform(0.5, 2)), float(rng.uniform(0.5, 2)))
    for fn in (lambda c_, e_: losses.prior_kl(c_, e_, l, sg), lambda c_, e_: losses.vq_kl(c_, e_, l, 0.4, sg)):
        _, ga, gb = fn(c, e)
        na = central_diff(lambda p: fn(p, e)[0], c)
        nb = central_diff(lambda p: fn(c, p)[0], e)
        assert np.allclose(ga, sg.alpha * na, rtol=1e-6, atol=1e-9)
        assert np.allclose(gb, sg.beta * nb, rtol=1e-6, atol=1e-9)


@settings(max_examples=50, deadline=None)
@given(st.integers(0, 2**31 - 1))
def test_vq_kl_nonnegative_and_zero_only_at_codewords(seed):
    rng = np.random.default_rng(seed)
    e = rng.normal(size=(4, 3))
    l = rng.integers(1, 5, size=3)
    d = e[l - 1].copy()
    assert losses.vq_kl(d, e, l, 0.4, losses.SgCoeffs())[0] == 0.0
    d[int(rng.integers(3)), int(rng.integers(3))] += rng.choice([-1, 1]) * rng.uniform(1e-3, 1)
    assert losses.vq_kl(d, e, l, 0.4, losses.SgCoeffs())[0] > 0.0


def test_default_prior_coefficients_give_no_codebook_gradient():
    rng = np.random.default_rng(7)
    _, _, ge = losses.prior_kl(rng.normal(size=(5, 3)), rng.normal(size=(4, 3)), [1, 2, 4, 4, 3],
                               losses.SgCoeffs(1.0, 0.0))
    assert not ge.any()
