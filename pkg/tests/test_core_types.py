import json

import numpy as np
import pytest
from hypothesis import given, strategies as st

from latentdur.core_types import (Alignment, Codebook, DurationSequence, FrameSequence,
                                  LossBreakdown, ModelParams, TokenSequence, TrainConfig,
                                  Transition, ValidationError, validate_duration)


def test_validate_duration_accepts_figure_example():
    assert validate_duration(DurationSequence((2, 3)), U=2, T_super=5, K=3) is None


def test_validate_duration_minimal():
    assert validate_duration((1,), U=1, T_super=1, K=1) is None


def test_validate_duration_reports_first_offender():
    v = validate_duration((4, 1), U=2, T_super=5, K=3)
    assert v is not None and v.constraint == "max" and v.index == 1


@pytest.mark.parametrize("d, kind", [((1, 2, 1), "length"), ((0, 5), "min"), ((2, 2), "total")])
def test_validate_duration_other_violations(d, kind):
    assert validate_duration(d, U=2, T_super=5, K=5).constraint == kind


def test_token_sequence_checks():
    assert TokenSequence((3, 1, 4)).as_array().tolist() == [3, 1, 4]
    with pytest.raises(ValidationError):
        TokenSequence(())
    with pytest.raises(ValidationError):
        TokenSequence((0, -1))
    with pytest.raises(ValidationError):
        TokenSequence((0, 8), vocab_size=8)


def test_frames_are_read_only_copies():
    raw = np.ones((3, 2))
    fs = FrameSequence(raw)
    raw[0, 0] = 5.0
    assert fs.frames[0, 0] == 1.0 and (fs.T, fs.O) == (3, 2)
    with pytest.raises(ValueError):
        fs.frames[0, 0] = 2.0
    with pytest.raises(ValidationError):
        FrameSequence(np.array([[np.nan]]))


def test_codebook_lookup_is_one_based():
    cb = Codebook(np.arange(6.0).reshape(3, 2))
    assert cb.lookup([1, 3]).tolist() == [[0, 1], [4, 5]]
    with pytest.raises(ValidationError):
        cb.lookup([4])
    with pytest.raises(ValidationError):
        cb.lookup([0])


def test_alignment_coerces_to_transitions():
    a = Alignment((1, 0, 1))
    assert a.transitions == (Transition.SHIFT, Transition.BLANK, Transition.SHIFT)
    assert a.n_shifts == 2


def test_train_config_defaults():
    c = TrainConfig()
    assert (c.K, c.g, c.D, c.O) == (13, 3, 32, 80)
    assert (c.sigma, c.sigma_d, c.gamma) == (0.4, 3.0, 0.5)
    assert (c.alpha_prior, c.beta_prior, c.alpha_vq, c.beta_vq) == (1.0, 0.0, 2.0, 1.0)
    assert c.learning_rate == 5e-5
    assert (c.beam_train, c.beam_infer) == (3, 10)


def test_train_config_json_round_trip_and_errors():
    c = TrainConfig(K=5, max_steps=7, posterior_weighting="softmax-nbest")
    assert TrainConfig.from_json(c.to_json()) == c
    assert c.replace(K=4).K == 4
    with pytest.raises(ValidationError):
        TrainConfig.from_dict({"bogus": 1})
    with pytest.raises(ValidationError):
        TrainConfig(K=0)
    with pytest.raises(ValidationError):
        TrainConfig(sigma=0.0)
    with pytest.raises(ValidationError):
        TrainConfig(alpha_vq=0.0, beta_vq=0.0)


def test_model_params_named_slices():
    p = ModelParams((("a.w", (2, 3)), ("b.x", (4,))), np.arange(10.0))
    assert p["a.w"].shape == (2, 3) and p["b.x"].tolist() == [6, 7, 8, 9]
    assert p.group_mask("a").sum() == 6
    assert ModelParams.from_dict(json.loads(json.dumps(p.to_dict()))) == p
    with pytest.raises(ValidationError):
        ModelParams((("a", (2,)),), np.zeros(3))
    with pytest.raises(ValueError):
        p.values[0] = 1.0


def test_loss_breakdown_round_trip():
    lb = LossBreakdown(1.0, 2.0, 3.0, 4.0, 8.0)
    assert LossBreakdown.from_dict(json.loads(lb.to_json())) == lb
    assert lb.is_finite()
    assert not LossBreakdown(1.0, float("nan"), 0, 0, 0).is_finite()


@given(st.lists(st.integers(1, 6), min_size=1, max_size=10), st.integers(1, 6))
def test_validate_duration_agrees_with_definition(d, K):
    ok = validate_duration(d, len(d), sum(d), K) is None
    assert ok == all(1 <= x <= K for x in d)
