import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from latentdur.core_types import ValidationError, validate_duration
from latentdur.data_io import (CorpusFormatError, CorpusSpec, gen_corpus, load_corpus,
                               save_corpus)


def test_noiseless_single_token_repeats_prototype():
    spec = CorpusSpec(V=4, O=4, n_items=3, U_range=(1, 1), K=3, noise_std=0.0,
                      duration_profile=(2, 2, 2, 2))
    c = gen_corpus(spec, seed=1)
    for it in c:
        assert it.true_durations == (2,) and it.frames.shape == (2, 4)
        assert np.array_equal(it.frames[0], c.prototypes[it.tokens[0]])
        assert np.array_equal(it.frames[1], it.frames[0])


def test_prototypes_orthogonal_with_requested_scale():
    c = gen_corpus(CorpusSpec(V=8, O=8, n_items=0, prototype_scale=1.0), seed=0)
    gram = c.prototypes @ c.prototypes.T
    assert np.allclose(gram, 8 * np.eye(8), atol=1e-12)


def test_same_seed_same_corpus():
    a, b = gen_corpus(CorpusSpec(n_items=20), 7), gen_corpus(CorpusSpec(n_items=20), 7)
    assert a.items == b.items
    assert gen_corpus(CorpusSpec(n_items=20), 8).items != a.items


def test_default_corpus_contents():
    spec = CorpusSpec()
    c = gen_corpus(spec, 0)
    assert len(c) == 200
    for it in c:
        U = len(it.tokens)
        assert 3 <= U <= 8
        assert validate_duration(it.true_durations, U, it.frames.shape[0], spec.K) is None
        assert all(d == 1 + v % 5 for v, d in zip(it.tokens, it.true_durations))
        assert all(a != b for a, b in zip(it.tokens, it.tokens[1:]))


def test_profile_choices_and_grouping():
    spec = CorpusSpec(V=2, O=3, n_items=30, K=4, g=2, duration_profile=((1, 4), 3))
    for it in gen_corpus(spec, 2):
        assert it.frames.shape[0] == 2 * sum(it.true_durations)
        for v, d in zip(it.tokens, it.true_durations):
            assert d in ((1, 4) if v == 0 else (3,))


@pytest.mark.parametrize("kwargs", [dict(K=3, duration_profile=(1, 4) + (1,) * 6),
                                    dict(duration_profile=(1, 2)), dict(U_range=(0, 2)),
                                    dict(noise_std=-1.0)])
def test_invalid_specs(kwargs):
    with pytest.raises(ValidationError):
        CorpusSpec(**kwargs)


def test_empty_round_trip(tmp_path):
    path = tmp_path / "empty.jsonl"
    save_corpus([], path)
    assert path.read_text() == "" and load_corpus(path) == []


@settings(max_examples=15, deadline=None)
@given(st.integers(0, 2**31 - 1), st.floats(0.0, 5.0))
def test_round_trip_is_exact(tmp_path_factory, seed, noise):
    c = gen_corpus(CorpusSpec(V=5, O=3, n_items=6, noise_std=noise, K=3), seed)
    path = tmp_path_factory.mktemp("rt") / "c.jsonl"
    save_corpus(c, path)
    assert load_corpus(path) == c.items


def test_truncated_line_names_line_number(tmp_path):
    path = tmp_path / "c.jsonl"
    save_corpus(gen_corpus(CorpusSpec(n_items=3), 0), path)
    lines = path.read_text().splitlines()
    lines[1] = lines[1][: len(lines[1]) // 2]
    path.write_text("\n".join(lines) + "\n")
    with pytest.raises(CorpusFormatError) as err:
        load_corpus(path)
    assert err.value.lineno == 2 and "line 2" in str(err.value)


@pytest.mark.parametrize("line", ['{"tokens": [1], "dims": [2, 1], "frames": [0.5], "true_durations": [2]}',
                                  '{"tokens": [1], "dims": [1, 1], "frames": [0.5]}'])
def test_inconsistent_lines(tmp_path, line):
    path = tmp_path / "c.jsonl"
    path.write_text(line + "\n")
    with pytest.raises(CorpusFormatError, match="line 1"):
        load_corpus(path)
