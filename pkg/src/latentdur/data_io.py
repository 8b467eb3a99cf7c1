"""Synthetic corpora with known durations, and their JSON-lines format.

Each token has a fixed prototype frame.  An item is a random token string;
token ``v`` lasts a duration drawn from its profile (in super-frame units,
so ``g * l`` frames), and every frame is the prototype plus Gaussian noise.
"""

from __future__ import annotations

import json
import os
from dataclasses import asdict, dataclass
from typing import Iterable, List, Optional, Tuple, Union

import numpy as np

from .core_types import ValidationError, validate_duration


class CorpusFormatError(ValueError):
    def __init__(self, lineno: int, message: str):
        super().__init__(f"line {lineno}: {message}")
        self.lineno = lineno


@dataclass(frozen=True)
class CorpusSpec:
    """Generator settings.

    ``duration_profile[v]`` is either a fixed duration or a list of
    durations drawn uniformly; ``None`` gives token ``v`` the duration
    ``1 + (v mod K)``.  Prototypes are orthogonal when ``V <= O`` and have
    per-dimension RMS ``prototype_scale``.
    """

    V: int = 8
    O: int = 8
    n_items: int = 200
    U_range: Tuple[int, int] = (3, 8)
    K: int = 5
    g: int = 1
    noise_std: float = 0.3
    duration_profile: Optional[Tuple[Union[int, Tuple[int, ...]], ...]] = None
    prototype_scale: float = 1.0
    no_adjacent_repeats: bool = True

    def __post_init__(self):
        object.__setattr__(self, "U_range", tuple(int(u) for u in self.U_range))
        if self.duration_profile is not None:
            prof = tuple(int(p) if np.isscalar(p) else tuple(int(q) for q in p)
                         for p in self.duration_profile)
            object.__setattr__(self, "duration_profile", prof)
        if min(self.V, self.O, self.K, self.g) < 1 or self.n_items < 0:
            raise ValidationError("V, O, K, g must be >= 1 and n_items >= 0")
        lo, hi = self.U_range
        if not 1 <= lo <= hi:
            raise ValidationError(f"invalid U_range {self.U_range}")
        if self.no_adjacent_repeats and self.V < 2 and hi > 1:
            raise ValidationError("no_adjacent_repeats needs V >= 2")
        if self.noise_std < 0:
            raise ValidationError("noise_std must be >= 0")
        for v in range(self.V):
            for d in self.choices(v):
                if not 1 <= d <= self.K:
                    raise ValidationError(f"duration {d} for token {v} outside [1, {self.K}]")

    def choices(self, v: int) -> Tuple[int, ...]:
        if self.duration_profile is None:
            return (1 + v % self.K,)
        if len(self.duration_profile) != self.V:
            raise ValidationError(f"duration_profile needs {self.V} entries")
        p = self.duration_profile[v]
        return (p,) if isinstance(p, int) else tuple(p)

    @classmethod
    def from_dict(cls, d: dict) -> "CorpusSpec":
        return cls(**d)

    def to_dict(self) -> dict:
        return asdict(self)


@dataclass(frozen=True)
class CorpusItem:
    tokens: Tuple[int, ...]
    frames: np.ndarray
    true_durations: Tuple[int, ...]

    def __eq__(self, other):
        return (isinstance(other, CorpusItem) and self.tokens == other.tokens
                and self.true_durations == other.true_durations
                and self.frames.shape == other.frames.shape
                and np.array_equal(self.frames, other.frames))


@dataclass(frozen=True)
class Corpus:
    items: List[CorpusItem]
    prototypes: Optional[np.ndarray] = None
    spec: Optional[CorpusSpec] = None

    def __len__(self):
        return len(self.items)

    def __iter__(self):
        return iter(self.items)

    def __getitem__(self, i):
        return self.items[i]


def make_prototypes(V: int, O: int, scale: float, rng: np.random.Generator) -> np.ndarray:
    if V <= O:
        q, _ = np.linalg.qr(rng.standard_normal((O, O)))
        protos = q[:, :V].T
    else:
        protos = rng.standard_normal((V, O))
        protos /= np.linalg.norm(protos, axis=1, keepdims=True)
    return protos * scale * np.sqrt(O)


def gen_corpus(spec: CorpusSpec | dict, seed: int) -> Corpus:
    if isinstance(spec, dict):
        spec = CorpusSpec.from_dict(spec)
    rng = np.random.default_rng(seed)
    protos = make_prototypes(spec.V, spec.O, spec.prototype_scale, rng)
    items = []
    lo, hi = spec.U_range
    for _ in range(spec.n_items):
        U = int(rng.integers(lo, hi + 1))
        tokens: List[int] = []
        for _u in range(U):
            v = int(rng.integers(spec.V))
            while spec.no_adjacent_repeats and tokens and v == tokens[-1]:
                v = int(rng.integers(spec.V))
            tokens.append(v)
        durations = []
        for v in tokens:
            ch = spec.choices(v)
            durations.append(ch[0] if len(ch) == 1 else int(ch[rng.integers(len(ch))]))
        frame_lens = spec.g * np.asarray(durations)
        clean = np.repeat(protos[tokens], frame_lens, axis=0)
        frames = clean + spec.noise_std * rng.standard_normal(clean.shape)
        assert validate_duration(durations, U, sum(durations), spec.K) is None
        items.append(CorpusItem(tuple(tokens), frames, tuple(durations)))
    return Corpus(items, protos, spec)


def _item_line(item: CorpusItem) -> str:
    T, O = item.frames.shape
    frames = ",".join(format(float(v), ".17g") for v in item.frames.reshape(-1))
    return ('{"tokens": %s, "dims": [%d, %d], "frames": [%s], "true_durations": %s}'
            % (json.dumps(list(item.tokens)), T, O, frames, json.dumps(list(item.true_durations))))


def save_corpus(corpus: Corpus | Iterable[CorpusItem], path: str | os.PathLike) -> None:
    items = corpus.items if isinstance(corpus, Corpus) else list(corpus)
    with open(path, "w") as fh:
        for item in items:
            fh.write(_item_line(item) + "\n")


def _parse_item(line: str, lineno: int) -> CorpusItem:
    try:
        d = json.loads(line)
    except json.JSONDecodeError as exc:
        raise CorpusFormatError(lineno, f"malformed JSON ({exc.msg})") from None
    for key in ("tokens", "dims", "frames", "true_durations"):
        if key not in d:
            raise CorpusFormatError(lineno, f"missing field {key!r}")
    T, O = d["dims"]
    frames = np.asarray(d["frames"], dtype=np.float64)
    if frames.size != T * O:
        raise CorpusFormatError(lineno, f"{frames.size} frame values for dims {T}x{O}")
    return CorpusItem(tuple(int(t) for t in d["tokens"]), frames.reshape(T, O),
                      tuple(int(l) for l in d["true_durations"]))


def load_corpus(path: str | os.PathLike) -> List[CorpusItem]:
    items = []
    with open(path) as fh:
        for lineno, line in enumerate(fh, start=1):
            if line.strip():
                items.append(_parse_item(line, lineno))
    return items
