"""Domain types shared by the aligner, the losses, the models and the trainer.

Durations are counted in super-frame units: a duration ``l`` covers ``g * l``
raw frames, where ``g`` is the grouping factor.  Codeword ``k`` (1-based)
stands for duration ``k``.
"""

from __future__ import annotations

import json
import math
from dataclasses import asdict, dataclass, field, fields
from enum import IntEnum
from typing import Dict, Iterator, List, Optional, Sequence, Tuple

import numpy as np


class Transition(IntEnum):
    BLANK = 0
    SHIFT = 1


BLANK = Transition.BLANK
SHIFT = Transition.SHIFT


class ValidationError(ValueError):
    """Input violates a structural constraint (shape, range, length)."""


class InfeasibleError(ValidationError):
    """No alignment satisfies ``U <= T' <= U * K``."""


def _frozen(a: np.ndarray) -> np.ndarray:
    a.flags.writeable = False
    return a


@dataclass(frozen=True)
class TokenSequence:
    tokens: Tuple[int, ...]
    vocab_size: Optional[int] = None

    def __post_init__(self):
        toks = tuple(int(t) for t in self.tokens)
        object.__setattr__(self, "tokens", toks)
        if not toks:
            raise ValidationError("token sequence must be non-empty")
        if min(toks) < 0:
            raise ValidationError("token ids must be non-negative")
        if self.vocab_size is not None and max(toks) >= self.vocab_size:
            raise ValidationError(
                f"token id {max(toks)} out of range for vocabulary size {self.vocab_size}")

    def __len__(self) -> int:
        return len(self.tokens)

    def __iter__(self) -> Iterator[int]:
        return iter(self.tokens)

    def as_array(self) -> np.ndarray:
        return np.asarray(self.tokens, dtype=np.int64)


@dataclass(frozen=True)
class FrameSequence:
    frames: np.ndarray

    def __post_init__(self):
        x = np.array(self.frames, dtype=np.float64)
        if x.ndim != 2 or x.shape[0] < 1 or x.shape[1] < 1:
            raise ValidationError(f"frames must be a non-empty T x O matrix, got shape {x.shape}")
        if not np.all(np.isfinite(x)):
            raise ValidationError("frames contain non-finite values")
        object.__setattr__(self, "frames", _frozen(x))

    @property
    def T(self) -> int:
        return self.frames.shape[0]

    @property
    def O(self) -> int:
        return self.frames.shape[1]

    def __eq__(self, other):
        return isinstance(other, FrameSequence) and np.array_equal(self.frames, other.frames)


@dataclass(frozen=True)
class Codebook:
    codewords: np.ndarray

    def __post_init__(self):
        e = np.array(self.codewords, dtype=np.float64)
        if e.ndim != 2 or e.shape[0] < 1 or e.shape[1] < 1:
            raise ValidationError(f"codebook must be a non-empty K x D matrix, got shape {e.shape}")
        if not np.all(np.isfinite(e)):
            raise ValidationError("codebook contains non-finite values")
        object.__setattr__(self, "codewords", _frozen(e))

    @property
    def K(self) -> int:
        return self.codewords.shape[0]

    @property
    def D(self) -> int:
        return self.codewords.shape[1]

    def lookup(self, durations: Sequence[int]) -> np.ndarray:
        """Codewords ``e_{l_u}`` for 1-based duration indices."""
        idx = np.asarray(durations, dtype=np.int64)
        if idx.size and (idx.min() < 1 or idx.max() > self.K):
            raise ValidationError(f"codeword index out of range 1..{self.K}")
        return self.codewords[idx - 1]


@dataclass(frozen=True)
class DurationSequence:
    durations: Tuple[int, ...]

    def __post_init__(self):
        object.__setattr__(self, "durations", tuple(int(d) for d in self.durations))

    @property
    def total(self) -> int:
        return sum(self.durations)

    def __len__(self) -> int:
        return len(self.durations)

    def __iter__(self) -> Iterator[int]:
        return iter(self.durations)

    def __getitem__(self, i):
        return self.durations[i]

    def frame_lengths(self, g: int) -> np.ndarray:
        return g * np.asarray(self.durations, dtype=np.int64)


@dataclass(frozen=True)
class Alignment:
    transitions: Tuple[Transition, ...]

    def __post_init__(self):
        object.__setattr__(self, "transitions", tuple(Transition(int(a)) for a in self.transitions))

    def __len__(self) -> int:
        return len(self.transitions)

    def __iter__(self):
        return iter(self.transitions)

    @property
    def n_shifts(self) -> int:
        return sum(1 for a in self.transitions if a == SHIFT)


@dataclass(frozen=True)
class Violation:
    """First broken duration constraint; ``index`` is 1-based (``None`` for global ones)."""

    constraint: str
    index: Optional[int]
    message: str

    def __str__(self) -> str:
        return self.message


def validate_duration(d: DurationSequence | Sequence[int], U: int, T_super: int,
                      K: int) -> Optional[Violation]:
    """Return ``None`` when ``d`` is a valid duration sequence, else the first violation.

    Checks, in order: length equals ``U``; every ``1 <= l_u <= K``; the sum
    equals ``T_super``.
    """
    l = tuple(d.durations if isinstance(d, DurationSequence) else d)
    if len(l) != U:
        return Violation("length", None, f"expected {U} durations, got {len(l)}")
    for u, lu in enumerate(l, start=1):
        if lu < 1:
            return Violation("min", u, f"l_{u} = {lu} < 1")
        if lu > K:
            return Violation("max", u, f"l_{u} = {lu} > K = {K}")
    if sum(l) != T_super:
        return Violation("total", None, f"sum of durations {sum(l)} != {T_super} super-frames")
    return None


@dataclass(frozen=True)
class TrainConfig:
    """Hyperparameters of the joint trainer.

    ``K``, ``g``, ``D``, ``sigma``, ``sigma_d``, ``gamma``, the stop-gradient
    coefficients, ``learning_rate`` and the beam widths default to the
    full-scale speech setting.  ``V``, ``E``, ``H`` size the toy networks;
    ``O`` is the frame dimension.
    """

    K: int = 13
    g: int = 3
    D: int = 32
    O: int = 80
    sigma: float = 0.4
    sigma_d: float = 3.0
    gamma: float = 0.5
    alpha_prior: float = 1.0
    beta_prior: float = 0.0
    alpha_vq: float = 2.0
    beta_vq: float = 1.0
    learning_rate: float = 5e-5
    beam_train: int = 3
    beam_infer: int = 10
    seed: int = 0
    epochs: int = 10
    V: int = 8
    E: int = 16
    H: int = 64
    batch_size: int = 4
    max_steps: Optional[int] = None
    posterior_weighting: str = "best"
    adam_beta1: float = 0.9
    adam_beta2: float = 0.999
    adam_eps: float = 1e-8
    init_scale: float = 1.0

    def __post_init__(self):
        for name in ("K", "g", "D", "O", "V", "E", "H", "beam_train", "beam_infer", "batch_size"):
            if int(getattr(self, name)) < 1:
                raise ValidationError(f"{name} must be >= 1")
        for name in ("sigma", "sigma_d"):
            if not getattr(self, name) > 0:
                raise ValidationError(f"{name} must be > 0")
        # learning_rate = 0 is allowed: it evaluates the objective without moving the parameters
        for name in ("learning_rate", "gamma", "alpha_prior", "beta_prior", "alpha_vq", "beta_vq"):
            if getattr(self, name) < 0:
                raise ValidationError(f"{name} must be >= 0")
        if self.alpha_prior + self.beta_prior <= 0 or self.alpha_vq + self.beta_vq <= 0:
            raise ValidationError("stop-gradient coefficients must not both be zero")
        if self.epochs < 0:
            raise ValidationError("epochs must be >= 0")
        if self.max_steps is not None and self.max_steps < 0:
            raise ValidationError("max_steps must be >= 0")
        if self.posterior_weighting not in ("best", "softmax-nbest"):
            raise ValidationError(
                f"posterior_weighting must be 'best' or 'softmax-nbest', got {self.posterior_weighting!r}")

    def to_dict(self) -> dict:
        return asdict(self)

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2, sort_keys=False)

    @classmethod
    def from_dict(cls, d: dict) -> "TrainConfig":
        known = {f.name for f in fields(cls)}
        unknown = set(d) - known
        if unknown:
            raise ValidationError(f"unknown config fields: {sorted(unknown)}")
        return cls(**d)

    @classmethod
    def from_json(cls, text: str) -> "TrainConfig":
        return cls.from_dict(json.loads(text))

    def replace(self, **changes) -> "TrainConfig":
        d = self.to_dict()
        d.update(changes)
        return TrainConfig.from_dict(d)


@dataclass(frozen=True)
class ModelParams:
    """All trainable values in one flat vector, addressed through named slices.

    ``layout`` is an ordered list of ``(name, shape)``; a name's prefix before
    the first dot is its parameter group (``theta``, ``psi``, ``phi``,
    ``lambda``, ``codebook``).
    """

    layout: Tuple[Tuple[str, Tuple[int, ...]], ...]
    values: np.ndarray
    _offsets: Dict[str, Tuple[int, int, Tuple[int, ...]]] = field(
        init=False, repr=False, compare=False)

    def __post_init__(self):
        layout = tuple((str(n), tuple(int(s) for s in shape)) for n, shape in self.layout)
        object.__setattr__(self, "layout", layout)
        offsets = {}
        pos = 0
        for name, shape in layout:
            if name in offsets:
                raise ValidationError(f"duplicate parameter name {name!r}")
            size = int(np.prod(shape)) if shape else 1
            offsets[name] = (pos, pos + size, shape)
            pos += size
        v = np.array(self.values, dtype=np.float64).reshape(-1)
        if v.size != pos:
            raise ValidationError(f"layout needs {pos} values, got {v.size}")
        object.__setattr__(self, "values", _frozen(v))
        object.__setattr__(self, "_offsets", offsets)

    @property
    def size(self) -> int:
        return self.values.size

    def names(self) -> List[str]:
        return [n for n, _ in self.layout]

    def slice_of(self, name: str) -> slice:
        lo, hi, _ = self._offsets[name]
        return slice(lo, hi)

    def shape_of(self, name: str) -> Tuple[int, ...]:
        return self._offsets[name][2]

    def __getitem__(self, name: str) -> np.ndarray:
        lo, hi, shape = self._offsets[name]
        return self.values[lo:hi].reshape(shape)

    def group_mask(self, group: str) -> np.ndarray:
        mask = np.zeros(self.size, dtype=bool)
        for name in self.names():
            if name.split(".", 1)[0] == group:
                mask[self.slice_of(name)] = True
        return mask

    def with_values(self, values: np.ndarray) -> "ModelParams":
        return ModelParams(self.layout, values)

    def zeros_like(self) -> np.ndarray:
        return np.zeros(self.size)

    def to_dict(self) -> dict:
        return {"layout": [[n, list(s)] for n, s in self.layout],
                "values": [float(x) for x in self.values]}

    @classmethod
    def from_dict(cls, d: dict) -> "ModelParams":
        return cls(tuple((n, tuple(s)) for n, s in d["layout"]), np.asarray(d["values"], dtype=np.float64))

    def __eq__(self, other):
        return (isinstance(other, ModelParams) and self.layout == other.layout
                and np.array_equal(self.values, other.values))


@dataclass(frozen=True)
class LossBreakdown:
    decoder_nll: float
    prior_kl: float
    vq_kl: float
    ctc_nll: float
    total: float

    def to_dict(self) -> dict:
        return asdict(self)

    def to_json(self) -> str:
        return json.dumps(self.to_dict())

    @classmethod
    def from_dict(cls, d: dict) -> "LossBreakdown":
        return cls(**{f.name: float(d[f.name]) for f in fields(cls)})

    def is_finite(self) -> bool:
        return all(math.isfinite(v) for v in asdict(self).values())
