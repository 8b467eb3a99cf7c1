"""Changes of time resolution between token rate, super-frame rate and frame rate."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .core_types import DurationSequence, ValidationError


def _lengths(l: DurationSequence | Sequence[int], g: int) -> np.ndarray:
    if g < 1:
        raise ValidationError("grouping factor must be >= 1")
    durations = l.durations if isinstance(l, DurationSequence) else tuple(l)
    arr = np.asarray(durations, dtype=np.int64)
    if arr.size == 0 or arr.min() < 1:
        raise ValidationError("durations must be a non-empty sequence of values >= 1")
    return g * arr


def aggregate(x: np.ndarray, l: DurationSequence | Sequence[int], g: int = 1) -> np.ndarray:
    """Average the ``g * l_u`` frames of each token into one ``U x O`` row.

    Raises :class:`ValidationError` when ``g * sum(l)`` differs from the
    number of frames.
    """
    x = np.asarray(x, dtype=np.float64)
    lens = _lengths(l, g)
    if lens.sum() != x.shape[0]:
        raise ValidationError(f"durations cover {lens.sum()} frames, sequence has {x.shape[0]}")
    starts = np.concatenate(([0], np.cumsum(lens)[:-1]))
    return np.add.reduceat(x, starts, axis=0) / lens[:, None]


def aggregate_backward(grad_xbar: np.ndarray, l, g: int = 1) -> np.ndarray:
    """Gradient of :func:`aggregate` w.r.t. its frames, given the gradient of the averages."""
    lens = _lengths(l, g)
    return np.repeat(np.asarray(grad_xbar) / lens[:, None], lens, axis=0)


def upsample(v: np.ndarray, l: DurationSequence | Sequence[int], g: int = 1) -> np.ndarray:
    """Repeat row ``u`` of ``v`` ``g * l_u`` times (works for token ids too)."""
    v = np.asarray(v)
    lens = _lengths(l, g)
    if v.shape[0] != lens.size:
        raise ValidationError(f"{v.shape[0]} rows but {lens.size} durations")
    return np.repeat(v, lens, axis=0)


def upsample_backward(grad_up: np.ndarray, l, g: int = 1) -> np.ndarray:
    """Sum the frame-rate gradient back onto the token rows."""
    lens = _lengths(l, g)
    starts = np.concatenate(([0], np.cumsum(lens)[:-1]))
    return np.add.reduceat(np.asarray(grad_up, dtype=np.float64), starts, axis=0)


@dataclass(frozen=True)
class SuperFrames:
    """Stacked frames plus how many copies of the last frame were appended."""

    frames: np.ndarray
    padded_frames: np.ndarray
    n_pad: int


def pad_frames(x: np.ndarray, g: int) -> tuple[np.ndarray, int]:
    """Append copies of the last frame until the length is a multiple of ``g``."""
    x = np.asarray(x, dtype=np.float64)
    if g < 1:
        raise ValidationError("grouping factor must be >= 1")
    n_pad = (-x.shape[0]) % g
    if n_pad:
        x = np.concatenate([x, np.repeat(x[-1:], n_pad, axis=0)], axis=0)
    return x, n_pad


def group_frames(x: np.ndarray, g: int) -> SuperFrames:
    """Concatenate each run of ``g`` frames into one super-frame of width ``g * O``."""
    padded, n_pad = pad_frames(x, g)
    T, O = padded.shape
    return SuperFrames(padded.reshape(T // g, g * O), padded, n_pad)
