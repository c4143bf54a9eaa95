"""Truncated history attention over the most recent aspect detections.

A bounded FIFO cache holds pairs (raw hidden state, history-aware state)
from earlier positions of the same sentence. The current aspect feature
attends over the cached window and receives the distilled history through
a rectified residual connection. Cached tensors stay on the sentence's
tape, so gradients flow back through the history.
"""
from __future__ import annotations

from collections import deque
from dataclasses import dataclass

from . import autodiff as ad
from .errors import DimensionError, UsageError


@dataclass(frozen=True)
class ThaParams:
    """W1/W2/W3 square over the aspect space (2*dim_ah); v scores to a scalar."""

    W1: ad.Tensor
    W2: ad.Tensor
    W3: ad.Tensor
    v: ad.Tensor


class HistoryCache:
    """Window of at most ``capacity`` (raw, history-aware) pairs, oldest first."""

    __slots__ = ("_entries",)

    def __init__(self, capacity: int):
        if capacity < 1:
            raise UsageError("history cache capacity must be >= 1")
        self._entries: deque[tuple[ad.Tensor, ad.Tensor]] = deque(maxlen=capacity)

    def __len__(self) -> int:
        return len(self._entries)

    @property
    def capacity(self) -> int:
        return self._entries.maxlen

    @property
    def entries(self) -> list[tuple[ad.Tensor, ad.Tensor]]:
        return list(self._entries)


def cache_push(cache: HistoryCache, h_raw: ad.Tensor, h_aware: ad.Tensor) -> HistoryCache:
    """Append a pair, evicting the oldest entry once the window is full."""
    if h_raw.shape != h_aware.shape:
        raise DimensionError(
            f"cache_push: raw shape {h_raw.shape} != history-aware shape {h_aware.shape}")
    cache._entries.append((h_raw, h_aware))
    return cache


def tha_step(h_t: ad.Tensor, cache: HistoryCache, params: ThaParams,
             tape: ad.Tape | None = None) -> tuple[ad.Tensor, ad.Tensor | None]:
    """History-aware representation for the current position, plus scores.

    With an empty cache the aspect-history term is zero and the input is
    returned unchanged (scores None). Otherwise each cached pair is scored,
    the scores are softmax-normalized over the window, and their weighted
    sum of past history-aware states is added through ReLU.
    """
    if not len(cache):
        return h_t, None
    current = ad.matvec(params.W2, h_t, tape)
    raw_scores = []
    for h_past, h_aware_past in cache.entries:
        mixed = ad.add(ad.add(ad.matvec(params.W1, h_past, tape), current, tape),
                       ad.matvec(params.W3, h_aware_past, tape), tape)
        raw_scores.append(ad.dot(params.v, ad.tanh(mixed, tape), tape))
    scores = ad.softmax(ad.concat(raw_scores, tape), tape)
    history = ad.weighted_sum(scores, [aware for _, aware in cache.entries], tape)
    return ad.add(h_t, ad.relu(history, tape), tape), scores
