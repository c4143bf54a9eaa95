"""Aspect-conditioned opinion transformation and bilinear attention.

The transformation maps the current aspect feature and each opinion hidden
state into the opinion space and adds the rectified mix back residually,
so opinion features relevant to the current aspect candidate are
strengthened before attention distills the sentence-wide opinion summary.
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

from . import autodiff as ad
from .errors import DimensionError, UsageError


@dataclass(frozen=True)
class StnParams:
    """W4: (2*dim_oh x 2*dim_ah); W5: square over the opinion space.

    W_bi (2*dim_ah x 2*dim_oh) and the scalar bias b_bi belong to the
    bilinear scorer, which is also used when the transformation is
    bypassed (direct attention over raw opinion states).
    """

    W4: ad.Tensor
    W5: ad.Tensor
    W_bi: ad.Tensor
    b_bi: ad.Tensor


def selective_transform(aspect: ad.Tensor, opinions: Sequence[ad.Tensor],
                        params: StnParams, tape: ad.Tape | None = None) -> list[ad.Tensor]:
    """New opinion representations conditioned on the current aspect feature."""
    if aspect.shape != (params.W4.shape[1],):
        raise DimensionError(
            f"selective_transform: aspect shape {aspect.shape} != ({params.W4.shape[1]},)")
    conditioned = ad.matvec(params.W4, aspect, tape)  # shared across positions
    out = []
    for h in opinions:
        mixed = ad.add(conditioned, ad.matvec(params.W5, h, tape), tape)
        out.append(ad.add(h, ad.relu(mixed, tape), tape))
    return out


def bilinear_attention(aspect: ad.Tensor, opinions: Sequence[ad.Tensor],
                       params: StnParams, tape: ad.Tape | None = None,
                       ) -> tuple[ad.Tensor, ad.Tensor]:
    """Softmax-normalized bilinear association scores and the opinion summary.

    The raw score for position i is tanh(aspect . W_bi . opinion_i + b_bi);
    normalization runs over all sentence positions for the fixed target.
    """
    if len(opinions) == 0:
        raise UsageError("bilinear_attention: empty opinion sequence")
    raw = []
    for h in opinions:
        raw.append(ad.add(ad.dot(aspect, ad.matvec(params.W_bi, h, tape), tape),
                          params.b_bi, tape))
    weights = ad.softmax(ad.tanh(ad.concat(raw, tape), tape), tape)
    summary = ad.weighted_sum(weights, list(opinions), tape)
    return weights, summary
