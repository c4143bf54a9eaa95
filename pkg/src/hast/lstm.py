"""Single LSTM cell and bidirectional encoding over a token sequence.

Gate rows in the stacked parameters are ordered (input, forget, candidate,
output); the checkpoint format relies on this order. Initial hidden and
cell states are zero in both directions.
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import NamedTuple, Sequence

from . import autodiff as ad
from .errors import DimensionError, UsageError


@dataclass(frozen=True)
class LstmParams:
    """Stacked weights: W (4H x in), U (4H x H), b (4H)."""

    W: ad.Tensor
    U: ad.Tensor
    b: ad.Tensor

    @property
    def hidden_size(self) -> int:
        return self.W.shape[0] // 4

    @property
    def input_size(self) -> int:
        return self.W.shape[1]


@dataclass(frozen=True)
class BiLstmParams:
    forward: LstmParams
    backward: LstmParams


class LstmState(NamedTuple):
    h: ad.Tensor
    c: ad.Tensor


def initial_state(hidden_size: int) -> LstmState:
    return LstmState(ad.zeros(hidden_size), ad.zeros(hidden_size))


def lstm_step(x: ad.Tensor, state: LstmState, params: LstmParams,
              tape: ad.Tape | None = None) -> LstmState:
    """One cell update: gates from the stacked affine map, then c and h."""
    if x.shape != (params.input_size,):
        raise DimensionError(
            f"lstm_step: input shape {x.shape} != ({params.input_size},)")
    n = params.hidden_size
    z = ad.add(ad.add(ad.matvec(params.W, x, tape), ad.matvec(params.U, state.h, tape), tape),
               params.b, tape)
    gate_in = ad.sigmoid(ad.vslice(z, 0, n, tape), tape)
    gate_forget = ad.sigmoid(ad.vslice(z, n, 2 * n, tape), tape)
    candidate = ad.tanh(ad.vslice(z, 2 * n, 3 * n, tape), tape)
    gate_out = ad.sigmoid(ad.vslice(z, 3 * n, 4 * n, tape), tape)
    c = ad.add(ad.mul(gate_in, candidate, tape), ad.mul(state.c, gate_forget, tape), tape)
    h = ad.mul(ad.tanh(c, tape), gate_out, tape)
    return LstmState(h, c)


def bilstm_encode(inputs: Sequence[ad.Tensor], params: BiLstmParams,
                  tape: ad.Tape | None = None) -> list[ad.Tensor]:
    """Per-position concatenation of forward and backward hidden states."""
    if len(inputs) == 0:
        raise UsageError("bilstm_encode: empty input sequence")
    state = initial_state(params.forward.hidden_size)
    fwd = []
    for x in inputs:
        state = lstm_step(x, state, params.forward, tape)
        fwd.append(state.h)
    state = initial_state(params.backward.hidden_size)
    bwd: list[ad.Tensor | None] = [None] * len(inputs)
    for t in range(len(inputs) - 1, -1, -1):
        state = lstm_step(inputs[t], state, params.backward, tape)
        bwd[t] = state.h
    return [ad.concat((f, b), tape) for f, b in zip(fwd, bwd)]
