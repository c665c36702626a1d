"""LSTM controller shared by every model family."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import autodiff as ad
from .autodiff import ShapeError, Tensor


@dataclass
class LstmState:
    h: Tensor
    c: Tensor


@dataclass
class LstmParameters:
    """Tensor views of the controller parameters.

    ``weight`` maps ``[x; r; h_prev]`` to the stacked input, forget, candidate
    and output gate pre-activations (in that order).
    """

    weight: Tensor
    bias: Tensor
    out_weight: Tensor
    out_bias: Tensor
    embedding: Tensor | None = None

    @property
    def hidden_size(self) -> int:
        return self.weight.shape[0] // 4

    @property
    def input_size(self) -> int:
        """Width of ``[x; r]``."""
        return self.weight.shape[1] - self.hidden_size

    @classmethod
    def from_dict(cls, p: dict[str, Tensor], prefix="controller."):
        return cls(p[prefix + "weight"], p[prefix + "bias"], p[prefix + "out_weight"],
                   p[prefix + "out_bias"], p.get(prefix + "embedding"))


def init_lstm_arrays(rng: np.random.Generator, input_size: int, reading_size: int, hidden_size: int,
                     vocab_size: int, embedding_size: int | None = None, prefix="controller.",
                     scale=0.1) -> dict[str, np.ndarray]:
    """Uniform [-scale, scale] initial parameters.

    ``input_size`` is the one-hot symbol width, or the embedding table's row
    count when ``embedding_size`` is given.  ``vocab_size`` counts EOS.
    """
    x_dim = input_size if embedding_size is None else embedding_size
    fan_in = x_dim + reading_size + hidden_size
    u = lambda *shape: rng.uniform(-scale, scale, size=shape)  # noqa: E731
    arrays = {
        prefix + "weight": u(4 * hidden_size, fan_in),
        prefix + "bias": u(4 * hidden_size),
        prefix + "out_weight": u(vocab_size, hidden_size),
        prefix + "out_bias": u(vocab_size),
    }
    if embedding_size is not None:
        arrays[prefix + "embedding"] = u(input_size, embedding_size)
    return arrays


def initial_state(tape: ad.Tape, batch: int, hidden_size: int) -> LstmState:
    z = np.zeros((batch, hidden_size))
    return LstmState(tape.constant(z), tape.constant(z))


def embed(params: LstmParameters, symbols: np.ndarray, num_symbols: int, tape: ad.Tape) -> Tensor:
    """One-hot rows for ``symbols`` (or embedding lookups when a table exists)."""
    if params.embedding is not None:
        return ad.getitem(params.embedding, (np.asarray(symbols),))
    return tape.constant(np.eye(num_symbols)[np.asarray(symbols)])


def lstm_step(params: LstmParameters, state: LstmState, x: Tensor, r_prev: Tensor | None) -> LstmState:
    """One LSTM transition on the concatenated input ``[x; r_prev]``."""
    H = params.hidden_size
    parts = [x] if r_prev is None else [x, r_prev]
    width = sum(p.shape[-1] for p in parts)
    if width != params.input_size:
        shapes = " + ".join(str(p.shape) for p in parts)
        raise ShapeError(f"lstm_step: input {shapes} does not match gate weights {params.weight.shape}")
    if state.h.shape[-1] != H:
        raise ShapeError(f"lstm_step: hidden state {state.h.shape} does not match gate weights "
                         f"{params.weight.shape}")
    z = ad.affine(ad.concatenate(parts + [state.h], axis=-1), params.weight, params.bias)
    i = ad.sigmoid(z[..., 0:H])
    f = ad.sigmoid(z[..., H:2 * H])
    g = ad.tanh(z[..., 2 * H:3 * H])
    o = ad.sigmoid(z[..., 3 * H:4 * H])
    c = f * state.c + i * g
    return LstmState(o * ad.tanh(c), c)


def predict_logits(params: LstmParameters, h: Tensor) -> Tensor:
    if h.shape[-1] != params.out_weight.shape[1]:
        raise ShapeError(f"predict_logits: hidden {h.shape} vs output map {params.out_weight.shape}")
    return ad.affine(h, params.out_weight, params.out_bias)
