"""Vector renormalizing nondeterministic stack.

Stack elements are (symbol, vector) pairs.  Push stores the current push
vector, replace swaps the symbol but keeps the vector, pop uncovers the
element beneath.  The reading holds, for each (state, top symbol) pair, the
run-weighted sum of top vectors divided by the total weight of all runs.

Vector inner weights ``zeta[i -> t]`` use the same slot layout as
:mod:`nstack.rns`, with the vector component inserted before the two pair
axes: ``(batch, t + 1, m, S, S)``.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import autodiff as ad
from .autodiff import LOG, Semiring, ShapeError, Tensor
from .rns import (NoSurvivingRunsError, PdaSignature, RnsState, TransitionWeights, pop_term, rns_forward_step,
                  rns_init)


@dataclass
class VrnsState:
    rns: RnsState
    m: int
    zeta: list[Tensor]
    readings: list[Tensor] = field(default_factory=list)

    @property
    def t(self):
        return self.rns.t


def _encode_vector(v: Tensor, logits: bool, semiring: Semiring) -> Tensor:
    """Semiring encoding of a sigmoid vector; ``logits`` means ``v`` holds pre-sigmoid values."""
    if logits:
        return ad.log_sigmoid(v) if semiring.is_log else ad.sigmoid(v)
    return ad.log(v) if semiring.is_log else v


def vrns_init(tape: ad.Tape, sig: PdaSignature, batch: int, v0: Tensor, semiring: Semiring = LOG,
              legacy_init: bool = False, v0_is_logits: bool = True) -> VrnsState:
    """Initial state holding (bottom, v0).

    By default ``v0`` is the learned logit ``w_v`` and the initial vector is
    ``sigmoid(w_v)``.  ``legacy_init`` puts v0 on every (q, x -> r, y) entry
    of ``zeta[-1 -> 0]`` instead of only on (q0, bottom -> q0, bottom).
    """
    S = sig.num_pairs
    m = v0.shape[-1]
    rns = rns_init(tape, sig, batch, semiring)
    enc = _encode_vector(v0, v0_is_logits, semiring).reshape(1, 1, m, 1, 1)
    mask = np.full((batch, 1, 1, S, S), semiring.one if legacy_init else semiring.zero)
    mask[:, 0, 0, 0, 0] = semiring.one
    z0 = semiring.mul(tape.constant(mask), enc)
    state = VrnsState(rns, m, [z0])
    state.readings.append(_reading(state, z0))
    return state


def vrns_forward_step(state: VrnsState, delta: TransitionWeights, v: Tensor, t: int,
                      v_is_logits: bool = True) -> VrnsState:
    """Advance the shared scalar recurrence and the vector recurrence to ``t``.

    ``v`` is the push vector for this timestep, shape (batch, m); with
    ``v_is_logits`` it is the affine output and the vector is its sigmoid.
    """
    B, m = state.rns.batch, state.m
    if v.shape != (B, m):
        raise ShapeError(f"push vector {v.shape} does not match stack vectors {(B, m)}")
    alphas_prev = state.rns.alphas
    rns_forward_step(state.rns, delta, t)
    sr = state.rns.semiring
    S = state.rns.sig.num_pairs
    R = delta.repl.reshape(B, 1, 1, S, S)
    P = delta.push.reshape(B, 1, 1, S, S)
    prev = state.zeta[t - 1]
    repl = sr.matmul(prev, R)
    push = sr.mul(P, _encode_vector(v, v_is_logits, sr).reshape(B, 1, m, 1, 1))
    if t >= 2:
        pop = pop_term(state.rns.gamma_prime, state.zeta[:t - 1], sr)
        pieces = [sr.add(repl[:, :t - 1], pop), repl[:, t - 1:]]
    else:
        pieces = [repl]
    col = ad.concatenate(pieces + [push], axis=1)
    state.zeta.append(col)
    state.readings.append(_reading(state, col, alphas_prev))
    return state


def _reading(state: VrnsState, col: Tensor, alphas_prev: Tensor | None = None) -> Tensor:
    rns, m = state.rns, state.m
    sr, B, S = rns.semiring, rns.batch, rns.sig.num_pairs
    if alphas_prev is None:
        alphas_prev = rns.alphas[:, :-1]
    n = col.shape[1]
    z = col.transpose(0, 2, 1, 3, 4).reshape(B, m, n * S, S)
    eta = sr.matmul(alphas_prev.reshape(B, 1, 1, n * S), z).reshape(B, m, S)
    return vrns_reading(rns.alpha, eta, sr)


def vrns_reading(alpha_row: Tensor, eta: Tensor, semiring: Semiring = LOG) -> Tensor:
    """Divide eta (batch, m, S) by the total forward weight; output (batch, S * m) ordered (r, y, j)."""
    total = semiring.sum(alpha_row, axis=-1)
    if np.any(semiring.is_zero(total.data)):
        raise NoSurvivingRunsError("no surviving runs: all forward weights are zero")
    B, m, S = eta.shape
    t = total.reshape(B, 1, 1)
    r = ad.exp(eta - t) if semiring.is_log else eta / t
    return r.transpose(0, 2, 1).reshape(B, S * m)


def vrns_readings(tape: ad.Tape, sig: PdaSignature, deltas: list[TransitionWeights], v0: Tensor,
                  pushed: list[Tensor], semiring: Semiring = LOG, legacy_init=False,
                  logits=True) -> list[Tensor]:
    batch = deltas[0].push.shape[0] if deltas else 1
    state = vrns_init(tape, sig, batch, v0, semiring, legacy_init, v0_is_logits=logits)
    for t, (d, v) in enumerate(zip(deltas, pushed), start=1):
        vrns_forward_step(state, d, v, t, v_is_logits=logits)
    return state.readings
