"""Renormalizing nondeterministic stack.

Simulates every run of a real-time weighted PDA whose transitions are in
restricted form (push one symbol, replace the top, pop the top) and returns
the marginal distribution over (state, top symbol) at each timestep.

Layout.  A (state, symbol) pair ``(q, x)`` is flattened to ``q * G + x``.
The inner weights ending at timestep ``t`` are one tensor of shape
``(batch, t + 1, S, S)`` whose slot ``j`` holds ``gamma[j - 1 -> t]``, so the
``-1`` pseudo-timestep lives in slot 0.  Forward weights ``alpha[-1..t]`` are
kept as ``(batch, t + 2, S)`` with the same offset.

The pseudo-timestep is a simulated push at ``t = -1``: the initial bottom
symbol can be replaced, and the symbol sitting on it can be popped.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from functools import reduce
from math import prod

import numpy as np

from . import autodiff as ad
from .autodiff import LOG, Op, Semiring, ShapeError, Tensor

__all__ = [
    "NoSurvivingRunsError",
    "PdaSignature",
    "TransitionWeights",
    "RnsState",
    "delta_from_hidden",
    "delta_from_arrays",
    "rns_init",
    "rns_forward_step",
    "rns_reading",
    "rns_readings",
    "rns_forward_naive",
]


class NoSurvivingRunsError(ValueError):
    """Every run has weight zero, so the reading is undefined."""


@dataclass(frozen=True)
class PdaSignature:
    num_states: int
    stack_size: int

    def __post_init__(self):
        if self.num_states < 1 or self.stack_size < 1:
            raise ValueError(f"need at least one state and one stack symbol, got {self}")

    @property
    def num_pairs(self) -> int:
        return self.num_states * self.stack_size

    @property
    def num_weights(self) -> int:
        Q, G = self.num_states, self.stack_size
        return Q * Q * G * (2 * G + 1)

    @property
    def max_choices(self) -> int:
        return self.num_states * (2 * self.stack_size + 1)


@dataclass
class TransitionWeights:
    """Weights for one timestep, already encoded in the semiring.

    ``push[b, q, x, r, y]`` is q,x -> r,xy; ``repl[b, q, x, r, y]`` is
    q,x -> r,y; ``pop[b, q, x, r]`` is q,x -> r,eps.
    """

    push: Tensor
    repl: Tensor
    pop: Tensor


def delta_from_hidden(sig: PdaSignature, weight: Tensor, bias: Tensor, h: Tensor,
                      semiring: Semiring = LOG) -> TransitionWeights:
    """Transition weights ``exp(affine(h))``; log mode keeps the affine output."""
    Q, G = sig.num_states, sig.stack_size
    if weight.shape[0] != sig.num_weights:
        raise ShapeError(f"action map has {weight.shape[0]} outputs, signature needs {sig.num_weights}")
    z = ad.affine(h, weight, bias)
    if not semiring.is_log:
        z = ad.exp(z)
    B = h.shape[0]
    n = Q * G * Q * G
    return TransitionWeights(z[:, :n].reshape(B, Q, G, Q, G),
                             z[:, n:2 * n].reshape(B, Q, G, Q, G),
                             z[:, 2 * n:].reshape(B, Q, G, Q))


def delta_from_arrays(tape: ad.Tape, push, repl, pop, semiring: Semiring = LOG) -> TransitionWeights:
    """Constant transition weights from real-valued numpy arrays (leading batch axis)."""
    return TransitionWeights(*(tape.constant(semiring.from_real(a)) for a in (push, repl, pop)))


# ----------------------------------------------------------------------
# fused pop term


def _prepare(gp: np.ndarray, inners, log: bool):
    """Split the inputs into per-k blocks and a block-diagonal pop matrix.

    ``blocks[k]`` is ``inner[. -> k]`` viewed as (B, k + 1, E, S, Q, G) with
    the last two axes the (state u, symbol y) of the pair being popped onto.
    ``pd[:, k]`` maps pair (u, y') to pair (r, y) and is zero unless y' = y,
    so products land directly in the (r, y) pair layout.  In log mode both
    sides are exponentiated after subtracting maxima: ``sa`` per row and top
    symbol y (over every k and u), ``sb`` per output pair (over k and u).
    """
    B, K, S, Q = gp.shape
    G = S // Q
    extra = inners[0].shape[2:-2]
    E = prod(extra)
    blocks = [g.reshape(B, k + 1, E, S, Q, G) for k, g in enumerate(inners)]
    P = gp.reshape(B, K, Q, G, Q)
    sa = sb = None
    if log:
        sa = np.full((B, K, E, S, 1, G), -np.inf)
        for k, bl in enumerate(blocks):
            # elementwise over the short u axis; much faster than an axis reduction here
            m = reduce(np.maximum, (bl[..., u:u + 1, :] for u in range(Q)))
            np.maximum(sa[:, :k + 1], m, out=sa[:, :k + 1])
        sa[~np.isfinite(sa)] = 0.0
        sb = P.max(axis=(1, 2), keepdims=True)
        sb[~np.isfinite(sb)] = 0.0
        P = np.exp(P - sb)
        sb = sb.reshape(B, G, Q).transpose(0, 2, 1).reshape(B, 1, 1, 1, Q, G)
    pd = (P[..., None] * np.eye(G)[:, None, :]).reshape(B, K, S, S)
    return blocks, P, pd, sa, sb, (B, K, E, S, Q, G, extra)


def _scaled(bl, sa, k):
    B, _, E, S, Q, G = bl.shape
    x = bl if sa is None else np.exp(bl - sa[:, :k + 1])
    return x.reshape(B, (k + 1) * E * S, S)


def _pop_forward(gp, *inners, log):
    if len(inners) != gp.shape[1]:
        raise ShapeError(f"pop term: {len(inners)} inner blocks for {gp.shape[1]} pop slots")
    blocks, _, pd, sa, sb, dims = _prepare(gp, inners, log)
    B, K, E, S, Q, G, extra = dims
    out = np.zeros((B, K, E, S, S))
    for k, bl in enumerate(blocks):
        out[:, :k + 1] += np.matmul(_scaled(bl, sa, k), pd[:, k]).reshape(B, k + 1, E, S, S)
    if log:
        out = np.log(out.reshape(B, K, E, S, Q, G)) + sa + sb
    return out.reshape((B, K) + extra + (S, S))


def _pop_vjp(g, out, ins, needs, log):
    gp, inners = ins[0], ins[1:]
    blocks, P, pd, sa, sb, dims = _prepare(gp, inners, log)
    B, K, E, S, Q, G, _ = dims
    w = g.reshape(B, K, E, S, Q, G)
    if log:
        o = out.reshape(w.shape)
        w = w * np.exp(sa + sb - o)
        w[~np.isfinite(o)] = 0.0
    w = w.reshape(B, K, E, S, S)
    grads = [None] * len(ins)
    gpd = np.zeros((B, K, S, S)) if needs[0] else None
    for k, bl in enumerate(blocks):
        x = _scaled(bl, sa, k)
        wk = w[:, :k + 1].reshape(B, (k + 1) * E * S, S)
        if needs[k + 1]:
            gx = np.matmul(wk, np.swapaxes(pd[:, k], -1, -2))
            if log:
                gx *= x
            grads[k + 1] = gx.reshape(inners[k].shape)
        if gpd is not None:
            gpd[:, k] = np.matmul(np.swapaxes(x, -1, -2), wk)
    if gpd is not None:
        gP = np.einsum("bkuyry->bkuyr", gpd.reshape(B, K, Q, G, Q, G))
        if log:
            gP = gP * P
        grads[0] = gP.reshape(gp.shape)
    return grads


POP_REAL = Op("rns_pop", lambda gp, *inners: _pop_forward(gp, *inners, log=False),
              lambda g, out, ins, needs: _pop_vjp(g, out, ins, needs, log=False))
POP_LOG = Op("rns_pop_log", lambda gp, *inners: _pop_forward(gp, *inners, log=True),
             lambda g, out, ins, needs: _pop_vjp(g, out, ins, needs, log=True), allow_neg_inf=True)


def pop_term(gp: Tensor, inners: list[Tensor], semiring: Semiring) -> Tensor:
    """Sum over k of ``inner[i -> k] (x) gamma'[k -> t]`` for every start slot.

    ``gp`` has shape (batch, K, S, Q) holding ``gamma'[k -> t]`` for k = 0..K-1;
    ``inners[k]`` has shape (batch, k + 1, ..., S, S).  Returns
    (batch, K, ..., S, S) with slot ``j`` covering start ``i = j - 1`` and
    summing over ``k >= j``.
    """
    return gp.tape.record(POP_LOG if semiring.is_log else POP_REAL, [gp, *inners])


# ----------------------------------------------------------------------
# forward recurrence


@dataclass
class RnsState:
    sig: PdaSignature
    semiring: Semiring
    batch: int
    t: int
    gamma: list[Tensor]
    alphas: Tensor
    # gamma'[k -> t] from the latest step, shared with the vector stack
    gamma_prime: Tensor | None = None
    readings: list[Tensor] = field(default_factory=list)

    @property
    def alpha(self) -> Tensor:
        return self.alphas[:, -1]


def _one_hot(shape, semiring: Semiring, index) -> np.ndarray:
    a = np.full(shape, semiring.zero)
    a[index] = semiring.one
    return a


def rns_init(tape: ad.Tape, sig: PdaSignature, batch: int, semiring: Semiring = LOG) -> RnsState:
    """State at t = 0: gamma[-1 -> 0] and alpha[-1] are indicators of (q0, bottom)."""
    S = sig.num_pairs
    g0 = tape.constant(_one_hot((batch, 1, S, S), semiring, (slice(None), 0, 0, 0)))
    a_init = tape.constant(_one_hot((batch, 1, S), semiring, (slice(None), 0, 0)))
    a0 = semiring.matmul(a_init.reshape(batch, 1, S), g0.reshape(batch, S, S))
    state = RnsState(sig, semiring, batch, 0, [g0], ad.concatenate([a_init, a0], axis=1))
    state.readings.append(rns_reading(state.alpha, semiring))
    return state


def _check_delta(state: RnsState, d: TransitionWeights):
    Q, G, B = state.sig.num_states, state.sig.stack_size, state.batch
    want = ((B, Q, G, Q, G), (B, Q, G, Q, G), (B, Q, G, Q))
    got = (d.push.shape, d.repl.shape, d.pop.shape)
    if got != want:
        raise ShapeError(f"transition weights {got} do not match signature {want}")


def rns_forward_step(state: RnsState, delta: TransitionWeights, t: int) -> RnsState:
    """Extend the inner and forward weights to timestep ``t``."""
    if t != state.t + 1:
        raise ValueError(f"timestep {t} out of order; state is at t={state.t}")
    _check_delta(state, delta)
    sr, B = state.semiring, state.batch
    Q, S = state.sig.num_states, state.sig.num_pairs
    P = delta.push.reshape(B, 1, S, S)
    R = delta.repl.reshape(B, 1, S, S)
    D = delta.pop.reshape(B, 1, S, Q)
    prev = state.gamma[t - 1]
    repl = sr.matmul(prev, R)
    if t >= 2:
        gp = sr.matmul(prev[:, 1:], D)
        pop = pop_term(gp, state.gamma[:t - 1], sr)
        pieces = [sr.add(repl[:, :t - 1], pop), repl[:, t - 1:]]
    else:
        gp = None
        pieces = [repl]
    col = ad.concatenate(pieces + [P], axis=1)
    alpha = sr.matmul(state.alphas.reshape(B, 1, (t + 1) * S), col.reshape(B, (t + 1) * S, S))
    state.gamma.append(col)
    state.alphas = ad.concatenate([state.alphas, alpha], axis=1)
    state.gamma_prime = gp
    state.t = t
    state.readings.append(rns_reading(state.alpha, sr))
    return state


def rns_reading(alpha_row: Tensor, semiring: Semiring = LOG) -> Tensor:
    """Normalize forward weights over (state, top symbol) pairs."""
    if np.any(semiring.is_zero(semiring.sum(alpha_row, axis=-1).data)):
        raise NoSurvivingRunsError("no surviving runs: all forward weights are zero")
    return semiring.normalize(alpha_row, axis=-1)


def rns_readings(tape: ad.Tape, sig: PdaSignature, deltas: list[TransitionWeights],
                 semiring: Semiring = LOG) -> list[Tensor]:
    """Readings r_0..r_n for transition weights at timesteps 1..n."""
    batch = deltas[0].push.shape[0] if deltas else 1
    state = rns_init(tape, sig, batch, semiring)
    for t, d in enumerate(deltas, start=1):
        rns_forward_step(state, d, t)
    return state.readings


# ----------------------------------------------------------------------
# unfactored reference


def rns_forward_naive(sig: PdaSignature, deltas, dtype=np.float64):
    """Plain-numpy forward pass that sums the pop case without gamma'.

    ``deltas`` is a sequence of (push, repl, pop) real weight arrays without a
    batch axis.  Works for ``dtype=object`` (exact integers).  Returns
    ``(readings, alphas)`` for t = 0..n; readings are None where no run
    survives.
    """
    Q, G, S = sig.num_states, sig.stack_size, sig.num_pairs
    zero = np.zeros((S, S), dtype=dtype)
    gam = {}
    init = zero.copy()
    init[0, 0] = 1
    gam[-1, 0] = init
    alpha = {-1: np.zeros(S, dtype=dtype)}
    alpha[-1][0] = 1
    alpha[0] = alpha[-1] @ gam[-1, 0]
    for t, (push, repl, pop) in enumerate(deltas, start=1):
        P = np.asarray(push, dtype=dtype).reshape(S, S)
        R = np.asarray(repl, dtype=dtype).reshape(S, S)
        D = np.asarray(pop, dtype=dtype).reshape(S, Q)
        for i in range(-1, t):
            val = P.copy() if i == t - 1 else gam[i, t - 1] @ R
            for k in range(max(i + 1, 0), t - 1):
                A = gam[i, k].reshape(S, Q, G)
                Bk = gam[k, t - 1].reshape(Q, G, S)
                term = np.einsum("auy,uys,sr->ary", A, Bk, D)
                val = val + term.reshape(S, S)
            gam[i, t] = val
        acc = np.zeros(S, dtype=dtype)
        for i in range(-1, t):
            acc = acc + alpha[i] @ gam[i, t]
        alpha[t] = acc
    n = len(deltas)
    readings = []
    for t in range(n + 1):
        tot = alpha[t].sum()
        readings.append(None if tot == 0 else alpha[t] / tot)
    return readings, [alpha[t] for t in range(n + 1)]
