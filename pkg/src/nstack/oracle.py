"""Brute-force enumeration of weighted PDA runs.

Exponential in the number of timesteps; used only to check the dynamic
programs on tiny instances.  Runs start in state 0 with the single bottom
symbol 0 on the stack.  The bottom element may be replaced but never popped;
the element directly above it may be popped.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .rns import NoSurvivingRunsError, PdaSignature

MAX_STEPS = 8
MAX_STATES = 3
MAX_SYMBOLS = 3
MAX_RUNS = 1_000_000  # live-run cap used instead of the size limits for sparse 0/1 weights


@dataclass(frozen=True)
class DiscreteRun:
    transitions: tuple[tuple, ...]
    stack: tuple[int, ...]  # bottom first
    state: int
    weight: float
    vectors: tuple[tuple[float, ...], ...] | None = None  # one per stack element, bottom first

    @property
    def top(self) -> int:
        return self.stack[-1]

    @property
    def top_vector(self):
        return None if self.vectors is None else self.vectors[-1]


@dataclass
class _Level:
    state: np.ndarray
    stack: np.ndarray
    length: np.ndarray
    weight: np.ndarray
    codes: np.ndarray
    vecs: np.ndarray | None


def _guard(sig: PdaSignature, t: int):
    if t > MAX_STEPS or sig.num_states > MAX_STATES or sig.stack_size > MAX_SYMBOLS:
        raise ValueError(f"enumeration limited to t <= {MAX_STEPS}, |Q| <= {MAX_STATES}, "
                         f"|Gamma| <= {MAX_SYMBOLS}; got t={t}, {sig}")


def _levels(sig: PdaSignature, deltas, t: int, v0=None, pushed=None, size_guard=True):
    """Yield the set of nonzero-weight runs of each length 0..t."""
    if size_guard:
        _guard(sig, t)
    if len(deltas) < t:
        raise ValueError(f"need {t} timesteps of weights, got {len(deltas)}")
    Q, G = sig.num_states, sig.stack_size
    with_vecs = v0 is not None
    m = len(v0) if with_vecs else 0
    lv = _Level(np.zeros(1, dtype=np.int64), np.zeros((1, t + 1), dtype=np.int64),
                np.ones(1, dtype=np.int64), np.ones(1), np.zeros((1, t), dtype=np.int64),
                np.asarray(v0, dtype=np.float64).reshape(1, 1, m).repeat(t + 1, 1) if with_vecs else None)
    yield lv
    for step in range(1, t + 1):
        push, repl, pop = (np.asarray(a, dtype=np.float64) for a in deltas[step - 1])
        N = len(lv.weight)
        top = lv.stack[np.arange(N), lv.length - 1]
        kids = []

        def child(keep, state, weight, code, stack_fn, dlen, vec_fn=None):
            idx = np.nonzero(keep)[0]
            stk = lv.stack[idx].copy()
            ln = lv.length[idx]
            stack_fn(stk, np.arange(len(idx)), ln)
            codes = lv.codes[idx].copy()
            codes[:, step - 1] = code
            vecs = None
            if with_vecs:
                vecs = lv.vecs[idx].copy()
                if vec_fn is not None:
                    vec_fn(vecs, np.arange(len(idx)), ln)
            kids.append((np.full(len(idx), state), stk, ln + dlen, weight[idx], codes, vecs))

        # push y on top, move to r
        w = lv.weight[:, None] * push[lv.state, top].reshape(N, Q * G)
        for c in range(Q * G):
            r, y = divmod(c, G)

            def put(stk, rows, ln, y=y):
                stk[rows, ln] = y

            def put_vec(vecs, rows, ln):
                vecs[rows, ln] = np.asarray(pushed[step - 1], dtype=np.float64)

            child(w[:, c] != 0, r, w[:, c], c, put, 1, put_vec)
        # replace the top symbol by y (vector kept), move to r
        w = lv.weight[:, None] * repl[lv.state, top].reshape(N, Q * G)
        for c in range(Q * G):
            r, y = divmod(c, G)

            def swap(stk, rows, ln, y=y):
                stk[rows, ln - 1] = y

            child(w[:, c] != 0, r, w[:, c], Q * G + c, swap, 0)
        # pop, never uncovering below the initial bottom element
        w = lv.weight[:, None] * pop[lv.state, top].reshape(N, Q)
        for r in range(Q):

            def drop(stk, rows, ln):
                stk[rows, ln - 1] = 0

            child((w[:, r] != 0) & (lv.length >= 2), r, w[:, r], 2 * Q * G + r, drop, -1)
        lv = _Level(np.concatenate([k[0] for k in kids]).astype(np.int64),
                    np.concatenate([k[1] for k in kids]),
                    np.concatenate([k[2] for k in kids]),
                    np.concatenate([k[3] for k in kids]),
                    np.concatenate([k[4] for k in kids]),
                    np.concatenate([k[5] for k in kids]) if with_vecs else None)
        if not size_guard and len(lv.weight) > MAX_RUNS:
            raise ValueError(f"more than {MAX_RUNS} live runs at step {step}")
        yield lv


def _decode(code: int, src_state: int, src_top: int, Q: int, G: int) -> tuple:
    if code < Q * G:
        r, y = divmod(code, G)
        return ("push", src_state, src_top, r, y)
    if code < 2 * Q * G:
        r, y = divmod(code - Q * G, G)
        return ("replace", src_state, src_top, r, y)
    return ("pop", src_state, src_top, code - 2 * Q * G)


def _replay_transitions(codes, Q, G):
    state, stack, out = 0, [0], []
    for code in codes:
        tr = _decode(int(code), state, stack[-1], Q, G)
        if tr[0] == "push":
            stack.append(tr[4])
            state = tr[3]
        elif tr[0] == "replace":
            stack[-1] = tr[4]
            state = tr[3]
        else:
            stack.pop()
            state = tr[3]
        out.append(tr)
    return tuple(out)


def enumerate_runs(sig: PdaSignature, deltas, t: int, v0=None, pushed=None, size_guard=True) -> list[DiscreteRun]:
    """Every nonzero-weight run of exactly ``t`` transitions.

    ``deltas[i]`` is the (push, repl, pop) weight triple for timestep i + 1.
    With ``v0`` and ``pushed`` (push vectors for timesteps 1..t) each stack
    element also carries a vector.  ``size_guard=False`` lifts the limits on
    t, |Q| and |Gamma| for sparse weights (such as a compiled PDA's 0/1
    weights) and caps the number of live runs instead.
    """
    lv = None
    for lv in _levels(sig, deltas, t, v0, pushed, size_guard):
        pass
    Q, G = sig.num_states, sig.stack_size
    runs = []
    for n in range(len(lv.weight)):
        ln = lv.length[n]
        runs.append(DiscreteRun(
            _replay_transitions(lv.codes[n, :t], Q, G),
            tuple(int(s) for s in lv.stack[n, :ln]),
            int(lv.state[n]),
            float(lv.weight[n]),
            tuple(tuple(float(x) for x in v) for v in lv.vecs[n, :ln]) if lv.vecs is not None else None,
        ))
    return runs


def oracle_reading(runs: list[DiscreteRun], sig: PdaSignature, m: int | None = None) -> np.ndarray:
    """Marginal over (state, top symbol), or weight-averaged top vectors when ``m`` is given.

    The vector reading is laid out as (state, symbol, component) and divided
    by the total weight of all runs.
    """
    S, G = sig.num_pairs, sig.stack_size
    num = np.zeros(S) if m is None else np.zeros((S, m))
    total = 0.0
    for run in runs:
        k = run.state * G + run.top
        total += run.weight
        if m is None:
            num[k] += run.weight
        else:
            num[k] += run.weight * np.asarray(run.top_vector)
    if total == 0:
        raise NoSurvivingRunsError("no runs with nonzero weight")
    return (num / total).reshape(-1)


def oracle_readings(sig: PdaSignature, deltas, v0=None, pushed=None) -> list[np.ndarray]:
    """Readings at t = 0..len(deltas), computed level by level without building run objects."""
    S, G = sig.num_pairs, sig.stack_size
    out = []
    for lv in _levels(sig, deltas, len(deltas), v0, pushed):
        total = lv.weight.sum()
        if total == 0:
            raise NoSurvivingRunsError("no runs with nonzero weight")
        top = lv.stack[np.arange(len(lv.weight)), lv.length - 1]
        k = lv.state * G + top
        if v0 is None:
            num = np.bincount(k, weights=lv.weight, minlength=S)
        else:
            tv = lv.vecs[np.arange(len(lv.weight)), lv.length - 1]
            num = np.zeros((S, tv.shape[1]))
            np.add.at(num, k, lv.weight[:, None] * tv)
        out.append((num / total).reshape(-1))
    return out


def count_runs(sig: PdaSignature, deltas, t: int) -> int:
    """Number of nonzero-weight runs of length ``t``."""
    lv = None
    for lv in _levels(sig, deltas, t):
        pass
    return len(lv.weight)
