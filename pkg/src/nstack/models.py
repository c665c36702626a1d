"""Stack-augmented LSTM language models.

Every family shares the controller loop: ``h_t`` comes from ``x_t`` and the
previous reading ``r_{t-1}``, ``y_t = affine(h_t)`` predicts symbol t + 1
(EOS after the last symbol), and the stack consumes actions derived from
``h_t`` to produce ``r_t``.  ``y_0`` is computed from ``h_0 = 0``.
"""

from __future__ import annotations

import re
from dataclasses import asdict, dataclass, field

import numpy as np

from . import autodiff as ad
from .autodiff import LOG, REAL, Tensor
from .controller import LstmParameters, embed, init_lstm_arrays, initial_state, lstm_step, predict_logits
from .rns import PdaSignature, delta_from_hidden, rns_init, rns_forward_step
from .superposition import empty_stack, sup_step
from .vrns import vrns_forward_step, vrns_init

KINDS = ("lstm", "sup", "rns", "vrns")


@dataclass(frozen=True)
class ModelConfig:
    kind: str = "lstm"
    hidden_size: int = 20
    num_states: int = 2
    stack_size: int = 3
    stack_dim: int = 3
    num_stacks: int = 1
    push: str = "learned"  # superposition stack: push "hidden" state or a "learned" tanh projection
    semiring: str = "log"
    legacy_vector_init: bool = False

    def __post_init__(self):
        if self.kind not in KINDS:
            raise ValueError(f"model kind must be one of {KINDS}, got {self.kind!r}")
        if self.push not in ("hidden", "learned"):
            raise ValueError(f"push must be 'hidden' or 'learned', got {self.push!r}")
        if self.semiring not in ("log", "real"):
            raise ValueError(f"semiring must be 'log' or 'real', got {self.semiring!r}")
        for name in ("hidden_size", "num_states", "stack_size", "stack_dim", "num_stacks"):
            if getattr(self, name) < 1:
                raise ValueError(f"{name} must be positive")

    @classmethod
    def parse(cls, label: str, hidden_size=20, **kw) -> "ModelConfig":
        """Build from a short label: lstm, sup-h, sup-10, sup-3-3-3, rns-2-3, vrns-2-3-3."""
        s = label.strip().lower().replace(".", "").replace(" ", "-")
        nums = [int(x) for x in re.findall(r"\d+", s)]
        if s == "lstm":
            return cls("lstm", hidden_size, **kw)
        if s in ("sup-h", "suph"):
            return cls("sup", hidden_size, push="hidden", stack_dim=hidden_size, **kw)
        if s.startswith("sup") and nums:
            if len(set(nums)) != 1:
                raise ValueError(f"superposition stacks in {label!r} must share one vector size")
            return cls("sup", hidden_size, stack_dim=nums[0], num_stacks=len(nums), **kw)
        if s.startswith("vrns") and len(nums) == 3:
            return cls("vrns", hidden_size, num_states=nums[0], stack_size=nums[1], stack_dim=nums[2], **kw)
        if s.startswith("rns") and len(nums) == 2:
            return cls("rns", hidden_size, num_states=nums[0], stack_size=nums[1], **kw)
        raise ValueError(f"cannot parse model label {label!r}")

    @property
    def label(self) -> str:
        if self.kind == "lstm":
            return "LSTM"
        if self.kind == "sup":
            if self.push == "hidden":
                return "Sup. h"
            return "Sup. " + "-".join([str(self.stack_dim)] * self.num_stacks)
        if self.kind == "rns":
            return f"RNS {self.num_states}-{self.stack_size}"
        return f"VRNS {self.num_states}-{self.stack_size}-{self.stack_dim}"

    @property
    def signature(self) -> PdaSignature:
        return PdaSignature(self.num_states, self.stack_size)

    @property
    def sup_dim(self) -> int:
        return self.hidden_size if self.push == "hidden" else self.stack_dim

    @property
    def reading_size(self) -> int:
        if self.kind == "lstm":
            return 0
        if self.kind == "sup":
            return self.num_stacks * self.sup_dim
        S = self.num_states * self.stack_size
        return S if self.kind == "rns" else S * self.stack_dim

    def to_json(self) -> dict:
        return asdict(self)


def xavier_uniform(rng: np.random.Generator, fan_out: int, fan_in: int) -> np.ndarray:
    bound = np.sqrt(6.0 / (fan_in + fan_out))
    return rng.uniform(-bound, bound, size=(fan_out, fan_in))


@dataclass
class ForwardResult:
    loss: Tensor  # summed negative log-likelihood over batch and time
    log_probs: np.ndarray  # per string, EOS included
    readings: list[np.ndarray] = field(default_factory=list)  # r_0 .. r_{n-1}, each (batch, reading_size)


class StackLm:
    """LSTM language model with an optional differentiable stack."""

    def __init__(self, config: ModelConfig, alphabet: tuple[str, ...]):
        self.config = config
        self.alphabet = tuple(alphabet)
        self.index = {a: i for i, a in enumerate(self.alphabet)}
        self.eos = len(self.alphabet)
        self.sr = LOG if config.semiring == "log" else REAL

    @property
    def vocab_size(self) -> int:
        return len(self.alphabet) + 1

    def encode(self, strings) -> np.ndarray:
        """Integer matrix (batch, n) for equal-length strings."""
        lengths = {len(w) for w in strings}
        if len(lengths) != 1:
            raise ValueError(f"batch strings must share one length, got {sorted(lengths)}")
        try:
            return np.array([[self.index[s] for s in w] for w in strings], dtype=np.int64).reshape(len(strings), -1)
        except KeyError as e:
            raise ValueError(f"symbol {e.args[0]!r} is not in the alphabet {self.alphabet}") from None

    def init_params(self, rng: np.random.Generator) -> dict[str, np.ndarray]:
        """Controller uniform in [-0.1, 0.1]; other weight matrices Xavier uniform; other biases uniform."""
        c = self.config
        H = c.hidden_size
        params = init_lstm_arrays(rng, len(self.alphabet), c.reading_size, H, self.vocab_size)
        u = lambda *shape: rng.uniform(-0.1, 0.1, size=shape)  # noqa: E731
        if c.kind == "sup":
            params["actions.weight"] = xavier_uniform(rng, 3 * c.num_stacks, H)
            params["actions.bias"] = u(3 * c.num_stacks)
            if c.push == "learned":
                params["push.weight"] = xavier_uniform(rng, c.num_stacks * c.stack_dim, H)
                params["push.bias"] = u(c.num_stacks * c.stack_dim)
        elif c.kind in ("rns", "vrns"):
            n = c.signature.num_weights
            params["actions.weight"] = xavier_uniform(rng, n, H)
            params["actions.bias"] = u(n)
            if c.kind == "vrns":
                params["push.weight"] = xavier_uniform(rng, c.stack_dim, H)
                params["push.bias"] = u(c.stack_dim)
                params["stack.init_vector"] = u(c.stack_dim)
        return params

    # ------------------------------------------------------------ forward

    def forward(self, tape: ad.Tape, params: dict[str, Tensor], symbols: np.ndarray,
                keep_readings=False) -> ForwardResult:
        symbols = np.asarray(symbols, dtype=np.int64)
        B, n = symbols.shape
        c = self.config
        ctrl = LstmParameters.from_dict(params)
        state = initial_state(tape, B, c.hidden_size)
        stack = self._init_stack(tape, params, B)
        r = self._reading(stack)
        logits = [predict_logits(ctrl, state.h)]
        readings = [r.data.copy()] if keep_readings and r is not None else []
        for t in range(1, n + 1):
            x = embed(ctrl, symbols[:, t - 1], len(self.alphabet), tape)
            state = lstm_step(ctrl, state, x, r)
            logits.append(predict_logits(ctrl, state.h))
            if t < n and c.kind != "lstm":
                stack = self._step(stack, params, state.h, t)
                r = self._reading(stack)
                if keep_readings:
                    readings.append(r.data.copy())
        targets = np.concatenate([symbols, np.full((B, 1), self.eos)], axis=1)
        L = ad.stack(logits, axis=1)
        nll = ad.cross_entropy(L, targets)
        log_probs = -nll.data.sum(axis=1)
        return ForwardResult(ad.sum_(nll), log_probs, readings)

    def _init_stack(self, tape, params, B):
        c = self.config
        if c.kind == "lstm":
            return None
        if c.kind == "sup":
            return [empty_stack(tape, B, c.sup_dim) for _ in range(c.num_stacks)]
        if c.kind == "rns":
            return rns_init(tape, c.signature, B, self.sr)
        v0 = params["stack.init_vector"]
        return vrns_init(tape, c.signature, B, v0, self.sr, legacy_init=c.legacy_vector_init)

    def _reading(self, stack) -> Tensor | None:
        c = self.config
        if c.kind == "lstm":
            return None
        if c.kind == "sup":
            tops = [s.reading() for s in stack]
            return tops[0] if len(tops) == 1 else ad.concatenate(tops, axis=-1)
        return stack.readings[-1]

    def _step(self, stack, params, h: Tensor, t: int):
        c = self.config
        if c.kind == "sup":
            B = h.shape[0]
            a = ad.affine(h, params["actions.weight"], params["actions.bias"]).reshape(B, c.num_stacks, 3)
            a = ad.softmax(a, axis=-1)
            if c.push == "hidden":
                vs = [h] * c.num_stacks
            else:
                v = ad.tanh(ad.affine(h, params["push.weight"], params["push.bias"]))
                m = c.stack_dim
                vs = [v[:, i * m:(i + 1) * m] for i in range(c.num_stacks)]
            return [sup_step(s, a[:, i], vs[i])[0] for i, s in enumerate(stack)]
        delta = delta_from_hidden(c.signature, params["actions.weight"], params["actions.bias"], h, self.sr)
        if c.kind == "rns":
            return rns_forward_step(stack, delta, t)
        v = ad.affine(h, params["push.weight"], params["push.bias"])
        return vrns_forward_step(stack, delta, v, t)

    # ------------------------------------------------------------ helpers

    def loss_and_grads(self, theta: dict[str, np.ndarray], strings) -> tuple[float, np.ndarray, dict]:
        tape = ad.Tape()
        params = {k: tape.parameter(k, v) for k, v in theta.items()}
        res = self.forward(tape, params, self.encode(strings))
        grads = tape.backward(res.loss)
        return float(res.loss.data), res.log_probs, grads

    def log_probs(self, theta: dict[str, np.ndarray], strings, keep_readings=False) -> ForwardResult:
        tape = ad.Tape()
        params = {k: tape.constant(v) for k, v in theta.items()}
        return self.forward(tape, params, self.encode(strings), keep_readings)


def num_parameters(theta: dict[str, np.ndarray]) -> int:
    return int(sum(v.size for v in theta.values()))

