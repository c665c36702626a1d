"""Benchmark languages: exact counts, uniform samplers, true log-probabilities,
PCFGs, cross-entropy difference, and dataset files.

Strings are tuples of symbol names.  EOS is never part of a string; models
score it as the extra vocabulary entry ``len(alphabet)``.
"""

from __future__ import annotations

import json
import math
from dataclasses import asdict, dataclass, field
from functools import lru_cache
from pathlib import Path
from typing import Sequence

import numpy as np

EOS = "EOS"
DEFAULT_WINDOW = (40, 80)
TEST_LENGTHS = (40, 100)


class EmptySupportError(ValueError):
    pass


# ---------------------------------------------------------------- languages

class Language:
    """Base class: subclasses define the alphabet, |L_l| and uniform sampling from L_l."""

    name = ""

    def __init__(self, k: int | None = None):
        self.k = k

    @property
    def alphabet(self) -> tuple[str, ...]:
        raise NotImplementedError

    def count(self, length: int) -> int:
        raise NotImplementedError

    def contains(self, w: Sequence[str]) -> bool:
        raise NotImplementedError

    def sample_of_length(self, length: int, rng: np.random.Generator) -> tuple[str, ...]:
        raise NotImplementedError

    def bits(self, m: int, rng, alphabet=("0", "1")) -> list[str]:
        return [alphabet[i] for i in rng.integers(0, len(alphabet), size=m)]

    def __repr__(self):
        return f"{type(self).__name__}(k={self.k})" if self.k is not None else f"{type(self).__name__}()"


class AnBnCn(Language):
    name = "anbncn"
    alphabet = ("a", "b", "c")

    def count(self, length):
        return 1 if length % 3 == 0 else 0

    def contains(self, w):
        n = len(w) // 3
        return len(w) % 3 == 0 and tuple(w) == ("a",) * n + ("b",) * n + ("c",) * n

    def sample_of_length(self, length, rng):
        n = length // 3
        return ("a",) * n + ("b",) * n + ("c",) * n


def _split_eq(w, parts):
    """Split ``w`` into consecutive pieces of the given sizes."""
    out, i = [], 0
    for p in parts:
        out.append(tuple(w[i:i + p]))
        i += p
    return out


class _BinaryCopy(Language):
    """Languages built from one free binary string w; ``layout(m)`` gives the string length."""

    alphabet = ("0", "1", "#")

    def free_length(self, length: int) -> int | None:
        raise NotImplementedError

    def build(self, w: list[str]) -> tuple[str, ...]:
        raise NotImplementedError

    def count(self, length):
        m = self.free_length(length)
        return 0 if m is None else 2 ** m

    def contains(self, w):
        m = self.free_length(len(w))
        if m is None or any(s not in self.alphabet for s in w):
            return False
        head = list(w[:m])
        return all(s in ("0", "1") for s in head) and self.build(head) == tuple(w)

    def sample_of_length(self, length, rng):
        m = self.free_length(length)
        return self.build(self.bits(m, rng))


class WHashWrHashW(_BinaryCopy):
    name = "w-hash-wr-hash-w"

    def free_length(self, length):
        return (length - 2) // 3 if length >= 2 and (length - 2) % 3 == 0 else None

    def build(self, w):
        return tuple(w + ["#"] + w[::-1] + ["#"] + w)


class WHashNW(_BinaryCopy):
    name = "w-hashn-w"

    def free_length(self, length):
        return length // 3 if length % 3 == 0 else None

    def build(self, w):
        return tuple(w + ["#"] * len(w) + w)


class WHashW(_BinaryCopy):
    name = "w-hash-w"

    def free_length(self, length):
        return (length - 1) // 2 if length % 2 == 1 else None

    def build(self, w):
        return tuple(w + ["#"] + w)


class WWPrime(_BinaryCopy):
    name = "w-wprime"
    alphabet = ("0", "1", "2", "3")

    def free_length(self, length):
        return length // 2 if length % 2 == 0 else None

    def build(self, w):
        return tuple(w + [{"0": "2", "1": "3"}[s] for s in w])


class WWrW(_BinaryCopy):
    name = "w-wr-w"
    alphabet = ("0", "1")

    def free_length(self, length):
        return length // 3 if length % 3 == 0 else None

    def build(self, w):
        return tuple(w + w[::-1] + w)


class WW(_BinaryCopy):
    name = "ww"
    alphabet = ("0", "1")

    def free_length(self, length):
        return length // 2 if length % 2 == 0 else None

    def build(self, w):
        return tuple(w + w)


class MarkedReverse(Language):
    """w # reverse(w) over k symbols."""

    name = "marked-reverse"

    def __init__(self, k=2):
        super().__init__(k)

    @property
    def alphabet(self):
        return tuple(str(i) for i in range(self.k)) + ("#",)

    def count(self, length):
        return self.k ** (length // 2) if length % 2 == 1 else 0

    def contains(self, w):
        m = len(w) // 2
        sym = set(self.alphabet[:-1])
        return (len(w) % 2 == 1 and w[m] == "#" and all(s in sym for s in w[:m])
                and tuple(w[m + 1:]) == tuple(w[:m])[::-1])

    def sample_of_length(self, length, rng):
        w = self.bits(length // 2, rng, self.alphabet[:-1])
        return tuple(w + ["#"] + w[::-1])


class UnmarkedReverse(Language):
    """w reverse(w) over k symbols."""

    name = "unmarked-reverse"

    def __init__(self, k=2):
        super().__init__(k)

    @property
    def alphabet(self):
        return tuple(str(i) for i in range(self.k))

    def count(self, length):
        return self.k ** (length // 2) if length % 2 == 0 else 0

    def contains(self, w):
        return len(w) % 2 == 0 and all(s in self.alphabet for s in w) and tuple(w) == tuple(w)[::-1]

    def sample_of_length(self, length, rng):
        w = self.bits(length // 2, rng, self.alphabet)
        return tuple(w + w[::-1])


class Dyck(Language):
    """Balanced strings over k bracket pairs ``(i``/``)i``."""

    name = "dyck"

    def __init__(self, k=2):
        super().__init__(k)
        self._table = _dyck_table(k)

    @property
    def alphabet(self):
        return tuple(f"({i}" for i in range(1, self.k + 1)) + tuple(f"){i}" for i in range(1, self.k + 1))

    def completions(self, remaining: int, depth: int) -> int:
        """Ways to write ``remaining`` more symbols that close all ``depth`` open brackets."""
        return self._table(remaining, depth)

    def count(self, length):
        return self.completions(length, 0)

    def contains(self, w):
        stack = []
        for s in w:
            if s not in self.alphabet:
                return False
            if s[0] == "(":
                stack.append(s[1:])
            elif not stack or stack.pop() != s[1:]:
                return False
        return not stack

    def sample_of_length(self, length, rng):
        if self.count(length) == 0:
            raise EmptySupportError(f"no dyck({self.k}) strings of length {length}")
        out, stack = [], []
        for pos in range(length):
            rest = length - pos - 1
            n_open = self.k * self.completions(rest, len(stack) + 1)
            n_close = self.completions(rest, len(stack) - 1) if stack else 0
            # exact integer weights: draw an integer uniformly below the total
            if _randbelow(rng, n_open + n_close) < n_open:
                b = str(int(rng.integers(1, self.k + 1)))
                stack.append(b)
                out.append("(" + b)
            else:
                out.append(")" + stack.pop())
        return tuple(out)


def _randbelow(rng: np.random.Generator, n: int) -> int:
    """Uniform integer in [0, n) for arbitrarily large Python ints."""
    if n < 2 ** 62:
        return int(rng.integers(0, n))
    nbytes = (n.bit_length() + 7) // 8 + 8
    return int.from_bytes(rng.bytes(nbytes), "little") % n  # bias below 2**-64


def _dyck_table(k):
    @lru_cache(maxsize=None)
    def f(remaining, depth):
        if depth < 0 or depth > remaining or (remaining - depth) % 2:
            return 0
        if remaining == 0:
            return 1
        return k * f(remaining - 1, depth + 1) + (f(remaining - 1, depth - 1) if depth > 0 else 0)

    return f


LANGUAGES = {cls.name: cls for cls in (AnBnCn, WHashWrHashW, WHashNW, WHashW, WWPrime, WWrW, WW,
                                       MarkedReverse, Dyck, UnmarkedReverse)}
ALIASES = {"w#wrw": "w-hash-wr-hash-w", "w#wr#w": "w-hash-wr-hash-w", "w#^nw": "w-hashn-w", "w#w": "w-hash-w",
           "ww'": "w-wprime", "wwrw": "w-wr-w", "w#wr": "marked-reverse", "wwr": "unmarked-reverse"}
PARAMETRIZED = {"marked-reverse", "dyck", "unmarked-reverse"}


def make_language(name: str, k: int | None = None) -> Language:
    name = ALIASES.get(name, name)
    if name not in LANGUAGES:
        raise KeyError(f"unknown language {name!r}; known: {sorted(LANGUAGES)}")
    cls = LANGUAGES[name]
    if name in PARAMETRIZED:
        return cls(2 if k is None else k)
    if k is not None:
        raise ValueError(f"language {name!r} takes no alphabet size")
    return cls()


# ---------------------------------------------------------------- PCFGs

class Pcfg:
    """Probabilistic CFG.  ``rules`` maps a nonterminal to (rhs, probability)
    pairs; rhs symbols that are keys of ``rules`` are nonterminals."""

    def __init__(self, rules: dict[str, list[tuple[tuple[str, ...], float]]], start: str, tol=1e-9):
        for lhs, alts in rules.items():
            total = sum(p for _, p in alts)
            if any(p < 0 for _, p in alts) or abs(total - 1) > tol:
                raise ValueError(f"improper PCFG: rules for {lhs!r} sum to {total}")
        if start not in rules:
            raise ValueError(f"start symbol {start!r} has no rules")
        self.rules = {a: [(tuple(r), float(p)) for r, p in alts] for a, alts in rules.items()}
        self.start = start
        self.nonterminals = list(self.rules)
        self.terminals = sorted({s for alts in self.rules.values() for r, _ in alts for s in r} - set(self.rules))
        self._length_cache: np.ndarray | None = None
        self._seq_cache: dict[int, dict] = {}
        self._choice_cache: dict[int, dict] = {}

    def is_nonterminal(self, s):
        return s in self.rules

    def _fixpoint(self, unit, multiply, tol, max_iter):
        """Least fixpoint of chart[A] = sum_r p_r * prod_{X in r} chart[X] by iteration."""
        zero = unit() * 0
        chart = {a: zero.copy() for a in self.nonterminals}
        for _ in range(max_iter):
            new = {}
            for a, alts in self.rules.items():
                acc = zero.copy()
                for rhs, p in alts:
                    acc = acc + p * multiply([chart[s] if s in chart else s for s in rhs])
                new[a] = acc
            delta = max(float(np.max(np.abs(new[a] - chart[a]) / np.maximum(np.abs(new[a]), 1e-300)))
                        for a in self.nonterminals)
            chart = new
            if delta <= tol:
                return chart
        raise FloatingPointError("PCFG inside iteration did not converge")

    def inside(self, w: Sequence[str], tol=1e-15) -> float:
        """log P(w): total probability of all derivations of ``w``."""
        n = len(w)
        eye = np.eye(n + 1)
        term = {}
        for a in set(w) | set(self.terminals):
            m = np.zeros((n + 1, n + 1))
            idx = [i for i, s in enumerate(w) if s == a]
            m[idx, [i + 1 for i in idx]] = 1.0
            term[a] = m

        def multiply(items):
            out = eye
            for x in items:
                out = out @ (term[x] if isinstance(x, str) else x)
            return out

        chart = self._fixpoint(lambda: eye, multiply, tol, max_iter=20 * (n + 1) + 2000)
        p = chart[self.start][0, n]
        return math.log(p) if p > 0 else -math.inf

    def length_probabilities(self, max_len: int, tol=1e-15) -> np.ndarray:
        """P(|w| = l) for l = 0..max_len."""
        if self._length_cache is not None and len(self._length_cache) > max_len:
            return self._length_cache[:max_len + 1]
        self._length_chart = self._length_fixpoint(max_len, tol)
        self._seq_cache.clear()
        self._choice_cache.clear()
        self._length_cache = self._length_chart[self.start]
        return self._length_cache

    def _length_fixpoint(self, max_len, tol):
        one = np.zeros(max_len + 1)
        one[0] = 1.0
        sym = np.zeros(max_len + 1)
        if max_len >= 1:
            sym[1] = 1.0

        def multiply(items):
            out = one
            for x in items:
                out = np.convolve(out, sym if isinstance(x, str) else x)[:max_len + 1]
            return out

        return self._fixpoint(lambda: one, multiply, tol, max_iter=20 * (max_len + 1) + 2000)

    def sample_of_length(self, length: int, rng: np.random.Generator) -> tuple[str, ...]:
        """Sample from the PCFG conditioned on the string having ``length`` symbols."""
        self.length_probabilities(length)
        chart = self._length_chart
        if chart[self.start][length] <= 0:
            raise EmptySupportError(f"PCFG generates no strings of length {length}")
        seqs = self._seq_cache.setdefault(length, {})
        choices = self._choice_cache.setdefault(length, {})

        def beta(x):
            if not self.is_nonterminal(x):
                v = np.zeros(length + 2)
                v[1] = 1.0
                return v[:length + 1]
            return chart[x][:length + 1]

        def seq(rhs):
            """Mass of rhs deriving exactly n symbols, for every n (by lengths only)."""
            if rhs not in seqs:
                v = np.zeros(length + 1)
                v[0] = 1.0
                for x in rhs:
                    v = np.convolve(v, beta(x))[:length + 1]
                seqs[rhs] = v
            return seqs[rhs]

        def choice(key, weights):
            if key not in choices:
                w = np.asarray(weights)
                choices[key] = w / w.sum()
            return choices[key]

        def expand(x, n, out):
            if not self.is_nonterminal(x):
                out.append(x)
                return
            alts = self.rules[x]
            p = choice((x, n), [q * seq(rhs)[n] for rhs, q in alts])
            rhs = alts[int(rng.choice(len(alts), p=p))][0]
            rest = n
            for i, y in enumerate(rhs):
                tail = rhs[i + 1:]
                if not tail:
                    expand(y, rest, out)
                    break
                b, st = beta(y), seq(tail)
                ws = choice((rhs, i, rest), [b[m] * st[rest - m] for m in range(rest + 1)])
                m = int(rng.choice(rest + 1, p=ws))
                expand(y, m, out)
                rest -= m

        out: list[str] = []
        expand(self.start, length, out)
        return tuple(out)


def language_pcfg(lang: Language, p: float = 0.5) -> Pcfg:
    """PCFG for the length-parametrized context-free tasks.

    Each nonterminal recurses with total probability ``p`` split evenly over
    the k symbol types and stops with probability 1 - p.
    """
    k = lang.k
    if isinstance(lang, Dyck):
        rec = [((f"({i}", "S", f"){i}", "S"), p / k) for i in range(1, k + 1)]
        return Pcfg({"S": rec + [((), 1 - p)]}, "S")
    if isinstance(lang, MarkedReverse):
        rec = [((str(i), "S", str(i)), p / k) for i in range(k)]
        return Pcfg({"S": rec + [(("#",), 1 - p)]}, "S")
    if isinstance(lang, UnmarkedReverse):
        rec = [((str(i), "S", str(i)), p / k) for i in range(k)]
        return Pcfg({"S": rec + [((), 1 - p)]}, "S")
    raise ValueError(f"no PCFG for {lang!r}")


# ---------------------------------------------------------------- distributions

@dataclass(frozen=True)
class LanguageSpec:
    language: str
    k: int | None = None
    window: tuple[int, int] = DEFAULT_WINDOW
    mode: str = "uniform"  # or "pcfg": length-conditioned PCFG sampling
    pcfg_p: float = 0.5

    def __post_init__(self):
        object.__setattr__(self, "language", ALIASES.get(self.language, self.language))
        object.__setattr__(self, "window", tuple(int(x) for x in self.window))
        if self.mode not in ("uniform", "pcfg"):
            raise ValueError(f"mode must be 'uniform' or 'pcfg', got {self.mode!r}")
        lo, hi = self.window
        if not 0 <= lo <= hi:
            raise ValueError(f"bad length window {self.window}")

    def with_window(self, window) -> "LanguageSpec":
        return LanguageSpec(self.language, self.k, tuple(window), self.mode, self.pcfg_p)

    def to_json(self) -> dict:
        return asdict(self)

    @classmethod
    def from_json(cls, d: dict) -> "LanguageSpec":
        return cls(**d)


class TrueDistribution:
    """Sample a length uniformly among the nonempty lengths in the window, then
    a string of that length (uniformly, or from the length-conditioned PCFG)."""

    def __init__(self, spec: LanguageSpec):
        self.spec = spec
        self.language = make_language(spec.language, spec.k)
        lo, hi = spec.window
        self.lengths = [n for n in range(lo, hi + 1) if self.language.count(n) > 0]
        self.pcfg = language_pcfg(self.language, spec.pcfg_p) if spec.mode == "pcfg" else None
        if self.pcfg is not None:
            self._len_probs = self.pcfg.length_probabilities(hi)

    @property
    def alphabet(self):
        return self.language.alphabet

    def sample(self, rng: np.random.Generator) -> tuple[str, ...]:
        if not self.lengths:
            raise EmptySupportError(f"{self.spec.language} has no strings with length in {self.spec.window}")
        n = self.lengths[int(rng.integers(0, len(self.lengths)))]
        return self.sample_of_length(n, rng)

    def sample_of_length(self, n: int, rng) -> tuple[str, ...]:
        if self.pcfg is not None:
            return self.pcfg.sample_of_length(n, rng)
        return self.language.sample_of_length(n, rng)

    def log_prob(self, w: Sequence[str]) -> float:
        w = tuple(w)
        n = len(w)
        if n not in self.lengths or not self.language.contains(w):
            return -math.inf
        head = -math.log(len(self.lengths))
        if self.pcfg is not None:
            return head + self.pcfg.inside(w) - math.log(self._len_probs[n])
        return head - _log_int(self.language.count(n))


def _log_int(n: int) -> float:
    """log of a possibly huge positive integer without float overflow."""
    if n < 2 ** 1000:
        return math.log(n)
    shift = n.bit_length() - 60
    return math.log(n >> shift) + shift * math.log(2)


def count_strings(spec_or_lang, length: int) -> int:
    lang = spec_or_lang if isinstance(spec_or_lang, Language) else make_language(spec_or_lang.language,
                                                                                  spec_or_lang.k)
    return lang.count(length)


def log_true_prob(spec: LanguageSpec, w: Sequence[str]) -> float:
    return TrueDistribution(spec).log_prob(w)


def cross_entropy(log_probs: Sequence[float], lengths: Sequence[int]) -> float:
    """Nats per symbol with EOS counted: -sum log p / sum (|w| + 1)."""
    return -float(np.sum(log_probs)) / float(np.sum(np.asarray(lengths) + 1))


def cross_entropy_diff(model_log_probs: Sequence[float], true_log_probs: Sequence[float],
                       lengths: Sequence[int]) -> float:
    """H(S, p_model) - H(S, p_true) in nats per symbol."""
    denom = float(np.sum(np.asarray(lengths) + 1))
    return float(np.sum(true_log_probs) - np.sum(model_log_probs)) / denom


# ---------------------------------------------------------------- datasets

@dataclass
class Dataset:
    strings: list[tuple[str, ...]]
    log_probs: list[float]
    spec: LanguageSpec
    seed: int
    split: str = "train"
    meta: dict = field(default_factory=dict)

    def __len__(self):
        return len(self.strings)

    @property
    def lengths(self):
        return [len(w) for w in self.strings]


def sample_dataset(spec: LanguageSpec, n: int, rng: np.random.Generator, seed: int, split="train") -> Dataset:
    dist = TrueDistribution(spec)
    strings = [dist.sample(rng) for _ in range(n)]
    return Dataset(strings, [dist.log_prob(w) for w in strings], spec, seed, split)


def sample_test_set(spec: LanguageSpec, rng: np.random.Generator, seed: int, lengths=TEST_LENGTHS,
                    per_length=100) -> Dataset:
    """``per_length`` strings for each nonempty length, scored under the test-length distribution."""
    test_spec = spec.with_window(lengths)
    dist = TrueDistribution(test_spec)
    strings = [dist.sample_of_length(n, rng) for n in dist.lengths for _ in range(per_length)]
    return Dataset(strings, [dist.log_prob(w) for w in strings], test_spec, seed, "test")


def make_splits(spec: LanguageSpec, seed: int, n_train=10000, n_valid=1000, test_lengths=TEST_LENGTHS,
                per_length=100) -> dict[str, Dataset]:
    """Train/validation/test sets from independent child streams of one seed."""
    rngs = [np.random.default_rng(s) for s in np.random.SeedSequence(seed).spawn(3)]
    return {
        "train": sample_dataset(spec, n_train, rngs[0], seed, "train"),
        "valid": sample_dataset(spec, n_valid, rngs[1], seed, "valid"),
        "test": sample_test_set(spec, rngs[2], seed, test_lengths, per_length),
    }


def write_dataset(path: str | Path, data: Dataset) -> None:
    """One string per line after a JSON header; true log-probs go to ``<path>.logp``."""
    path = Path(path)
    header = {"spec": data.spec.to_json(), "seed": data.seed, "split": data.split, **data.meta}
    with open(path, "w", encoding="utf-8") as f:
        f.write(json.dumps(header, sort_keys=True) + "\n")
        for w in data.strings:
            f.write(" ".join(w) + "\n")
    with open(str(path) + ".logp", "w", encoding="utf-8") as f:
        for lp in data.log_probs:
            f.write(f"{lp:.17g}\n")


def read_dataset(path: str | Path) -> Dataset:
    path = Path(path)
    with open(path, encoding="utf-8") as f:
        header = json.loads(f.readline())
        strings = [tuple(line.split()) for line in f.read().splitlines()]
    logp_path = Path(str(path) + ".logp")
    if logp_path.exists():
        log_probs = [float(x) for x in logp_path.read_text().split()]
    else:
        dist = TrueDistribution(LanguageSpec.from_json(header["spec"]))
        log_probs = [dist.log_prob(w) for w in strings]
    if len(log_probs) != len(strings):
        raise ValueError(f"{logp_path}: {len(log_probs)} log-probs for {len(strings)} strings")
    spec = LanguageSpec.from_json(header.pop("spec"))
    seed, split = header.pop("seed"), header.pop("split", "train")
    return Dataset(strings, log_probs, spec, seed, split, header)
