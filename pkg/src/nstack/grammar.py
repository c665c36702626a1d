"""Context-free grammars, their conversion to real-time restricted PDAs, and
exact run counting.

Pipeline: text -> :class:`Grammar` -> CNF -> GNF -> 2-GNF ->
:class:`RestrictedPda` (composite stack symbols, trap state) -> exact
integer run counts.  CYK and bounded language enumeration serve as
independent membership oracles.
"""

from __future__ import annotations

import itertools
import re
from collections import defaultdict
from dataclasses import dataclass, field
from typing import Iterable, Iterator, Sequence

import numpy as np

BOTTOM = "⊥"
EPSILON = "ε"


class GrammarError(ValueError):
    pass


@dataclass(frozen=True)
class Grammar:
    """Rules are (lhs, rhs) with rhs a tuple of symbol names; a name is a
    terminal iff it is in ``terminals``."""

    nonterminals: frozenset[str]
    terminals: frozenset[str]
    rules: tuple[tuple[str, tuple[str, ...]], ...]
    start: str

    def __post_init__(self):
        clash = self.nonterminals & self.terminals
        if clash:
            raise GrammarError(f"symbols used as both terminal and nonterminal: {sorted(clash)}")
        if self.start not in self.nonterminals:
            raise GrammarError(f"start symbol {self.start!r} is not a nonterminal")
        known = self.nonterminals | self.terminals
        for lhs, rhs in self.rules:
            if lhs not in self.nonterminals:
                raise GrammarError(f"rule left side {lhs!r} is not a nonterminal")
            for s in rhs:
                if s not in known:
                    raise GrammarError(f"rule {lhs} -> {' '.join(rhs)} uses undeclared symbol {s!r}")

    def is_terminal(self, s: str) -> bool:
        return s in self.terminals

    def by_lhs(self) -> dict[str, list[tuple[str, ...]]]:
        out: dict[str, list[tuple[str, ...]]] = {a: [] for a in sorted(self.nonterminals)}
        for lhs, rhs in self.rules:
            out[lhs].append(rhs)
        return out

    def __str__(self):
        def sym(s):
            return repr(s) if s in self.terminals else s

        lines = []
        for lhs, bodies in self.by_lhs().items():
            if bodies:
                alts = " | ".join(" ".join(sym(s) for s in b) if b else EPSILON for b in bodies)
                lines.append(f"{lhs} -> {alts}")
        start_first = sorted(lines, key=lambda ln: not ln.startswith(self.start + " "))
        return "\n".join(start_first)


def _make(rules: Iterable[tuple[str, tuple[str, ...]]], start: str, terminals) -> Grammar:
    rules = tuple(dict.fromkeys((lhs, tuple(rhs)) for lhs, rhs in rules))
    nts = {start} | {lhs for lhs, _ in rules}
    nts |= {s for _, rhs in rules for s in rhs if s not in terminals}
    return Grammar(frozenset(nts), frozenset(terminals), rules, start)


_TOKEN = re.compile(r"\s*(?:'([^']*)'|\"([^\"]*)\"|(\|)|([^\s|'\"]+))")
_NAME = re.compile(r"[A-Za-z_][A-Za-z0-9_']*$")


def parse_grammar(text: str) -> Grammar:
    """Parse ``LHS -> rhs | alt`` lines.

    Terminals are quoted ('a' or "a"), bare names are nonterminals, an empty
    alternative or ``ε`` denotes the empty string, ``#`` starts a comment.
    The first rule's left side is the start symbol.
    """
    rules, terminals, start = [], set(), None
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = _strip_comment(raw)
        if not line.strip():
            continue
        if "->" not in line:
            raise GrammarError(f"line {lineno}: expected 'LHS -> rhs'")
        lhs, rhs_text = line.split("->", 1)
        lhs = lhs.strip()
        if not _NAME.match(lhs):
            raise GrammarError(f"line {lineno}: bad nonterminal name {lhs!r}")
        start = start or lhs
        alt: list[str] = []
        pos = 0
        rhs_text = rhs_text.rstrip()
        while pos < len(rhs_text):
            m = _TOKEN.match(rhs_text, pos)
            if not m or m.end() == pos:
                raise GrammarError(f"line {lineno}: cannot parse {rhs_text[pos:]!r}")
            pos = m.end()
            quoted = m.group(1) if m.group(1) is not None else m.group(2)
            if quoted is not None:
                if not quoted or any(c.isspace() for c in quoted):
                    raise GrammarError(f"line {lineno}: terminals must be nonempty and contain no whitespace")
                terminals.add(quoted)
                alt.append(quoted)
            elif m.group(3):
                rules.append((lhs, tuple(alt)))
                alt = []
            elif m.group(4) == EPSILON:
                continue
            else:
                name = m.group(4)
                if not _NAME.match(name):
                    raise GrammarError(f"line {lineno}: bad nonterminal name {name!r} (quote terminals)")
                alt.append(name)
        rules.append((lhs, tuple(alt)))
    if start is None:
        raise GrammarError("grammar has no rules")
    return _make(rules, start, terminals)


def _strip_comment(line: str) -> str:
    out, quote = [], None
    for c in line:
        if quote:
            if c == quote:
                quote = None
        elif c in "'\"":
            quote = c
        elif c == "#":
            break
        out.append(c)
    return "".join(out)


# ---------------------------------------------------------------- analysis

def nullable(g: Grammar) -> set[str]:
    out: set[str] = set()
    changed = True
    while changed:
        changed = False
        for lhs, rhs in g.rules:
            if lhs not in out and all(s in out for s in rhs):
                out.add(lhs)
                changed = True
    return out


def remove_useless(g: Grammar) -> Grammar:
    """Drop nonterminals that derive no terminal string or are unreachable from the start."""
    gen: set[str] = set()
    changed = True
    while changed:
        changed = False
        for lhs, rhs in g.rules:
            if lhs not in gen and all(s in gen or g.is_terminal(s) for s in rhs):
                gen.add(lhs)
                changed = True
    rules = [(lhs, rhs) for lhs, rhs in g.rules if lhs in gen and all(s in gen or g.is_terminal(s) for s in rhs)]
    reach, todo = {g.start}, [g.start]
    while todo:
        a = todo.pop()
        for lhs, rhs in rules:
            if lhs == a:
                for s in rhs:
                    if not g.is_terminal(s) and s not in reach:
                        reach.add(s)
                        todo.append(s)
    return _make([(lhs, rhs) for lhs, rhs in rules if lhs in reach], g.start, g.terminals)


class _Fresh:
    def __init__(self, g: Grammar):
        self.used = set(g.nonterminals) | set(g.terminals)
        self.n = 0

    def __call__(self, stem: str) -> str:
        while True:
            name = f"_{stem}{self.n}"
            self.n += 1
            if name not in self.used:
                self.used.add(name)
                return name


def _remove_epsilon(g: Grammar) -> tuple[Grammar, bool]:
    null = nullable(g)
    rules = set()
    for lhs, rhs in g.rules:
        options = [((s,), ()) if s in null else ((s,),) for s in rhs]
        for combo in itertools.product(*options):
            body = tuple(s for part in combo for s in part)
            if body:
                rules.add((lhs, body))
    return _make(sorted(rules), g.start, g.terminals), g.start in null


def _remove_units(g: Grammar) -> Grammar:
    unit = {a: {a} for a in g.nonterminals}
    changed = True
    while changed:
        changed = False
        for lhs, rhs in g.rules:
            if len(rhs) == 1 and not g.is_terminal(rhs[0]):
                for a, reach in unit.items():
                    if lhs in reach and rhs[0] not in reach:
                        reach.add(rhs[0])
                        changed = True
    rules = []
    for a, reach in unit.items():
        for lhs, rhs in g.rules:
            if lhs in reach and not (len(rhs) == 1 and not g.is_terminal(rhs[0])):
                rules.append((a, rhs))
    return _make(sorted(set(rules)), g.start, g.terminals)


@dataclass(frozen=True)
class NormalForm:
    """A grammar without ε-rules plus a flag saying whether ε was in the language."""

    grammar: Grammar | None
    accepts_empty: bool


def to_cnf(g: Grammar) -> NormalForm:
    """Chomsky normal form: every rule is A -> B C or A -> a.

    ``grammar`` is None when the language is empty or {ε}.
    """
    fresh = _Fresh(g)
    s0 = fresh("S")
    g = _make(list(g.rules) + [(s0, (g.start,))], s0, g.terminals)
    g, eps = _remove_epsilon(g)
    g = remove_useless(_remove_units(g))
    if not g.rules:
        return NormalForm(None, eps)
    term_nt: dict[str, str] = {}
    rules = []
    for lhs, rhs in g.rules:
        if len(rhs) == 1:
            rules.append((lhs, rhs))
            continue
        body = []
        for s in rhs:
            if g.is_terminal(s):
                if s not in term_nt:
                    term_nt[s] = fresh("T")
                    rules.append((term_nt[s], (s,)))
                s = term_nt[s]
            body.append(s)
        while len(body) > 2:
            x = fresh("X")
            rules.append((x, tuple(body[-2:])))
            body = body[:-2] + [x]
        rules.append((lhs, tuple(body)))
    return NormalForm(_make(rules, s0, g.terminals), eps)


def _first_nt_order(rules: dict[str, list[tuple[str, ...]]], terminals) -> list[str]:
    """Nonterminals ordered so that any A -> B ... has B later than A."""
    edges = {a: {b[0] for b in bodies if b[0] not in terminals} for a, bodies in rules.items()}
    order, state = [], {}

    def visit(a):
        state[a] = 1
        for b in edges.get(a, ()):
            if state.get(b) == 1:
                raise GrammarError("left recursion survived GNF conversion")
            if b not in state:
                visit(b)
        state[a] = 2
        order.append(a)

    for a in sorted(rules):
        if a not in state:
            visit(a)
    return order[::-1]


def to_gnf(cnf: Grammar) -> Grammar:
    """Greibach normal form of an ε-free CNF grammar: every rule is A -> a B1 ... Bm.

    Orders nonterminals, substitutes lower-ordered leading nonterminals,
    removes immediate left recursion with fresh Z nonterminals, then
    back-substitutes until every body starts with a terminal.
    """
    fresh = _Fresh(cnf)
    T = cnf.terminals
    rules = {a: list(dict.fromkeys(b)) for a, b in cnf.by_lhs().items()}
    order = [cnf.start] + sorted(a for a in rules if a != cnf.start)
    rank = {a: i for i, a in enumerate(order)}
    for i, ai in enumerate(order):
        changed = True
        while changed:
            changed = False
            new = []
            for body in rules[ai]:
                head = body[0]
                if head not in T and head in rank and rank[head] < i:
                    new.extend(d + body[1:] for d in rules[head])
                    changed = True
                else:
                    new.append(body)
            rules[ai] = list(dict.fromkeys(new))
        rec = [b[1:] for b in rules[ai] if b[0] == ai]
        if rec:
            base = [b for b in rules[ai] if b[0] != ai]
            z = fresh("Z")
            rules[ai] = base + [b + (z,) for b in base]
            rules[z] = rec + [b + (z,) for b in rec]
    for a in reversed(_first_nt_order(rules, T)):
        new = []
        for body in rules[a]:
            if body[0] in T:
                new.append(body)
            else:
                new.extend(d + body[1:] for d in rules[body[0]])
        rules[a] = list(dict.fromkeys(new))
    return remove_useless(_make([(a, b) for a, bodies in rules.items() for b in bodies], cnf.start, T))


def to_two_gnf(g: Grammar) -> Grammar:
    """Equivalent grammar whose rules are S -> ε, A -> a or A -> a b B1 ... Bp,
    with the start symbol on no right-hand side."""
    nf = to_cnf(g)
    start = nf.grammar.start if nf.grammar is not None else _Fresh(g)("S")
    rules = []
    if nf.grammar is not None:
        gnf = to_gnf(nf.grammar)
        start = gnf.start
        by = gnf.by_lhs()
        for lhs, rhs in gnf.rules:
            if len(rhs) == 1:
                rules.append((lhs, rhs))
            else:
                rules.extend((lhs, rhs[:1] + d + rhs[2:]) for d in by[rhs[1]])
    if nf.accepts_empty:
        rules.append((start, ()))
    out = remove_useless(_make(rules, start, g.terminals)) if rules else _make([], start, g.terminals)
    return out


def is_two_gnf(g: Grammar) -> bool:
    for lhs, rhs in g.rules:
        if any(s == g.start for s in rhs):
            return False
        if not rhs:
            if lhs != g.start:
                return False
        elif len(rhs) == 1:
            if not g.is_terminal(rhs[0]):
                return False
        elif not (g.is_terminal(rhs[0]) and g.is_terminal(rhs[1])
                  and all(not g.is_terminal(s) for s in rhs[2:])):
            return False
    return True


# ---------------------------------------------------------------- oracles

def tokenize(w: str | Sequence[str], terminals: Iterable[str]) -> tuple[str, ...]:
    """Split ``w`` into terminals: whitespace-separated if it contains spaces
    or any terminal is longer than one character, else per character."""
    if not isinstance(w, str):
        return tuple(w)
    terminals = set(terminals)
    if " " in w.strip() or any(len(a) > 1 for a in terminals):
        return tuple(w.split())
    return tuple(w)


def cyk(g: Grammar | NormalForm, w: str | Sequence[str]) -> bool:
    """CYK membership test on the grammar's internal CNF."""
    nf = g if isinstance(g, NormalForm) else to_cnf(g)
    src = nf.grammar
    w = tokenize(w, src.terminals if src else ())
    n = len(w)
    if n == 0:
        return nf.accepts_empty
    if src is None:
        return False
    lex = defaultdict(set)
    binary = []
    for lhs, rhs in src.rules:
        if len(rhs) == 1:
            lex[rhs[0]].add(lhs)
        else:
            binary.append((lhs, rhs[0], rhs[1]))
    table = [[set() for _ in range(n + 1)] for _ in range(n)]
    for i, a in enumerate(w):
        table[i][1] = set(lex.get(a, ()))
    for span in range(2, n + 1):
        for i in range(n - span + 1):
            cell = table[i][span]
            for k in range(1, span):
                left, right = table[i][k], table[i + k][span - k]
                if left and right:
                    for lhs, b, c in binary:
                        if b in left and c in right:
                            cell.add(lhs)
    return src.start in table[0][n]


def enumerate_language(g: Grammar, max_len: int) -> set[tuple[str, ...]]:
    """All strings of length <= ``max_len`` derivable from the start symbol.

    Direct fixpoint over derivations with length-bounded string sets; works
    on any grammar shape, including ε-rules and unit cycles.
    """
    lang: dict[str, set[tuple[str, ...]]] = {a: set() for a in g.nonterminals}
    changed = True
    while changed:
        changed = False
        for lhs, rhs in g.rules:
            acc = {()}
            for s in rhs:
                parts = {(s,)} if g.is_terminal(s) else lang[s]
                acc = {x + y for x in acc for y in parts if len(x) + len(y) <= max_len}
                if not acc:
                    break
            new = acc - lang[lhs]
            if new:
                lang[lhs] |= new
                changed = True
    return lang[g.start]


# ---------------------------------------------------------------- automata

PUSH, REPLACE, POP = "push", "replace", "pop"


@dataclass(frozen=True)
class Transition:
    """``source, top --symbol--> target`` with stack effect ``kind``.

    push keeps ``top`` and puts ``pushed`` above it, replace swaps ``top``
    for ``pushed``, pop removes ``top`` (``pushed`` is None).
    """

    kind: str
    source: str
    symbol: str
    top: str
    target: str
    pushed: str | None = None

    def __post_init__(self):
        if self.kind not in (PUSH, REPLACE, POP):
            raise ValueError(f"unknown transition kind {self.kind!r}")
        if (self.kind == POP) != (self.pushed is None):
            raise ValueError(f"{self.kind} transition has pushed={self.pushed!r}")


@dataclass(frozen=True)
class RestrictedPda:
    """Real-time PDA whose transitions all scan one symbol and are push, replace or pop.

    Acceptance: end in a state of ``accept`` with only the bottom symbol on
    the stack.  ``states[0]`` is the start state and ``stack_alphabet[0]``
    the bottom symbol.
    """

    states: tuple[str, ...]
    input_alphabet: tuple[str, ...]
    stack_alphabet: tuple[str, ...]
    transitions: tuple[Transition, ...]
    accept: frozenset[str]
    trap: str | None = None

    def __post_init__(self):
        Q, S, G = set(self.states), set(self.input_alphabet), set(self.stack_alphabet)
        if len(Q) != len(self.states) or len(G) != len(self.stack_alphabet) or len(S) != len(self.input_alphabet):
            raise ValueError("duplicate names in PDA alphabets")
        if not self.accept <= Q:
            raise ValueError(f"accept states {sorted(self.accept - Q)} are not states")
        for tr in self.transitions:
            if tr.source not in Q or tr.target not in Q:
                raise ValueError(f"transition {tr} uses an undeclared state")
            if tr.symbol not in S:
                raise ValueError(f"transition {tr} scans an undeclared symbol")
            if tr.top not in G or (tr.pushed is not None and tr.pushed not in G):
                raise ValueError(f"transition {tr} uses an undeclared stack symbol")
            if tr.kind == POP and tr.top == self.bottom:
                raise ValueError("the bottom symbol cannot be popped")

    @property
    def start(self) -> str:
        return self.states[0]

    @property
    def bottom(self) -> str:
        return self.stack_alphabet[0]

    @property
    def max_choices(self) -> int:
        """b = |Q|(2|Γ| + 1), an upper bound on transitions out of one configuration."""
        return len(self.states) * (2 * len(self.stack_alphabet) + 1)

    def with_trap(self, name="trap") -> "RestrictedPda":
        """Add a non-accepting state that every string can reach with the bottom on top."""
        if self.trap is not None:
            return self
        while name in self.states:
            name += "'"
        bot = self.bottom
        extra = [Transition(REPLACE, self.start, a, bot, name, bot) for a in self.input_alphabet]
        extra += [Transition(REPLACE, name, a, bot, name, bot) for a in self.input_alphabet]
        return RestrictedPda(self.states + (name,), self.input_alphabet, self.stack_alphabet,
                             self.transitions + tuple(extra), self.accept, name)

    def to_weights(self, w: Sequence[str]) -> list[tuple[np.ndarray, np.ndarray, np.ndarray]]:
        """Dense 0/1 (push, replace, pop) weights for each symbol of ``w``."""
        qi = {q: i for i, q in enumerate(self.states)}
        gi = {x: i for i, x in enumerate(self.stack_alphabet)}
        Q, G = len(qi), len(gi)
        out = []
        for a in w:
            if a not in self.input_alphabet:
                raise ValueError(f"symbol {a!r} is not in the input alphabet")
            push, repl, pop = np.zeros((Q, G, Q, G)), np.zeros((Q, G, Q, G)), np.zeros((Q, G, Q))
            for tr in self.transitions:
                if tr.symbol != a:
                    continue
                q, x, r = qi[tr.source], gi[tr.top], qi[tr.target]
                if tr.kind == PUSH:
                    push[q, x, r, gi[tr.pushed]] = 1
                elif tr.kind == REPLACE:
                    repl[q, x, r, gi[tr.pushed]] = 1
                else:
                    pop[q, x, r] = 1
            out.append((push, repl, pop))
        return out


def _reachable_states(pda: RestrictedPda, targets: frozenset[str]) -> set[str]:
    """States with a path (ignoring the stack) to some state in ``targets``."""
    back = defaultdict(set)
    for tr in pda.transitions:
        back[tr.target].add(tr.source)
    seen, todo = set(targets), list(targets)
    while todo:
        for p in back[todo.pop()]:
            if p not in seen:
                seen.add(p)
                todo.append(p)
    return seen


def compile_two_gnf(g: Grammar) -> RestrictedPda:
    """Restricted PDA (without trap state) accepting the language of a 2-GNF grammar.

    Stack symbols other than the bottom stand for strings of nonterminals,
    written ``A+B`` with the rightmost nonterminal on top.
    """
    if not is_two_gnf(g):
        raise GrammarError("grammar is not in 2-GNF")
    q0, loop = "q0", "loop"
    states = [q0, loop]
    # almost-restricted transitions: (kind, q, a, x, r, payload) with push payload a tuple
    almost = []
    counter = itertools.count()
    for lhs, rhs in g.rules:
        if not rhs:
            continue
        if len(rhs) == 1:
            almost.append((POP, loop, rhs[0], lhs, loop, None))
            continue
        q = f"r{next(counter)}"
        states.append(q)
        a, b, tail = rhs[0], rhs[1], rhs[2:]
        if not tail:
            almost.append((REPLACE, loop, a, lhs, q, lhs))
            almost.append((POP, q, b, lhs, loop, None))
        else:
            last = tail[-1]
            almost.append((REPLACE, loop, a, lhs, q, last))
            beta = tuple(reversed(tail[:-1]))
            if beta:
                almost.append((PUSH, q, b, last, loop, beta))
            else:
                almost.append((REPLACE, q, b, last, loop, last))
    for kind, q, a, x, r, payload in list(almost):
        if q == loop and x == g.start:
            if kind == POP:
                almost.append((REPLACE, q0, a, BOTTOM, r, BOTTOM))
            elif kind == REPLACE:
                almost.append((PUSH, q0, a, BOTTOM, r, (payload,)))
            else:
                almost.append((PUSH, q0, a, BOTTOM, r, (x,) + payload))
    by_top = defaultdict(list)
    for t in almost:
        by_top[t[3]].append(t)

    def name(c: tuple[str, ...]) -> str:
        return "+".join(c)

    transitions, symbols = [], {BOTTOM: None}
    todo: list[tuple[str, ...]] = []

    def see(c: tuple[str, ...]) -> str:
        n = name(c)
        if n not in symbols:
            symbols[n] = c
            todo.append(c)
        return n

    for kind, q, a, x, r, payload in by_top[BOTTOM]:
        if kind == PUSH:
            transitions.append(Transition(PUSH, q, a, BOTTOM, r, see(payload)))
        else:
            transitions.append(Transition(REPLACE, q, a, BOTTOM, r, BOTTOM))
    while todo:
        c = todo.pop()
        cn = name(c)
        for kind, q, a, x, r, payload in by_top[c[-1]]:
            if kind == PUSH:
                transitions.append(Transition(PUSH, q, a, cn, r, see(payload)))
            elif kind == REPLACE:
                transitions.append(Transition(REPLACE, q, a, cn, r, see(c[:-1] + (payload,))))
            elif len(c) > 1:
                transitions.append(Transition(REPLACE, q, a, cn, r, see(c[:-1])))
            else:
                transitions.append(Transition(POP, q, a, cn, r))
    accept = {loop} | ({q0} if (g.start, ()) in g.rules else set())
    stack = [BOTTOM] + sorted(s for s in symbols if s != BOTTOM)
    return RestrictedPda(tuple(states), tuple(sorted(g.terminals)), tuple(stack),
                         tuple(dict.fromkeys(transitions)), frozenset(accept))


def composite_length(pda: RestrictedPda) -> int:
    """Longest string of original stack symbols packed into one composite symbol."""
    return max((len(x.split("+")) for x in pda.stack_alphabet[1:]), default=0)


def compile_grammar(g: Grammar, trap=True) -> RestrictedPda:
    pda = compile_two_gnf(to_two_gnf(g))
    return pda.with_trap() if trap else pda


# ---------------------------------------------------------------- counting

class RunCounter:
    """Exact forward run counts over a growing input prefix.

    Runs the inner/forward weight recurrence with 0/1 transition weights in
    Python integers, kept sparse.  ``step`` appends one symbol, ``undo``
    removes the last one, so a depth-first walk over a trie of strings
    shares prefix work.
    """

    def __init__(self, pda: RestrictedPda):
        self.pda = pda
        qi = {q: i for i, q in enumerate(pda.states)}
        gi = {x: i for i, x in enumerate(pda.stack_alphabet)}
        self.push = {a: defaultdict(list) for a in pda.input_alphabet}
        self.repl = {a: defaultdict(list) for a in pda.input_alphabet}
        self.pop = {a: defaultdict(list) for a in pda.input_alphabet}
        for tr in pda.transitions:
            key = (qi[tr.source], gi[tr.top])
            if tr.kind == PUSH:
                self.push[tr.symbol][key].append((qi[tr.target], gi[tr.pushed]))
            elif tr.kind == REPLACE:
                self.repl[tr.symbol][key].append((qi[tr.target], gi[tr.pushed]))
            else:
                self.pop[tr.symbol][key].append(qi[tr.target])
        self.state_index = qi
        start = (0, 0)
        self.gammas: list[list[dict]] = [[{start: {start: 1}}]]
        self.alphas: list[dict] = [{start: 1}, {start: 1}]
        self.word: list[str] = []

    def __len__(self):
        return len(self.word)

    def step(self, a: str) -> None:
        if a not in self.push:
            raise ValueError(f"symbol {a!r} is not in the input alphabet")
        t = len(self.word) + 1
        push, repl, pop = self.push[a], self.repl[a], self.pop[a]
        prev = self.gammas[t - 1]
        # gp[k][(u, y)][r]: weight of a segment k -> t-1 followed by a pop at t
        gp = {}
        for k in range(0, t - 1):
            acc = defaultdict(lambda: defaultdict(int))
            for uy, row in prev[k + 1].items():
                for sz, c in row.items():
                    for r in pop.get(sz, ()):
                        acc[uy][r] += c
            gp[k] = acc
        col = []
        for j in range(t):  # i = j - 1 ranges over -1 .. t-2
            d = defaultdict(lambda: defaultdict(int))
            for qx, row in prev[j].items():
                for sz, c in row.items():
                    for ry in repl.get(sz, ()):
                        d[qx][ry] += c
            for k in range(j, t - 1):  # i+1 <= k <= t-2
                g_k = gp[k]
                if not g_k:
                    continue
                for qx, row in self.gammas[k][j].items():
                    for (u, y), c in row.items():
                        for r, c2 in g_k.get((u, y), {}).items():
                            d[qx][(r, y)] += c * c2
            col.append({qx: dict(row) for qx, row in d.items() if row})
        alpha_prev = self.alphas[t]
        col.append({qx: {ry: 1 for ry in push[qx]} for qx in alpha_prev if qx in push})
        alpha = defaultdict(int)
        for j, slot in enumerate(col):
            a_i = self.alphas[j]
            for qx, row in slot.items():
                w = a_i.get(qx)
                if w:
                    for ry, c in row.items():
                        alpha[ry] += w * c
        self.gammas.append(col)
        self.alphas.append({k: v for k, v in alpha.items() if v})
        self.word.append(a)

    def undo(self) -> None:
        self.gammas.pop()
        self.alphas.pop()
        self.word.pop()

    @property
    def forward(self) -> dict[tuple[int, int], int]:
        """Run counts by (state index, top symbol index) for the current prefix."""
        return self.alphas[-1]

    def total_runs(self) -> int:
        return sum(self.forward.values())

    def count(self, states: Iterable[str] | None = None) -> int:
        """ct(w, X): runs ending in a state of ``states`` with the bottom on top (all states if None)."""
        if states is None:
            return sum(c for (r, y), c in self.forward.items() if y == 0)
        idx = {self.state_index[q] for q in states}
        return sum(c for (r, y), c in self.forward.items() if y == 0 and r in idx)

    def live_states(self) -> set[str]:
        return {self.pda.states[r] for (r, _y) in self.forward}


def count_accepting_runs(pda: RestrictedPda, w: Sequence[str], states: Iterable[str] | None = None) -> int:
    """Number of runs reading ``w`` that end in ``states`` (default: accept states) with the bottom on top."""
    rc = RunCounter(pda)
    for a in tokenize(w, pda.input_alphabet):
        rc.step(a)
    return rc.count(pda.accept if states is None else states)


def recognize(pda: RestrictedPda, w: str | Sequence[str]) -> bool:
    return count_accepting_runs(pda, w) >= 1


@dataclass(frozen=True)
class UnionPda:
    """Union of PDAs sharing one merged start state; ``accept_sets[i]`` are the
    accept states contributed by the i-th machine."""

    pda: RestrictedPda
    accept_sets: tuple[frozenset[str], ...]


def union_pda(pdas: Sequence[RestrictedPda]) -> UnionPda:
    if not pdas:
        raise ValueError("need at least one PDA")
    sigma = pdas[0].input_alphabet
    for p in pdas[1:]:
        if set(p.input_alphabet) != set(sigma):
            raise ValueError(f"input alphabets differ: {sorted(sigma)} vs {sorted(p.input_alphabet)}")
    for i, p in enumerate(pdas):
        if any(tr.target == p.start for tr in p.transitions):
            raise ValueError(f"PDA {i} has transitions into its start state")
    s = "s"
    states, stack, transitions, accept_sets = [s], [BOTTOM], [], []
    for i, p in enumerate(pdas):
        ren = {q: (s if q == p.start else f"{i + 1}:{q}") for q in p.states}
        sym = {x: (BOTTOM if x == p.bottom else f"{i + 1}:{x}") for x in p.stack_alphabet}
        states += [ren[q] for q in p.states if q != p.start]
        stack += [sym[x] for x in p.stack_alphabet[1:]]
        for tr in p.transitions:
            transitions.append(Transition(tr.kind, ren[tr.source], tr.symbol, sym[tr.top], ren[tr.target],
                                          None if tr.pushed is None else sym[tr.pushed]))
        accept_sets.append(frozenset(ren[q] for q in p.accept))
    accept = frozenset().union(*accept_sets) if all(s in a for a in accept_sets) \
        else frozenset().union(*accept_sets) - {s}
    pda = RestrictedPda(tuple(states), tuple(sigma), tuple(stack), tuple(transitions), accept)
    return UnionPda(pda, tuple(accept_sets))


def recognize_intersection(pdas: Sequence[RestrictedPda], w: str | Sequence[str]) -> bool:
    """Accept iff the union machine has a run into every machine's accept set."""
    u = union_pda([p.with_trap() for p in pdas])
    rc = RunCounter(u.pda)
    for a in tokenize(w, u.pda.input_alphabet):
        rc.step(a)
    return all(rc.count(f) >= 1 for f in u.accept_sets)


def decide_all(pda: RestrictedPda, accept_sets: Sequence[Iterable[str]], max_len: int,
               prune=True) -> Iterator[tuple[tuple[str, ...], bool]]:
    """Decide every string up to ``max_len``: accepted iff ct(w, F_i) >= 1 for every i.

    Walks the trie of strings depth first with one :class:`RunCounter`.
    With ``prune``, once no live configuration's state can reach some F_i
    (ignoring the stack), every extension is rejected without further
    counting; this is exact because a run can only enter F_i through such
    states.
    """
    accept_sets = [frozenset(f) for f in accept_sets]
    productive = [_reachable_states(pda, f) for f in accept_sets]
    sigma = pda.input_alphabet
    rc = RunCounter(pda)

    def rejected_subtree(prefix, depth):
        for n in range(depth + 1):
            for tail in itertools.product(sigma, repeat=n):
                yield prefix + tail, False

    def walk():
        w = tuple(rc.word)
        if prune and len(w) > 0:
            live = rc.live_states()
            if any(not (live & p) for p in productive):
                yield from rejected_subtree(w, max_len - len(w))
                return
        yield w, all(rc.count(f) >= 1 for f in accept_sets)
        if len(w) < max_len:
            for a in sigma:
                rc.step(a)
                yield from walk()
                rc.undo()

    yield from walk()


# ---------------------------------------------------------------- text format

def format_pda(pda: RestrictedPda) -> str:
    lines = [
        "# restricted PDA: every transition scans one input symbol",
        "states " + " ".join(pda.states),
        "input " + " ".join(pda.input_alphabet),
        "stack " + " ".join(pda.stack_alphabet),
        "start " + pda.start,
        "bottom " + pda.bottom,
        "accept " + " ".join(q for q in pda.states if q in pda.accept),
    ]
    if pda.trap is not None:
        lines.append("trap " + pda.trap)
    for tr in pda.transitions:
        rhs = tr.target if tr.kind == POP else f"{tr.target} {tr.pushed}"
        lines.append(f"{tr.kind} {tr.source} {tr.symbol} {tr.top} -> {rhs}")
    return "\n".join(lines) + "\n"


def parse_pda(text: str) -> RestrictedPda:
    fields: dict[str, list[str]] = {}
    transitions = []
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.strip()
        if not line or line.startswith("#"):
            continue
        head, *rest = line.split()
        if head in (PUSH, REPLACE, POP):
            try:
                src, sym, top, arrow, *tgt = rest
                if arrow != "->" or len(tgt) != (1 if head == POP else 2):
                    raise ValueError
            except ValueError:
                raise GrammarError(f"line {lineno}: malformed {head} transition") from None
            transitions.append(Transition(head, src, sym, top, tgt[0], tgt[1] if head != POP else None))
        elif head in ("states", "input", "stack", "start", "bottom", "accept", "trap"):
            fields[head] = rest
        else:
            raise GrammarError(f"line {lineno}: unknown directive {head!r}")
    for key in ("states", "input", "stack", "start", "bottom"):
        if key not in fields:
            raise GrammarError(f"missing '{key}' line")
    states, stack = fields["states"], fields["stack"]
    start, bottom = fields["start"][0], fields["bottom"][0]
    if states[0] != start or stack[0] != bottom:
        states = [start] + [q for q in states if q != start]
        stack = [bottom] + [x for x in stack if x != bottom]
    trap = fields.get("trap", [None])[0]
    return RestrictedPda(tuple(states), tuple(fields["input"]), tuple(stack), tuple(transitions),
                         frozenset(fields.get("accept", [])), trap)


# ---------------------------------------------------------------- fixtures

FIXTURES = {
    "balanced": "S -> S S | '(' S ')' | '(' ')'",
    "anbn": "S -> 'a' S 'b' | ε",
    "palindrome": "S -> 'a' S 'a' | 'b' S 'b' | 'a' | 'b' | ε",
    "ab": "S -> 'a' 'b'",
    "anbn-cstar": "S -> A C\nA -> 'a' A 'b' | ε\nC -> 'c' C | ε",
    "astar-bncn": "S -> A B\nA -> 'a' A | ε\nB -> 'b' B 'c' | ε",
    "marked-reverse-2": "S -> '0' S '0' | '1' S '1' | '#'",
    "unmarked-reverse-2": "S -> '0' S '0' | '1' S '1' | ε",
    "dyck-2": "S -> '(' S ')' S | '[' S ']' S | ε",
}


def fixture(name: str) -> Grammar:
    try:
        return parse_grammar(FIXTURES[name])
    except KeyError:
        raise KeyError(f"unknown grammar fixture {name!r}; known: {sorted(FIXTURES)}") from None
