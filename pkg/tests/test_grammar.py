import itertools
from fractions import Fraction

import numpy as np
import pytest

from nstack.grammar import (FIXTURES, POP, PUSH, REPLACE, GrammarError, RunCounter, compile_grammar, composite_length,
                            count_accepting_runs, cyk, decide_all, enumerate_language, fixture, format_pda,
                            is_two_gnf, parse_grammar, parse_pda, recognize, recognize_intersection, to_cnf, to_gnf,
                            to_two_gnf, union_pda)
from nstack.oracle import enumerate_runs
from nstack.rns import PdaSignature

PIPELINE_FIXTURES = ["balanced", "anbn", "palindrome", "ab", "anbn-cstar", "marked-reverse-2"]


def all_strings(sigma, max_len):
    for n in range(max_len + 1):
        yield from itertools.product(sorted(sigma), repeat=n)


def compiled(name, _cache={}):
    if name not in _cache:
        _cache[name] = compile_grammar(fixture(name))
    return _cache[name]


class TestParsing:
    def test_alternatives_and_epsilon(self):
        g = parse_grammar("S -> 'a' S 'b' | ε  # comment\n")
        assert set(g.rules) == {("S", ("a", "S", "b")), ("S", ())}
        assert g.terminals == {"a", "b"}

    @pytest.mark.parametrize("text", ["", "S 'a'", "S -> 'a b'", "1S -> 'a'", "S -> a-b"])
    def test_malformed_rejected(self, text):
        with pytest.raises(GrammarError):
            parse_grammar(text)

    def test_unknown_fixture(self):
        with pytest.raises(KeyError):
            fixture("nope")


class TestTwoGnf:
    def test_epsilon_only_grammar(self):
        g2 = to_two_gnf(parse_grammar("S -> ε"))
        assert is_two_gnf(g2)
        assert enumerate_language(g2, 3) == {()}

    def test_balanced_parentheses(self):
        g = fixture("balanced")
        g2 = to_two_gnf(g)
        assert is_two_gnf(g2)
        assert enumerate_language(g2, 8) == enumerate_language(g, 8)
        assert len(enumerate_language(g, 8)) == 1 + 2 + 5 + 14

    def test_single_string(self):
        g2 = to_two_gnf(fixture("ab"))
        assert is_two_gnf(g2)
        assert enumerate_language(g2, 4) == {("a", "b")}

    @pytest.mark.parametrize("text", ["S -> 'a' S | 'a'", "S -> A\nA -> 'a'", "S -> 'a' A\nA -> 'a'",
                                      "S -> 'a' | A\nA -> ε"])
    def test_shape_violations_detected(self, text):
        assert not is_two_gnf(parse_grammar(text))

    @pytest.mark.parametrize("name", sorted(FIXTURES))
    def test_every_fixture_converts(self, name):
        assert is_two_gnf(to_two_gnf(fixture(name)))

    @pytest.mark.parametrize("name", PIPELINE_FIXTURES)
    def test_language_preserved_by_every_stage(self, name):
        g = fixture(name)
        ref = enumerate_language(g, 8)
        nf = to_cnf(g)
        eps = {()} if nf.accepts_empty else set()
        assert enumerate_language(nf.grammar, 8) | eps == ref
        assert enumerate_language(to_gnf(nf.grammar), 8) | eps == ref
        assert enumerate_language(to_two_gnf(g), 8) == ref
        pda = compiled(name)
        accepted = {w for w, ok in decide_all(pda, [pda.accept], 8) if ok}
        assert accepted == ref


class TestCyk:
    def test_balanced_examples(self):
        g = fixture("balanced")
        assert cyk(g, "(())")
        assert not cyk(g, "(()")
        assert not cyk(g, "")

    def test_nullable_start(self):
        assert cyk(fixture("anbn"), "")
        assert cyk(fixture("anbn"), "aabb")

    @pytest.mark.parametrize("name", ["balanced", "anbn", "palindrome", "astar-bncn", "dyck-2"])
    def test_agrees_with_enumeration(self, name):
        g = fixture(name)
        nf = to_cnf(g)
        ref = enumerate_language(g, 7)
        for w in all_strings(g.terminals, 7):
            assert cyk(nf, w) == (w in ref), w


class TestCompiledPda:
    def test_single_string_pda(self):
        pda = compiled("ab")
        assert recognize(pda, "ab")
        for w in ["a", "b", "ba", "", "abab"]:
            assert not recognize(pda, w)

    def test_empty_string_via_accepting_start(self):
        pda = compiled("anbn")
        assert pda.start in pda.accept
        assert recognize(pda, "")
        assert not recognize(compiled("balanced"), "")

    @pytest.mark.parametrize("name", ["balanced", "anbn", "palindrome", "marked-reverse-2"])
    def test_agrees_with_cyk_up_to_ten(self, name):
        pda = compiled(name)
        nf = to_cnf(fixture(name))
        for w, ok in decide_all(pda, [pda.accept], 10):
            assert ok == cyk(nf, w), w

    def test_random_strings_agree_with_cyk(self):
        rng = np.random.default_rng(3)
        names = sorted(FIXTURES)
        for _ in range(500):
            name = names[rng.integers(len(names))]
            g = fixture(name)
            sigma = sorted(g.terminals)
            w = tuple(sigma[i] for i in rng.integers(len(sigma), size=rng.integers(0, 11)))
            assert recognize(compiled(name), w) == cyk(g, w), (name, w)

    def test_anbn_examples(self):
        assert recognize(compiled("anbn"), "aabb")
        assert not recognize(compiled("anbn"), "aab")

    @pytest.mark.parametrize("name", sorted(FIXTURES))
    def test_real_time_restricted_form(self, name):
        pda = compiled(name)
        for tr in pda.transitions:
            assert tr.symbol in pda.input_alphabet
            assert tr.kind in (PUSH, REPLACE, POP)
            assert (tr.pushed is None) == (tr.kind == POP)
            assert not (tr.kind == POP and tr.top == pda.bottom)

    @pytest.mark.parametrize("name", sorted(FIXTURES))
    def test_composite_length_comes_from_grammar(self, name):
        # A -> a b B1..Bp replaces A by Bp, then pushes B1..B(p-1) as one symbol
        g2 = to_two_gnf(fixture(name))
        expect = max([1] + [len(rhs) - 3 for _, rhs in g2.rules])
        assert composite_length(compiled(name)) == expect

    def test_symbol_outside_alphabet(self):
        with pytest.raises(ValueError):
            recognize(compiled("anbn"), "abc")

    def test_text_round_trip(self, tmp_path):
        for name in ["ab", "balanced"]:
            pda = compiled(name)
            assert parse_pda(format_pda(pda)) == pda

    def test_malformed_pda_text(self):
        with pytest.raises(GrammarError):
            parse_pda("states q\ninput a\nstack B\nstart q\nbottom B\npush q a B q\n")


def oracle_count(pda, w, states):
    weights = pda.to_weights(w)
    sig = PdaSignature(len(pda.states), len(pda.stack_alphabet))
    idx = {pda.states.index(q) for q in states}
    runs = enumerate_runs(sig, weights, len(w), size_guard=False)
    return sum(1 for r in runs if r.state in idx and r.top == 0), len(runs)


class TestRunCounting:
    @pytest.mark.parametrize("name", ["ab", "anbn", "balanced", "astar-bncn"])
    def test_counts_match_enumeration(self, name):
        pda = compiled(name)
        for w in all_strings(pda.input_alphabet, 6 if len(pda.input_alphabet) == 2 else 5):
            rc = RunCounter(pda)
            for a in w:
                rc.step(a)
            acc, total = oracle_count(pda, w, pda.accept)
            assert rc.count(pda.accept) == acc, w
            assert rc.total_runs() == total, w

    def test_accepting_runs_on_ab(self):
        assert count_accepting_runs(compiled("ab"), "ab") >= 1
        assert oracle_count(compiled("ab"), ("a", "b"), compiled("ab").accept)[0] >= 1

    def test_trap_keeps_some_run_alive(self):
        pda = compiled("balanced")
        for w in all_strings(pda.input_alphabet, 8):
            rc = RunCounter(pda)
            for a in w:
                rc.step(a)
            assert rc.total_runs() >= 1

    def test_counts_are_python_ints(self):
        rc = RunCounter(compiled("palindrome"))
        for a in "ab" * 6:
            rc.step(a)
        assert all(type(c) is int for c in rc.forward.values())

    def test_adding_transitions_never_lowers_counts(self):
        rng = np.random.default_rng(5)
        full = compiled("anbn-cstar")
        for _ in range(5):
            keep = rng.random(len(full.transitions)) < 0.7
            part = type(full)(full.states, full.input_alphabet, full.stack_alphabet,
                              tuple(t for t, k in zip(full.transitions, keep) if k), full.accept, full.trap)
            for w in all_strings(full.input_alphabet, 5):
                for states in (full.accept, set(full.states), {full.states[1]}):
                    assert count_accepting_runs(part, w, states) <= count_accepting_runs(full, w, states)

    @pytest.mark.parametrize("name", ["ab", "anbn", "balanced"])
    def test_nonzero_mass_bounded_below(self, name):
        pda = compiled(name)
        b = pda.max_choices
        for w in all_strings(pda.input_alphabet, 7):
            rc = RunCounter(pda)
            for a in w:
                rc.step(a)
            total = rc.total_runs()
            for states in (pda.accept, {pda.trap}, set(pda.states)):
                c = rc.count(states)
                if c:
                    assert Fraction(c, total) >= Fraction(1, b ** len(w))


def abc_pdas():
    return [compiled("anbn-cstar"), compiled("astar-bncn")]


class TestIntersection:
    @pytest.mark.parametrize("w,ok", [("aabbcc", True), ("aabbc", False), ("abc", True), ("", True),
                                      ("aabbbcc", False), ("abcc", False)])
    def test_anbncn_examples(self, w, ok):
        assert recognize_intersection(abc_pdas(), w) == ok

    def test_single_machine_is_plain_recognition(self):
        pda = compiled("balanced")
        for w in all_strings(pda.input_alphabet, 8):
            assert recognize_intersection([pda], w) == recognize(pda, w)

    def test_exhaustive_against_cyk_conjunction(self):
        u = union_pda(abc_pdas())
        nfs = [to_cnf(fixture("anbn-cstar")), to_cnf(fixture("astar-bncn"))]
        seen = 0
        for w, ok in decide_all(u.pda, u.accept_sets, 9):
            assert ok == all(cyk(nf, w) for nf in nfs), w
            seen += 1
        assert seen == sum(3 ** n for n in range(10))

    def test_pruning_is_exact(self):
        u = union_pda(abc_pdas())
        fast = dict(decide_all(u.pda, u.accept_sets, 6))
        slow = dict(decide_all(u.pda, u.accept_sets, 6, prune=False))
        assert fast == slow

    def test_alphabet_mismatch(self):
        with pytest.raises(ValueError):
            recognize_intersection([compiled("balanced"), compiled("anbn")], "ab")
