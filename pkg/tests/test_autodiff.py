import numpy as np
import pytest
from conftest import max_rel, random_deltas, run_rns

from nstack import autodiff as ad
from nstack.autodiff import LOG, REAL, NonFiniteError, Op, ShapeError, finite_diff_check
from nstack.rns import PdaSignature


class TestForwardExamples:
    def test_exp_of_zero(self):
        tape = ad.Tape()
        assert ad.exp(tape.constant(np.array([0.0]))).data.tolist() == [1.0]

    def test_scalar_matmul(self):
        tape = ad.Tape()
        out = ad.matmul(tape.constant([[2.0]]), tape.constant([[3.0]]))
        assert out.data.tolist() == [[6.0]]

    def test_affine_zero_weight(self):
        tape = ad.Tape()
        x = tape.constant(np.random.default_rng(0).normal(size=(4, 3)))
        out = ad.affine(x, tape.constant(np.zeros((5, 3))), tape.constant(np.full(5, 0.5)))
        assert np.all(out.data == 0.5)

    def test_shape_mismatch_names_both_shapes(self):
        tape = ad.Tape()
        with pytest.raises(ShapeError) as err:
            ad.matmul(tape.constant(np.zeros((2, 3))), tape.constant(np.zeros((4, 5))))
        assert "(2, 3)" in str(err.value) and "(4, 5)" in str(err.value)

    def test_non_finite_rejected(self):
        tape = ad.Tape()
        with pytest.raises(NonFiniteError):
            ad.exp(tape.constant(np.array([1e4])))

    def test_log_mode_zero_allowed(self):
        tape = ad.Tape()
        out = ad.logsumexp(tape.constant(np.array([-np.inf, -np.inf])))
        assert out.data == -np.inf


class TestBackward:
    def test_sum_gradient(self):
        tape = ad.Tape()
        x = tape.parameter("x", np.array([1.0, -2.0, 5.0]))
        g = tape.backward(ad.sum_(x))
        assert g["x"].tolist() == [1.0, 1.0, 1.0]

    def test_sigmoid_times_weight(self):
        tape = ad.Tape()
        w = tape.parameter("w", np.array(1.0))
        g = tape.backward(ad.sigmoid(tape.constant(np.array(0.0))) * w)
        assert g["w"] == pytest.approx(0.5)

    def test_untouched_parameter_gets_zero(self):
        tape = ad.Tape()
        x = tape.parameter("x", np.ones(3))
        tape.parameter("unused", np.ones((2, 2)))
        g = tape.backward(ad.sum_(x * x))
        assert np.array_equal(g["unused"], np.zeros((2, 2)))

    def test_non_scalar_root_rejected(self):
        tape = ad.Tape()
        x = tape.parameter("x", np.ones(3))
        with pytest.raises(ShapeError):
            tape.backward(x * 2.0)

    def test_replay_is_bit_identical(self, rng):
        tape = ad.Tape()
        a = tape.parameter("a", rng.normal(size=(3, 4)))
        b = tape.parameter("b", rng.normal(size=(4, 2)))
        out = ad.logsumexp(ad.tanh(ad.matmul(a, b)) * 3.0, axis=0)
        ad.sum_(ad.softmax(out))
        replayed = tape.replay()
        for node, val in zip(tape.nodes, replayed):
            assert np.array_equal(node.value, val)


class TestFiniteDiffCheck:
    def test_square(self):
        rep = finite_diff_check(lambda tape, p: p["t"] * p["t"], {"t": np.array(3.0)})
        assert rep.passed

    def test_wrong_backward_rule_fails(self):
        bad_exp = Op("bad_exp", np.exp, lambda g, out, ins, needs: (g * out * 1.01,))
        rep = finite_diff_check(lambda tape, p: ad.sum_(tape.record(bad_exp, [p["x"]])),
                                {"x": np.array([0.3, -0.7])})
        assert not rep.passed

    def test_non_finite_probe_is_inconclusive(self):
        # log(x) at x = 1e-6 +/- 1e-5 crosses zero on the minus side
        rep = finite_diff_check(lambda tape, p: ad.sum_(ad.log(p["x"])), {"x": np.array([1e-6, 2.0])})
        assert rep.inconclusive == [("x", (0,))]
        assert rep.checked == 1


def _ops():
    """(name, builder(tape, params), parameter shapes, positive inputs only)."""
    return [
        ("add", lambda t, p: p["a"] + p["b"], {"a": (2, 3), "b": (2, 3)}, False),
        ("sub", lambda t, p: p["a"] - p["b"], {"a": (2, 3), "b": (3,)}, False),
        ("mul", lambda t, p: p["a"] * p["b"], {"a": (2, 3), "b": (2, 1)}, False),
        ("div", lambda t, p: p["a"] / p["b"], {"a": (2, 3), "b": (2, 3)}, True),
        ("logaddexp", lambda t, p: ad.logaddexp(p["a"], p["b"]), {"a": (2, 3), "b": (2, 3)}, False),
        ("neg", lambda t, p: -p["a"], {"a": (4,)}, False),
        ("exp", lambda t, p: ad.exp(p["a"]), {"a": (4,)}, False),
        ("log", lambda t, p: ad.log(p["a"]), {"a": (4,)}, True),
        ("sigmoid", lambda t, p: ad.sigmoid(p["a"]), {"a": (4,)}, False),
        ("log_sigmoid", lambda t, p: ad.log_sigmoid(p["a"]), {"a": (4,)}, False),
        ("tanh", lambda t, p: ad.tanh(p["a"]), {"a": (4,)}, False),
        ("matmul", lambda t, p: ad.matmul(p["a"], p["b"]), {"a": (2, 3, 4), "b": (4, 2)}, False),
        ("affine", lambda t, p: ad.affine(p["x"], p["w"], p["b"]), {"x": (3, 4), "w": (2, 4), "b": (2,)}, False),
        ("logmatmul", lambda t, p: ad.logmatmul(p["a"], p["b"]), {"a": (2, 3, 4), "b": (2, 4, 2)}, False),
        ("einsum", lambda t, p: ad.einsum("ij,jk,k->i", p["a"], p["b"], p["c"]),
         {"a": (2, 3), "b": (3, 4), "c": (4,)}, False),
        ("sum", lambda t, p: ad.sum_(p["a"], axis=1), {"a": (2, 3, 2)}, False),
        ("logsumexp", lambda t, p: ad.logsumexp(p["a"], axis=-1), {"a": (3, 4)}, False),
        ("log_softmax", lambda t, p: ad.log_softmax(p["a"]), {"a": (3, 4)}, False),
        ("softmax", lambda t, p: ad.softmax(p["a"]), {"a": (3, 4)}, False),
        ("normalize", lambda t, p: ad.normalize(p["a"]), {"a": (3, 4)}, True),
        ("cross_entropy", lambda t, p: ad.cross_entropy(p["a"], np.array([[0, 2], [1, 1]])), {"a": (2, 2, 3)}, False),
        ("getitem", lambda t, p: p["a"][1:, ::2], {"a": (3, 4)}, False),
        ("reshape", lambda t, p: p["a"].reshape(6, 2), {"a": (3, 4)}, False),
        ("transpose", lambda t, p: p["a"].transpose(2, 0, 1), {"a": (2, 3, 4)}, False),
        ("concatenate", lambda t, p: ad.concatenate([p["a"], p["b"]], axis=1), {"a": (2, 3), "b": (2, 1)}, False),
        ("stack", lambda t, p: ad.stack([p["a"], p["b"]], axis=0), {"a": (2, 3), "b": (2, 3)}, False),
    ]


class TestOperationGradients:
    @pytest.mark.parametrize("name,build,shapes,positive", _ops(), ids=[o[0] for o in _ops()])
    def test_matches_central_differences(self, name, build, shapes, positive):
        rng = np.random.default_rng(sum(map(ord, name)))
        worst = 0.0
        for _ in range(100):
            theta = {k: (rng.uniform(0.5, 2.0, s) if positive else rng.normal(size=s)) for k, s in shapes.items()}
            probe = ad.Tape()
            weights = rng.normal(size=build(probe, {k: probe.constant(v) for k, v in theta.items()}).shape)

            def f(tape, p):
                return ad.sum_(build(tape, p) * tape.constant(weights))

            rep = finite_diff_check(f, theta)
            assert rep.checked > 0
            worst = max(worst, rep.max_rel_error)
        assert worst <= 1e-4


class TestSemiring:
    def test_log_mode_constants(self):
        assert LOG.zero == -np.inf and LOG.one == 0.0
        assert REAL.zero == 0.0 and REAL.one == 1.0

    def test_log_addition_is_logsumexp(self, rng):
        tape = ad.Tape()
        a, b = rng.normal(size=3), rng.normal(size=3)
        out = LOG.add(tape.constant(a), tape.constant(b)).data
        assert np.allclose(out, np.logaddexp(a, b))
        assert np.allclose(LOG.mul(tape.constant(a), tape.constant(b)).data, a + b)

    def test_logmatmul_agrees_with_real(self, rng):
        a, b = rng.uniform(1e-6, 1e3, (3, 4, 5)), rng.uniform(1e-6, 1e3, (5, 2))
        tape = ad.Tape()
        lm = ad.logmatmul(tape.constant(np.log(a)), tape.constant(np.log(b))).data
        assert max_rel(np.exp(lm), a @ b) < 1e-12

    def test_dp_agrees_across_modes(self):
        rng = np.random.default_rng(7)
        worst = 0.0
        for _ in range(30):
            Q, G = (int(x) for x in rng.integers(1, 3, size=2))
            ds = random_deltas(rng, Q, G, int(rng.integers(1, 7)), low=1e-6, high=1e3)
            sig = PdaSignature(Q, G)
            for a, b in zip(run_rns(sig, ds, REAL), run_rns(sig, ds, LOG)):
                worst = max(worst, max_rel(a, b))
        assert worst < 1e-9
