import itertools
import math

import numpy as np
import pytest

from nstack import autodiff as ad
from nstack.autodiff import finite_diff_check
from nstack.models import ModelConfig, StackLm, num_parameters

FAMILIES = {
    "lstm": ModelConfig("lstm", hidden_size=3),
    "sup-hidden": ModelConfig("sup", hidden_size=3, push="hidden", stack_dim=3),
    "sup-learned": ModelConfig("sup", hidden_size=3, stack_dim=2, num_stacks=2),
    "rns": ModelConfig("rns", hidden_size=3, num_states=2, stack_size=2),
    "rns-real": ModelConfig("rns", hidden_size=3, num_states=2, stack_size=2, semiring="real"),
    "vrns": ModelConfig("vrns", hidden_size=3, num_states=2, stack_size=2, stack_dim=2),
}


def per_string_cross_entropy(model, strings):
    symbols = model.encode(strings)
    denom = symbols.size + len(strings)

    def f(tape, params):
        return model.forward(tape, params, symbols).loss * (1.0 / denom)

    return f


class TestGradients:
    @pytest.mark.parametrize("name", sorted(FAMILIES))
    def test_end_to_end_cross_entropy(self, name):
        model = StackLm(FAMILIES[name], ("0", "1", "#"))
        theta = model.init_params(np.random.default_rng(3))
        rep = finite_diff_check(per_string_cross_entropy(model, [tuple("01#1"), tuple("1#10")]), theta)
        assert rep.passed, str(rep)
        assert rep.checked == num_parameters(theta)


class TestForward:
    def test_labels(self):
        assert ModelConfig.parse("rns-2-3").label == "RNS 2-3"
        assert ModelConfig.parse("VRNS 2-3-3").label == "VRNS 2-3-3"
        assert ModelConfig.parse("sup-3-3-3").num_stacks == 3
        assert ModelConfig.parse("sup-h", hidden_size=7).sup_dim == 7
        with pytest.raises(ValueError):
            ModelConfig.parse("rns-2")

    @pytest.mark.parametrize("field,value", [("kind", "gru"), ("push", "x"), ("semiring", "tropical"),
                                             ("hidden_size", 0)])
    def test_bad_config(self, field, value):
        with pytest.raises(ValueError):
            ModelConfig(**{field: value})

    def test_mixed_lengths_rejected(self):
        model = StackLm(FAMILIES["lstm"], ("a",))
        with pytest.raises(ValueError):
            model.encode([("a",), ("a", "a")])
        with pytest.raises(ValueError):
            model.encode([("b",)])

    @pytest.mark.parametrize("name", sorted(FAMILIES))
    def test_loss_is_sum_of_log_probs(self, name):
        model = StackLm(FAMILIES[name], ("0", "1"))
        theta = model.init_params(np.random.default_rng(5))
        strings = [tuple("0110"), tuple("1111")]
        loss, lps, _ = model.loss_and_grads(theta, strings)
        assert loss == pytest.approx(-lps.sum(), rel=1e-12)
        assert np.all(lps < 0)

    @pytest.mark.parametrize("name", ["lstm", "rns", "vrns", "sup-learned"])
    def test_distribution_over_strings(self, name):
        model = StackLm(FAMILIES[name], ("0", "1"))
        theta = model.init_params(np.random.default_rng(9))
        # EOS is predicted, so the mass of all strings up to any length stays below one
        masses = [sum(math.exp(model.log_probs(theta, [w]).log_probs[0]) for w in itertools.product("01", repeat=n))
                  for n in range(7)]
        assert all(m > 0 for m in masses)
        assert sum(masses) < 1.0

    def test_empty_string_is_eos_prediction(self):
        model = StackLm(FAMILIES["rns"], ("0", "1"))
        theta = model.init_params(np.random.default_rng(1))
        lp = model.log_probs(theta, [()]).log_probs[0]
        y0 = theta["controller.out_bias"]
        assert lp == pytest.approx(y0[2] - np.log(np.exp(y0).sum()), rel=1e-12)

    def test_log_and_real_semirings_agree(self):
        strings = [tuple("0110100"), tuple("1110001")]
        out = []
        for sr in ("log", "real"):
            model = StackLm(ModelConfig("vrns", hidden_size=4, semiring=sr), ("0", "1"))
            out.append(model.log_probs(model.init_params(np.random.default_rng(2)), strings).log_probs)
        assert np.allclose(out[0], out[1], rtol=1e-10)

    @pytest.mark.parametrize("name", sorted(FAMILIES))
    def test_readings_per_position(self, name):
        model = StackLm(FAMILIES[name], ("0", "1"))
        theta = model.init_params(np.random.default_rng(4))
        res = model.log_probs(theta, [tuple("0101")], keep_readings=True)
        if name == "lstm":
            assert res.readings == []
        else:
            assert len(res.readings) == 4
            assert res.readings[0].shape == (1, model.config.reading_size)

    def test_long_input_stays_finite(self):
        model = StackLm(ModelConfig.parse("rns-2-3", hidden_size=5), ("0", "1"))
        theta = {k: v * 30 for k, v in model.init_params(np.random.default_rng(6)).items()}
        lp = model.log_probs(theta, [tuple("01" * 40)]).log_probs
        assert np.all(np.isfinite(lp))

    def test_init_ranges(self):
        model = StackLm(ModelConfig.parse("vrns-2-3-3"), ("0", "1"))
        theta = model.init_params(np.random.default_rng(0))
        assert np.all(np.abs(theta["controller.weight"]) <= 0.1)
        H, n = 20, 2 * 2 * 3 * 7
        assert theta["actions.weight"].shape == (n, H)
        assert np.all(np.abs(theta["actions.weight"]) <= math.sqrt(6 / (n + H)))
