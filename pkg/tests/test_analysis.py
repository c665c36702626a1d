import numpy as np
import pytest

from nstack.analysis import (after_marker_positions, collect_readings, pca_2d, reading_columns, reading_for_symbol,
                             reading_matrix)
from nstack.models import ModelConfig, StackLm


class TestPca:
    def test_axis_aligned_is_identity_up_to_sign(self, rng):
        x = np.column_stack([rng.normal(size=50) * 5, rng.normal(size=50)])
        proj = pca_2d(x)
        xc = x - x.mean(axis=0)
        assert np.allclose(np.abs(proj.components), np.eye(2), atol=0.1)
        for j in range(2):
            assert np.allclose(np.abs(proj.points[:, j]), np.abs(xc @ proj.components[j]))

    def test_exact_axes(self):
        x = np.array([[-3.0, 0.0], [3.0, 0.0], [0.0, -1.0], [0.0, 1.0]])
        proj = pca_2d(x)
        assert np.allclose(np.abs(proj.components), np.eye(2))
        assert np.allclose(np.abs(proj.points), np.abs(x))

    def test_rank_one(self, rng):
        t = rng.normal(size=30)
        x = np.outer(t, [1.0, -2.0, 0.5]) + 4.0
        proj = pca_2d(x)
        assert proj.variance[1] == pytest.approx(0.0, abs=1e-20)
        assert np.allclose(proj.points[:, 1], 0.0, atol=1e-12)

    def test_variance_is_top_eigenvalues(self, rng):
        x = rng.normal(size=(200, 5)) @ rng.normal(size=(5, 5))
        proj = pca_2d(x)
        eig = np.sort(np.linalg.eigvalsh(np.cov(x, rowvar=False)))[::-1]
        assert proj.variance == pytest.approx(eig[:2], rel=1e-10)
        assert proj.points.var(axis=0, ddof=1) == pytest.approx(eig[:2], rel=1e-10)

    @pytest.mark.parametrize("x", [np.zeros((1, 3)), np.zeros((0, 2))])
    def test_too_few_points(self, x):
        with pytest.raises(ValueError):
            pca_2d(x)


class TestReadings:
    def test_positions_after_marker(self):
        assert after_marker_positions(tuple("01#10")) == [3, 4]
        assert after_marker_positions(tuple("0110")) == []
        assert reading_for_symbol(3) == 2

    def test_collected_reading_matches_matrix(self, rng):
        model = StackLm(ModelConfig("rns", hidden_size=4), ("0", "1", "#"))
        theta = model.init_params(rng)
        strings = [tuple("01#10"), tuple("11#11"), tuple("00#00")]
        points, labels = collect_readings(model, theta, strings)
        assert labels == ["1", "0", "1", "1", "0", "0"]
        M = reading_matrix(model, theta, strings[0])
        assert M.shape == (5, model.config.reading_size)
        assert np.allclose(points[0], M[2]) and np.allclose(points[1], M[3])
        assert np.allclose(M.sum(axis=1), 1.0)

    def test_lstm_has_no_readings(self, rng):
        model = StackLm(ModelConfig("lstm", hidden_size=3), ("0", "#"))
        with pytest.raises(ValueError):
            collect_readings(model, model.init_params(rng), [tuple("0#0")])

    @pytest.mark.parametrize("cfg", [ModelConfig("rns", num_states=2, stack_size=3),
                                     ModelConfig("vrns", num_states=2, stack_size=3, stack_dim=3),
                                     ModelConfig("sup", stack_dim=3, num_stacks=3)], ids=["rns", "vrns", "sup"])
    def test_column_names(self, cfg):
        model = StackLm(cfg, ("0",))
        cols = reading_columns(model)
        assert len(cols) == cfg.reading_size == len(set(cols))
