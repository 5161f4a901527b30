import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from skvmn.errors import InputError, UndefinedMetricError
from skvmn.metrics import (
    auc, export_knowledge_states, export_question_clusters, knowledge_states, read_table,
    roc_curve, write_roc,
)
from skvmn.model import ModelConfig, init_params
from skvmn.seqdep import identity_vector

from oracles import pairwise_auc


def labelled(draw_scores, draw_labels):
    pairs = st.lists(st.tuples(draw_scores, draw_labels), min_size=2, max_size=60)
    return pairs.filter(lambda ps: len({l for _, l in ps}) == 2)


class TestAuc:
    def test_separated(self):
        assert auc([0.1, 0.2, 0.8, 0.9], [0, 0, 1, 1]) == 1.0

    def test_all_ties(self):
        assert auc([0.3] * 6, [0, 1, 0, 1, 1, 0]) == 0.5

    def test_hand_example(self):
        assert auc([0.1, 0.4, 0.35, 0.8], [0, 0, 1, 1]) == 0.75

    def test_single_class(self):
        with pytest.raises(UndefinedMetricError):
            auc([0.1, 0.2], [1, 1])

    def test_bad_labels(self):
        with pytest.raises(InputError):
            auc([0.1, 0.2], [0, 2])

    @settings(max_examples=200, deadline=None)
    @given(labelled(st.sampled_from([0.0, 0.1, 0.2, 0.5, 0.7, 1.0]), st.integers(0, 1)))
    def test_matches_pairwise_with_ties(self, pairs):
        s, l = zip(*pairs)
        assert auc(s, l) == pytest.approx(pairwise_auc(s, l), abs=1e-12)

    @settings(max_examples=100, deadline=None)
    @given(labelled(st.integers(-40, 40).map(lambda i: i / 8), st.integers(0, 1)))
    def test_monotone_transform_invariance(self, pairs):
        s, l = zip(*pairs)
        s = np.array(s)
        assert auc(np.exp(s) * 3 + 1, l) == pytest.approx(auc(s, l), abs=1e-12)

    @settings(max_examples=100, deadline=None)
    @given(labelled(st.floats(0, 1), st.integers(0, 1)))
    def test_label_flip_complements(self, pairs):
        s, l = zip(*pairs)
        assert abs(auc(s, l) + auc(s, 1 - np.array(l)) - 1.0) <= 1e-12


class TestRoc:
    @settings(max_examples=100, deadline=None)
    @given(labelled(st.sampled_from([0.0, 0.25, 0.5, 0.75, 1.0]), st.integers(0, 1)))
    def test_endpoints_monotone_and_area(self, pairs):
        s, l = zip(*pairs)
        curve = roc_curve(s, l)
        assert curve.points[0] == (0.0, 0.0)
        assert curve.points[-1] == (1.0, 1.0)
        xs, ys = zip(*curve.points)
        assert all(b >= a for a, b in zip(xs, xs[1:]))
        assert all(b >= a for a, b in zip(ys, ys[1:]))
        assert curve.auc == pytest.approx(auc(s, l), abs=1e-12)

    def test_file(self, tmp_path, rng):
        s = rng.random(200)
        l = (rng.random(200) < s).astype(int)
        path = tmp_path / "roc.tsv"
        write_roc(roc_curve(s, l), path)
        header, rows = read_table(path)
        assert header == ["fpr", "tpr"]
        pts = np.array(rows, dtype=float)
        assert np.all(np.diff(pts, axis=0) >= 0)


def zero_model(config):
    params = init_params(config, seed=0)
    for t in params.values():
        t.data = np.zeros_like(t.data)
    return params


def random_sequence(rng, Q, T):
    return list(zip(rng.integers(1, Q + 1, size=T).tolist(), rng.integers(0, 2, size=T).tolist()))


class TestKnowledgeStates:
    @pytest.mark.parametrize("mode", ["skvmn", "dkvmn"])
    def test_shape_and_round_trip(self, tmp_path, rng, mode):
        config = ModelConfig.build(12, 5, 6, mode=mode)
        params = init_params(config, seed=1, sigma=0.5)
        seq = random_sequence(rng, 12, 50)
        path = tmp_path / "states.tsv"
        states = export_knowledge_states(params, config, seq, path)
        assert states.shape == (50, 5)
        header, rows = read_table(path)
        assert header == ["step", "question", "answer"] + [f"slot_{i}" for i in range(1, 6)]
        assert len(rows) == 50
        assert [int(r[1]) for r in rows] == [q for q, _ in seq]
        np.testing.assert_allclose(np.array([r[3:] for r in rows], dtype=float), states, atol=5e-7)

    def test_zero_model_is_one_half(self, rng):
        config = ModelConfig.build(12, 5, 6)
        states = knowledge_states(zero_model(config), config, random_sequence(rng, 12, 20))
        np.testing.assert_array_equal(states, 0.5)

    def test_readouts_vary_over_time(self, rng):
        config = ModelConfig.build(12, 5, 6, mode="dkvmn")
        params = init_params(config, seed=1, sigma=0.5)
        states = knowledge_states(params, config, random_sequence(rng, 12, 10))
        assert np.all((states > 0) & (states < 1))
        assert np.ptp(states, axis=0).max() > 0


class TestClusters:
    def test_rows_and_regrouping(self, tmp_path):
        config = ModelConfig.build(15, 3, 4)
        params = init_params(config, seed=2, sigma=1.0)
        path = tmp_path / "clusters.tsv"
        w, codes, labels = export_question_clusters(params, config, path)
        header, rows = read_table(path)
        assert len(rows) == 15
        assert header[0] == "question" and header[-1] == "cluster"
        file_codes = [tuple(int(x) for x in r[4:7]) for r in rows]
        groups = {}
        for q, c in enumerate(file_codes):
            groups.setdefault(c, []).append(q)
        clusters = {}
        for q, r in enumerate(rows):
            clusters.setdefault(r[-1], []).append(q)
        assert sorted(groups.values()) == sorted(clusters.values())
        assert len(clusters) <= 3 ** 3
        fw = np.array([r[1:4] for r in rows], dtype=float)
        assert [tuple(x) for x in identity_vector(w, config.ranges).tolist()] == file_codes
        np.testing.assert_allclose(fw, w, atol=5e-7)

    def test_equal_attention_same_cluster(self, tmp_path):
        config = ModelConfig.build(6, 3, 4)
        params = init_params(config, seed=2, sigma=1.0)
        params["A"].data[4] = params["A"].data[1]
        _, _, labels = export_question_clusters(params, config, tmp_path / "c.tsv")
        assert labels[4] == labels[1]
