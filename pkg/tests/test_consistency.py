import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra import numpy as hnp

from oracles import brute_correct_inconsistency, brute_forgetting, brute_mci
from trustal.classifier import ModelParams, init_params
from trustal.consistency import (
    AccMatrix,
    correct_consistency,
    correct_inconsistency,
    forgetting_events,
    learning_events,
    mci,
    mean_pairwise_consistency,
    record_generation,
)
from trustal.errors import GenerationIndexError, ShapeError


def _mat(rows):
    return AccMatrix.from_correctness(rows)


histories = hnp.arrays(
    np.bool_,
    st.tuples(st.integers(2, 20), st.integers(1, 50)),
)


class TestEvents:
    def test_identical_rows(self):
        m = _mat([[1, 0, 1], [1, 0, 1]])
        assert forgetting_events(m, 0, 1) == 0
        assert learning_events(m, 0, 1) == 0

    def test_hand_example(self):
        m = _mat([[1, 1, 0], [0, 1, 1]])
        assert forgetting_events(m, 0, 1) == 1
        assert learning_events(m, 0, 1) == 1

    def test_same_generation_rejected(self):
        m = _mat([[1, 1, 0], [0, 1, 1]])
        with pytest.raises(GenerationIndexError):
            forgetting_events(m, 1, 1)
        with pytest.raises(GenerationIndexError):
            forgetting_events(m, 1, 0)

    def test_out_of_range(self):
        with pytest.raises(GenerationIndexError):
            forgetting_events(_mat([[1], [0]]), 0, 2)


class TestCorrectInconsistency:
    def test_hand_example(self):
        m = _mat([[1, 1], [0, 1]])
        assert correct_inconsistency(m, 1).tolist() == [1, 0]
        assert mci(m, 1) == 1.0

    def test_all_correct_is_zero(self):
        m = _mat([[1, 0, 1], [0, 0, 1], [1, 1, 1]])
        assert not correct_inconsistency(m, 2).any()

    def test_identical_rows_zero_mci(self):
        m = _mat([[1, 0, 1, 0]] * 6)
        assert all(mci(m, t) == 0.0 for t in range(1, 6))

    def test_generation_zero_rejected(self):
        with pytest.raises(GenerationIndexError):
            correct_inconsistency(_mat([[1, 0]]), 0)

    def test_frozen_example(self):
        # hand-evaluated: sample 0 wrong at t=3 with 2 correct predecessors,
        # sample 1 right at t=3, sample 2 wrong with 3 correct predecessors
        m = _mat([[1, 0, 1], [0, 1, 1], [1, 1, 1], [0, 1, 0]])
        assert correct_inconsistency(m, 3).tolist() == [2, 0, 3]
        assert mci(m, 3) == pytest.approx(5 / 3)

    @settings(max_examples=200, deadline=None)
    @given(acc=histories, data=st.data())
    def test_brute_force_oracle(self, acc, data):
        t = data.draw(st.integers(1, acc.shape[0] - 1))
        m = _mat(acc.astype(int))
        rows = acc.tolist()
        assert correct_inconsistency(m, t).tolist() == brute_correct_inconsistency(rows, t)
        assert mci(m, t) == brute_mci(rows, t)
        ci = correct_inconsistency(m, t)
        assert ci.max() <= t and ci.min() >= 0
        # dev-wide CI equals the forgetting events against every predecessor
        assert ci.sum() == sum(forgetting_events(m, s, t) for s in range(t))
        assert ci.sum() == sum(brute_forgetting(rows, s, t) for s in range(t))


class TestCorrectConsistency:
    def test_self_is_accuracy(self):
        m = _mat([[1, 0, 1, 1], [0, 0, 1, 1]])
        assert correct_consistency(m, 0, 0) == 0.75

    def test_hand_example(self):
        m = AccMatrix([3, 5])
        m.append_predictions([3, 5]).append_predictions([3, 1])
        assert correct_consistency(m, 0, 1) == 0.5

    @settings(max_examples=100, deadline=None)
    @given(acc=histories)
    def test_conjunction_bound(self, acc):
        m = _mat(acc.astype(int))
        accs = acc.mean(axis=1)
        for a in range(acc.shape[0]):
            for b in range(acc.shape[0]):
                assert correct_consistency(m, a, b) <= min(accs[a], accs[b]) + 1e-15

    def test_pairwise_mean(self):
        m = _mat([[1, 1], [1, 0], [0, 0]])
        # pairs (0,1)=0.5, (0,2)=0, (1,2)=0
        assert mean_pairwise_consistency(m) == pytest.approx(0.5 / 3)
        assert mean_pairwise_consistency(_mat([[1, 0]])) is None


class TestMatrix:
    def test_record_generation(self):
        labels = np.array([0, 1, 2, 0])
        X = np.eye(3)[labels] * 5
        perfect = ModelParams("linear", {"W": np.eye(3), "b": np.zeros(3)})
        m = AccMatrix(labels)
        record_generation(m, perfect, X)
        record_generation(m, perfect, X)
        assert m.acc.shape == (2, 4)
        assert m.row(0).all()
        assert np.array_equal(m.row(0), m.row(1))

    def test_same_params_same_row(self):
        rng = np.random.default_rng(0)
        p = init_params("mlp1", 3, 3, 4, seed=0)
        X = rng.normal(size=(30, 3))
        m = AccMatrix(rng.integers(3, size=30))
        record_generation(m, p, X)
        record_generation(m, p, X)
        assert np.array_equal(m.row(0), m.row(1))
        assert len(m.row(0)) == m.m == 30

    def test_row_length_checked(self):
        m = AccMatrix([0, 1, 2])
        with pytest.raises(ShapeError):
            m.append_predictions([0, 1])

    def test_csv(self, tmp_path):
        m = AccMatrix([1, 0], dev_ids=[10, 20])
        m.append_predictions([1, 1])
        m.write_csv(tmp_path / "a.csv")
        lines = (tmp_path / "a.csv").read_text().splitlines()
        assert lines[0] == "generation,10,20"
        assert lines[1] == "0,1,0"
