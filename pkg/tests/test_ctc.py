import math

import numpy as np
import pytest

from cslid.ctc import (
    BLANK,
    CTCModel,
    InfeasibleTarget,
    best_path_decode,
    collapse,
    ctc_gradients,
    ctc_log_likelihood,
    ctc_loss,
)
from cslid.labels import LidTag
from cslid.netcore import Params, log_softmax, max_relative_error, numerical_gradient
from cslid.trainer import Batch
from oracles import brute_force_ctc_prob, collapse_ref

HB, HE = int(LidTag.HB), int(LidTag.HE)


def random_instance(rng, T, L):
    logits = rng.normal(size=(T, 9)) * 1.5
    target = list(rng.integers(0, 8, size=L))
    return logits, target


class TestLikelihood:
    def test_two_symbol_example(self):
        # vocab {A, blank}; alignments of "A" over two frames: A-, -A, AA
        lp = np.log(np.full((2, 2), 0.5))
        ll = ctc_log_likelihood(lp, [0], blank=1)
        assert math.exp(ll) == pytest.approx(0.75, abs=1e-12)
        assert ctc_loss(lp, [0], blank=1) == pytest.approx(0.287682, abs=1e-6)

    def test_single_frame(self, rng):
        lp = log_softmax(rng.normal(size=(1, 9)))
        assert ctc_log_likelihood(lp, [3]) == pytest.approx(lp[0, 3], abs=1e-14)

    def test_matches_brute_force(self, rng, backend):
        checked = 0
        while checked < 120:
            T = int(rng.integers(1, 6))
            L = int(rng.integers(1, 4))
            logits, target = random_instance(rng, T, L)
            lp = log_softmax(logits)
            expected = brute_force_ctc_prob(np.exp(lp), target, BLANK)
            ll = ctc_log_likelihood(lp, target)
            if expected == 0.0:
                assert ll == -np.inf
                continue
            assert abs(math.exp(ll) - expected) <= 1e-9
            assert abs(ll - math.log(expected)) <= 1e-9
            checked += 1

    def test_infeasible(self):
        lp = log_softmax(np.zeros((2, 9)))
        assert ctc_log_likelihood(lp, [1, 1]) == -np.inf  # needs a blank between repeats
        assert ctc_log_likelihood(lp, [1, 2, 3]) == -np.inf
        with pytest.raises(InfeasibleTarget):
            ctc_gradients(lp, [1, 2, 3])

    def test_extra_certain_blank_frame(self, rng):
        logits, target = random_instance(rng, 4, 2)
        lp = log_softmax(logits)
        blank_frame = np.full((1, 9), -np.inf)
        blank_frame[0, BLANK] = 0.0
        extended = np.vstack([lp, blank_frame])
        assert ctc_log_likelihood(extended, target) == ctc_log_likelihood(lp, target)


class TestGradients:
    def test_finite_differences(self, rng, backend):
        for _ in range(10):
            T = int(rng.integers(3, 7))
            logits, target = random_instance(rng, T, int(rng.integers(1, 3)))
            grad = ctc_gradients(log_softmax(logits), target)
            num = numerical_gradient(lambda p: ctc_loss(log_softmax(p["z"]), target), Params(z=logits.copy()))
            assert max_relative_error(grad, num["z"]) <= 1e-4

    def test_rows_sum_to_zero(self, rng, backend):
        logits, target = random_instance(rng, 6, 3)
        grad = ctc_gradients(log_softmax(logits), target)
        np.testing.assert_allclose(grad.sum(axis=1), 0, atol=1e-9)

    def test_palindrome_symmetry(self, rng, backend):
        half = rng.normal(size=(3, 9))
        logits = np.vstack([half, half[::-1]])  # time-symmetric input
        target = [2, 5, 2]
        grad = ctc_gradients(log_softmax(logits), target)
        np.testing.assert_allclose(grad, grad[::-1], atol=1e-12)


class TestCollapse:
    def test_merge_then_drop(self):
        assert collapse([HB, HB, BLANK, HE]) == [HB, HE]

    def test_all_blank(self):
        assert collapse([BLANK, BLANK]) == []

    def test_blank_separates_repeats(self):
        assert collapse([HB, BLANK, HB]) == [HB, HB]

    def test_matches_reference(self, rng):
        for _ in range(50):
            path = list(rng.integers(0, 9, size=12))
            out = collapse(path)
            assert tuple(out) == collapse_ref(path, BLANK)
            assert BLANK not in out


    def test_idempotent_on_collapsed_form(self, rng):
        for _ in range(50):
            seq = [int(s) for s in rng.integers(0, 8, size=10)]
            seq = [s for k, s in enumerate(seq) if k == 0 or s != seq[k - 1]]  # no adjacent repeats
            assert collapse(seq) == seq
            assert collapse(collapse(seq)) == collapse(seq)


class TestBestPath:
    def one_hot(self, symbols):
        lp = np.full((len(symbols), 9), -20.0)
        lp[np.arange(len(symbols)), symbols] = 0.0
        return lp

    def test_one_hot_frames(self):
        assert best_path_decode(self.one_hot([HB, HB, BLANK, HE])) == [LidTag.HB, LidTag.HE]

    def test_all_blank(self):
        assert best_path_decode(self.one_hot([BLANK] * 4)) == []

    def test_strips_sil(self):
        sil = int(LidTag.SIL)
        assert best_path_decode(self.one_hot([sil, HB, HE, sil])) == [LidTag.HB, LidTag.HE]

    def test_random_matches_argmax_path(self, rng):
        for _ in range(20):
            lp = log_softmax(rng.normal(size=(7, 9)))
            path = [int(np.argmax(row)) for row in lp]
            expected = [LidTag(s) for s in collapse(path) if s != int(LidTag.SIL)]
            assert best_path_decode(lp) == expected


def tiny_ctc(rng, layers=2):
    model = CTCModel(feat_dim=3, layers=layers, units=2)
    params = model.init_params(rng)
    for k in params:
        params[k] = rng.normal(size=params[k].shape) * 0.5
    return model, params


class TestModel:
    def test_full_model_gradients(self, rng, backend):
        model, params = tiny_ctc(rng)
        feats = [rng.normal(size=(6, 3)), rng.normal(size=(4, 3))]
        batch = Batch.from_items(["a", "b"], feats, [[1, 6, 4], [7, 2]])

        def f(p):
            return float(model.forward(p, batch).sum())

        model.forward(params, batch)
        grads = model.backward()
        num = numerical_gradient(f, params)
        for name in params:
            assert max_relative_error(grads[name], num[name]) <= 1e-4, name

    def test_backward_before_forward(self, rng):
        model, _ = tiny_ctc(rng)
        with pytest.raises(RuntimeError):
            model.backward()

    def test_infeasible_utterance(self, rng):
        model, params = tiny_ctc(rng)
        batch = Batch.from_items(["a"], [rng.normal(size=(2, 3))], [[1, 2, 3]])
        with pytest.raises(InfeasibleTarget):
            model.forward(params, batch)
