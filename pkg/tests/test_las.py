import math

import numpy as np
import pytest

from cslid.labels import LidTag
from cslid.las import (
    EOS,
    NUM_CLASSES,
    Hypothesis,
    SOS,
    LASModel,
    attend,
    attention_language_profile,
    beam_decode,
    las_loss,
    listen,
)
from cslid.netcore import Params, max_relative_error, numerical_gradient
from cslid.trainer import Batch


def toy(rng, feat_dim=3, enc_layers=2, units=2, dec_layers=1, dec_units=3, emb=2, att=3, scale=0.5):
    model = LASModel(feat_dim, enc_layers, units, dec_layers, dec_units, emb, att)
    params = model.init_params(rng)
    for k in params:
        params[k] = rng.normal(size=params[k].shape) * scale
    return model, params


class TestListener:
    @pytest.mark.parametrize("T,U", [(10, 5), (1, 1), (7, 4), (2, 1)])
    def test_reduced_length(self, rng, T, U):
        model, params = toy(rng)
        assert listen(model, rng.normal(size=(T, 3)), params).shape == (U, 4)

    def test_three_layers_reduce_twice(self, rng):
        model, params = toy(rng, enc_layers=3)
        assert listen(model, rng.normal(size=(9, 3)), params).shape == (3, 4)

    def test_gradient(self, rng, backend):
        model, params = toy(rng)
        x = rng.normal(size=(4, 1, 3))
        probe = rng.normal(size=(2, 1, 4))
        names = [k for k in params if k.startswith("listener")]

        def f(p):
            h, *_ = model.listen(p, x, [4])
            return float(np.sum(h * probe))

        h, _, _, caches = model.listen(params, x, [4])
        grads = params.zeros_like()
        dx = model.listen_backward(probe.copy(), caches, grads)
        num = numerical_gradient(f, params, names)
        for name in names:
            assert max_relative_error(grads[name], num[name]) <= 1e-4, name
        # and with respect to the input
        xp = Params(x=x.copy())
        num_x = numerical_gradient(lambda p: float(np.sum(model.listen(params, p["x"], [4])[0] * probe)), xp)
        assert max_relative_error(dx, num_x["x"]) <= 1e-4


class TestAttend:
    def test_identical_frames_uniform(self, rng):
        model, params = toy(rng)
        h = np.tile(rng.normal(size=4), (6, 1))
        ctx, a = attend(model, h, rng.normal(size=3), params)
        np.testing.assert_allclose(a, 1 / 6, atol=1e-12)
        np.testing.assert_allclose(ctx, h[0], atol=1e-12)

    def test_dominant_frame(self, rng):
        model, params = toy(rng)
        s = rng.normal(size=3)
        q = s @ params["att.ws"]
        h = rng.normal(size=(5, 4)) * 0.1
        # push frame 2 far along the direction that maximises its score
        direction = params["att.wh"] @ q
        h[2] += 500.0 * direction / np.linalg.norm(direction)
        ctx, a = attend(model, h, s, params)
        assert a[2] == pytest.approx(1.0, abs=1e-4)
        np.testing.assert_allclose(ctx, h[2], rtol=1e-4)

    def test_rows_on_simplex(self, rng):
        model, params = toy(rng)
        for _ in range(20):
            ctx, a = attend(model, rng.normal(size=(7, 4)) * 3, rng.normal(size=3) * 3, params)
            assert np.all(a >= 0)
            assert abs(a.sum() - 1) <= 1e-6

    def test_padding_ignored(self, rng):
        model, params = toy(rng)
        h = rng.normal(size=(5, 2, 4))
        key = h @ params["att.wh"]
        mask = np.ones((5, 2))
        mask[3:, 1] = 0
        s = rng.normal(size=(2, 3))
        ctx, a, _ = model.attend(params, h, key, mask, s)
        assert np.all(a[3:, 1] == 0)
        ref_ctx, ref_a = attend(model, h[:3, 1], s[1], params)
        np.testing.assert_allclose(a[:3, 1], ref_a, atol=1e-12)
        np.testing.assert_allclose(ctx[1], ref_ctx, atol=1e-12)


class TestSpeller:
    def test_distribution(self, rng):
        model, params = toy(rng)
        h = rng.normal(size=(4, 1, 4))
        key = h @ params["att.wh"]
        state, ctx = model.initial_state(1)
        logp, state, ctx, a, _ = model.decoder_step(params, h, key, np.ones((4, 1)), [SOS], state, ctx)
        assert logp.shape == (1, NUM_CLASSES)
        assert abs(np.exp(logp).sum() - 1) <= 1e-9

    def test_deterministic(self, rng):
        model, params = toy(rng)
        h = rng.normal(size=(4, 1, 4))
        key = h @ params["att.wh"]
        outs = []
        for _ in range(2):
            state, ctx = model.initial_state(1)
            outs.append(model.decoder_step(params, h, key, np.ones((4, 1)), [3], state, ctx)[0])
        np.testing.assert_array_equal(outs[0], outs[1])

    @pytest.mark.parametrize("symbol", [-1, 10])
    def test_invalid_symbol(self, rng, symbol):
        model, params = toy(rng)
        h = rng.normal(size=(4, 1, 4))
        state, ctx = model.initial_state(1)
        with pytest.raises(IndexError):
            model.decoder_step(params, h, h @ params["att.wh"], np.ones((4, 1)), [symbol], state, ctx)

    def test_single_step_gradient(self, rng):
        # a one-tag target gives two speller steps; restrict to speller/attender params
        model, params = toy(rng)
        x = rng.normal(size=(4, 3))
        names = [k for k in params if not k.startswith("listener")]
        model.forward(params, Batch.from_items(["u"], [x], [[2]]))
        grads = model.backward()
        num = numerical_gradient(lambda p: las_loss(model, x, [2], p), params, names)
        for name in names:
            assert max_relative_error(grads[name], num[name]) <= 1e-4, name


class TestLoss:
    def test_end_to_end_gradient(self, rng, backend):
        model, params = toy(rng, dec_layers=2)
        x = rng.normal(size=(6, 3))
        target = [0, 1, 6, 4]
        model.forward(params, Batch.from_items(["u"], [x], [target]))
        grads = model.backward()
        num = numerical_gradient(lambda p: las_loss(model, x, target, p), params)
        for name in params:
            assert max_relative_error(grads[name], num[name]) <= 1e-4, name

    def test_batched_gradient_with_padding(self, rng, backend):
        model, params = toy(rng)
        feats = [rng.normal(size=(6, 3)), rng.normal(size=(3, 3))]
        targets = [[0, 2, 6, 3, 5], [7, 1]]
        batch = Batch.from_items(["a", "b"], feats, targets)
        model.forward(params, batch)
        grads = model.backward(scale=0.5)
        num = numerical_gradient(lambda p: 0.5 * float(model.forward(p, batch).sum()), params)
        for name in params:
            assert max_relative_error(grads[name], num[name]) <= 1e-4, name

    def test_uniform_predictions(self, rng):
        model, params = toy(rng)
        params["out.w"][...] = 0.0
        params["out.b"][...] = 0.0
        assert las_loss(model, rng.normal(size=(5, 3)), [1, 2, 7], params) == pytest.approx(math.log(9), abs=1e-12)

    def test_perfect_predictions(self, rng):
        target = [0, 6, 4, 5]

        class Oracle(LASModel):
            # emits the next reference symbol with probability one
            def decoder_step(self, params, h, key, mask_u, y_prev, state, ctx_prev):
                logp, state, ctx, a, cache = super().decoder_step(params, h, key, mask_u, y_prev, state, ctx_prev)
                step = self._step
                self._step += 1
                nxt = target[step] if step < len(target) else EOS
                logp = np.full_like(logp, -np.inf)
                logp[:, nxt] = 0.0
                return logp, state, ctx, a, cache

        model = Oracle(3, 2, 2, 1, 3, 2, 3)
        model._step = 0
        params = model.init_params(rng)
        assert las_loss(model, rng.normal(size=(5, 3)), target, params) == 0.0

    def test_empty_target(self, rng):
        model, params = toy(rng)
        with pytest.raises(ValueError):
            las_loss(model, rng.normal(size=(5, 3)), [], params)


class TestBeam:
    def test_width_one_is_greedy(self):
        for seed in range(50):
            r = np.random.default_rng(seed)
            model, params = toy(r, scale=1.5)
            x = r.normal(size=(int(r.integers(1, 9)), 3))
            greedy = model.greedy(params, x)
            tags, att = beam_decode(model, x, params, 1)
            assert tags == greedy.tags
            np.testing.assert_array_equal(att, greedy.attention)

    def test_beam_not_worse_than_greedy(self):
        for seed in range(50):
            r = np.random.default_rng(100 + seed)
            model, params = toy(r, scale=1.5)
            x = r.normal(size=(int(r.integers(1, 9)), 3))
            greedy = model.greedy(params, x)
            best = model.beam_search(params, x, 8)
            assert best.rank() >= (greedy.finished, greedy.normalized - 1e-12)

    def test_attention_rows(self, rng):
        model, params = toy(rng, scale=1.5)
        for _ in range(10):
            x = rng.normal(size=(8, 3))
            tags, att = beam_decode(model, x, params, 4)
            assert att.shape[0] == len(tags)
            if len(tags):
                assert att.shape[1] == 4
                np.testing.assert_allclose(att.sum(axis=1), 1.0, atol=1e-6)
            assert all(isinstance(t, LidTag) for t in tags)

    def test_terminates_at_cap(self, rng):
        model, params = toy(rng)
        params["out.w"][...] = 0.0
        params["out.b"][...] = 0.0
        params["out.b"][EOS] = -50.0  # eos practically never chosen
        x = rng.normal(size=(4, 3))
        hyp = model.beam_search(params, x, 3)
        assert len(hyp.tokens) == 2 * 2 + 10
        assert not hyp.finished

    def test_prefers_finished(self):
        done = Hypothesis([1, 2], -9.0, finished=True)
        open_ = Hypothesis([1, 2, 2, 2, 2], -0.5)
        assert max([open_, done], key=Hypothesis.rank) is done
        assert max([open_], key=Hypothesis.rank) is open_

    def test_invalid_width(self, rng):
        model, params = toy(rng)
        with pytest.raises(ValueError):
            beam_decode(model, rng.normal(size=(4, 3)), params, 0)


class TestProfile:
    def test_all_hindi(self, rng):
        A = rng.dirichlet(np.ones(5), size=3)
        hindi, english = attention_language_profile(A, [LidTag.HB, LidTag.H, LidTag.HE])
        np.testing.assert_allclose(hindi, A.mean(axis=0))
        assert np.all(english == 0)

    def test_single_row(self, rng):
        A = rng.dirichlet(np.ones(4), size=3)
        hindi, english = attention_language_profile(A, [LidTag.EB, LidTag.H, LidTag.BOUNDARY])
        np.testing.assert_array_equal(hindi, A[1])
        np.testing.assert_array_equal(english, A[0])

    def test_boundary_and_sil_excluded(self, rng):
        A = rng.dirichlet(np.ones(4), size=4)
        hindi, english = attention_language_profile(A, [LidTag.SIL, LidTag.HB, LidTag.BOUNDARY, LidTag.SIL])
        np.testing.assert_array_equal(hindi, A[1])

    def test_bounds(self, rng):
        A = rng.dirichlet(np.ones(6), size=8)
        tags = list(rng.choice(list(LidTag), size=8))
        for curve in attention_language_profile(A, tags):
            assert np.all((curve >= 0) & (curve <= 1))

    def test_length_mismatch(self, rng):
        with pytest.raises(ValueError):
            attention_language_profile(np.ones((2, 3)) / 3, [LidTag.HB])
