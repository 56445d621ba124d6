"""Listen-attend-spell tagger.

The listener is a BiLSTM followed by pyramidal BiLSTM layers (each halves the
frame rate).  The attender scores every encoder frame against the current
decoder state with a scaled projected dot product.  The speller is a stacked
LSTM fed with ``[embedding(y_prev); context_prev]`` whose output layer sees
``[state; context]``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import List, Optional, Sequence, Tuple

import numpy as np

from .labels import NUM_TAGS, LidTag
from .netcore import (
    Params,
    bilstm_backward,
    bilstm_forward,
    dropout_mask,
    embedding_backward,
    init_bilstm,
    init_lstm,
    init_uniform,
    log_softmax,
    lstm_step,
    lstm_step_backward,
    pyramidal_backward,
    pyramidal_forward,
    softmax,
)

EOS = NUM_TAGS  # output class 8
SOS = NUM_TAGS + 1  # input-only symbol 9
NUM_CLASSES = NUM_TAGS + 1
NUM_SYMBOLS = NUM_TAGS + 2


@dataclass
class Hypothesis:
    tokens: List[int]
    score: float
    rows: List[np.ndarray] = field(default_factory=list)
    finished: bool = False

    @property
    def normalized(self) -> float:
        steps = len(self.tokens) + (1 if self.finished else 0)
        return self.score / max(steps, 1)

    def rank(self):
        """Sort key: complete hypotheses first, then by normalised score.

        A hypothesis cut off by the length cap is only chosen when nothing
        reached eos.
        """
        return (self.finished, self.normalized)

    @property
    def tags(self) -> List[LidTag]:
        return [LidTag(t) for t in self.tokens]

    @property
    def attention(self) -> np.ndarray:
        if not self.rows:
            return np.zeros((0, 0))
        return np.stack(self.rows)


class LASModel:
    arch = "las"

    def __init__(
        self,
        feat_dim: int,
        enc_layers: int = 2,
        enc_units: int = 128,
        dec_layers: int = 2,
        dec_units: int = 128,
        emb_dim: int = 32,
        att_dim: int = 128,
        dropout: float = 0.0,
    ):
        if enc_layers < 1 or dec_layers < 1:
            raise ValueError("need at least one encoder and one decoder layer")
        self.feat_dim = feat_dim
        self.enc_layers = enc_layers
        self.enc_units = enc_units
        self.dec_layers = dec_layers
        self.dec_units = dec_units
        self.emb_dim = emb_dim
        self.att_dim = att_dim
        self.dropout = dropout
        self._cache = None

    @property
    def enc_dim(self) -> int:
        return 2 * self.enc_units

    def init_params(self, rng: np.random.Generator) -> Params:
        p = Params()
        d = self.feat_dim
        for k in range(self.enc_layers):
            if k > 0:
                d *= 2
            init_bilstm(p, f"listener.{k}", d, self.enc_units, rng)
            d = self.enc_dim
        p.add("att.ws", init_uniform(rng, (self.dec_units, self.att_dim)))
        p.add("att.wh", init_uniform(rng, (self.enc_dim, self.att_dim)))
        p.add("spell.emb", init_uniform(rng, (NUM_SYMBOLS, self.emb_dim)))
        d = self.emb_dim + self.enc_dim
        for k in range(self.dec_layers):
            init_lstm(p, f"spell.{k}", d, self.dec_units, rng)
            d = self.dec_units
        p.add("out.w", init_uniform(rng, (self.dec_units + self.enc_dim, NUM_CLASSES)))
        p.add("out.b", np.zeros(NUM_CLASSES))
        return p

    # -- listener -------------------------------------------------------------

    def listen(self, params: Params, x, lengths, training=False, rng=None):
        """x: (T, B, D) -> h: (U, B, 2H), reduced lengths, frame mask, cache."""
        lengths = np.asarray(lengths, dtype=np.int64)
        T = x.shape[0]
        mask = (np.arange(T)[:, None] < lengths[None, :]).astype(np.float64)
        h = x
        caches = []
        for k in range(self.enc_layers):
            pyr = None
            if k > 0:
                h, lengths, pyr = pyramidal_forward(h, lengths)
                mask = (np.arange(h.shape[0])[:, None] < lengths[None, :]).astype(np.float64)
            h, c = bilstm_forward(h, mask, params, f"listener.{k}")
            drop = dropout_mask(rng, h.shape, self.dropout, training)
            if drop is not None:
                h = h * drop
            caches.append((pyr, c, drop))
        return h, lengths, mask, caches

    def listen_backward(self, dh, caches, grads: Params):
        for k in range(self.enc_layers - 1, -1, -1):
            pyr, c, drop = caches[k]
            if drop is not None:
                dh = dh * drop
            dh = bilstm_backward(dh, c, grads, f"listener.{k}")
            if pyr is not None:
                dh = pyramidal_backward(dh, pyr)
        return dh

    # -- attender / speller ---------------------------------------------------

    def attend(self, params: Params, h, key, mask_u, s):
        """Context and weights for decoder state ``s`` (B, Hd) over h (U, B, D)."""
        q = s @ params["att.ws"]
        scale = 1.0 / math.sqrt(self.att_dim)
        scores = np.einsum("uba,ba->ub", key, q) * scale
        scores = np.where(mask_u > 0, scores, -np.inf)
        a = softmax(scores, axis=0)
        ctx = np.einsum("ub,ubd->bd", a, h)
        return ctx, a, q

    def attend_backward(self, params, grads, dctx, h, key, s, q, a, dh, dkey):
        scale = 1.0 / math.sqrt(self.att_dim)
        dh += a[:, :, None] * dctx[None, :, :]
        da = np.einsum("bd,ubd->ub", dctx, h)
        dscores = a * (da - (a * da).sum(axis=0, keepdims=True)) * scale
        dq = np.einsum("ub,uba->ba", dscores, key)
        dkey += dscores[:, :, None] * q[None, :, :]
        grads["att.ws"] += s.T @ dq
        return dq @ params["att.ws"].T

    def decoder_step(self, params: Params, h, key, mask_u, y_prev, state, ctx_prev):
        """One speller step.

        Returns (log_probs (B, 9), new_state, ctx, attention (U, B), cache).
        ``state`` is a list of (h, c) pairs, one per decoder layer.
        """
        y_prev = np.asarray(y_prev, dtype=np.int64)
        if y_prev.size and (y_prev.min() < 0 or y_prev.max() >= NUM_SYMBOLS):
            raise IndexError("invalid speller symbol index")
        emb = params["spell.emb"][y_prev]
        inp = np.concatenate([emb, ctx_prev], axis=-1)
        new_state = []
        cell_caches = []
        for k, (hk, ck) in enumerate(state):
            hn, cn, cc = lstm_step(
                inp, hk, ck, params[f"spell.{k}.wx"], params[f"spell.{k}.wh"], params[f"spell.{k}.b"]
            )
            new_state.append((hn, cn))
            cell_caches.append(cc)
            inp = hn
        s = inp
        ctx, a, q = self.attend(params, h, key, mask_u, s)
        feat = np.concatenate([s, ctx], axis=-1)
        logp = log_softmax(feat @ params["out.w"] + params["out.b"])
        return logp, new_state, ctx, a, (y_prev, cell_caches, s, q, a, feat, logp)

    def initial_state(self, batch: int):
        z = np.zeros((batch, self.dec_units))
        return [(z, z) for _ in range(self.dec_layers)], np.zeros((batch, self.enc_dim))

    # -- training objective ---------------------------------------------------

    def forward(self, params: Params, batch, training=False, rng=None) -> np.ndarray:
        """Per-utterance mean cross-entropy under teacher forcing."""
        h, u_len, mask_u, enc_caches = self.listen(params, batch.x, batch.lengths, training, rng)
        B = batch.size
        if any(len(t) == 0 for t in batch.targets):
            raise ValueError("empty target sequence")
        n_steps = np.array([len(t) + 1 for t in batch.targets])
        I = int(n_steps.max())
        y_in = np.full((I, B), EOS, dtype=np.int64)
        y_out = np.full((I, B), EOS, dtype=np.int64)
        for b, t in enumerate(batch.targets):
            y_in[0, b] = SOS
            y_in[1 : len(t) + 1, b] = t
            y_out[: len(t), b] = t
        step_mask = (np.arange(I)[:, None] < n_steps[None, :]).astype(np.float64)
        weight = step_mask / n_steps[None, :]

        key = h @ params["att.wh"]
        state, ctx = self.initial_state(B)
        losses = np.zeros(B)
        steps = []
        for i in range(I):
            logp, state, ctx, a, cache = self.decoder_step(params, h, key, mask_u, y_in[i], state, ctx)
            losses -= weight[i] * logp[np.arange(B), y_out[i]]
            steps.append(cache)
        self._cache = (params, h, key, enc_caches, steps, y_out, weight)
        return losses

    def backward(self, scale: float = 1.0) -> Params:
        """Gradients of ``scale * sum(losses)`` from the last :meth:`forward`."""
        if self._cache is None:
            raise RuntimeError("backward called before forward")
        params, h, key, enc_caches, steps, y_out, weight = self._cache
        self._cache = None
        grads = params.zeros_like()
        B = h.shape[1]
        Hd = self.dec_units
        dh_enc = np.zeros_like(h)
        dkey = np.zeros_like(key)
        dstate = [(np.zeros((B, Hd)), np.zeros((B, Hd))) for _ in range(self.dec_layers)]
        dctx_next = np.zeros((B, self.enc_dim))
        demb = np.zeros_like(params["spell.emb"])
        for i in range(len(steps) - 1, -1, -1):
            y_prev, cell_caches, s, q, a, feat, logp = steps[i]
            dlogits = np.exp(logp)
            dlogits[np.arange(B), y_out[i]] -= 1.0
            dlogits *= (weight[i] * scale)[:, None]
            grads["out.w"] += feat.T @ dlogits
            grads["out.b"] += dlogits.sum(axis=0)
            dfeat = dlogits @ params["out.w"].T
            ds = dfeat[:, :Hd]
            dctx = dfeat[:, Hd:] + dctx_next
            ds = ds + self.attend_backward(params, grads, dctx, h, key, s, q, a, dh_enc, dkey)
            dinp = ds
            for k in range(self.dec_layers - 1, -1, -1):
                dhk, dck = dstate[k]
                dx, dh_prev, dc_prev, dwx, dwh, db = lstm_step_backward(
                    dinp + dhk, dck, cell_caches[k], params[f"spell.{k}.wx"], params[f"spell.{k}.wh"]
                )
                grads[f"spell.{k}.wx"] += dwx
                grads[f"spell.{k}.wh"] += dwh
                grads[f"spell.{k}.b"] += db
                dstate[k] = (dh_prev, dc_prev)
                dinp = dx
            demb += embedding_backward(dinp[:, : self.emb_dim], y_prev, demb.shape)
            dctx_next = dinp[:, self.emb_dim :]
        grads["spell.emb"] += demb
        U, _, D = h.shape
        grads["att.wh"] += h.reshape(U * B, D).T @ dkey.reshape(U * B, -1)
        dh_enc += dkey @ params["att.wh"].T
        self.listen_backward(dh_enc, enc_caches, grads)
        return grads

    # -- decoding -------------------------------------------------------------

    def encode_one(self, params: Params, x):
        x = np.asarray(x, dtype=np.float64)
        if x.ndim != 2 or x.shape[0] < 1:
            raise ValueError("expected a non-empty (T, D) feature matrix")
        h, u_len, mask_u, _ = self.listen(params, x[:, None, :], [x.shape[0]])
        return h, mask_u

    def greedy(self, params: Params, x, max_len: Optional[int] = None) -> Hypothesis:
        h, mask_u = self.encode_one(params, x)
        key = h @ params["att.wh"]
        max_len = max_len or 2 * h.shape[0] + 10
        state, ctx = self.initial_state(1)
        hyp = Hypothesis([], 0.0)
        y = SOS
        for _ in range(max_len):
            logp, state, ctx, a, _ = self.decoder_step(params, h, key, mask_u, [y], state, ctx)
            y = int(np.argmax(logp[0]))
            hyp.score += float(logp[0, y])
            if y == EOS:
                hyp.finished = True
                break
            hyp.tokens.append(y)
            hyp.rows.append(a[:, 0].copy())
        return hyp

    def beam_search(self, params: Params, x, beam_width: int = 8, max_len: Optional[int] = None):
        """Length-normalised beam search; returns the best :class:`Hypothesis`.

        Each hypothesis that emits eos leaves the beam and takes one slot
        with it, so the search ends after ``beam_width`` completions or at
        ``max_len`` (default ``2 * U + 10``) steps.  The result is the best
        hypothesis under :meth:`Hypothesis.rank`.
        """
        if beam_width < 1:
            raise ValueError("beam width must be >= 1")
        h1, mask1 = self.encode_one(params, x)
        max_len = max_len or 2 * h1.shape[0] + 10
        key1 = h1 @ params["att.wh"]
        state, ctx = self.initial_state(1)
        hyps = [Hypothesis([], 0.0)]
        y_prev = np.array([SOS])
        finished: List[Hypothesis] = []
        for _ in range(max_len):
            n = len(hyps)
            if n == 0:
                break
            logp, state, ctx, att, _ = self.decoder_step(
                params,
                np.broadcast_to(h1, (h1.shape[0], n, h1.shape[2])),
                np.broadcast_to(key1, (key1.shape[0], n, key1.shape[2])),
                np.broadcast_to(mask1, (mask1.shape[0], n)),
                y_prev,
                state,
                ctx,
            )
            total = np.array([hy.score for hy in hyps])[:, None] + logp
            # same length for every candidate here, so raw scores rank them;
            # the global top `slots` is contained in each parent's top-W
            slots = beam_width - len(finished)
            order = np.argsort(-total.reshape(-1), kind="stable")[:slots]
            parents, symbols = np.divmod(order, NUM_CLASSES)
            keep_parent, keep_symbol, nxt = [], [], []
            for j, k in zip(parents.tolist(), symbols.tolist()):
                parent = hyps[j]
                score = float(total[j, k])
                if k == EOS:
                    finished.append(Hypothesis(list(parent.tokens), score, list(parent.rows), True))
                else:
                    nxt.append(Hypothesis(parent.tokens + [k], score, parent.rows + [att[:, j].copy()]))
                    keep_parent.append(j)
                    keep_symbol.append(k)
            hyps = nxt
            if keep_parent:
                sel = np.array(keep_parent)
                state = [(hh[sel], cc[sel]) for hh, cc in state]
                ctx = ctx[sel]
                y_prev = np.array(keep_symbol)
        return max(finished + hyps, key=Hypothesis.rank)

    def decode(self, params: Params, x, beam_width: int = 8):
        hyp = self.beam_search(params, x, beam_width)
        return hyp.tags, hyp.attention


# -- single-utterance helpers -------------------------------------------------


def listen(model: LASModel, x, params: Params) -> np.ndarray:
    h, _ = model.encode_one(params, x)
    return h[:, 0, :]


def attend(model: LASModel, h, s, params: Params) -> Tuple[np.ndarray, np.ndarray]:
    """Context vector and attention weights for one decoder state."""
    h = np.asarray(h, dtype=np.float64)[:, None, :]
    key = h @ params["att.wh"]
    ctx, a, _ = model.attend(params, h, key, np.ones(h.shape[:2]), np.asarray(s, dtype=np.float64)[None, :])
    return ctx[0], a[:, 0]


def las_loss(model: LASModel, x, target: Sequence[int], params: Params) -> float:
    from .trainer import Batch

    if len(target) == 0:
        raise ValueError("empty target sequence")
    return float(model.forward(params, Batch.from_items(["_"], [x], [list(target)]))[0])


def beam_decode(model: LASModel, x, params: Params, beam_width: int = 8):
    return model.decode(params, x, beam_width)


def attention_language_profile(attention, decoded: Sequence[LidTag]):
    """Mean attention row per language family: returns (hindi, english) curves."""
    attention = np.asarray(attention, dtype=np.float64)
    if attention.shape[0] != len(decoded):
        raise ValueError(
            f"length mismatch: {attention.shape[0]} attention rows vs {len(decoded)} decoded tags"
        )
    U = attention.shape[1] if attention.ndim == 2 else 0
    curves = []
    for fam in ("H", "E"):
        rows = [k for k, t in enumerate(decoded) if LidTag(t).family == fam]
        curves.append(attention[rows].mean(axis=0) if rows else np.zeros(U))
    return curves[0], curves[1]
