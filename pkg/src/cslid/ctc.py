"""CTC objective, best-path decoding and the BiLSTM-CTC tagger."""

from __future__ import annotations

import logging
from typing import List, Optional, Sequence

import numpy as np

from . import kernels
from .labels import NUM_TAGS, LidTag
from .netcore import (
    Params,
    bilstm_backward,
    bilstm_forward,
    dropout_mask,
    init_bilstm,
    init_uniform,
    log_softmax,
)

log = logging.getLogger(__name__)

BLANK = NUM_TAGS  # internal blank, distinct from the word-boundary tag
NUM_OUTPUTS = NUM_TAGS + 1


class InfeasibleTarget(ValueError):
    pass


def min_frames(target: Sequence[int]) -> int:
    """Shortest input that can emit ``target`` (repeats need a blank between)."""
    target = list(target)
    repeats = sum(1 for a, b in zip(target, target[1:]) if a == b)
    return len(target) + repeats


def ctc_log_likelihood(log_probs, target, blank: int = BLANK) -> float:
    """log P(target | x) summed over all alignments; ``-inf`` if infeasible."""
    log_probs = np.asarray(log_probs, dtype=np.float64)
    if len(target) and min_frames(target) > log_probs.shape[0]:
        log.debug("infeasible target: %d labels for %d frames", len(target), log_probs.shape[0])
        return -np.inf
    nll, _ = kernels.ctc_loss_grad(log_probs, np.asarray(target, dtype=np.int64), blank)
    return -nll


def ctc_loss(log_probs, target, blank: int = BLANK) -> float:
    return -ctc_log_likelihood(log_probs, target, blank)


def ctc_gradients(log_probs, target, blank: int = BLANK):
    """Gradient of ``-log P`` w.r.t. the logits that produced ``log_probs``."""
    log_probs = np.asarray(log_probs, dtype=np.float64)
    if min_frames(target) > log_probs.shape[0]:
        raise InfeasibleTarget(
            f"infeasible target: {len(target)} labels cannot fit {log_probs.shape[0]} frames"
        )
    _, grad = kernels.ctc_loss_grad(log_probs, np.asarray(target, dtype=np.int64), blank)
    return grad


def collapse(alignment: Sequence[int], blank: int = BLANK) -> List[int]:
    out = []
    prev = None
    for sym in alignment:
        if sym != prev and sym != blank:
            out.append(int(sym))
        prev = sym
    return out


def best_path_decode(log_probs, blank: int = BLANK, strip_sil: bool = True) -> List[LidTag]:
    path = np.argmax(np.asarray(log_probs), axis=-1)
    tags = [LidTag(s) for s in collapse(path, blank)]
    if strip_sil:
        tags = [t for t in tags if t != LidTag.SIL]
    return tags


class CTCModel:
    """Stacked BiLSTM encoder with a per-frame softmax over 8 tags + blank."""

    arch = "ctc"

    def __init__(self, feat_dim: int, layers: int, units: int, dropout: float = 0.0):
        self.feat_dim = feat_dim
        self.layers = layers
        self.units = units
        self.dropout = dropout
        self._cache = None

    def init_params(self, rng: np.random.Generator) -> Params:
        params = Params()
        d = self.feat_dim
        for k in range(self.layers):
            init_bilstm(params, f"enc.{k}", d, self.units, rng)
            d = 2 * self.units
        params.add("out.w", init_uniform(rng, (d, NUM_OUTPUTS)))
        params.add("out.b", np.zeros(NUM_OUTPUTS))
        return params

    def log_probs(self, params: Params, x, mask, training=False, rng=None):
        caches = []
        h = x
        for k in range(self.layers):
            h, c = bilstm_forward(h, mask, params, f"enc.{k}")
            drop = dropout_mask(rng, h.shape, self.dropout, training)
            if drop is not None:
                h = h * drop
            caches.append((c, drop))
        logits = h @ params["out.w"] + params["out.b"]
        return log_softmax(logits), (caches, h)

    def forward(self, params: Params, batch, training=False, rng=None) -> np.ndarray:
        """Per-utterance CTC losses for a padded batch; caches for :meth:`backward`."""
        lp, cache = self.log_probs(params, batch.x, batch.mask, training, rng)
        losses = np.zeros(batch.size)
        dlogits = np.zeros_like(lp)
        for b in range(batch.size):
            T = int(batch.lengths[b])
            target = batch.targets[b]
            if min_frames(target) > T:
                raise InfeasibleTarget(f"utterance {batch.ids[b]}: target longer than input")
            nll, grad = kernels.ctc_loss_grad(lp[:T, b], np.asarray(target, dtype=np.int64), BLANK)
            losses[b] = nll
            dlogits[:T, b] = grad
        self._cache = (params, batch, cache, dlogits)
        return losses

    def backward(self, scale: float = 1.0) -> Params:
        """Gradients of ``scale * sum(losses)`` from the last :meth:`forward`."""
        if self._cache is None:
            raise RuntimeError("backward called before forward")
        params, batch, (caches, h), dlogits = self._cache
        self._cache = None
        grads = params.zeros_like()
        dlogits = dlogits * scale
        flat_h = h.reshape(-1, h.shape[-1])
        flat_d = dlogits.reshape(-1, NUM_OUTPUTS)
        grads["out.w"] += flat_h.T @ flat_d
        grads["out.b"] += flat_d.sum(axis=0)
        dh = dlogits @ params["out.w"].T
        for k in range(self.layers - 1, -1, -1):
            c, drop = caches[k]
            if drop is not None:
                dh = dh * drop
            dh = bilstm_backward(dh, c, grads, f"enc.{k}")
        return grads

    def decode(self, params: Params, x, beam_width: Optional[int] = None):
        """Greedy 1-best tags for one (T, D) feature matrix."""
        x = np.asarray(x, dtype=np.float64)
        lp, _ = self.log_probs(params, x[:, None, :], np.ones((x.shape[0], 1)))
        return best_path_decode(lp[:, 0]), None
