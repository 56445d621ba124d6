"""Batching, optimisation and model selection for both architectures."""

from __future__ import annotations

import logging
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Dict, List, Optional, Sequence, Union

import numpy as np

from .checkpoint import Checkpoint, load_checkpoint, save_checkpoint
from .config import TrainConfig
from .ctc import CTCModel
from .labels import LidTag
from .las import LASModel
from .metrics import corpus_report
from .netcore import Params, clip_by_global_norm, global_norm

log = logging.getLogger(__name__)

BETA1, BETA2, ADAM_EPS = 0.9, 0.999, 1e-8


class DivergenceError(RuntimeError):
    """Training produced a non-finite loss."""


@dataclass
class Example:
    id: str
    features: np.ndarray
    target: List[int]  # training target, SIL included


@dataclass
class Batch:
    ids: List[str]
    x: np.ndarray  # (T, B, D), zero padded
    lengths: np.ndarray
    targets: List[List[int]]

    @property
    def size(self) -> int:
        return len(self.ids)

    @property
    def mask(self) -> np.ndarray:
        T = self.x.shape[0]
        return (np.arange(T)[:, None] < self.lengths[None, :]).astype(np.float64)

    @classmethod
    def from_items(cls, ids, feats, targets) -> "Batch":
        feats = [np.asarray(f, dtype=np.float64) for f in feats]
        lengths = np.array([f.shape[0] for f in feats], dtype=np.int64)
        x = np.zeros((int(lengths.max()), len(feats), feats[0].shape[1]))
        for b, f in enumerate(feats):
            x[: len(f), b] = f
        return cls(list(ids), x, lengths, [list(t) for t in targets])


def make_batches(examples: Sequence[Example], batch_size: int, seed=0, pool_factor: int = 8) -> List[Batch]:
    """Length-bucketed, seeded-shuffle batches.

    The shuffled corpus is cut into pools of ``pool_factor * batch_size``;
    each pool is sorted by length and split into batches.  Full batches are
    shuffled, a pool's short remainder batch goes last.
    """
    if not examples:
        raise ValueError("empty corpus")
    if batch_size < 1:
        raise ValueError("batch size must be positive")
    rng = np.random.default_rng(seed)
    order = rng.permutation(len(examples))
    pool = batch_size * pool_factor
    full, rest = [], []
    for start in range(0, len(order), pool):
        chunk = sorted(order[start : start + pool], key=lambda i: examples[i].features.shape[0])
        for k in range(0, len(chunk), batch_size):
            group = chunk[k : k + batch_size]
            (full if len(group) == batch_size else rest).append(group)
    groups = [full[i] for i in rng.permutation(len(full))] + rest
    return [
        Batch.from_items(
            [examples[i].id for i in g], [examples[i].features for i in g], [examples[i].target for i in g]
        )
        for g in groups
    ]


def lr_schedule(epoch: int, config: TrainConfig) -> float:
    """Exponential decay from lr_init to lr_init * lr_decay over the run."""
    if config.epochs == 1:
        return config.lr_init
    if not 0 <= epoch < config.epochs:
        raise ValueError(f"epoch {epoch} outside [0, {config.epochs})")
    return config.lr_init * config.lr_decay ** (epoch / (config.epochs - 1))


@dataclass
class AdamState:
    m: Params
    v: Params
    step: int = 0

    @classmethod
    def like(cls, params: Params) -> "AdamState":
        return cls(params.zeros_like().astype(np.float32), params.zeros_like().astype(np.float32))


def adam_step(params: Params, grads: Params, state: AdamState, lr: float, clip_norm: Optional[float] = 5.0):
    """In-place Adam update with optional global-norm clipping.

    Parameters and moments keep their storage dtype; the update itself is
    computed in double precision.  Returns the pre-clip gradient norm.
    """
    for name, g in grads.items():
        if g.shape != params[name].shape:
            raise ValueError(f"gradient shape {g.shape} does not match parameter {name} {params[name].shape}")
    if clip_norm is not None:
        grads, norm = clip_by_global_norm(grads, clip_norm)
    else:
        norm = float(np.sqrt(sum(float(np.sum(g * g)) for g in grads.values())))
    state.step += 1
    t = state.step
    c1 = 1.0 - BETA1**t
    c2 = 1.0 - BETA2**t
    for name, g in grads.items():
        m = BETA1 * state.m[name].astype(np.float64) + (1 - BETA1) * g
        v = BETA2 * state.v[name].astype(np.float64) + (1 - BETA2) * g * g
        state.m[name][...] = m
        state.v[name][...] = v
        update = lr * (m / c1) / (np.sqrt(v / c2) + ADAM_EPS)
        params[name][...] = params[name].astype(np.float64) - update
    return norm


def build_model(config: TrainConfig, feat_dim: int = 26):
    if config.arch == "ctc":
        return CTCModel(feat_dim, config.enc_layers, config.enc_units, config.dropout)
    return LASModel(
        feat_dim,
        enc_layers=config.enc_layers,
        enc_units=config.enc_units,
        dec_layers=config.dec_layers,
        dec_units=config.dec_units,
        emb_dim=config.emb_dim,
        att_dim=config.att_dim,
        dropout=config.dropout,
    )


def prepare_features(feats: np.ndarray, config: TrainConfig) -> np.ndarray:
    feats = np.asarray(feats, dtype=np.float64)
    if config.normalize_features:
        feats = (feats - feats.mean(axis=0)) / (feats.std(axis=0) + 1e-8)
    return feats


def decode_examples(model, params: Params, examples: Sequence[Example], beam_width: int = 8, jobs: int = 1):
    """Decode each example; returns a list of (tags, attention-or-None)."""
    p64 = params.astype(np.float64)

    def run(ex):
        return model.decode(p64, ex.features, beam_width)

    if jobs > 1 and len(examples) > 1:
        with ThreadPoolExecutor(max_workers=jobs) as pool:
            return list(pool.map(run, examples))
    return [run(ex) for ex in examples]


def word_error(model, params: Params, examples: Sequence[Example], beam_width: int, jobs: int = 1) -> float:
    hyps = [tags for tags, _ in decode_examples(model, params, examples, beam_width, jobs)]
    refs = [[LidTag(t) for t in ex.target] for ex in examples]
    return corpus_report(refs, hyps).word_rate


@dataclass
class TrainResult:
    best: Checkpoint
    final: Checkpoint
    history: List[Dict[str, float]] = field(default_factory=list)


def _checkpoint(config, params, epoch, dev_error, state: Optional[AdamState], extra):
    opt = {}
    if state is not None:
        opt = {"step": state.step, "m": state.m.copy(), "v": state.v.copy()}
    return Checkpoint(config.to_dict(), params.copy(), epoch, dev_error, opt, dict(extra))


def train(
    config: TrainConfig,
    train_set: Sequence[Example],
    dev_set: Sequence[Example],
    out_dir: Optional[Union[str, Path]] = None,
    resume: Optional[Checkpoint] = None,
    on_epoch: Optional[Callable[[Dict[str, float]], None]] = None,
    jobs: int = 1,
) -> TrainResult:
    """Train from scratch (or resume) and return the best-dev checkpoint.

    Randomness is drawn from generators seeded by ``(seed, epoch)`` so a
    resumed run reproduces the uninterrupted loss trace.  With ``out_dir``,
    ``last.ckpt`` and ``best.ckpt`` are written after every epoch.
    """
    if not train_set:
        raise ValueError("empty training set")
    feat_dim = train_set[0].features.shape[1]
    model = build_model(config, feat_dim)
    if resume is not None:
        params = Params((k, np.array(v, dtype=np.float32)) for k, v in resume.params.items())
        if not resume.optimizer:
            raise ValueError("checkpoint carries no optimizer state; cannot resume")
        state = AdamState(
            Params((k, np.array(v, dtype=np.float32)) for k, v in resume.optimizer["m"].items()),
            Params((k, np.array(v, dtype=np.float32)) for k, v in resume.optimizer["v"].items()),
            int(resume.optimizer["step"]),
        )
        start = resume.epoch + 1
        history = list(resume.extra.get("history", []))
        best_err = resume.extra.get("best_dev_error")
        best = None
        if out_dir is not None and (Path(out_dir) / "best.ckpt").exists():
            best = load_checkpoint(Path(out_dir) / "best.ckpt")
    else:
        params = model.init_params(np.random.default_rng([config.seed, 2**31 - 1])).astype(np.float32)
        state = AdamState.like(params)
        start = 0
        history = []
        best_err = None
        best = None

    if out_dir is not None:
        Path(out_dir).mkdir(parents=True, exist_ok=True)
    final = None
    for epoch in range(start, config.epochs):
        rng = np.random.default_rng([config.seed, epoch])
        lr = lr_schedule(epoch, config)
        total, count = 0.0, 0
        for batch in make_batches(train_set, config.batch_size, seed=[config.seed, epoch]):
            p64 = params.astype(np.float64)
            losses = model.forward(p64, batch, training=True, rng=rng)
            if not np.all(np.isfinite(losses)):
                bad = [batch.ids[i] for i in np.flatnonzero(~np.isfinite(losses))]
                raise DivergenceError(f"non-finite loss at epoch {epoch} for utterances {bad[:5]}")
            grads = model.backward(scale=1.0 / batch.size)
            if not math.isfinite(global_norm(grads)):
                raise DivergenceError(f"non-finite gradient at epoch {epoch} in batch {batch.ids[:5]}")
            adam_step(params, grads, state, lr, config.clip_norm)
            total += float(losses.sum())
            count += batch.size
        mean_loss = total / count
        last = epoch == config.epochs - 1
        dev_err = None
        if dev_set and ((epoch + 1) % config.eval_every == 0 or last):
            dev_err = word_error(model, params, dev_set, config.beam_width, jobs)
        record = {"epoch": epoch, "loss": mean_loss, "lr": lr, "dev_error": dev_err}
        history.append(record)
        log.info(
            "epoch %d loss %.6f lr %.3g dev_error %s",
            epoch, mean_loss, lr, "-" if dev_err is None else f"{dev_err:.2f}",
        )
        if on_epoch is not None:
            on_epoch(record)
        improved = dev_err is not None and (best_err is None or dev_err < best_err)
        if improved:
            best_err = dev_err
        extra = {"history": history, "best_dev_error": best_err}
        final = _checkpoint(config, params, epoch, dev_err, state, extra)
        if improved or best is None:
            best = final
        if out_dir is not None:
            save_checkpoint(Path(out_dir) / "last.ckpt", final)
            if best is final:
                save_checkpoint(Path(out_dir) / "best.ckpt", best)
    if final is None:
        raise ValueError("nothing to train: start epoch beyond configured epochs")
    return TrainResult(best, final, history)


def evaluate_dev(checkpoint: Checkpoint, dev_set: Sequence[Example], jobs: int = 1) -> float:
    """Word-level LID error rate of a checkpoint on a labelled set."""
    config = TrainConfig.from_dict(checkpoint.config)
    model = build_model(config, dev_set[0].features.shape[1])
    return word_error(model, checkpoint.params, dev_set, config.beam_width, jobs)


def model_from_checkpoint(checkpoint: Checkpoint, feat_dim: int = 26):
    config = TrainConfig.from_dict(checkpoint.config)
    return build_model(config, feat_dim), config


def to_examples(utterances, config: Optional[TrainConfig] = None) -> List[Example]:
    """Featurize utterances (anything with ``id``, ``features()``, ``reference``)."""
    config = config or TrainConfig()
    return [
        Example(u.id, prepare_features(u.features(), config), [int(t) for t in u.reference])
        for u in utterances
    ]
