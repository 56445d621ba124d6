"""Command-line entry point: ``cslid <command> [options]``.

Exit codes: 0 success, 1 usage error, 2 data error, 3 numeric failure.
"""

from __future__ import annotations

import argparse
import csv
import dataclasses
import json
import logging
import os
import sys
from pathlib import Path
from typing import Dict, List, Optional, Sequence

import numpy as np

from .checkpoint import CheckpointError, load_checkpoint, read_records, save_features
from .config import ConfigError, TrainConfig, load_config_file, resolve_config
from .corpus import ManifestError, SynthSpec, read_manifest, synth_corpus, write_manifest
from .ctc import InfeasibleTarget
from .frontend import FrontendConfig, FrontendError, extract_features, read_wav
from .labels import LidTag, format_tags, format_words, majority_vote, parse_tags, strip_sil
from .las import attention_language_profile
from .metrics import corpus_report
from .trainer import DivergenceError, decode_examples, model_from_checkpoint, to_examples, train

log = logging.getLogger("cslid")

EXIT_OK, EXIT_USAGE, EXIT_DATA, EXIT_NUMERIC = 0, 1, 2, 3
LOG_LEVELS = {"quiet": logging.ERROR, "info": logging.INFO, "debug": logging.DEBUG}


class UsageError(Exception):
    pass


class DataError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(f"{self.prog}: {message}\n{self.format_usage().strip()}")


# -- helpers ----------------------------------------------------------------


def _setup_logging():
    level_name = os.environ.get("CSLID_LOG", "info").lower()
    if level_name not in LOG_LEVELS:
        raise UsageError(f"CSLID_LOG must be one of {sorted(LOG_LEVELS)}, got {level_name!r}")
    root = logging.getLogger("cslid")
    root.handlers.clear()
    handler = logging.StreamHandler(sys.stderr)
    handler.setFormatter(logging.Formatter("%(levelname)s %(message)s"))
    root.addHandler(handler)
    root.setLevel(LOG_LEVELS[level_name])
    root.propagate = False


def read_tag_file(path) -> Dict[str, List[LidTag]]:
    """``id<TAB>tags`` lines into an ordered id -> tags mapping."""
    out: Dict[str, List[LidTag]] = {}
    try:
        lines = Path(path).read_text(encoding="utf-8").splitlines()
    except OSError as e:
        raise DataError(f"cannot read {path}: {e}") from None
    for lineno, line in enumerate(lines, 1):
        if not line.strip():
            continue
        uid, sep, tags = line.partition("\t")
        if not sep:
            raise DataError(f"{path}:{lineno}: expected 'id<TAB>tags'")
        try:
            out[uid] = parse_tags(tags)
        except ValueError as e:
            raise DataError(f"{path}:{lineno}: {e}") from None
    return out


def write_lines(path: Optional[str], lines: Sequence[str]):
    text = "".join(line + "\n" for line in lines)
    if path in (None, "-"):
        sys.stdout.write(text)
    else:
        Path(path).parent.mkdir(parents=True, exist_ok=True)
        Path(path).write_text(text, encoding="utf-8")


def _config_from_args(args) -> TrainConfig:
    file_values = load_config_file(args.config) if args.config else {}
    overrides = {f.name: getattr(args, f.name, None) for f in dataclasses.fields(TrainConfig)}
    overrides["beam_width"] = args.beam
    return resolve_config(args.arch, file_values, overrides)


def _load_corpus(path, check_files=True):
    try:
        return read_manifest(path, check_files=check_files)
    except ManifestError as e:
        raise DataError(str(e)) from None


def _checkpoint(path):
    try:
        return load_checkpoint(path)
    except CheckpointError as e:
        raise DataError(str(e)) from None


def _examples(corpus, config):
    try:
        return to_examples(corpus, config)
    except (FrontendError, OSError) as e:
        raise DataError(str(e)) from None


# -- commands ------------------------------------------------------------------


def cmd_synth(args):
    spec = SynthSpec(snr_db=args.snr, switch_prob=args.switch_prob)
    try:
        spec.validate()
        paths = synth_corpus(spec, args.out, tuple(args.sizes), seed=args.seed)
    except ValueError as e:
        raise DataError(str(e)) from None
    for split, path in paths.items():
        print(f"{split}\t{path}")


def cmd_featurize(args):
    corpus = _load_corpus(args.manifest)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    cfg = FrontendConfig(normalize=args.normalize)
    rate = None if args.allow_resample_off else 8000
    for utt in corpus:
        if utt.audio is None:
            raise DataError(f"utterance {utt.id} has no audio to featurize")
        try:
            feats = extract_features(read_wav(utt.audio, expected_rate=rate), cfg)
        except FrontendError as e:
            raise DataError(f"utterance {utt.id}: {e}") from None
        if args.format == "csv":
            target = out / f"{utt.id}.csv"
            np.savetxt(target, feats, delimiter=",", fmt="%.6f")
        else:
            target = out / f"{utt.id}.feat"
            save_features(target, feats, {"id": utt.id, "num_filters": cfg.num_filters})
            utt.features_path = target
            utt.audio = None
        log.debug("%s: %d frames", utt.id, len(feats))
    if args.format == "record":
        write_manifest(out / "features.jsonl", list(corpus))
        print(out / "features.jsonl")
    log.info("featurized %d utterances into %s", len(corpus), out)


def cmd_labelize(args):
    corpus = _load_corpus(args.manifest, check_files=False)
    lines = []
    for utt in corpus:
        tags = utt.reference if args.sil else strip_sil(utt.reference)
        body = format_words(majority_vote(tags)) if args.level == "word" else format_tags(tags)
        lines.append(f"{utt.id}\t{body}")
    write_lines(args.out, lines)


def cmd_train(args):
    config = _config_from_args(args)
    log.info("config %s", json.dumps(config.to_dict(), sort_keys=True))
    train_set = _examples(_load_corpus(args.train), config)
    dev_set = _examples(_load_corpus(args.dev), config) if args.dev else []
    resume = _checkpoint(args.resume) if args.resume else None
    out = Path(args.out)
    try:
        result = train(config, train_set, dev_set, out_dir=out, resume=resume, jobs=args.jobs)
    except InfeasibleTarget as e:
        raise DataError(f"target longer than the input allows: {e}") from None
    print(f"best epoch {result.best.epoch} dev_error {result.best.dev_error}")
    print(f"checkpoints {out / 'best.ckpt'} {out / 'last.ckpt'}")


def _decode(ck, corpus, beam, jobs):
    model, config = model_from_checkpoint(ck, _feat_dim(ck))
    examples = _examples(corpus, config)
    return decode_examples(model, ck.params, examples, beam or config.beam_width, jobs), config


def _feat_dim(ck) -> int:
    for name in ("enc.0.fw.wx", "listener.0.fw.wx"):
        if name in ck.params:
            return ck.params[name].shape[0]
    raise DataError("checkpoint has no recognisable encoder input layer")


def cmd_decode(args):
    ck = _checkpoint(args.checkpoint)
    corpus = _load_corpus(args.manifest)
    results, _ = _decode(ck, corpus, args.beam, args.jobs)
    write_lines(args.out, [f"{u.id}\t{format_tags(strip_sil(tags))}" for u, (tags, _) in zip(corpus, results)])


def cmd_evaluate(args):
    refs = read_tag_file(args.ref)
    hyps = read_tag_file(args.hyp)
    missing = [uid for uid in refs if uid not in hyps]
    if missing:
        raise DataError(f"{len(missing)} reference utterances have no hypothesis, e.g. {missing[0]}")
    extra = [uid for uid in hyps if uid not in refs]
    if extra:
        raise DataError(f"hypothesis utterance {extra[0]} has no reference")
    ids = list(refs)
    try:
        report = corpus_report([refs[i] for i in ids], [hyps[i] for i in ids])
        levels = ("char", "word") if args.level == "both" else (args.level,)
        print(report.table(args.system, levels))
        for rec in report.records(levels):
            print(rec)
    except ValueError as e:
        raise DataError(str(e)) from None


def cmd_attention_export(args):
    ck = _checkpoint(args.checkpoint)
    if ck.config.get("arch") != "las":
        raise DataError("attention export needs an attention (las) checkpoint")
    corpus = _load_corpus(args.manifest)
    try:
        utt = corpus.by_id(args.utt)
    except KeyError:
        raise DataError(f"utterance {args.utt} not in {args.manifest}") from None
    results, _ = _decode(ck, [utt], args.beam, 1)
    tags, att = results[0]
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    hindi, english = attention_language_profile(att, tags)
    with open(out / f"{utt.id}.attention.csv", "w", newline="") as f:
        w = csv.writer(f)
        w.writerow(["step", "tag"] + [f"u{k}" for k in range(att.shape[1] if att.size else 0)])
        for k, (tag, row) in enumerate(zip(tags, att)):
            w.writerow([k, tag.token] + [f"{v:.6f}" for v in row])
    with open(out / f"{utt.id}.profile.csv", "w", newline="") as f:
        w = csv.writer(f)
        w.writerow(["u", "time_s", "hindi", "english"])
        for k, (h, e) in enumerate(zip(hindi, english)):
            w.writerow([k, f"{0.02 * k:.2f}", f"{h:.6f}", f"{e:.6f}"])
    (out / f"{utt.id}.attention.svg").write_text(attention_svg(att, tags, hindi, english, utt.id))
    print(out / f"{utt.id}.attention.svg")


def cmd_inspect(args):
    try:
        snapshot, tensors = read_records(args.checkpoint)
    except CheckpointError as e:
        raise DataError(str(e)) from None
    if not args.history:
        snapshot.get("extra", {}).pop("history", None)
    params = {k: v for k, v in tensors.items() if not k.startswith("adam.")}
    info = {
        **snapshot,
        "tensors": {k: list(v.shape) for k, v in params.items()},
        "num_parameters": int(sum(v.size for v in params.values())),
        "has_optimizer_state": len(params) != len(tensors),
    }
    print(json.dumps(info, indent=2, sort_keys=True))


# -- SVG ---------------------------------------------------------------------------


def attention_svg(att, tags, hindi, english, title="") -> str:
    """Heatmap of the attention map above the two language profiles."""
    rows = len(tags)
    cols = att.shape[1] if att.size else 1
    cell_w = max(2.0, min(12.0, 720.0 / cols))
    cell_h = max(4.0, min(14.0, 360.0 / max(rows, 1)))
    left, top = 40.0, 24.0
    width = left + cols * cell_w + 10
    heat_h = rows * cell_h
    plot_h = 120.0
    height = top + heat_h + 30 + plot_h + 20
    vmax = float(att.max()) if att.size else 1.0
    parts = [
        f'<svg xmlns="http://www.w3.org/2000/svg" width="{width:.0f}" height="{height:.0f}" '
        f'font-family="monospace" font-size="9">',
        f'<text x="{left}" y="14">{title}</text>',
    ]
    for i in range(rows):
        parts.append(f'<text x="2" y="{top + (i + 0.8) * cell_h:.1f}">{tags[i].token}</text>')
        for u in range(att.shape[1]):
            shade = int(255 * (1 - att[i, u] / vmax)) if vmax > 0 else 255
            parts.append(
                f'<rect x="{left + u * cell_w:.1f}" y="{top + i * cell_h:.1f}" width="{cell_w:.1f}" '
                f'height="{cell_h:.1f}" fill="rgb({shade},{shade},255)"/>'
            )
    base = top + heat_h + 30 + plot_h
    peak = max(float(np.max(hindi)) if len(hindi) else 0, float(np.max(english)) if len(english) else 0) or 1.0
    for curve, colour, name in ((hindi, "#c03030", "Hindi"), (english, "#3050c0", "English")):
        if len(curve) == 0:
            continue
        pts = " ".join(
            f"{left + (u + 0.5) * cell_w:.1f},{base - plot_h * v / peak:.1f}" for u, v in enumerate(curve)
        )
        parts.append(f'<polyline points="{pts}" fill="none" stroke="{colour}" stroke-width="1.2"/>')
    parts.append(f'<text x="{left}" y="{base + 14:.0f}" fill="#c03030">Hindi</text>')
    parts.append(f'<text x="{left + 50}" y="{base + 14:.0f}" fill="#3050c0">English</text>')
    parts.append("</svg>")
    return "\n".join(parts) + "\n"


# -- parser --------------------------------------------------------------------


def _add_train_overrides(p):
    skip = {"arch", "seed", "beam_width"}
    for f in dataclasses.fields(TrainConfig):
        if f.name in skip:
            continue
        flag = "--" + f.name.replace("_", "-")
        if f.type in ("bool", bool):
            p.add_argument(flag, dest=f.name, action=argparse.BooleanOptionalAction, default=None)
        else:
            kind = {"int": int, "float": float}.get(f.type, f.type)
            p.add_argument(flag, dest=f.name, type=kind, default=None, metavar=f.name.upper())


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="cslid", description="Joint language identification for code-switching speech.")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    p = sub.add_parser("synth", help="generate a synthetic train/dev/test corpus")
    p.add_argument("--out", required=True)
    p.add_argument("--sizes", type=int, nargs=3, default=[400, 40, 40], metavar=("TRAIN", "DEV", "TEST"))
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--snr", type=float, default=30.0)
    p.add_argument("--switch-prob", type=float, default=0.5)
    p.set_defaults(func=cmd_synth)

    p = sub.add_parser("featurize", help="compute log mel filterbank features")
    p.add_argument("--manifest", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--format", choices=("record", "csv"), default="record")
    p.add_argument("--normalize", action="store_true", help="per-utterance mean/variance normalisation")
    p.add_argument("--allow-resample-off", action="store_true", help="accept any sample rate as-is")
    p.set_defaults(func=cmd_featurize)

    p = sub.add_parser("labelize", help="write reference tag sequences")
    p.add_argument("--manifest", required=True)
    p.add_argument("--level", choices=("char", "word"), default="char")
    p.add_argument("--sil", action="store_true", help="keep the leading/trailing sil tags")
    p.add_argument("--out")
    p.set_defaults(func=cmd_labelize)

    p = sub.add_parser("train", help="train a ctc or las tagger")
    p.add_argument("--arch", choices=("ctc", "las"))
    p.add_argument("--config", help="config file or preset name (paper, desk)")
    p.add_argument("--train", required=True, help="training manifest")
    p.add_argument("--dev", help="dev manifest for model selection")
    p.add_argument("--out", required=True, help="checkpoint directory")
    p.add_argument("--resume", help="continue from a checkpoint")
    p.add_argument("--seed", type=int)
    p.add_argument("--beam", type=int)
    p.add_argument("--jobs", type=int, default=1)
    _add_train_overrides(p)
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("decode", help="decode a manifest with a checkpoint")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--manifest", required=True)
    p.add_argument("--beam", type=int)
    p.add_argument("--jobs", type=int, default=1)
    p.add_argument("--out")
    p.set_defaults(func=cmd_decode)

    p = sub.add_parser("evaluate", help="LID error rate of hypotheses against references")
    p.add_argument("--ref", required=True)
    p.add_argument("--hyp", required=True)
    p.add_argument("--level", choices=("char", "word", "both"), default="both")
    p.add_argument("--system", default="")
    p.set_defaults(func=cmd_evaluate)

    p = sub.add_parser("attention-export", help="attention map and language profiles for one utterance")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--manifest", required=True)
    p.add_argument("--utt", required=True)
    p.add_argument("--beam", type=int)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_attention_export)

    p = sub.add_parser("inspect-checkpoint", help="print a checkpoint summary")
    p.add_argument("checkpoint")
    p.add_argument("--history", action="store_true", help="include the per-epoch history")
    p.set_defaults(func=cmd_inspect)
    return parser


def main(argv: Optional[Sequence[str]] = None) -> int:
    try:
        _setup_logging()
        args = build_parser().parse_args(argv)
        if getattr(args, "jobs", 1) < 1:
            raise UsageError("--jobs must be at least 1")
        args.func(args)
    except UsageError as e:
        print(str(e), file=sys.stderr)
        return EXIT_USAGE
    except ConfigError as e:
        print(f"config error: {e}", file=sys.stderr)
        return EXIT_USAGE
    except DivergenceError as e:
        print(f"numeric failure: {e}", file=sys.stderr)
        return EXIT_NUMERIC
    except (DataError, FrontendError, OSError) as e:
        print(f"data error: {e}", file=sys.stderr)
        return EXIT_DATA
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
