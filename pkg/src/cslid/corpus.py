"""Synthetic code-switching corpus and manifest ingestion.

The synthetic corpus stands in for real recordings: every character is a
short tone, Hindi characters drawn from a low-frequency alphabet and English
ones from a high-frequency alphabet, so language identity is carried by the
spectrum while word and character structure are carried by timing.

Manifests are UTF-8 JSON lines::

    {"id": "train_00001", "audio": "wav/train_00001.wav",
     "words": [{"text": "कख", "lang": "H"}, {"text": "blog"}],
     "segments": [[0.2, 0.4], [0.48, 0.88]]}

``features`` may replace ``audio`` (a tensor-record file), ``lang`` is
optional (detected from the script), ``segments`` (word start/end times in
seconds) is optional, and unknown fields are ignored.
"""

from __future__ import annotations

import json
import logging
from dataclasses import dataclass, field
from pathlib import Path
from typing import Dict, List, Optional, Sequence, Tuple, Union

import numpy as np

from .checkpoint import load_features
from .frontend import FrontendConfig, Waveform, extract_features, read_wav, write_wav
from .labels import LidTag, ScriptError, TaggedWord, detect_language, labelize, strip_sil

log = logging.getLogger(__name__)

SPLITS = ("train", "dev", "test")


class ManifestError(ValueError):
    pass


@dataclass
class Utterance:
    id: str
    words: List[TaggedWord]
    audio: Optional[Path] = None
    features_path: Optional[Path] = None
    waveform: Optional[Waveform] = None
    segments: Optional[List[Tuple[float, float]]] = None

    @property
    def reference(self) -> List[LidTag]:
        return labelize(self.words, add_sil=True)

    @property
    def langs(self) -> List[str]:
        return [w.lang for w in self.words]

    def features(self, config: FrontendConfig = FrontendConfig()) -> np.ndarray:
        if self.features_path is not None and self.waveform is None and self.audio is None:
            return load_features(self.features_path)
        wav = self.waveform if self.waveform is not None else read_wav(self.audio)
        return extract_features(wav, config)

    def to_record(self, root: Optional[Path] = None) -> Dict:
        rec: Dict = {"id": self.id}
        for key, path in (("audio", self.audio), ("features", self.features_path)):
            if path is not None:
                rec[key] = str(Path(path).relative_to(root)) if root else str(path)
        rec["words"] = [{"text": w.text, "lang": w.lang} for w in self.words]
        if self.segments is not None:
            rec["segments"] = [[round(s, 6), round(e, 6)] for s, e in self.segments]
        return rec


@dataclass(frozen=True)
class SynthSpec:
    sample_rate: int = 8000
    hindi_letters: str = "कखगघचछजझ"
    english_letters: str = "etaoinsr"
    hindi_tones: Tuple[float, ...] = (300.0, 385.0, 470.0, 555.0, 640.0, 725.0, 810.0, 900.0)
    english_tones: Tuple[float, ...] = (1300.0, 1455.0, 1610.0, 1770.0, 1925.0, 2080.0, 2240.0, 2400.0)
    char_duration: float = 0.100
    ramp: float = 0.010
    word_gap: float = 0.080
    edge_silence: float = 0.200
    word_length: Tuple[int, int] = (2, 6)
    words_per_utterance: Tuple[int, int] = (3, 9)
    switch_prob: float = 0.5
    snr_db: float = 30.0
    amplitude: float = 0.3

    def validate(self):
        nyq = self.sample_rate / 2
        for lang, letters, tones in (("H", self.hindi_letters, self.hindi_tones),
                                     ("E", self.english_letters, self.english_tones)):
            if not letters or not tones:
                raise ValueError(f"empty alphabet for language {lang}")
            if len(letters) != len(tones):
                raise ValueError(f"language {lang}: {len(letters)} letters but {len(tones)} tones")
            if any(not 0 < f < nyq for f in tones):
                raise ValueError(f"language {lang}: tones must lie in (0, {nyq}) Hz")
            if any(detect_language(ch) != lang for ch in letters):
                raise ValueError(f"language {lang}: letters in the wrong script")
        if set(self.hindi_tones) & set(self.english_tones):
            raise ValueError("tone alphabets must be disjoint")
        if not 0.0 <= self.switch_prob <= 1.0:
            raise ValueError("switch probability must lie in [0, 1]")
        lo, hi = self.word_length
        if not 1 <= lo <= hi:
            raise ValueError("bad word length range")
        lo, hi = self.words_per_utterance
        if not 1 <= lo <= hi:
            raise ValueError("bad words-per-utterance range")


def _tone(freq, n, rate, ramp_n, phase):
    t = np.arange(n) / rate
    env = np.ones(n)
    if ramp_n:
        r = 0.5 - 0.5 * np.cos(np.pi * np.arange(ramp_n) / ramp_n)
        env[:ramp_n] = r
        env[n - ramp_n :] = r[::-1]
    return env * np.sin(2 * np.pi * freq * t + phase)


def synth_utterance(spec: SynthSpec, rng: np.random.Generator, utt_id: str = "utt") -> Utterance:
    spec.validate()
    rate = spec.sample_rate
    n_words = int(rng.integers(spec.words_per_utterance[0], spec.words_per_utterance[1] + 1))
    lang = "H" if rng.random() < 0.5 else "E"
    char_n = int(round(spec.char_duration * rate))
    ramp_n = min(int(round(spec.ramp * rate)), char_n // 2)
    gap_n = int(round(spec.word_gap * rate))
    edge_n = int(round(spec.edge_silence * rate))

    pieces = [np.zeros(edge_n)]
    pos = edge_n
    words, segments = [], []
    for k in range(n_words):
        if k and rng.random() < spec.switch_prob:
            lang = "E" if lang == "H" else "H"
        letters, tones = (
            (spec.hindi_letters, spec.hindi_tones) if lang == "H" else (spec.english_letters, spec.english_tones)
        )
        n_chars = int(rng.integers(spec.word_length[0], spec.word_length[1] + 1))
        idx = rng.integers(0, len(letters), size=n_chars)
        if k:
            pieces.append(np.zeros(gap_n))
            pos += gap_n
        start = pos
        for i in idx:
            pieces.append(spec.amplitude * _tone(tones[i], char_n, rate, ramp_n, rng.uniform(0, 2 * np.pi)))
            pos += char_n
        words.append(TaggedWord("".join(letters[i] for i in idx), lang))
        segments.append((start / rate, pos / rate))
    pieces.append(np.zeros(edge_n))
    clean = np.concatenate(pieces)

    voiced = np.zeros(len(clean), dtype=bool)
    for s, e in segments:
        voiced[int(round(s * rate)) : int(round(e * rate))] = True
    power = float(np.mean(clean[voiced] ** 2))
    noise_std = np.sqrt(power / 10 ** (spec.snr_db / 10))
    samples = clean + rng.normal(0.0, noise_std, size=len(clean))
    return Utterance(utt_id, words, waveform=Waveform(samples, rate), segments=segments)


def utterance_rng(seed: int, split: str, index: int) -> np.random.Generator:
    return np.random.default_rng([seed, SPLITS.index(split) if split in SPLITS else 99, index])


def synth_split(spec: SynthSpec, split: str, size: int, seed: int) -> List[Utterance]:
    return [synth_utterance(spec, utterance_rng(seed, split, i), f"{split}_{i:05d}") for i in range(size)]


def synth_corpus(
    spec: SynthSpec,
    out_dir: Union[str, Path],
    sizes: Tuple[int, int, int] = (400, 40, 40),
    seed: int = 0,
) -> Dict[str, Path]:
    """Write WAVs and train/dev/test manifests; returns manifest paths."""
    out = Path(out_dir)
    wav_dir = out / "wav"
    try:
        wav_dir.mkdir(parents=True, exist_ok=True)
    except OSError as e:
        raise OSError(f"cannot create {wav_dir}: {e}") from e
    paths = {}
    for split, size in zip(SPLITS, sizes):
        utts = synth_split(spec, split, size, seed)
        for u in utts:
            u.audio = wav_dir / f"{u.id}.wav"
            try:
                write_wav(u.audio, u.waveform)
            except OSError as e:
                raise OSError(f"cannot write {u.audio}: {e}") from e
        paths[split] = out / f"{split}.jsonl"
        write_manifest(paths[split], utts)
    return paths


def write_manifest(path: Union[str, Path], utterances: Sequence[Utterance]) -> None:
    path = Path(path)
    root = path.parent.resolve()
    with open(path, "w", encoding="utf-8") as f:
        for u in utterances:
            rec = u.to_record()
            for key in ("audio", "features"):
                if key in rec:
                    p = Path(rec[key]).resolve()
                    rec[key] = str(p.relative_to(root)) if p.is_relative_to(root) else str(p)
            f.write(json.dumps(rec, ensure_ascii=False) + "\n")


@dataclass
class Corpus:
    utterances: List[Utterance] = field(default_factory=list)

    def __len__(self):
        return len(self.utterances)

    def __iter__(self):
        return iter(self.utterances)

    def __getitem__(self, i):
        return self.utterances[i]

    def by_id(self, utt_id: str) -> Utterance:
        for u in self.utterances:
            if u.id == utt_id:
                return u
        raise KeyError(utt_id)

    def stats(self) -> Dict[str, int]:
        """Utterance, word, character and scored-label (SIL excluded) counts."""
        return {
            "utterances": len(self.utterances),
            "words": sum(len(u.words) for u in self.utterances),
            "characters": sum(w.char_count for u in self.utterances for w in u.words),
            "labels": sum(len(strip_sil(u.reference)) for u in self.utterances),
        }


def read_manifest(path: Union[str, Path], check_files: bool = True) -> Corpus:
    path = Path(path)
    root = path.parent
    utts: List[Utterance] = []
    seen = set()
    try:
        lines = path.read_text(encoding="utf-8").splitlines()
    except OSError as e:
        raise ManifestError(f"cannot read manifest {path}: {e}") from None
    for lineno, line in enumerate(lines, 1):
        if not line.strip():
            continue
        where = f"{path}:{lineno}"
        try:
            rec = json.loads(line)
        except json.JSONDecodeError as e:
            raise ManifestError(f"{where}: malformed record ({e.msg})") from None
        if not isinstance(rec, dict) or "id" not in rec:
            raise ManifestError(f"{where}: record has no id")
        uid = str(rec["id"])
        if uid in seen:
            raise ManifestError(f"{where}: duplicate id {uid}")
        seen.add(uid)
        words_raw = rec.get("words")
        if not isinstance(words_raw, list) or not words_raw:
            raise ManifestError(f"{where}: utterance {uid} has an empty transcript")
        words = []
        for w in words_raw:
            if isinstance(w, str):
                w = {"text": w}
            text = w.get("text") if isinstance(w, dict) else None
            if not text:
                raise ManifestError(f"{where}: utterance {uid} has a word without text")
            try:
                lang = w.get("lang") or detect_language(text)
                words.append(TaggedWord(text, lang))
            except (ScriptError, ValueError) as e:
                raise ManifestError(f"{where}: utterance {uid}: {e}") from None
        audio = feats = None
        if rec.get("audio"):
            audio = (root / rec["audio"]).resolve() if not Path(rec["audio"]).is_absolute() else Path(rec["audio"])
        if rec.get("features"):
            feats = root / rec["features"] if not Path(rec["features"]).is_absolute() else Path(rec["features"])
        if audio is None and feats is None:
            raise ManifestError(f"{where}: utterance {uid} has no audio or features path")
        if check_files:
            for p in (audio, feats):
                if p is not None and not p.exists():
                    raise ManifestError(f"{where}: utterance {uid}: missing file {p}")
        segments = rec.get("segments")
        if segments is not None:
            segments = [(float(s), float(e)) for s, e in segments]
        utts.append(Utterance(uid, words, audio=audio, features_path=feats, segments=segments))
    log.info("read %d utterances from %s", len(utts), path)
    return Corpus(utts)
