"""Synthetic tonal-language corpora."""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np

from .corpus import ManifestRecord, write_manifest
from .errors import SpecInvalid
from .features import Segment, SynthPlan, synth_features, write_tpf
from .ipa import TONE_LETTERS, VOICE_MARKS, Category, parse_phone
from .tiers import TONE_INVENTORIES
from .errors import DataError

NASAL_CODAS = ("m", "n", "ŋ")
SPLITS = ("train", "dev", "test")
HELDOUT_SPLITS = ("adapt", "adapt_dev", "adapt_test")


@dataclass(frozen=True)
class LanguageSpec:
    name: str
    consonants: tuple[str, ...]
    vowels: tuple[str, ...]
    tones: tuple[str, ...]
    heldout: bool = False

    @property
    def phones(self) -> tuple[str, ...]:
        return self.consonants + self.vowels


@dataclass(frozen=True)
class CorpusSpec:
    languages: tuple[LanguageSpec, ...]
    sizes: tuple[int, int, int] = (200, 20, 20)
    heldout_sizes: tuple[int, int, int] = (60, 20, 20)
    speakers: int = 4
    min_syllables: int = 2
    max_syllables: int = 6
    min_frames: int = 8
    max_frames: int = 30
    noise: float = 0.5
    coda_prob: float = 0.2
    with_f0: bool = False

    @property
    def training_languages(self) -> list[str]:
        return [l.name for l in self.languages if not l.heldout]

    @property
    def heldout_language(self) -> str | None:
        held = [l.name for l in self.languages if l.heldout]
        return held[0] if held else None

    def to_json(self) -> str:
        return json.dumps(asdict(self), ensure_ascii=False, indent=1, sort_keys=True)

    @classmethod
    def from_dict(cls, d: dict) -> "CorpusSpec":
        try:
            langs = tuple(LanguageSpec(l["name"], tuple(l["consonants"]), tuple(l["vowels"]),
                                       tuple(l["tones"]), bool(l.get("heldout", False)))
                          for l in d["languages"])
            rest = {k: (tuple(v) if isinstance(v, list) else v) for k, v in d.items() if k != "languages"}
            spec = cls(langs, **rest)
        except (KeyError, TypeError) as exc:
            raise SpecInvalid(f"bad corpus spec: {exc}") from exc
        validate_spec(spec)
        return spec

    @classmethod
    def read(cls, path) -> "CorpusSpec":
        try:
            return cls.from_dict(json.loads(Path(path).read_text(encoding="utf-8")))
        except (OSError, json.JSONDecodeError) as exc:
            raise SpecInvalid(f"cannot read corpus spec {path}: {exc}") from exc


# Three training languages modelled on Mandarin, Cantonese and Vietnamese tone
# systems and a Lao-like held-out language. The held-out language has exact,
# one-diacritic (uː), and feature-nearest (ɛ, ɑo) phone correspondences.
DEFAULT_LANGUAGES = (
    LanguageSpec("syna", ("p", "t", "k", "m", "n", "s", "l"), ("a", "i", "u", "o"),
                 TONE_INVENTORIES["cmn"]),
    LanguageSpec("synb", ("p", "t", "k", "m", "ŋ", "s"), ("a", "aː", "i", "ɔ", "u", "ɑʊ"),
                 TONE_INVENTORIES["yue"][:5]),
    LanguageSpec("sync", ("t", "k", "m", "n", "ŋ", "l", "h"), ("a", "e", "i", "ɤ", "u"),
                 TONE_INVENTORIES["vie"][:5]),
    LanguageSpec("synd", ("p", "t", "k", "m", "n", "l", "h"), ("a", "i", "uː", "ɛ", "ɑo"),
                 TONE_INVENTORIES["lao"][:5], heldout=True),
)

DEFAULT_SPEC = CorpusSpec(DEFAULT_LANGUAGES)


def validate_spec(spec: CorpusSpec) -> None:
    if not spec.languages:
        raise SpecInvalid("no languages")
    names = [l.name for l in spec.languages]
    if len(set(names)) != len(names):
        raise SpecInvalid("duplicate language names")
    if sum(l.heldout for l in spec.languages) > 1:
        raise SpecInvalid("at most one held-out language")
    if not 1 <= spec.min_syllables <= spec.max_syllables:
        raise SpecInvalid("bad syllable range")
    if not 1 <= spec.min_frames <= spec.max_frames:
        raise SpecInvalid("bad frame range")
    for lang in spec.languages:
        if not 6 <= len(lang.phones) <= 12:
            raise SpecInvalid(f"{lang.name}: needs 6-12 phones, has {len(lang.phones)}")
        if not 3 <= len(lang.tones) <= 6:
            raise SpecInvalid(f"{lang.name}: needs 3-6 tones, has {len(lang.tones)}")
        if not lang.consonants or not lang.vowels:
            raise SpecInvalid(f"{lang.name}: needs consonants and vowels")
        for p in lang.phones:
            try:
                cat = parse_phone(p).category
            except DataError as exc:
                raise SpecInvalid(f"{lang.name}: unknown phone {p!r}") from exc
            expected = Category.CONSONANT if p in lang.consonants else Category.VOWEL
            if cat is not expected:
                raise SpecInvalid(f"{lang.name}: {p!r} is not a {expected.value}")
        for tone in lang.tones:
            if not tone or tone[0] not in TONE_LETTERS or any(
                    g not in TONE_LETTERS and g not in VOICE_MARKS for g in tone):
                raise SpecInvalid(f"{lang.name}: bad tone {tone!r}")


def _glottals(onset: str | None, tone: str, coda: str | None) -> set[str]:
    marks = {g for g in tone if g in VOICE_MARKS}
    marks |= {c for c in (onset, coda) if c in VOICE_MARKS}
    return marks


def random_syllable(lang: LanguageSpec, rng: np.random.Generator, spec: CorpusSpec):
    """(onset, vowel, tone, coda) avoiding syllables with both ʔ and h."""
    codas = [c for c in lang.consonants if c in NASAL_CODAS]
    while True:
        onset = lang.consonants[rng.integers(len(lang.consonants))] if rng.random() < 0.9 else None
        vowel = lang.vowels[rng.integers(len(lang.vowels))]
        tone = lang.tones[rng.integers(len(lang.tones))]
        coda = codas[rng.integers(len(codas))] if codas and rng.random() < spec.coda_prob else None
        if len(_glottals(onset, tone, coda)) <= 1:
            return onset, vowel, tone, coda


def utterance(lang: LanguageSpec, rng: np.random.Generator, spec: CorpusSpec) -> tuple[str, SynthPlan]:
    n = int(rng.integers(spec.min_syllables, spec.max_syllables + 1))
    ipa_sylls = []
    plan = []
    for _ in range(n):
        onset, vowel, tone, coda = random_syllable(lang, rng, spec)
        segs = []
        text = ""
        for phone, tones in ((onset, ""), (vowel, tone), (coda, "")):
            if phone is None:
                continue
            frames = int(rng.integers(spec.min_frames, spec.max_frames + 1))
            segs.append(Segment(phone, frames, tuple(tones)))
            text += phone + tones
        ipa_sylls.append(text)
        plan.append(tuple(segs))
    return ".".join(ipa_sylls), SynthPlan(tuple(plan))


@dataclass
class SynthCorpus:
    records: list[ManifestRecord]
    splits: dict[str, list[str]]
    spec: CorpusSpec
    plans: dict[str, SynthPlan] = field(default_factory=dict)


def generate(spec: CorpusSpec, seed: int) -> SynthCorpus:
    """Deterministic records, plans and splits; features are not rendered here."""
    validate_spec(spec)
    master = np.random.default_rng(seed)
    records = []
    plans = {}
    splits: dict[str, list[str]] = {s: [] for s in SPLITS + HELDOUT_SPLITS}
    for lang in spec.languages:
        names = HELDOUT_SPLITS if lang.heldout else SPLITS
        sizes = spec.heldout_sizes if lang.heldout else spec.sizes
        lang_rng = np.random.default_rng(master.integers(2**32))
        for split, size in zip(names, sizes):
            for i in range(size):
                utt_id = f"{lang.name}_{split}_{i:04d}"
                ipa, plan = utterance(lang, lang_rng, spec)
                speaker = f"{lang.name}_spk{int(lang_rng.integers(spec.speakers))}"
                feat_seed = int(lang_rng.integers(2**31))
                source = {"plan": {"segments": plan.to_json(), "seed": feat_seed, "noise": spec.noise}}
                records.append(ManifestRecord(utt_id, lang.name, speaker, source, ipa))
                plans[utt_id] = plan
                splits[split].append(utt_id)
    return SynthCorpus(records, {k: v for k, v in splits.items() if v}, spec, plans)


def synth_corpus(spec: CorpusSpec, seed: int, out_dir) -> SynthCorpus:
    """Render features to TPF1 files and write ``manifest.jsonl``, ``splits.json``, ``corpus_spec.json``."""
    out = Path(out_dir)
    (out / "feats").mkdir(parents=True, exist_ok=True)
    corpus = generate(spec, seed)
    written = []
    for rec in corpus.records:
        src = rec.source["plan"]
        mat = synth_features(corpus.plans[rec.utt_id], src["seed"], src["noise"], spec.with_f0,
                             rec.utt_id, rec.speaker_id)
        rel = f"feats/{rec.utt_id}.tpf"
        write_tpf(out / rel, mat.frames)
        written.append(ManifestRecord(rec.utt_id, rec.lang, rec.speaker_id, {"features": rel}, rec.ipa))
    corpus.records = written
    write_manifest(out / "manifest.jsonl", written)
    (out / "splits.json").write_text(json.dumps(corpus.splits, indent=1, sort_keys=True) + "\n", encoding="utf-8")
    (out / "corpus_spec.json").write_text(spec.to_json() + "\n", encoding="utf-8")
    return corpus


def read_splits(path) -> dict[str, list[str]]:
    try:
        return json.loads(Path(path).read_text(encoding="utf-8"))
    except (OSError, json.JSONDecodeError) as exc:
        raise DataError(f"cannot read splits {path}: {exc}") from exc


def select(records: Sequence[ManifestRecord], ids: Sequence[str]) -> list[ManifestRecord]:
    by_id = {r.utt_id: r for r in records}
    missing = [i for i in ids if i not in by_id]
    if missing:
        raise DataError(f"split references unknown utterances: {missing[:3]}")
    return [by_id[i] for i in ids]
