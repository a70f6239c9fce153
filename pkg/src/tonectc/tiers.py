"""Per-utterance tier transcripts and per-language tier alphabets.

Tier symbols are plain strings. Pitch targets serialize as Chao digits
(``"5"`` for ˥), joint-tier vowels fuse the vowel with its tone string
(``"a214"``, ``"a3ʔ5"``), and markers are written in angle brackets.
"""

from __future__ import annotations

import enum
from dataclasses import dataclass
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

from .errors import FormatError, MoreThanOneVoiceMark
from .ipa import (
    TONE_LETTERS,
    VOICE_MARKS,
    Category,
    IpaSymbol,
    ToneTarget,
    default_feature_table,
)

BLANK = "<blank>"
NEUTRAL = "<neutral>"
BOUNDARY = "<boundary>"
MODAL = "<modal>"

# Lexical tone inventories of the four built-in languages (vowel-following glyphs).
TONE_INVENTORIES = {
    "cmn": ("˥", "˧˥", "˨˩˦", "˥˩"),
    "yue": ("˥", "˧", "˨", "˧˥", "˨˩", "˩˧"),
    "vie": ("˧", "˧˥", "˧˨ʔ", "˨˩h", "˨˩˨", "˧ʔ˥"),
    "lao": ("˩", "˧", "˥", "˩˧", "˥˧", "˧˩"),
}


class Tier(str, enum.Enum):
    JOINT = "joint"
    PHONE = "phone"
    TONE = "tone"
    VOICE = "voice"


TONE_SYMBOLS_M23 = ("1", "2", "3", "4", "5", NEUTRAL, BOUNDARY, "ʔ", "h")
TONE_SYMBOLS_M4 = ("1", "2", "3", "5", NEUTRAL, BOUNDARY)
VOICE_SYMBOLS = ("ʔ", "h", BOUNDARY, MODAL)


@dataclass(frozen=True)
class ModelVariant:
    id: int
    tiers: tuple[Tier, ...]

    @property
    def tone_mode(self) -> str:
        return "model4" if self.id == 4 else "models23"

    @property
    def name(self) -> str:
        return f"model{self.id}"


VARIANTS = {
    1: ModelVariant(1, (Tier.JOINT,)),
    2: ModelVariant(2, (Tier.PHONE, Tier.TONE)),
    3: ModelVariant(3, (Tier.JOINT, Tier.PHONE, Tier.TONE)),
    4: ModelVariant(4, (Tier.JOINT, Tier.PHONE, Tier.TONE, Tier.VOICE)),
}


def variant(id) -> ModelVariant:
    return VARIANTS[int(id)]


@dataclass(frozen=True)
class TierAlphabet:
    tier: Tier
    lang: str
    symbols: tuple[str, ...]  # symbols[0] is always BLANK

    def __post_init__(self):
        if not self.symbols or self.symbols[0] != BLANK:
            raise ValueError("alphabet must start with the blank symbol")
        if BLANK in self.symbols[1:] or len(set(self.symbols)) != len(self.symbols):
            raise ValueError("alphabet symbols must be unique with blank only at index 0")

    @classmethod
    def from_symbols(cls, tier, lang, symbols: Iterable[str]) -> "TierAlphabet":
        return cls(Tier(tier), lang, (BLANK, *symbols))

    def __len__(self):
        return len(self.symbols)

    def __contains__(self, sym):
        return sym in self._index

    @property
    def labels(self) -> tuple[str, ...]:
        return self.symbols[1:]

    @property
    def _index(self) -> dict[str, int]:
        idx = self.__dict__.get("_idx")
        if idx is None:
            idx = {s: i for i, s in enumerate(self.symbols)}
            object.__setattr__(self, "_idx", idx)
        return idx

    def index(self, sym: str) -> int:
        return self._index[sym]

    def encode(self, symbols: Sequence[str]) -> np.ndarray:
        try:
            out = np.array([self._index[s] for s in symbols], dtype=np.int64)
        except KeyError as exc:
            raise FormatError(f"symbol {exc.args[0]!r} not in {self.tier.value}/{self.lang} alphabet") from None
        if (out == 0).any():
            raise FormatError("blank may not appear in a reference transcript")
        return out

    def decode(self, labels: Iterable[int]) -> list[str]:
        return [self.symbols[int(i)] for i in labels]


@dataclass(frozen=True)
class TierTranscript:
    tier: Tier
    lang: str
    symbols: tuple[str, ...]

    def __len__(self):
        return len(self.symbols)

    def labels(self, alphabet: TierAlphabet) -> np.ndarray:
        return alphabet.encode(self.symbols)


def tone_glyph_symbol(glyph: str) -> str:
    if glyph in TONE_LETTERS:
        return str(TONE_LETTERS[glyph] // 11)
    return glyph


def target_symbol(target: ToneTarget) -> str:
    if target is ToneTarget.NEUTRAL:
        return NEUTRAL
    if target is ToneTarget.BOUNDARY:
        return BOUNDARY
    return str(target.digit)


def joint_symbol(sym: IpaSymbol) -> str:
    return sym.phone + "".join(tone_glyph_symbol(g) for g in sym.tones)


def split_joint(symbol: str) -> tuple[str, str]:
    """``"a3ʔ5"`` -> ``("a", "3ʔ5")``; consonants and toneless vowels get ``""``."""
    for i, ch in enumerate(symbol):
        if ch.isdigit():
            return symbol[:i], symbol[i:]
    return symbol, ""


def phone_category(phone: str, table=None) -> Category:
    """Category of a serialized phone (diacritics allowed, no tones)."""
    table = table or default_feature_table()
    for end in range(len(phone), 0, -1):
        if phone[:end] in table.entries:
            return table.category(phone[:end])
    raise FormatError(f"unknown phone {phone!r}")


def is_segmental_glottal(sym: IpaSymbol) -> bool:
    return sym.category is Category.CONSONANT and sym.base in VOICE_MARKS


def build_joint_tier(syllables: Sequence[Sequence[IpaSymbol]], lang: str) -> TierTranscript:
    syms = [joint_symbol(s) for syl in syllables for s in syl
            if s.category in (Category.CONSONANT, Category.VOWEL)]
    return TierTranscript(Tier.JOINT, lang, tuple(syms))


def build_phone_tier(syllables: Sequence[Sequence[IpaSymbol]], lang: str,
                     drop_glottals: bool = False) -> TierTranscript:
    """Bare consonants and vowels; ``drop_glottals`` moves segmental ʔ/h out (model 4)."""
    syms = []
    for syl in syllables:
        for s in syl:
            if s.category not in (Category.CONSONANT, Category.VOWEL):
                continue
            if drop_glottals and is_segmental_glottal(s):
                continue
            syms.append(s.phone)
    return TierTranscript(Tier.PHONE, lang, tuple(syms))


def syllable_tone_glyphs(syllable: Sequence[IpaSymbol]) -> tuple[str, ...]:
    return tuple(g for s in syllable if s.category is Category.VOWEL for g in s.tones)


def normalize_tone_m4(targets: Sequence) -> tuple[tuple[ToneTarget, ToneTarget], str]:
    """Reduce one syllable's tone description to two pitch targets and a voice mark.

    ``targets`` holds tone letters, ``ToneTarget`` values and voice marks
    (ʔ, h). Level 44 is not in the model-4 alphabet and is raised to 55.
    """
    pitches = []
    marks = []
    for t in targets:
        if isinstance(t, str) and t in VOICE_MARKS:
            marks.append(t)
            continue
        tt = ToneTarget.from_letter(t) if isinstance(t, str) else ToneTarget(t)
        if tt is ToneTarget.BOUNDARY:
            continue
        if tt is ToneTarget.L44:
            tt = ToneTarget.L55
        pitches.append(tt)
    if len(set(marks)) > 1:
        raise MoreThanOneVoiceMark(f"syllable carries both ʔ and h: {list(targets)!r}")
    voice = marks[0] if marks else MODAL
    levels = [p for p in pitches if p.is_level]
    if not levels:
        pair = (ToneTarget.NEUTRAL, ToneTarget.NEUTRAL)
    elif len(levels) == 1:
        pair = (levels[0], levels[0])
    else:
        pair = (levels[0], levels[1])
    return pair, voice


def build_tone_tier(syllables: Sequence[Sequence[IpaSymbol]], mode: str = "models23",
                    lang: str = "universal") -> TierTranscript:
    syms = []
    for syl in syllables:
        glyphs = syllable_tone_glyphs(syl)
        if mode == "model4":
            pair, _ = normalize_tone_m4(glyphs)
            syms.extend(target_symbol(t) for t in pair)
        elif mode == "models23":
            syms.extend(tone_glyph_symbol(g) for g in glyphs or (NEUTRAL,))
        else:
            raise ValueError(f"unknown tone mode {mode!r}")
        syms.append(BOUNDARY)
    return TierTranscript(Tier.TONE, lang, tuple(syms))


def syllable_voice_mark(syllable: Sequence[IpaSymbol]) -> str:
    glyphs = list(syllable_tone_glyphs(syllable))
    glyphs += [s.base for s in syllable if is_segmental_glottal(s)]
    _, voice = normalize_tone_m4(glyphs)
    return voice


def build_voice_tier(syllables: Sequence[Sequence[IpaSymbol]], lang: str) -> TierTranscript:
    syms = []
    for syl in syllables:
        syms.append(syllable_voice_mark(syl))
        syms.append(BOUNDARY)
    return TierTranscript(Tier.VOICE, lang, tuple(syms))


def build_tiers(syllables, lang: str, model: ModelVariant) -> dict[Tier, TierTranscript]:
    out = {}
    for tier in model.tiers:
        if tier is Tier.JOINT:
            out[tier] = build_joint_tier(syllables, lang)
        elif tier is Tier.PHONE:
            out[tier] = build_phone_tier(syllables, lang, drop_glottals=model.id == 4)
        elif tier is Tier.TONE:
            out[tier] = build_tone_tier(syllables, model.tone_mode, lang)
        else:
            out[tier] = build_voice_tier(syllables, lang)
    return out


def fixed_symbols(tier: Tier, model: ModelVariant) -> tuple[str, ...] | None:
    if tier is Tier.TONE:
        return TONE_SYMBOLS_M4 if model.id == 4 else TONE_SYMBOLS_M23
    if tier is Tier.VOICE:
        return VOICE_SYMBOLS
    return None


def build_alphabets(corpus: Iterable[tuple[str, Sequence[Sequence[IpaSymbol]]]],
                    model: ModelVariant) -> dict[tuple[Tier, str], TierAlphabet]:
    """Alphabets keyed by ``(tier, lang)``.

    Joint and phone alphabets hold exactly the symbols seen for that language;
    tone and voice alphabets are the fixed universal sets. Universal entries
    under ``lang="universal"`` are always included.
    """
    seen: dict[str, dict[Tier, set]] = {}
    for lang, syllables in corpus:
        per = seen.setdefault(lang, {t: set() for t in model.tiers})
        for tier, tr in build_tiers(syllables, lang, model).items():
            per[tier].update(tr.symbols)
    out = {}
    for lang in sorted(seen) + ["universal"]:
        for tier in model.tiers:
            fixed = fixed_symbols(tier, model)
            if fixed is not None:
                out[(tier, lang)] = TierAlphabet.from_symbols(tier, lang, fixed)
            elif lang != "universal":
                out[(tier, lang)] = TierAlphabet.from_symbols(tier, lang, sorted(seen[lang][tier]))
    return out


def write_alphabet(path, alphabet: TierAlphabet) -> None:
    Path(path).write_text("".join(s + "\n" for s in alphabet.symbols), encoding="utf-8")


def read_alphabet(path, tier, lang) -> TierAlphabet:
    lines = [l for l in Path(path).read_text(encoding="utf-8").splitlines() if l and not l.startswith("#")]
    if not lines or lines[0] != BLANK:
        raise FormatError(f"{path}: first line must be {BLANK}")
    return TierAlphabet(Tier(tier), lang, tuple(lines))


def format_transcripts(items: Iterable[tuple[str, Sequence[str]]]) -> str:
    return "".join(f"{utt}\t{' '.join(syms)}\n" for utt, syms in items)


def write_transcripts(path, items: Iterable[tuple[str, Sequence[str]]]) -> None:
    Path(path).write_text(format_transcripts(items), encoding="utf-8")


def read_transcripts(path) -> dict[str, list[str]]:
    out = {}
    for lineno, line in enumerate(Path(path).read_text(encoding="utf-8").splitlines(), 1):
        if not line.strip():
            continue
        if "\t" not in line:
            raise FormatError(f"{path}:{lineno}: expected utt_id<TAB>symbols")
        utt, rest = line.split("\t", 1)
        out[utt] = rest.split()
    return out
